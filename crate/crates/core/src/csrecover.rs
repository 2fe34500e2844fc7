//! Compressed sensing with a generative prior `x = G(z)`.
//!
//! A generator is a stack of dense layers `a_ℓ = f_ℓ(W_ℓ a_{ℓ−1})`. Given
//! measurements `y = A·G(z*) + η`, [`recover`] minimizes
//! `h(z) = ‖y − A·G(z)‖²` by gradient descent from several starting points.
//! [`check_srec`] samples the set-restricted eigenvalue inequality
//! `‖A(x₁ − x₂)‖ ≥ (1 − ε1)‖x₁ − x₂‖ − ε2` on pairs of outputs, and
//! [`deep_pwl_surrogate`] swaps the first activation for a PWL approximant
//! tight enough that the whole output moves by at most `ε2/√n`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::catalog::Nonlinearity;
use crate::error::{Error, Result};
use crate::pwl::{build_pwl, PwlFunction};
use crate::rng::{derive_seed, Stream};
use crate::sketch::{sample_sketch, SketchMatrix};
use crate::subspace::SamplePlan;

/// Activation of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerActivation {
    Smooth(Nonlinearity),
    Pwl(Arc<PwlFunction>),
}

impl LayerActivation {
    pub fn name(&self) -> String {
        match self {
            LayerActivation::Smooth(nl) => nl.name().to_string(),
            LayerActivation::Pwl(p) => format!("pwl({})", p.source_name()),
        }
    }

    /// `u` with `|f| ≤ u`, when known.
    pub fn magnitude_bound(&self) -> Option<f64> {
        match self {
            LayerActivation::Smooth(nl) => nl.magnitude_bound(),
            LayerActivation::Pwl(_) => None,
        }
    }
}

impl Activation for LayerActivation {
    fn value(&self, x: f64) -> f64 {
        match self {
            LayerActivation::Smooth(nl) => nl.value(x),
            LayerActivation::Pwl(p) => p.eval(x),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            LayerActivation::Smooth(nl) => nl.derivative(x),
            LayerActivation::Pwl(p) => p.slope(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `n_ℓ × n_{ℓ−1}`.
    pub weights: DMatrix<f64>,
    pub activation: LayerActivation,
}

/// `G = f_d ∘ W_d ∘ ⋯ ∘ f_1 ∘ W_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    layers: Vec<Layer>,
}

impl Generator {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("layers", "a generator needs at least one layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[1].weights.ncols() != w[0].weights.nrows() {
                return Err(Error::param(
                    "layers",
                    format!(
                        "layer {} expects {} inputs but layer {} has {} outputs",
                        i + 2,
                        w[1].weights.ncols(),
                        i + 1,
                        w[0].weights.nrows()
                    ),
                ));
            }
        }
        if layers.iter().any(|l| l.weights.is_empty()) {
            return Err(Error::param("layers", "weight matrices must be non-empty"));
        }
        Ok(Generator { layers })
    }

    /// Layer widths `dims = [k, n_1, …, n_d]` with iid `N(0, 1/n_{ℓ−1})`
    /// weights.
    pub fn random(dims: &[usize], activations: &[Nonlinearity], seed: u64) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::param("dims", "need d + 1 widths for d activations, d ≥ 1"));
        }
        if dims.contains(&0) {
            return Err(Error::param("dims", "widths must be positive"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(l, (w, &nl))| {
                let (rows, cols) = (w[1], w[0]);
                let scale = 1.0 / (cols as f64).sqrt();
                let mut s = Stream::new(derive_seed(seed, l as u64));
                Layer {
                    weights: DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| s.gaussian() * scale)),
                    activation: LayerActivation::Smooth(nl),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    /// Forward pass.
    pub fn generate(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: z.len(),
            });
        }
        Ok(self.layers.iter().fold(z.clone(), |a, l| (&l.weights * a).map(|u| l.activation.value(u))))
    }

    /// Forward pass on the columns of `zs`.
    pub fn generate_batch(&self, zs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if zs.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: zs.nrows(),
            });
        }
        Ok(self.layers.iter().fold(zs.clone(), |a, l| (&l.weights * a).map(|u| l.activation.value(u))))
    }

    /// `(G₁, G₂)` with `G₁` the first `at` layers.
    pub fn split(&self, at: usize) -> Result<(Generator, Generator)> {
        if at == 0 || at >= self.depth() {
            return Err(Error::param("at", format!("cannot split depth {} at {at}", self.depth())));
        }
        Ok((
            Generator::new(self.layers[..at].to_vec())?,
            Generator::new(self.layers[at..].to_vec())?,
        ))
    }

    /// `h(z) = ‖y − A·G(z)‖²` and its gradient.
    pub fn objective(&self, a: &DMatrix<f64>, y: &DVector<f64>, z: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut pre = Vec::with_capacity(self.depth());
        let mut act = z.clone();
        for l in &self.layers {
            let u = &l.weights * &act;
            act = u.map(|v| l.activation.value(v));
            pre.push(u);
        }
        let r = a * &act - y;
        let mut grad = a.tr_mul(&r) * 2.0;
        for (l, u) in self.layers.iter().zip(&pre).rev() {
            let delta = grad.component_mul(&u.map(|v| l.activation.derivative(v)));
            grad = l.weights.tr_mul(&delta);
        }
        (r.norm_squared(), grad)
    }

    fn loss(&self, a: &DMatrix<f64>, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let x = self.layers.iter().fold(z.clone(), |v, l| (&l.weights * v).map(|u| l.activation.value(u)));
        (a * x - y).norm_squared()
    }
}

/// Worst pair found by [`check_srec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrecReport {
    pub pairs: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub seed_sketch: u64,
    pub seed_plan: u64,
    /// `min ‖A(x₁−x₂)‖ − (1−ε1)‖x₁−x₂‖ + ε2` over pairs.
    pub worst_slack: f64,
    pub worst_pair: usize,
    pub pass: bool,
}

/// Slack of the S-REC inequality for one difference `d = x₁ − x₂`.
fn srec_slack(ad_norm: f64, d_norm: f64, eps1: f64, eps2: f64) -> f64 {
    ad_norm - (1.0 - eps1) * d_norm + eps2
}

/// Checks the S-REC inequality on pairs `(z_{2i}, z_{2i+1})` of `plan`,
/// which must hold an even number of points.
pub fn check_srec(a: &SketchMatrix, g: &Generator, plan: &SamplePlan, eps1: f64, eps2: f64) -> Result<SrecReport> {
    if a.cols() != g.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.output_dim(),
            actual: a.cols(),
        });
    }
    if plan.len() % 2 != 0 {
        return Err(Error::param("plan", "pair plans need an even number of points"));
    }
    let pairs = plan.len() / 2;
    const CHUNK: usize = 512;
    let worst = (0..pairs.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..pairs.min((c + 1) * CHUNK);
            let k = g.input_dim();
            let z1 = DMatrix::from_columns(&range.clone().map(|i| plan.point(k, 2 * i)).collect::<Vec<_>>());
            let z2 = DMatrix::from_columns(&range.clone().map(|i| plan.point(k, 2 * i + 1)).collect::<Vec<_>>());
            let d = g.generate_batch(&z1)? - g.generate_batch(&z2)?;
            let ad = a.apply_batch(&d)?;
            Ok(d.column_iter()
                .zip(ad.column_iter())
                .zip(range)
                .map(|((d, ad), i)| (srec_slack(ad.norm(), d.norm(), eps1, eps2), i))
                .fold((f64::INFINITY, usize::MAX), |w, s| if s.0 < w.0 { s } else { w }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((f64::INFINITY, usize::MAX), |w, s| if s.0 < w.0 { s } else { w });
    Ok(SrecReport {
        pairs,
        m: a.rows(),
        n: a.cols(),
        k: g.input_dim(),
        eps1,
        eps2,
        seed_sketch: a.seed(),
        seed_plan: plan.seed(),
        worst_slack: worst.0,
        worst_pair: worst.1,
        pass: worst.0 >= 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoverOptions {
    /// Gaussian starting points, in addition to `z = 0`.
    pub restarts: usize,
    pub iters: usize,
    /// Initial step; doubled after each accepted step, halved on rejection.
    pub step: f64,
    pub seed: u64,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        RecoverOptions {
            restarts: 20,
            iters: 2000,
            step: 0.1,
            seed: 0,
        }
    }
}

/// Armijo constant of the backtracking search.
const ARMIJO: f64 = 1e-4;
/// Halvings tried before a restart is declared converged.
const MAX_HALVINGS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub z: Vec<f64>,
    /// `‖y − A·G(z)‖`.
    pub residual: f64,
    pub iterations: usize,
    /// A non-finite gradient or objective stopped this restart.
    pub aborted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub z_hat: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub residual: f64,
    /// `‖x_true − x_hat‖`, filled in by [`RecoveryResult::score`].
    pub reconstruction_error: Option<f64>,
    /// Index of the winning start (0 is `z = 0`).
    pub best_restart: usize,
    pub restarts_used: usize,
    /// Iterations of the winning start.
    pub iterations: usize,
    pub aborted_restarts: usize,
    pub seed: u64,
}

impl RecoveryResult {
    pub fn score(mut self, x_true: &DVector<f64>) -> Self {
        self.reconstruction_error = Some((x_true - DVector::from_column_slice(&self.x_hat)).norm());
        self
    }
}

/// Gradient descent with backtracking from `start`. Returns the outcome and
/// the objective after each accepted step.
pub fn descend(g: &Generator, a: &DMatrix<f64>, y: &DVector<f64>, start: DVector<f64>, iters: usize, step: f64) -> (RestartOutcome, Vec<f64>) {
    let mut z = start;
    let (mut h, mut grad) = g.objective(a, y, &z);
    let mut trace = vec![h];
    let mut s = step;
    let mut done = 0;
    let mut aborted = !h.is_finite();
    while done < iters && !aborted && h > 0.0 {
        if !grad.iter().all(|v| v.is_finite()) {
            aborted = true;
            break;
        }
        let g2 = grad.norm_squared();
        if g2 == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &z - &grad * s;
            let hc = g.loss(a, y, &cand);
            if hc.is_finite() && hc <= h - ARMIJO * s * g2 {
                accepted = Some(cand);
                break;
            }
            s *= 0.5;
        }
        let Some(next) = accepted else { break };
        z = next;
        (h, grad) = g.objective(a, y, &z);
        if !h.is_finite() {
            aborted = true;
            break;
        }
        trace.push(h);
        done += 1;
        s *= 2.0;
    }
    (
        RestartOutcome {
            z: z.as_slice().to_vec(),
            residual: h.max(0.0).sqrt(),
            iterations: done,
            aborted,
        },
        trace,
    )
}

/// Minimizes `‖y − A·G(z)‖²` from `z = 0` and `opts.restarts` Gaussian
/// starts, keeping the smallest residual (ties go to the lower index).
pub fn recover(g: &Generator, a: &SketchMatrix, y: &DVector<f64>, opts: &RecoverOptions) -> Result<RecoveryResult> {
    if a.cols() != g.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.output_dim(),
            actual: a.cols(),
        });
    }
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            actual: y.len(),
        });
    }
    if !(opts.step > 0.0) {
        return Err(Error::param("step", "must be positive"));
    }
    let k = g.input_dim();
    let outcomes: Vec<RestartOutcome> = (0..=opts.restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                DVector::zeros(k)
            } else {
                DVector::from_vec(Stream::new(derive_seed(opts.seed, r as u64)).gaussian_vec(k))
            };
            descend(g, a.matrix(), y, start, opts.iters, opts.step).0
        })
        .collect();
    let (best, out) = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.residual.is_finite())
        .fold(None::<(usize, &RestartOutcome)>, |acc, (i, o)| match acc {
            Some((_, b)) if b.residual <= o.residual => acc,
            _ => Some((i, o)),
        })
        .ok_or_else(|| Error::param("recover", "every restart diverged"))?;
    let z_hat = DVector::from_column_slice(&out.z);
    let x_hat = g.generate(&z_hat)?;
    Ok(RecoveryResult {
        z_hat: out.z.clone(),
        x_hat: x_hat.as_slice().to_vec(),
        residual: out.residual,
        reconstruction_error: None,
        best_restart: best,
        restarts_used: outcomes.len(),
        iterations: out.iterations,
        aborted_restarts: outcomes.iter().filter(|o| o.aborted).count(),
        seed: opts.seed,
    })
}

/// `2 × max ‖G(u) − G(v)‖/‖u − v‖` over `pairs` pairs of inputs. Half of
/// the pairs are independent draws from `inputs`, half are `u` and a nearby
/// `u + δ·dir` with `δ` log-uniform on `[10⁻³, 1]`.
pub fn estimate_lipschitz(g: &Generator, inputs: &DMatrix<f64>, pairs: usize, seed: u64) -> Result<f64> {
    if inputs.nrows() != g.input_dim() || inputs.ncols() == 0 {
        return Err(Error::param("inputs", "need at least one input of the generator's width"));
    }
    let dim = inputs.nrows();
    let (us, vs): (Vec<DVector<f64>>, Vec<DVector<f64>>) = (0..pairs)
        .map(|i| {
            let mut s = Stream::new(derive_seed(seed, i as u64));
            let u = inputs.column(s.below(inputs.ncols())).into_owned();
            let v = if i % 2 == 0 {
                inputs.column(s.below(inputs.ncols())).into_owned()
            } else {
                let delta = (1e-3f64.ln() * (1.0 - s.uniform())).exp();
                &u + DVector::from_vec(s.unit_vector(dim)) * delta
            };
            (u, v)
        })
        .unzip();
    let gu = g.generate_batch(&DMatrix::from_columns(&us))?;
    let gv = g.generate_batch(&DMatrix::from_columns(&vs))?;
    let max = (0..pairs)
        .filter_map(|i| {
            let d = (&us[i] - &vs[i]).norm();
            (d > 0.0).then(|| (gu.column(i) - gv.column(i)).norm() / d)
        })
        .fold(0.0, f64::max);
    Ok(2.0 * max)
}

/// Replaces layer 1's activation with its PWL approximant at tolerance
/// `eps2/(n·L_est)`, `n` being the larger of the output and layer-1 widths.
/// Layers after the first must be bounded.
pub fn deep_pwl_surrogate(g: &Generator, eps2: f64, l_est: f64) -> Result<(Generator, f64)> {
    if g.depth() < 2 {
        return Err(Error::param("generator", format!("depth {} < 2", g.depth())));
    }
    if !(eps2 > 0.0 && l_est > 0.0) {
        return Err(Error::param("eps2, L_est", "must be positive"));
    }
    for (i, l) in g.layers().iter().enumerate().skip(1) {
        if l.activation.magnitude_bound().is_none() {
            return Err(Error::Unsupported {
                fixture: l.activation.name(),
                what: if i == 1 { "a magnitude bound (layer 2)" } else { "a magnitude bound (deep layer)" },
            });
        }
    }
    let LayerActivation::Smooth(nl) = g.layers()[0].activation else {
        return Err(Error::param("generator", "layer 1 is already piecewise linear"));
    };
    let n = g.output_dim().max(g.layers()[0].weights.nrows());
    let tol = eps2 / (n as f64 * l_est);
    let pwl = build_pwl(&nl, &nl.constants(), tol.min(1.0))?;
    let mut layers = g.layers().to_vec();
    layers[0].activation = LayerActivation::Pwl(Arc::new(pwl));
    Ok((Generator::new(layers)?, tol))
}

/// Settings for `csgen run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsConfig {
    pub fixture: Nonlinearity,
    pub depth: usize,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    /// `‖η‖ / ‖A·G(z*)‖`; 0 for noiseless problems.
    pub noise: f64,
    pub restarts: usize,
    pub iters: usize,
    pub step: f64,
    pub srec_pairs: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub base_seed: u64,
}

impl Default for CsConfig {
    fn default() -> Self {
        CsConfig {
            fixture: Nonlinearity::Tanh,
            depth: 2,
            k: 4,
            n: 128,
            m: 64,
            trials: 20,
            noise: 0.0,
            restarts: 20,
            iters: 2000,
            step: 0.1,
            srec_pairs: 1000,
            eps1: 0.5,
            eps2: 0.1,
            base_seed: 0,
        }
    }
}

/// Widths `[k, n, …, n]` for a depth-`d` generator.
pub fn widths(k: usize, n: usize, depth: usize) -> Vec<usize> {
    std::iter::once(k).chain(std::iter::repeat(n).take(depth)).collect()
}

/// One recovery problem and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsTrial {
    pub trial: usize,
    pub seed: u64,
    pub signal_norm: f64,
    pub noise_norm: f64,
    pub result: RecoveryResult,
    pub srec: Option<SrecReport>,
    /// Noiseless: error ≤ 10⁻²·‖G(z*)‖; noisy: error ≤ 5·‖η‖.
    pub pass: bool,
}

/// Generator, sketch, truth and measurements of trial `t`, then recovery.
pub fn run_cs_trial(cfg: &CsConfig, t: usize) -> Result<CsTrial> {
    if cfg.depth == 0 {
        return Err(Error::param("depth", "must be at least 1"));
    }
    let seed = derive_seed(cfg.base_seed, t as u64);
    let g = Generator::random(&widths(cfg.k, cfg.n, cfg.depth), &vec![cfg.fixture; cfg.depth], derive_seed(seed, 0))?;
    let a = sample_sketch(cfg.m, cfg.n, derive_seed(seed, 1))?;
    let mut s = Stream::new(derive_seed(seed, 2));
    let z_star = DVector::from_vec(s.gaussian_vec(cfg.k));
    let x_star = g.generate(&z_star)?;
    let clean = a.apply(&x_star)?;
    let noise_norm = cfg.noise * clean.norm();
    let y = if noise_norm > 0.0 {
        &clean + DVector::from_vec(s.unit_vector(cfg.m)) * noise_norm
    } else {
        clean
    };
    let opts = RecoverOptions {
        restarts: cfg.restarts,
        iters: cfg.iters,
        step: cfg.step,
        seed: derive_seed(seed, 3),
    };
    let result = recover(&g, &a, &y, &opts)?.score(&x_star);
    let srec = if cfg.srec_pairs > 0 {
        let plan = SamplePlan::default_for(cfg.k, 2 * cfg.srec_pairs, derive_seed(seed, 4))?;
        Some(check_srec(&a, &g, &plan, cfg.eps1, cfg.eps2)?)
    } else {
        None
    };
    let err = result.reconstruction_error.unwrap_or(f64::INFINITY);
    let pass = if noise_norm > 0.0 {
        err <= 5.0 * noise_norm
    } else {
        err <= 1e-2 * x_star.norm()
    };
    Ok(CsTrial {
        trial: t,
        seed,
        signal_norm: x_star.norm(),
        noise_norm,
        result,
        srec,
        pass,
    })
}

pub fn run_cs(cfg: &CsConfig) -> Result<Vec<CsTrial>> {
    (0..cfg.trials).into_par_iter().map(|t| run_cs_trial(cfg, t)).collect()
}

pub const CS_HEADER: [&str; 13] = [
    "trial",
    "seed",
    "k",
    "n",
    "m",
    "depth",
    "fixture",
    "noise_norm",
    "residual",
    "recon_error",
    "restarts_used",
    "srec_slack",
    "pass",
];

pub fn write_cs_csv<W: Write>(cfg: &CsConfig, trials: &[CsTrial], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CS_HEADER)?;
    for t in trials {
        w.write_record([
            t.trial.to_string(),
            t.seed.to_string(),
            cfg.k.to_string(),
            cfg.n.to_string(),
            cfg.m.to_string(),
            cfg.depth.to_string(),
            cfg.fixture.name().to_string(),
            t.noise_norm.to_string(),
            t.result.residual.to_string(),
            t.result.reconstruction_error.map(|e| e.to_string()).unwrap_or_default(),
            t.result.restarts_used.to_string(),
            t.srec.as_ref().map(|s| s.worst_slack.to_string()).unwrap_or_default(),
            t.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cs_sweep(cfg: &CsConfig, path: &Path) -> Result<Vec<CsTrial>> {
    let trials = run_cs(cfg)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_cs_csv(cfg, &trials, std::io::BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(trials)
}

/// Median of a non-empty slice (mean of the middle two for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::RadiusDistribution;
    use proptest::prelude::*;

    fn tanh2(k: usize, n: usize, seed: u64) -> Generator {
        Generator::random(&widths(k, n, 2), &[Nonlinearity::Tanh; 2], seed).unwrap()
    }

    #[test]
    fn generate_examples() {
        let g = Generator::random(&[3, 7], &[Nonlinearity::Tanh], 1).unwrap();
        assert!(g.generate(&DVector::zeros(3)).unwrap().iter().all(|&v| v == 0.0));
        let g = Generator::random(&[3, 7], &[Nonlinearity::Sigmoid], 1).unwrap();
        assert!(g.generate(&DVector::zeros(3)).unwrap().iter().all(|&v| v == 0.5));

        // Second layer is an identity extension.
        let first = Generator::random(&[3, 5], &[Nonlinearity::Tanh], 2).unwrap().layers()[0].clone();
        let ext = DMatrix::from_fn(6, 5, |i, j| if i == j { 1.0 } else { 0.0 });
        let g = Generator::new(vec![first, Layer { weights: ext, activation: LayerActivation::Smooth(Nonlinearity::Tanh) }]).unwrap();
        assert!(g.generate(&DVector::zeros(3)).unwrap().iter().all(|&v| v == 0.0));
        assert!(g.generate(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn generator_validation() {
        let l = |r, c| Layer {
            weights: DMatrix::zeros(r, c),
            activation: LayerActivation::Smooth(Nonlinearity::Tanh),
        };
        assert!(Generator::new(vec![]).is_err());
        assert!(Generator::new(vec![l(4, 2), l(3, 5)]).is_err());
        assert!(Generator::new(vec![l(4, 2), l(3, 4)]).is_ok());
        assert!(Generator::random(&[2], &[], 0).is_err());
        assert!(Generator::random(&[2, 3], &[Nonlinearity::Tanh; 2], 0).is_err());
    }

    #[test]
    fn weights_have_inverse_fan_in_variance() {
        let g = Generator::random(&[200, 300], &[Nonlinearity::Tanh], 5).unwrap();
        let w = &g.layers()[0].weights;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var * 200.0 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for nl in [Nonlinearity::Tanh, Nonlinearity::Sigmoid, Nonlinearity::SoftPlus, Nonlinearity::ArcTan] {
            let g = Generator::random(&[3, 6, 5], &[nl; 2], 3).unwrap();
            let a = sample_sketch(4, 5, 4).unwrap();
            let y = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1]);
            let z = DVector::from_vec(vec![0.4, -1.1, 0.7]);
            let (_, grad) = g.objective(a.matrix(), &y, &z);
            for i in 0..3 {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (g.loss(a.matrix(), &y, &zp) - g.loss(a.matrix(), &y, &zm)) / (2.0 * h);
                assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{nl} {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn srec_examples() {
        let g = Generator::random(&widths(4, 32, 2), &[Nonlinearity::Sigmoid; 2], 1).unwrap();
        let a = sample_sketch(32, 32, 2).unwrap();
        // Identical points: 0 ≥ −ε2.
        let same = SamplePlan::new(2, RadiusDistribution::Fixed { r: 0.0 }, 0).unwrap();
        let r = check_srec(&a, &g, &same, 0.5, 0.1).unwrap();
        assert!(r.pass && (r.worst_slack - 0.1).abs() < 1e-15);

        let zero = SketchMatrix::from_matrix(DMatrix::zeros(8, 32)).unwrap();
        let plan = SamplePlan::new(200, RadiusDistribution::Gaussian, 5).unwrap();
        let r = check_srec(&zero, &g, &plan, 0.5, 0.01).unwrap();
        assert!(!r.pass && r.worst_slack < 0.0);

        let odd = SamplePlan::new(3, RadiusDistribution::Gaussian, 5).unwrap();
        assert!(check_srec(&a, &g, &odd, 0.5, 0.1).is_err());
    }

    #[test]
    fn zero_measurement_is_recovered_at_the_origin() {
        let g = tanh2(4, 16, 1);
        let a = sample_sketch(8, 16, 2).unwrap();
        let r = recover(&g, &a, &DVector::zeros(8), &RecoverOptions { restarts: 3, iters: 50, step: 0.1, seed: 1 }).unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.best_restart, 0);
        assert!(r.z_hat.iter().all(|&v| v == 0.0));
        assert_eq!(r.restarts_used, 4);
    }

    #[test]
    fn orthogonal_square_sketch_recovers_exactly() {
        let (k, n) = (3, 24);
        let g = tanh2(k, n, 7);
        let q = crate::subspace::random_subspace(n, n, 8).unwrap();
        let a = SketchMatrix::from_matrix(q.basis().clone()).unwrap();
        for seed in 0..3 {
            let z = DVector::from_vec(Stream::new(seed).gaussian_vec(k));
            let x = g.generate(&z).unwrap();
            let y = a.apply(&x).unwrap();
            let r = recover(&g, &a, &y, &RecoverOptions { restarts: 6, iters: 3000, step: 0.1, seed }).unwrap().score(&x);
            if r.residual <= 1e-8 {
                assert!(r.reconstruction_error.unwrap() <= 1e-6, "{r:?}");
            }
        }
    }

    #[test]
    fn restarts_are_deterministic_across_threads() {
        let g = tanh2(4, 32, 3);
        let a = sample_sketch(16, 32, 4).unwrap();
        let y = a.apply(&g.generate(&DVector::from_vec(vec![0.5, -1.0, 0.2, 1.3])).unwrap()).unwrap();
        let opts = RecoverOptions { restarts: 5, iters: 200, step: 0.1, seed: 9 };
        let run = |t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(|| recover(&g, &a, &y, &opts).unwrap());
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn surrogate_preconditions() {
        let g1 = Generator::random(&[3, 8], &[Nonlinearity::Tanh], 1).unwrap();
        assert!(deep_pwl_surrogate(&g1, 0.1, 1.0).is_err());
        let unbounded = Generator::random(&[3, 8, 8], &[Nonlinearity::Tanh, Nonlinearity::SoftPlus], 1).unwrap();
        assert!(matches!(deep_pwl_surrogate(&unbounded, 0.1, 1.0), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn surrogate_error_and_norm_bounds() {
        let (k, n) = (4, 32);
        let g = tanh2(k, n, 11);
        let plan = SamplePlan::new(2000, RadiusDistribution::Gaussian, 3).unwrap();
        let zs = plan.points(k);
        let (g1, g2) = g.split(1).unwrap();
        let l_est = estimate_lipschitz(&g2, &g1.generate_batch(&zs).unwrap(), 2000, 5).unwrap();
        let (sur, tol) = deep_pwl_surrogate(&g, 0.1, l_est).unwrap();
        let diff = g.generate_batch(&zs).unwrap() - sur.generate_batch(&zs).unwrap();
        let worst = diff.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(worst <= 0.1 / (n as f64).sqrt(), "{worst}");
        let (s1, _) = sur.split(1).unwrap();
        let cap = (1.0 + tol) * (n as f64).sqrt();
        assert!(s1.generate_batch(&zs).unwrap().column_iter().all(|c| c.norm() <= cap));
    }

    #[test]
    fn descent_never_increases_objective() {
        let g = tanh2(4, 32, 21);
        let a = sample_sketch(16, 32, 22).unwrap();
        let y = DVector::from_vec(Stream::new(1).gaussian_vec(16));
        let (_, trace) = descend(&g, a.matrix(), &y, DVector::from_vec(vec![1.0, -2.0, 0.3, 0.0]), 300, 0.1);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn srec_slack_is_symmetric(seed in any::<u64>()) {
            let g = Generator::random(&widths(3, 12, 2), &[Nonlinearity::Sigmoid; 2], seed).unwrap();
            let a = sample_sketch(6, 12, seed ^ 7).unwrap();
            let mut s = Stream::new(seed);
            let z1 = DVector::from_vec(s.gaussian_vec(3));
            let z2 = DVector::from_vec(s.gaussian_vec(3));
            let slack = |p: &DVector<f64>, q: &DVector<f64>| {
                let d = g.generate(p).unwrap() - g.generate(q).unwrap();
                srec_slack(a.apply(&d).unwrap().norm(), d.norm(), 0.5, 0.1)
            };
            prop_assert_eq!(slack(&z1, &z2), slack(&z2, &z1));
        }
    }
}
