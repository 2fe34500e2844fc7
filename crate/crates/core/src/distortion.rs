//! Empirical distortion of a sketch over `S = {f(x) : x ∈ Z}`.
//!
//! A sketch `Π` is an `(ε1, ε2)`-error embedding of `S` when
//! `(1 − ε1)‖y‖ − ε2 ≤ ‖Πy‖ ≤ (1 + ε1)‖y‖ + ε2` for every `y ∈ S`. The
//! measurements here evaluate that inequality on sampled points only.
//!
//! Samples are split at `‖y‖ = ε/√n` into a large-norm part `S_L` and a
//! small-norm part `S_U`, and worst ratios are reported per part.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::catalog::Nonlinearity;
use crate::error::{Error, Result};
use crate::rng::{derive_path, derive_seed, Stream};
use crate::sketch::{required_dim, sample_sketch, DimMode, DimSpec, SketchMatrix};
use crate::subspace::{random_subspace, SamplePlan, Subspace};

/// Columns evaluated per parallel task.
const CHUNK: usize = 256;
/// Multipliers of `ε1` at which the additive fit curve is reported.
pub const FIT_CURVE: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Additive,
    Relative,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Additive => "additive",
            Mode::Relative => "relative",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "additive" => Ok(Mode::Additive),
            "relative" => Ok(Mode::Relative),
            _ => Err(Error::param("mode", format!("`{s}` is not additive or relative"))),
        }
    }
}

/// Max-monoid over per-sample ratios.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioStats {
    pub samples: usize,
    pub zero_norm: usize,
    /// `max(‖Πy‖/‖y‖ − 1)`, floored at 0.
    pub max_rel_over: f64,
    /// `max(1 − ‖Πy‖/‖y‖)`, floored at 0.
    pub min_rel_under: f64,
    /// Smallest `ε2` that works at each `ε1` in the requested curve.
    pub fits: [f64; 3],
    pub worst_sl: Option<f64>,
    pub worst_su: Option<f64>,
}

impl RatioStats {
    fn empty() -> Self {
        RatioStats {
            samples: 0,
            zero_norm: 0,
            max_rel_over: 0.0,
            min_rel_under: 0.0,
            fits: [0.0; 3],
            worst_sl: None,
            worst_su: None,
        }
    }

    fn merge(self, o: Self) -> Self {
        let opt_max = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => Some(x.max(y)),
            (x, None) => x,
            (None, y) => y,
        };
        RatioStats {
            samples: self.samples + o.samples,
            zero_norm: self.zero_norm + o.zero_norm,
            max_rel_over: self.max_rel_over.max(o.max_rel_over),
            min_rel_under: self.min_rel_under.max(o.min_rel_under),
            fits: std::array::from_fn(|i| self.fits[i].max(o.fits[i])),
            worst_sl: opt_max(self.worst_sl, o.worst_sl),
            worst_su: opt_max(self.worst_su, o.worst_su),
        }
    }

    /// `max |‖Πy‖/‖y‖ − 1|` over nonzero samples.
    pub fn worst_ratio(&self) -> f64 {
        self.max_rel_over.max(self.min_rel_under)
    }
}

/// Folds the columns of `ys` and their images into ratio statistics.
/// `fit_eps1` are the `ε1` values of the additive fit curve.
pub fn ratio_stats(pi: &SketchMatrix, ys: &DMatrix<f64>, threshold: f64, fit_eps1: [f64; 3]) -> Result<RatioStats> {
    if ys.nrows() != pi.cols() {
        return Err(Error::DimensionMismatch {
            expected: pi.cols(),
            actual: ys.nrows(),
        });
    }
    let chunks: Vec<usize> = (0..ys.ncols()).step_by(CHUNK).collect();
    let parts: Vec<RatioStats> = chunks
        .par_iter()
        .map(|&start| {
            let width = CHUNK.min(ys.ncols() - start);
            let block = ys.columns(start, width);
            let images = pi.matrix() * block;
            let mut s = RatioStats::empty();
            for (y, py) in block.column_iter().zip(images.column_iter()) {
                let (ny, npy) = (y.norm(), py.norm());
                s.samples += 1;
                for (fit, e1) in s.fits.iter_mut().zip(fit_eps1) {
                    *fit = fit.max(npy - (1.0 + e1) * ny).max((1.0 - e1) * ny - npy);
                }
                if ny == 0.0 {
                    s.zero_norm += 1;
                    continue;
                }
                let r = npy / ny;
                s.max_rel_over = s.max_rel_over.max(r - 1.0);
                s.min_rel_under = s.min_rel_under.max(1.0 - r);
                let dev = (r - 1.0).abs();
                let part = if ny > threshold { &mut s.worst_sl } else { &mut s.worst_su };
                *part = Some(part.map_or(dev, |w| w.max(dev)));
            }
            s
        })
        .collect();
    Ok(parts.into_iter().fold(RatioStats::empty(), RatioStats::merge))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub fixture: String,
    pub mode: Mode,
    pub samples: usize,
    pub zero_norm: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub seed_sketch: u64,
    pub seed_subspace: u64,
    pub seed_plan: u64,
    pub eps1: f64,
    /// Additive target; 0 in relative mode.
    pub eps2: f64,
    pub max_rel_over: f64,
    pub min_rel_under: f64,
    /// Smallest `ε2` satisfying every sample at `eps1`.
    pub additive_fit: f64,
    /// `(ε1, fit)` at `ε1·{0.5, 1, 2}`.
    pub additive_curve: Vec<(f64, f64)>,
    /// `ε/√n`, with `ε` replaced by `min(g1, ε)` in relative mode.
    pub split_threshold: f64,
    pub worst_sl: Option<f64>,
    pub worst_su: Option<f64>,
    pub pass: bool,
}

fn report(
    pi: &SketchMatrix,
    f: &dyn Activation,
    name: &str,
    space: &Subspace,
    zs: &DMatrix<f64>,
    seed_plan: u64,
    mode: Mode,
    eps1: f64,
    eps2: f64,
    threshold: f64,
) -> Result<DistortionReport> {
    if pi.cols() != space.n() {
        return Err(Error::DimensionMismatch {
            expected: space.n(),
            actual: pi.cols(),
        });
    }
    let ys = (space.basis() * zs).map(|v| f.value(v));
    let curve = FIT_CURVE.map(|c| c * eps1);
    let s = ratio_stats(pi, &ys, threshold, curve)?;
    let additive_fit = s.fits[1];
    let pass = match mode {
        Mode::Additive => additive_fit <= eps2,
        Mode::Relative => s.worst_ratio() <= eps1,
    };
    Ok(DistortionReport {
        fixture: name.to_string(),
        mode,
        samples: s.samples,
        zero_norm: s.zero_norm,
        m: pi.rows(),
        n: space.n(),
        k: space.k(),
        seed_sketch: pi.seed(),
        seed_subspace: space.seed(),
        seed_plan,
        eps1,
        eps2,
        max_rel_over: s.max_rel_over,
        min_rel_under: s.min_rel_under,
        additive_fit,
        additive_curve: curve.into_iter().zip(s.fits).collect(),
        split_threshold: threshold,
        worst_sl: s.worst_sl,
        worst_su: s.worst_su,
        pass,
    })
}

/// Additive-error measurement; passes when the fit at `eps1` is at most
/// `eps2`.
pub fn measure<A: Activation + std::fmt::Display>(
    pi: &SketchMatrix,
    f: &A,
    space: &Subspace,
    plan: &SamplePlan,
    eps1: f64,
    eps2: f64,
) -> Result<DistortionReport> {
    let zs = plan.points(space.k());
    measure_points(pi, f, space, &zs, plan.seed(), eps1, eps2)
}

/// [`measure`] on explicit points `z` (columns of `zs`).
pub fn measure_points<A: Activation + std::fmt::Display>(
    pi: &SketchMatrix,
    f: &A,
    space: &Subspace,
    zs: &DMatrix<f64>,
    seed_plan: u64,
    eps1: f64,
    eps2: f64,
) -> Result<DistortionReport> {
    let threshold = eps1 / (space.n() as f64).sqrt();
    report(pi, f, &f.to_string(), space, zs, seed_plan, Mode::Additive, eps1, eps2, threshold)
}

/// Relative-error measurement: passes when every nonzero sample has
/// `|‖Πy‖/‖y‖ − 1| ≤ eps`. Needs near-origin constants.
pub fn measure_relative(
    pi: &SketchMatrix,
    nl: &Nonlinearity,
    space: &Subspace,
    plan: &SamplePlan,
    eps: f64,
) -> Result<DistortionReport> {
    let zs = plan.points(space.k());
    measure_relative_points(pi, nl, space, &zs, plan.seed(), eps)
}

pub fn measure_relative_points(
    pi: &SketchMatrix,
    nl: &Nonlinearity,
    space: &Subspace,
    zs: &DMatrix<f64>,
    seed_plan: u64,
    eps: f64,
) -> Result<DistortionReport> {
    let threshold = relative_threshold(nl, eps, space.n())?;
    report(pi, nl, nl.name(), space, zs, seed_plan, Mode::Relative, eps, 0.0, threshold)
}

/// `min(g1, ε)/√n`.
pub fn relative_threshold(nl: &Nonlinearity, eps: f64, n: usize) -> Result<f64> {
    let near = nl.constants().near_origin.ok_or_else(|| Error::Unsupported {
        fixture: nl.name().to_string(),
        what: "near-origin constants",
    })?;
    Ok(near.g1.min(eps) / (n as f64).sqrt())
}

/// Radii bracketing the split threshold plus far-out radii where `f` is on
/// its asymptotes, each repeated `per` times.
pub fn probe_radii(threshold: f64, n: usize, per: usize) -> Vec<f64> {
    let far = 1e3 * (n as f64).sqrt();
    [0.25, 0.5, 0.9, 0.99, 1.01, 1.1, 2.0, 4.0]
        .iter()
        .map(|s| s * threshold)
        .chain([far])
        .flat_map(|r| std::iter::repeat(r).take(per))
        .collect()
}

/// Points `z` for which one coordinate of `Qz` sits exactly on a kink of
/// `f″` (or of a PWL approximant). Radii are log-uniform on `[r_min, r_max]`.
pub fn aligned_points(space: &Subspace, targets: &[f64], count: usize, r_min: f64, r_max: f64, seed: u64) -> DMatrix<f64> {
    let (n, k) = (space.n(), space.k());
    if targets.is_empty() || count == 0 {
        return DMatrix::zeros(k, 0);
    }
    let cols: Vec<DVector<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut s = Stream::new(derive_seed(seed, i as u64));
            let r = (r_min.ln() + s.uniform() * (r_max.ln() - r_min.ln())).exp();
            let mut z = DVector::from_vec(s.unit_vector(k)) * r;
            let row = space.basis().row(s.below(n)).transpose();
            let target = targets[s.below(targets.len())];
            let q2 = row.norm_squared();
            if q2 > 1e-20 {
                z += &row * ((target - row.dot(&z)) / q2);
            }
            z
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// One cell of a sweep: everything except the trial index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub fixture: Nonlinearity,
    pub mode: Mode,
    pub k: usize,
    pub n: usize,
    /// `None` means "from the dimension formula".
    pub m_override: Option<usize>,
    pub eps1: f64,
    pub eps2: f64,
    pub delta: f64,
    pub constant_c: f64,
}

impl Cell {
    pub fn dimension(&self) -> Result<usize> {
        if let Some(m) = self.m_override {
            if m == 0 {
                return Err(Error::param("m", "must be positive"));
            }
            return Ok(m);
        }
        let mode = match self.mode {
            Mode::Additive => DimMode::Additive {
                eps1: self.eps1,
                eps2: self.eps2,
            },
            Mode::Relative => DimMode::Relative { eps: self.eps1 },
        };
        Ok(required_dim(&DimSpec {
            k: self.k,
            n: self.n,
            delta: self.delta,
            constant_c: self.constant_c,
            mode,
        })?
        .m)
    }
}

/// Sample counts for one trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    /// Log-uniform samples over `[10⁻⁴√n, 10²√n]`.
    pub samples: usize,
    /// Copies of each threshold / far probe radius.
    pub probes_per_radius: usize,
    /// Points with a coordinate on a kink of `f″`.
    pub aligned: usize,
}

impl Default for TrialPlan {
    fn default() -> Self {
        TrialPlan {
            samples: 1000,
            probes_per_radius: 8,
            aligned: 64,
        }
    }
}

/// Runs trial `trial` of `cell` with seeds derived from `cell_seed`.
pub fn run_trial(cell: &Cell, plan: &TrialPlan, cell_seed: u64, trial: u64) -> Result<DistortionReport> {
    let seed = derive_seed(cell_seed, trial);
    let m = cell.dimension()?;
    let pi = sample_sketch(m, cell.n, derive_seed(seed, 0))?;
    let space = random_subspace(cell.n, cell.k, derive_seed(seed, 1))?;
    let threshold = match cell.mode {
        Mode::Additive => cell.eps1 / (cell.n as f64).sqrt(),
        Mode::Relative => relative_threshold(&cell.fixture, cell.eps1, cell.n)?,
    };
    let seed_plan = derive_seed(seed, 2);
    let sample_plan = SamplePlan::default_for(cell.n, plan.samples.max(1), seed_plan)?
        .with_probes(probe_radii(threshold, cell.n, plan.probes_per_radius))?;
    let root = (cell.n as f64).sqrt();
    let aligned = aligned_points(
        &space,
        cell.fixture.second_derivative_discontinuities(),
        plan.aligned,
        1e-4 * root,
        1e2 * root,
        derive_seed(seed, 3),
    );
    let mut zs = sample_plan.points(cell.k);
    if aligned.ncols() > 0 {
        let width = zs.ncols();
        zs = zs.insert_columns(width, aligned.ncols(), 0.0);
        zs.columns_mut(width, aligned.ncols()).copy_from(&aligned);
    }
    match cell.mode {
        Mode::Additive => measure_points(&pi, &cell.fixture, &space, &zs, seed_plan, cell.eps1, cell.eps2),
        Mode::Relative => measure_relative_points(&pi, &cell.fixture, &space, &zs, seed_plan, cell.eps1),
    }
}

/// Grid of cells and trial settings for [`trial_sweep`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub fixtures: Vec<Nonlinearity>,
    pub modes: Vec<Mode>,
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    /// Sketch rows; empty means "from the dimension formula".
    pub ms: Vec<usize>,
    /// `ε1` in additive mode, `ε` in relative mode.
    pub eps1: Vec<f64>,
    /// Ignored in relative mode.
    pub eps2: Vec<f64>,
    pub delta: Vec<f64>,
    pub constant_c: Vec<f64>,
    pub trials: usize,
    pub plan: TrialPlan,
    pub base_seed: u64,
}

impl SweepConfig {
    /// Cells in row order: fixture, mode, k, n, m, eps1, eps2, delta, C.
    pub fn cells(&self) -> Vec<Cell> {
        let ms: Vec<Option<usize>> = if self.ms.is_empty() {
            vec![None]
        } else {
            self.ms.iter().map(|&m| Some(m)).collect()
        };
        let mut cells = Vec::new();
        for &fixture in &self.fixtures {
            for &mode in &self.modes {
                let eps2: &[f64] = match mode {
                    Mode::Additive => &self.eps2,
                    Mode::Relative => &[0.0],
                };
                for &k in &self.ks {
                    for &n in &self.ns {
                        for &m_override in &ms {
                            for &eps1 in &self.eps1 {
                                for &eps2 in eps2 {
                                    for &delta in &self.delta {
                                        for &constant_c in &self.constant_c {
                                            cells.push(Cell {
                                                fixture,
                                                mode,
                                                k,
                                                n,
                                                m_override,
                                                eps1,
                                                eps2,
                                                delta,
                                                constant_c,
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

pub const SWEEP_HEADER: [&str; 19] = [
    "fixture",
    "mode",
    "k",
    "n",
    "m",
    "eps1",
    "eps2",
    "delta",
    "C",
    "trial",
    "seed",
    "samples",
    "max_rel_over",
    "min_rel_under",
    "additive_fit",
    "split_threshold",
    "worst_SL",
    "worst_SU",
    "pass",
];

/// Per-cell trial reports and the fraction that passed.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub seed: u64,
    pub reports: Vec<DistortionReport>,
}

impl CellResult {
    pub fn pass_rate(&self) -> f64 {
        if self.reports.is_empty() {
            return 0.0;
        }
        self.reports.iter().filter(|r| r.pass).count() as f64 / self.reports.len() as f64
    }
}

/// Runs every trial of every cell in parallel; results keep cell and trial
/// order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<CellResult>> {
    let cells = config.cells();
    for cell in &cells {
        if cell.mode == Mode::Relative && cell.fixture.constants().near_origin.is_none() {
            return Err(Error::Unsupported {
                fixture: cell.fixture.name().to_string(),
                what: "near-origin constants for relative mode",
            });
        }
        cell.dimension()?;
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..config.trials as u64).map(move |t| (c, t)))
        .collect();
    let reports: Vec<DistortionReport> = jobs
        .par_iter()
        .map(|&(c, t)| run_trial(&cells[c], &config.plan, derive_path(config.base_seed, &[c as u64]), t))
        .collect::<Result<_>>()?;
    let mut reports = reports.into_iter();
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(c, cell)| CellResult {
            seed: derive_path(config.base_seed, &[c as u64]),
            reports: reports.by_ref().take(config.trials).collect(),
            cell,
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one row per trial and one `aggregate` row per cell whose `pass`
/// column is the pass rate and whose statistics are maxima over trials.
pub fn write_sweep_csv<W: Write>(results: &[CellResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for res in results {
        let c = &res.cell;
        let m = res.reports.first().map(|r| r.m).unwrap_or(0);
        let prefix = |trial: String, seed: u64| {
            vec![
                c.fixture.name().to_string(),
                c.mode.name().to_string(),
                c.k.to_string(),
                c.n.to_string(),
                m.to_string(),
                c.eps1.to_string(),
                c.eps2.to_string(),
                c.delta.to_string(),
                c.constant_c.to_string(),
                trial,
                seed.to_string(),
            ]
        };
        for (t, r) in res.reports.iter().enumerate() {
            let mut row = prefix(t.to_string(), derive_seed(res.seed, t as u64));
            row.extend([
                r.samples.to_string(),
                r.max_rel_over.to_string(),
                r.min_rel_under.to_string(),
                r.additive_fit.to_string(),
                r.split_threshold.to_string(),
                opt(r.worst_sl),
                opt(r.worst_su),
                r.pass.to_string(),
            ]);
            w.write_record(&row)?;
        }
        let fold = |get: &dyn Fn(&DistortionReport) -> Option<f64>| {
            res.reports.iter().filter_map(get).reduce(f64::max)
        };
        let mut row = prefix("aggregate".to_string(), res.seed);
        row.extend([
            res.reports.iter().map(|r| r.samples).sum::<usize>().to_string(),
            opt(fold(&|r| Some(r.max_rel_over))),
            opt(fold(&|r| Some(r.min_rel_under))),
            opt(fold(&|r| Some(r.additive_fit))),
            opt(res.reports.first().map(|r| r.split_threshold)),
            opt(fold(&|r| r.worst_sl)),
            opt(fold(&|r| r.worst_su)),
            res.pass_rate().to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a sweep and writes its CSV to `path`.
pub fn trial_sweep(config: &SweepConfig, path: &Path) -> Result<Vec<CellResult>> {
    let results = run_sweep(config)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sweep_csv(&results, std::io::BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(results)
}
