//! Gaussian embedding matrices and the target-dimension formulas.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Default cap on `m·n` for a single sketch.
pub const DEFAULT_ENTRY_BUDGET: usize = 1 << 28;
/// Default multiplier in front of the dimension formulas.
pub const DEFAULT_C: f64 = 6.0;
/// Seed of the power-iteration start vector.
const POWER_START_SEED: u64 = 0x5EED_0F_B0B;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    /// iid `N(0, 1/m)` entries.
    Gaussian,
    /// Entries supplied by the caller.
    Fixed,
}

/// A dense `m × n` embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchMatrix {
    data: DMatrix<f64>,
    seed: u64,
    distribution: Distribution,
}

/// Draws an `m × n` matrix with iid `N(0, 1/m)` entries, row by row from one
/// stream.
pub fn sample_sketch(m: usize, n: usize, seed: u64) -> Result<SketchMatrix> {
    sample_sketch_with_budget(m, n, seed, DEFAULT_ENTRY_BUDGET)
}

pub fn sample_sketch_with_budget(m: usize, n: usize, seed: u64, budget: usize) -> Result<SketchMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::param("m, n", format!("sketch shape {m}x{n} must be positive")));
    }
    match m.checked_mul(n) {
        Some(entries) if entries <= budget => {}
        _ => return Err(Error::Resource { rows: m, cols: n, budget }),
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut stream = Stream::new(seed);
    let data = DMatrix::from_row_iterator(m, n, (0..m * n).map(|_| stream.gaussian() * scale));
    Ok(SketchMatrix {
        data,
        seed,
        distribution: Distribution::Gaussian,
    })
}

impl SketchMatrix {
    /// Wraps caller-supplied entries, e.g. an identity or zero test fixture.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::param("data", "matrix must be non-empty"));
        }
        Ok(SketchMatrix {
            data,
            seed: 0,
            distribution: Distribution::Fixed,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_matrix(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// `Π·y`.
    pub fn apply(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                actual: y.len(),
            });
        }
        Ok(&self.data * y)
    }

    /// `Π·Y` for a batch stored as the columns of `ys`.
    pub fn apply_batch(&self, ys: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if ys.nrows() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                actual: ys.nrows(),
            });
        }
        Ok(&self.data * ys)
    }

    /// Power-iteration estimate of `‖Π‖₂` from a fixed pseudo-random start.
    pub fn spectral_norm(&self, iters: usize) -> Result<f64> {
        if iters < 50 {
            return Err(Error::param("iters", format!("{iters} < 50")));
        }
        let mut v = DVector::from_vec(Stream::new(POWER_START_SEED).unit_vector(self.cols()));
        let mut estimate = 0.0;
        for _ in 0..iters {
            let u = &self.data * &v;
            estimate = u.norm();
            let w = self.data.tr_mul(&u);
            let norm = w.norm();
            if norm == 0.0 {
                return Ok(estimate);
            }
            v = w / norm;
        }
        Ok(estimate.max((&self.data * &v).norm()))
    }
}

/// Which target-dimension formula to use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DimMode {
    /// `t`-piece PWL nonlinearity: `(k ln(n t) + ln(1/δ)) / ε²`.
    Piecewise { t: usize, eps: f64 },
    /// `(k ln(n/ε2) + ln(1/δ)) / ε1²`.
    Additive { eps1: f64, eps2: f64 },
    /// `(k ln(n/ε) + ln(1/δ)) / ε²`.
    Relative { eps: f64 },
    /// Same formula as additive, used for pairwise differences.
    Srec { eps1: f64, eps2: f64 },
}

impl DimMode {
    pub fn name(&self) -> &'static str {
        match self {
            DimMode::Piecewise { .. } => "piecewise",
            DimMode::Additive { .. } => "additive",
            DimMode::Relative { .. } => "relative",
            DimMode::Srec { .. } => "srec",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimSpec {
    pub k: usize,
    pub n: usize,
    pub delta: f64,
    pub constant_c: f64,
    pub mode: DimMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub m: usize,
    /// Formula value before clamping to `[1, n]`.
    pub unclamped: u64,
    /// The formula exceeded `n`.
    pub clamped: bool,
}

fn unit_interval(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(Error::param(name, format!("{v} is outside (0, 1]")))
    }
}

/// `⌈C·(k·ln(arg) + ln(1/δ))/ε²⌉` clamped to `[1, n]`.
pub fn required_dim(spec: &DimSpec) -> Result<Dimension> {
    if spec.k == 0 || spec.n == 0 {
        return Err(Error::param("k, n", "must be positive"));
    }
    let delta = unit_interval("delta", spec.delta)?;
    if !(spec.constant_c > 0.0 && spec.constant_c.is_finite()) {
        return Err(Error::param("C", format!("{} is not positive", spec.constant_c)));
    }
    let n = spec.n as f64;
    let (arg, eps) = match spec.mode {
        DimMode::Piecewise { t, eps } => {
            if t == 0 {
                return Err(Error::param("t", "piece count must be positive"));
            }
            (n * t as f64, unit_interval("eps", eps)?)
        }
        DimMode::Additive { eps1, eps2 } | DimMode::Srec { eps1, eps2 } => {
            (n / unit_interval("eps2", eps2)?, unit_interval("eps1", eps1)?)
        }
        DimMode::Relative { eps } => {
            let eps = unit_interval("eps", eps)?;
            (n / eps, eps)
        }
    };
    let raw = spec.constant_c * (spec.k as f64 * arg.ln() + (1.0 / delta).ln()) / (eps * eps);
    let unclamped = raw.ceil().max(0.0) as u64;
    let clamped = unclamped > spec.n as u64;
    let m = unclamped.clamp(1, spec.n as u64) as usize;
    Ok(Dimension { m, unclamped, clamped })
}
