//! Activation patterns of `f̃(Qz)` for a piecewise-linear `f̃`.
//!
//! Each coordinate `(Qz)_i` lies in one of the `t` pieces of `f̃`, so `R^k`
//! is cut by the `n·(t−1)` hyperplanes `q_iᵀz = t_j`. Inside a cell the map
//! `z ↦ f̃(Qz)` is affine. An arrangement of `N` hyperplanes in general
//! position in `R^k` has `Σ_{i≤k} C(N, i)` cells, which bounds the number of
//! patterns.

use std::collections::HashSet;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pwl::PwlFunction;
use crate::rng::{derive_seed, Stream};
use crate::subspace::Subspace;

/// Smallest sampling budget accepted by [`Method::SignSample`].
pub const MIN_SAMPLE_BUDGET: usize = 1000;
/// Draws per parallel shard.
const SHARD: usize = 4096;
/// Relative tolerance for two hyperplanes or crossings to count as equal.
const COINCIDE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Sorts the crossings along the line; exact, `k = 1` only.
    #[serde(rename = "exact_1d")]
    Exact1d,
    /// Counts distinct patterns over random points; a lower bound.
    SignSample,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "exact_1d" => Ok(Method::Exact1d),
            "sign_sample" => Ok(Method::SignSample),
            _ => Err(Error::param("method", format!("`{s}` is not exact_1d or sign_sample"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCensus {
    pub k: usize,
    pub n: usize,
    /// Number of pieces of the nonlinearity.
    pub t: usize,
    pub method: Method,
    pub distinct_patterns: usize,
    /// `Σ_{i=0}^{k} C(n(t−1), i)`, saturating.
    pub bound: u128,
    /// Points evaluated (interval representatives for `exact_1d`).
    pub samples_used: usize,
    /// Two crossing hyperplanes coincide or a row of `Q` vanishes; the
    /// general-position formula does not apply.
    pub degenerate: bool,
    pub seed: u64,
}

impl RegionCensus {
    /// Whether the count equals the general-position formula.
    /// `None` when degenerate or when the count is only a lower bound.
    pub fn matches_formula(&self) -> Option<bool> {
        (self.method == Method::Exact1d && !self.degenerate).then(|| self.distinct_patterns as u128 == self.bound)
    }
}

/// `Σ_{i=0}^{k} C(c, i)`, saturating at `u128::MAX`.
pub fn arrangement_bound(c: u64, k: u64) -> u128 {
    let mut total: u128 = 0;
    let mut term: u128 = 1;
    for i in 0..=k.min(c) {
        if i > 0 {
            // C(c, i) = C(c, i−1)·(c−i+1)/i; exact because the product of i
            // consecutive integers is divisible by i!.
            term = match term.checked_mul((c - i + 1) as u128) {
                Some(v) => v / i as u128,
                None => return u128::MAX,
            };
        }
        total = total.saturating_add(term);
    }
    total
}

/// Piece indices of `(Qz)_i` together with whether any coordinate sat
/// exactly on a knot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub pieces: Vec<usize>,
    /// A coordinate equalled a knot and was assigned to the right piece.
    pub tie_broken: bool,
}

/// Pattern of `z`; knots belong to the piece on their right.
pub fn region_map(pwl: &PwlFunction, space: &Subspace, z: &DVector<f64>) -> Pattern {
    let x = space.embed(z);
    let knots = pwl.breakpoints();
    let tie_broken = x.iter().any(|v| knots.binary_search_by(|t| t.total_cmp(v)).is_ok());
    Pattern {
        pieces: x.iter().map(|&v| pwl.piece_index(v)).collect(),
        tie_broken,
    }
}

fn pieces_only(pwl: &PwlFunction, space: &Subspace, z: &DVector<f64>) -> Vec<u32> {
    space.embed(z).iter().map(|&v| pwl.piece_index(v) as u32).collect()
}

/// Whether two crossing hyperplanes `q_iᵀz = t_j` coincide, or a row of `Q`
/// is zero.
pub fn is_degenerate(pwl: &PwlFunction, space: &Subspace) -> bool {
    let q = space.basis();
    let rows: Vec<DVector<f64>> = (0..q.nrows()).map(|i| q.row(i).transpose()).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.norm()).collect();
    if norms.iter().any(|&n| n <= COINCIDE_TOLERANCE) {
        return true;
    }
    let knots = pwl.breakpoints();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let cos = rows[i].dot(&rows[j]) / (norms[i] * norms[j]);
            if (cos.abs() - 1.0).abs() > COINCIDE_TOLERANCE {
                continue;
            }
            // Parallel rows: row_j = λ·row_i, so q_jᵀz = t ⇔ q_iᵀz = t/λ.
            let lambda = cos.signum() * norms[j] / norms[i];
            for &a in knots {
                for &b in knots {
                    if (a - b / lambda).abs() <= COINCIDE_TOLERANCE * (1.0 + a.abs()) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Counts activation patterns of `f̃(Qz)` over `z ∈ R^k`.
pub fn census(pwl: &PwlFunction, space: &Subspace, method: Method, budget: usize, seed: u64) -> Result<RegionCensus> {
    let t = pwl.piece_count();
    if t < 2 {
        return Err(Error::param("pwl", "a single affine piece does not partition space"));
    }
    let (n, k) = (space.n(), space.k());
    let bound = arrangement_bound((n * (t - 1)) as u64, k as u64);
    let mut degenerate = is_degenerate(pwl, space);
    let (patterns, samples_used) = match method {
        Method::Exact1d => {
            if k != 1 {
                return Err(Error::param("method", format!("exact_1d needs k = 1, got k = {k}")));
            }
            let (set, used, collapsed) = exact_1d(pwl, space);
            degenerate |= collapsed;
            (set, used)
        }
        Method::SignSample => {
            if budget < MIN_SAMPLE_BUDGET {
                return Err(Error::param("budget", format!("{budget} < {MIN_SAMPLE_BUDGET}")));
            }
            (sign_sample(pwl, space, budget, seed), budget)
        }
    };
    let distinct_patterns = patterns.len();
    assert!(distinct_patterns as u128 <= bound, "{distinct_patterns} patterns exceed the bound {bound}");
    Ok(RegionCensus {
        k,
        n,
        t,
        method,
        distinct_patterns,
        bound,
        samples_used,
        degenerate,
        seed,
    })
}

/// Patterns on every interval between consecutive crossings `z = t_j/q_i`.
/// Also reports whether crossings had to be merged.
fn exact_1d(pwl: &PwlFunction, space: &Subspace) -> (HashSet<Vec<u32>>, usize, bool) {
    let q = space.basis().column(0);
    let mut crossings: Vec<f64> = q
        .iter()
        .filter(|&&qi| qi != 0.0)
        .flat_map(|&qi| pwl.breakpoints().iter().map(move |&tj| tj / qi))
        .collect();
    crossings.sort_by(f64::total_cmp);
    let before = crossings.len();
    crossings.dedup_by(|b, a| (*b - *a).abs() <= COINCIDE_TOLERANCE * (1.0 + a.abs()));
    let collapsed = crossings.len() < before;

    let mut reps = Vec::with_capacity(crossings.len() + 1);
    match (crossings.first(), crossings.last()) {
        (Some(&lo), Some(&hi)) => {
            reps.push(lo - 1.0 - lo.abs());
            reps.extend(crossings.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            reps.push(hi + 1.0 + hi.abs());
        }
        _ => reps.push(0.0),
    }
    let set = reps
        .iter()
        .map(|&z| pieces_only(pwl, space, &DVector::from_element(1, z)))
        .collect();
    (set, reps.len(), collapsed)
}

/// Draws `budget` points from a mixture: half Gaussian directions with
/// log-uniform radii, half placed on a random crossing hyperplane and nudged
/// off it by a log-uniform distance.
fn sign_sample(pwl: &PwlFunction, space: &Subspace, budget: usize, seed: u64) -> HashSet<Vec<u32>> {
    let (n, k) = (space.n(), space.k());
    let knots = pwl.breakpoints();
    let scale = knots.iter().fold(1.0f64, |m, t| m.max(t.abs()));
    let (r_lo, r_hi) = ((1e-3 * scale).ln(), (1e3 * scale).ln());
    let shards = budget.div_ceil(SHARD);
    (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut stream = Stream::new(derive_seed(seed, s as u64));
            let count = SHARD.min(budget - s * SHARD);
            let mut set = HashSet::new();
            for draw in 0..count {
                let dir = DVector::from_vec(stream.unit_vector(k));
                let r = (r_lo + stream.uniform() * (r_hi - r_lo)).exp();
                let z = if draw % 2 == 0 {
                    dir * r
                } else {
                    let row = space.basis().row(stream.below(n)).transpose();
                    let target = knots[stream.below(knots.len())];
                    let mut anchor = DVector::from_vec(stream.gaussian_vec(k)) * scale;
                    let q2 = row.norm_squared();
                    if q2 > 0.0 {
                        anchor += &row * ((target - row.dot(&anchor)) / q2);
                    }
                    anchor + dir * (r * 1e-6)
                };
                set.insert(pieces_only(pwl, space, &z));
            }
            set
        })
        .reduce(HashSet::new, |mut a, b| {
            a.extend(b);
            a
        })
}

/// A PWL function with `t` pieces and knots at generic nonzero offsets,
/// for census experiments that should be in general position.
pub fn generic_pwl(t: usize) -> Result<PwlFunction> {
    if t < 2 {
        return Err(Error::param("t", "need at least two pieces"));
    }
    let knots: Vec<f64> = (0..t - 1)
        .map(|j| (j as f64 - (t as f64 - 2.0) / 2.0) * 0.9 + 0.1 * std::f64::consts::SQRT_2)
        .collect();
    PwlFunction::interpolate(format!("generic{t}"), |x| (1.3 * x).sin() + 0.25 * x, &knots, -0.5, 0.75)
}
