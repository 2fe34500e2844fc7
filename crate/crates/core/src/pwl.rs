//! Piecewise-linear approximants with certified uniform error.
//!
//! [`build_pwl`] interpolates `f` on a uniform lattice of step at most
//! `γ = √(8/a)·√ε`, stretched to span `[−c/ε^b, c/ε^b]` exactly, and
//! continues with the two asymptote lines outside it. On a lattice interval the interpolation error
//! is at most `γ²·a/8 = ε`; beyond the lattice the asymptotes are within `ε`
//! by construction of `c` and `b`.
//!
//! The two outermost knots take the asymptote value instead of `f`, so the
//! rays join the interior pieces continuously. Those knots are themselves
//! within `ε` of `f`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{ConditionConstants, Nonlinearity};
use crate::error::{Error, Result};
use crate::line::Line;

/// Knots closer than this are merged.
pub const KNOT_MERGE_TOLERANCE: f64 = 1e-12;
/// Adjacent pieces must agree at their shared knot to this tolerance.
pub const CONTINUITY_TOLERANCE: f64 = 1e-10;
/// Relative shrink of the lattice step. Where `|f″| = a` on a whole interval
/// the interpolation error equals `ε` exactly, and rounding would otherwise
/// land on either side of it.
pub const STEP_SHRINK: f64 = 1.0 - 1e-9;
/// Upper limit on the number of knots a single construction may allocate.
pub const MAX_KNOTS: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwlFunction {
    /// Strictly increasing interior knots.
    breakpoints: Vec<f64>,
    /// `breakpoints.len() + 1` pieces. `pieces[0]` is the left ray,
    /// `pieces[i]` covers `[breakpoints[i−1], breakpoints[i])` and the last
    /// piece is the right ray.
    pieces: Vec<Line>,
    target_eps: f64,
    source_name: String,
    /// Lattice step `γ`; `None` for hand-built functions.
    step: Option<f64>,
    /// Half-width `c/ε^b` of the lattice; `None` for hand-built functions.
    onset: Option<f64>,
    /// Number of `γ`-lattice intervals, before discontinuity splits.
    lattice_intervals: usize,
    /// Outer knots whose value comes from an asymptote rather than `f`.
    #[serde(default)]
    snapped_ends: bool,
}

impl PwlFunction {
    /// Assembles a function from knots and pieces, checking ordering,
    /// lengths and continuity.
    pub fn from_parts(source_name: impl Into<String>, breakpoints: Vec<f64>, pieces: Vec<Line>, target_eps: f64) -> Result<Self> {
        let pwl = PwlFunction {
            lattice_intervals: breakpoints.len().saturating_sub(1),
            breakpoints,
            pieces,
            target_eps,
            source_name: source_name.into(),
            step: None,
            onset: None,
            snapped_ends: false,
        };
        pwl.validate()?;
        Ok(pwl)
    }

    /// Interpolates `f` at `knots`, extending with rays of the given slopes
    /// through the end knots.
    pub fn interpolate(
        source_name: impl Into<String>,
        f: impl Fn(f64) -> f64,
        knots: &[f64],
        left_slope: f64,
        right_slope: f64,
    ) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::param("knots", "at least one knot is required"));
        }
        let values: Vec<f64> = knots.iter().map(|&t| f(t)).collect();
        let (first, last) = (knots[0], knots[knots.len() - 1]);
        let mut pieces = Vec::with_capacity(knots.len() + 1);
        pieces.push(Line::new(left_slope, values[0] - left_slope * first));
        for i in 0..knots.len() - 1 {
            pieces.push(Line::through(knots[i], values[i], knots[i + 1], values[i + 1]));
        }
        pieces.push(Line::new(right_slope, values[values.len() - 1] - right_slope * last));
        Self::from_parts(source_name, knots.to_vec(), pieces, 0.0)
    }

    /// `max(x − shift, 0)`: two pieces meeting at `shift`.
    pub fn relu(shift: f64) -> Self {
        PwlFunction::from_parts("relu", vec![shift], vec![Line::constant(0.0), Line::new(1.0, -shift)], 0.0)
            .expect("relu is well formed")
    }

    fn validate(&self) -> Result<()> {
        if self.pieces.len() != self.breakpoints.len() + 1 {
            return Err(Error::param(
                "pieces",
                format!("{} pieces for {} knots", self.pieces.len(), self.breakpoints.len()),
            ));
        }
        if self.breakpoints.iter().any(|t| !t.is_finite()) || self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("breakpoints", "knots must be finite and strictly increasing"));
        }
        if let Some((i, gap)) = self.continuity_gaps().find(|&(_, gap)| !(gap <= CONTINUITY_TOLERANCE)) {
            return Err(Error::param(
                "pieces",
                format!("discontinuous at knot {i} (gap {gap:e})"),
            ));
        }
        Ok(())
    }

    /// `(knot index, |left piece − right piece|)` at every knot.
    pub fn continuity_gaps(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(i, &t)| (i, (self.pieces[i].eval(t) - self.pieces[i + 1].eval(t)).abs()))
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Line] {
        &self.pieces
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn target_eps(&self) -> f64 {
        self.target_eps
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn onset(&self) -> Option<f64> {
        self.onset
    }

    pub fn lattice_intervals(&self) -> usize {
        self.lattice_intervals
    }

    /// Index of the piece containing `x`; ties go to the right piece.
    #[inline]
    pub fn piece_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&t| t <= x)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].eval(x)
    }

    /// Slope of the piece containing `x` (right derivative at knots).
    #[inline]
    pub fn slope(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].slope
    }

    /// Whether the piece between knots `i` and `i + 1` interpolates the
    /// source at both ends.
    fn interval_interpolates(&self, i: usize) -> bool {
        !self.snapped_ends || (i > 0 && i + 2 < self.breakpoints.len())
    }

    /// Writes one row per piece: `index,t,f_t,slope,intercept`. Row 0 is the
    /// left ray ending at the first knot; row `j ≥ 1` is the piece starting at
    /// knot `j − 1`. `f_t` is the source value at `t`.
    pub fn write_knots_csv<W: Write>(&self, source: &Nonlinearity, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "t", "f_t", "slope", "intercept"])?;
        for (j, piece) in self.pieces.iter().enumerate() {
            let t = self.breakpoints[j.max(1) - 1];
            w.write_record([
                j.to_string(),
                t.to_string(),
                source.value(t).to_string(),
                piece.slope.to_string(),
                piece.intercept.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the lattice interpolant of `nl` with uniform error target `eps`.
pub fn build_pwl(nl: &Nonlinearity, cc: &ConditionConstants, eps: f64) -> Result<PwlFunction> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::param("eps", format!("{eps} is outside (0, 1]")));
    }
    if !(cc.a >= 0.0 && cc.b > 0.0 && cc.c > 0.0) {
        return Err(Error::param("constants", "need a ≥ 0, b > 0, c > 0"));
    }
    let half = cc.asymptote_onset(eps);
    let (step, intervals) = if cc.a > 0.0 {
        let step = (8.0 / cc.a).sqrt() * eps.sqrt() * STEP_SHRINK;
        let n = (2.0 * half / step).ceil().max(1.0);
        if n > MAX_KNOTS as f64 {
            return Err(Error::param("eps", format!("{eps} needs {n:e} lattice intervals")));
        }
        (step, n as usize)
    } else {
        // f″ ≡ 0: a single interval is exact.
        (2.0 * half, 1)
    };

    // Stretch the lattice to end exactly on ±half so no sliver interval sits
    // next to a snapped end knot.
    let step = if cc.a > 0.0 { 2.0 * half / intervals as f64 } else { step };
    let mut knots: Vec<f64> = (0..intervals).map(|i| -half + i as f64 * step).collect();
    knots.push(half);
    for &d in nl.second_derivative_discontinuities() {
        if d > -half && d < half {
            knots.push(d);
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|b, a| (*b - *a).abs() <= KNOT_MERGE_TOLERANCE);

    let last = knots.len() - 1;
    let values: Vec<f64> = knots
        .iter()
        .enumerate()
        .map(|(i, &t)| match i {
            0 => cc.left.eval(t),
            i if i == last => cc.right.eval(t),
            _ => nl.value(t),
        })
        .collect();

    let mut pieces = Vec::with_capacity(knots.len() + 1);
    pieces.push(cc.left);
    pieces.extend(knots.windows(2).zip(values.windows(2)).map(|(t, v)| Line::through(t[0], v[0], t[1], v[1])));
    pieces.push(cc.right);

    let pwl = PwlFunction {
        breakpoints: knots,
        pieces,
        target_eps: eps,
        source_name: nl.name().to_string(),
        step: Some(step),
        onset: Some(half),
        lattice_intervals: intervals,
        snapped_ends: true,
    };
    pwl.validate()?;
    Ok(pwl)
}

fn grid(lo: f64, hi: f64, spacing: f64) -> impl IndexedParallelIterator<Item = f64> {
    let n = ((hi - lo) / spacing).ceil() as usize + 1;
    (0..n).into_par_iter().map(move |i| (lo + i as f64 * spacing).min(hi))
}

/// Largest `|f(x) − f̃(x)|` over a uniform grid on `[−half_width, half_width]`.
///
/// For lattice-built functions the grid must reach twice the lattice
/// half-width and be at least 20 times finer than the lattice step.
pub fn uniform_error(nl: &Nonlinearity, pwl: &PwlFunction, half_width: f64, spacing: f64) -> Result<f64> {
    if !(spacing > 0.0 && half_width > 0.0) {
        return Err(Error::param("spacing", "grid spacing and half-width must be positive"));
    }
    if let Some(onset) = pwl.onset {
        if half_width < 2.0 * onset * (1.0 - 1e-12) {
            return Err(Error::param("half_width", format!("{half_width} < 2·{onset}")));
        }
    }
    if let Some(step) = pwl.step {
        if spacing > step / 20.0 * (1.0 + 1e-12) {
            return Err(Error::param("spacing", format!("{spacing} > γ/20 = {}", step / 20.0)));
        }
    }
    Ok(grid(-half_width, half_width, spacing)
        .map(|x| (nl.value(x) - pwl.eval(x)).abs())
        .reduce(|| 0.0, f64::max))
}

/// [`uniform_error`] on the default certification grid: half-width twice the
/// lattice half-width, spacing `γ/20`.
pub fn certify(nl: &Nonlinearity, pwl: &PwlFunction) -> Result<f64> {
    let (Some(onset), Some(step)) = (pwl.onset, pwl.step) else {
        return Err(Error::param("pwl", "certification needs a lattice-built function"));
    };
    uniform_error(nl, pwl, 2.0 * onset, step / 20.0)
}

/// Error audit of one interval between consecutive knots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalCheck {
    pub lo: f64,
    pub hi: f64,
    pub max_error: f64,
    /// `(hi − lo)²·a/8` when the piece interpolates `f` at both ends.
    pub rolle_bound: Option<f64>,
}

/// Per-interval grid error for every bounded piece, sampled at `spacing`.
pub fn interval_errors(nl: &Nonlinearity, a: f64, pwl: &PwlFunction, spacing: f64) -> Vec<IntervalCheck> {
    let knots = &pwl.breakpoints;
    (0..knots.len().saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            let (lo, hi) = (knots[i], knots[i + 1]);
            let piece = pwl.pieces[i + 1];
            let n = ((hi - lo) / spacing).ceil().max(1.0) as usize;
            let max_error = (0..=n)
                .map(|j| {
                    let x = (lo + (hi - lo) * j as f64 / n as f64).min(hi);
                    (nl.value(x) - piece.eval(x)).abs()
                })
                .fold(0.0, f64::max);
            IntervalCheck {
                lo,
                hi,
                max_error,
                rolle_bound: pwl.interval_interpolates(i).then(|| (hi - lo).powi(2) * a / 8.0),
            }
        })
        .collect()
}
