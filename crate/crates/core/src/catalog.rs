//! Activation fixtures and grid-based certification of their regularity
//! constants.
//!
//! Each fixture carries three kinds of constants:
//!
//! * `a` bounds `|f″|` everywhere (condition 1);
//! * `b`, `c` and the two asymptote lines say that for every `ε ∈ (0, 1]`,
//!   `|f(x) − right(x)| ≤ ε` once `x ≥ c/ε^b` and `|f(x) − left(x)| ≤ ε`
//!   once `x ≤ −c/ε^b` (condition 2);
//! * optionally `g1, g2, g3` with `|g2·f⁻¹(y) − y| ≤ g3·y²` for `|y| ≤ g1`
//!   (condition 3, near-origin linearity).
//!
//! The verifiers sample dense grids. They cannot prove a bound over all of
//! the reals; they certify the stated constants at the sampled points.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::Line;

/// Slack allowed on the `sup |f″|` comparison.
pub const CONDITION1_TOLERANCE: f64 = 1e-6;
/// Slack allowed on the near-origin comparison.
pub const CONDITION3_TOLERANCE: f64 = 1e-10;

/// An entrywise scalar nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Nonlinearity {
    Identity,
    Sigmoid,
    SoftPlus,
    Gaussian,
    Tanh,
    Elu,
    ArcTan,
    SoftSign,
    Sqnl,
    /// `x ↦ slope·x + intercept`. Not part of the catalog; used as an exact
    /// source for the piecewise-linear builder.
    Affine { slope: f64, intercept: f64 },
}

/// Constants `g1, g2, g3` of the near-origin linearity condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearOrigin {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionConstants {
    /// Bound on `sup |f″|`.
    pub a: f64,
    /// Exponent of the asymptote onset `c/ε^b`.
    pub b: f64,
    /// Coefficient of the asymptote onset `c/ε^b`.
    pub c: f64,
    /// Asymptote for `x → +∞` (`d1·x + e1`).
    pub right: Line,
    /// Asymptote for `x → −∞` (`d2·x + e2`).
    pub left: Line,
    pub near_origin: Option<NearOrigin>,
}

impl ConditionConstants {
    /// `c/ε^b`, the onset of the linear asymptotes at accuracy `eps`.
    pub fn asymptote_onset(&self, eps: f64) -> f64 {
        self.c / eps.powf(self.b)
    }
}

const CATALOG: [Nonlinearity; 9] = [
    Nonlinearity::Identity,
    Nonlinearity::Sigmoid,
    Nonlinearity::SoftPlus,
    Nonlinearity::Gaussian,
    Nonlinearity::Tanh,
    Nonlinearity::Elu,
    Nonlinearity::ArcTan,
    Nonlinearity::SoftSign,
    Nonlinearity::Sqnl,
];

/// All compiled-in fixtures.
pub fn catalog() -> &'static [Nonlinearity] {
    &CATALOG
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Nonlinearity {
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Sigmoid => "sigmoid",
            Nonlinearity::SoftPlus => "softplus",
            Nonlinearity::Gaussian => "gaussian",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Elu => "elu",
            Nonlinearity::ArcTan => "arctan",
            Nonlinearity::SoftSign => "softsign",
            Nonlinearity::Sqnl => "sqnl",
            Nonlinearity::Affine { .. } => "affine",
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Identity => x,
            Nonlinearity::Sigmoid => sigmoid(x),
            Nonlinearity::SoftPlus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Nonlinearity::Gaussian => (-x * x).exp(),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Elu => {
                if x < 0.0 {
                    x.exp_m1()
                } else {
                    x
                }
            }
            Nonlinearity::ArcTan => x.atan(),
            Nonlinearity::SoftSign => x / (1.0 + x.abs()),
            Nonlinearity::Sqnl => {
                if x >= 2.0 {
                    1.0
                } else if x >= 0.0 {
                    x - x * x / 4.0
                } else if x >= -2.0 {
                    x + x * x / 4.0
                } else {
                    -1.0
                }
            }
            Nonlinearity::Affine { slope, intercept } => slope * x + intercept,
        }
    }

    /// First derivative; at kinks of `f′` the right derivative is used.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Nonlinearity::SoftPlus => sigmoid(x),
            Nonlinearity::Gaussian => -2.0 * x * (-x * x).exp(),
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::Elu => {
                if x < 0.0 {
                    x.exp()
                } else {
                    1.0
                }
            }
            Nonlinearity::ArcTan => 1.0 / (1.0 + x * x),
            Nonlinearity::SoftSign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            Nonlinearity::Sqnl => {
                if x >= 2.0 || x < -2.0 {
                    0.0
                } else if x >= 0.0 {
                    1.0 - x / 2.0
                } else {
                    1.0 + x / 2.0
                }
            }
            Nonlinearity::Affine { slope, .. } => slope,
        }
    }

    /// Analytic second derivative; at jumps the right limit is returned.
    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Identity | Nonlinearity::Affine { .. } => 0.0,
            Nonlinearity::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Nonlinearity::SoftPlus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Nonlinearity::Gaussian => (-x * x).exp() * (4.0 * x * x - 2.0),
            Nonlinearity::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Nonlinearity::Elu => {
                if x < 0.0 {
                    x.exp()
                } else {
                    0.0
                }
            }
            Nonlinearity::ArcTan => {
                let d = 1.0 + x * x;
                -2.0 * x / (d * d)
            }
            Nonlinearity::SoftSign => {
                let d = 1.0 + x.abs();
                if x < 0.0 {
                    2.0 / (d * d * d)
                } else {
                    -2.0 / (d * d * d)
                }
            }
            Nonlinearity::Sqnl => {
                if x >= 2.0 || x < -2.0 {
                    0.0
                } else if x >= 0.0 {
                    -0.5
                } else {
                    0.5
                }
            }
        }
    }

    /// Points where `f″` jumps, strictly increasing.
    pub fn second_derivative_discontinuities(&self) -> &'static [f64] {
        match self {
            Nonlinearity::Elu | Nonlinearity::SoftSign => &[0.0],
            Nonlinearity::Sqnl => &[-2.0, 0.0, 2.0],
            _ => &[],
        }
    }

    /// Open interval on which [`Self::inverse`] is defined, if the fixture
    /// claims near-origin linearity.
    pub fn inverse_domain(&self) -> Option<(f64, f64)> {
        match self {
            Nonlinearity::Identity => Some((f64::NEG_INFINITY, f64::INFINITY)),
            Nonlinearity::Tanh | Nonlinearity::SoftSign | Nonlinearity::Sqnl => Some((-1.0, 1.0)),
            Nonlinearity::Elu => Some((-1.0, f64::INFINITY)),
            Nonlinearity::ArcTan => Some((-FRAC_PI_2, FRAC_PI_2)),
            _ => None,
        }
    }

    /// `f⁻¹(y)`, or `None` outside the inverse domain or for fixtures without
    /// a near-origin claim.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        let (lo, hi) = self.inverse_domain()?;
        if !(y > lo && y < hi) {
            return None;
        }
        let x = match self {
            Nonlinearity::Identity => y,
            Nonlinearity::Tanh => y.atanh(),
            Nonlinearity::Elu => {
                if y < 0.0 {
                    y.ln_1p()
                } else {
                    y
                }
            }
            Nonlinearity::ArcTan => y.tan(),
            Nonlinearity::SoftSign => y / (1.0 - y.abs()),
            // 2 − 2√(1 − y) rewritten to avoid cancellation near 0.
            Nonlinearity::Sqnl => {
                if y >= 0.0 {
                    2.0 * y / (1.0 + (1.0 - y).sqrt())
                } else {
                    2.0 * y / (1.0 + (1.0 + y).sqrt())
                }
            }
            _ => unreachable!("inverse_domain gates the variants"),
        };
        Some(x)
    }

    /// `u` with `|f(x)| ≤ u` for all `x`, for bounded fixtures.
    pub fn magnitude_bound(&self) -> Option<f64> {
        match self {
            Nonlinearity::Sigmoid
            | Nonlinearity::Gaussian
            | Nonlinearity::Tanh
            | Nonlinearity::SoftSign
            | Nonlinearity::Sqnl => Some(1.0),
            Nonlinearity::ArcTan => Some(FRAC_PI_2),
            _ => None,
        }
    }

    pub fn constants(&self) -> ConditionConstants {
        let sqrt3 = 3f64.sqrt();
        let unit = |a: f64, right: Line, left: Line, near_origin: Option<NearOrigin>| {
            ConditionConstants {
                a,
                b: 1.0,
                c: 1.0,
                right,
                left,
                near_origin,
            }
        };
        let near = |g1, g2, g3| Some(NearOrigin { g1, g2, g3 });
        match *self {
            // Any positive `a` bounds f″ = 0; 1 keeps the knot spacing finite.
            Nonlinearity::Identity => unit(1.0, Line::new(1.0, 0.0), Line::new(1.0, 0.0), near(1.0, 1.0, 0.0)),
            Nonlinearity::Sigmoid => unit(1.0 / (6.0 * sqrt3), Line::constant(1.0), Line::constant(0.0), None),
            Nonlinearity::SoftPlus => unit(0.25, Line::new(1.0, 0.0), Line::constant(0.0), None),
            Nonlinearity::Gaussian => unit(2.0, Line::constant(0.0), Line::constant(0.0), None),
            Nonlinearity::Tanh => unit(
                4.0 / (3.0 * sqrt3),
                Line::constant(1.0),
                Line::constant(-1.0),
                near(0.5, 1.0, 0.2),
            ),
            Nonlinearity::Elu => unit(1.0, Line::new(1.0, 0.0), Line::constant(-1.0), near(0.5, 1.0, 1.0)),
            Nonlinearity::ArcTan => unit(
                3.0 * sqrt3 / 8.0,
                Line::constant(FRAC_PI_2),
                Line::constant(-FRAC_PI_2),
                near(1.0, 1.0, 0.56),
            ),
            Nonlinearity::SoftSign => unit(2.0, Line::constant(1.0), Line::constant(-1.0), near(0.5, 1.0, 2.0)),
            Nonlinearity::Sqnl => unit(0.5, Line::constant(1.0), Line::constant(-1.0), near(0.5, 1.0, 1.0)),
            Nonlinearity::Affine { slope, intercept } => {
                let l = Line::new(slope, intercept);
                ConditionConstants {
                    a: 0.0,
                    b: 1.0,
                    c: 1.0,
                    right: l,
                    left: l,
                    near_origin: None,
                }
            }
        }
    }

    /// Commonly quoted asymptote coefficients that differ from the ones in
    /// [`Self::constants`] and do not satisfy condition 2. Returned as
    /// `(right, left)`.
    pub fn uncorrected_asymptotes(&self) -> Option<(Line, Line)> {
        match self {
            Nonlinearity::Sigmoid => Some((Line::new(1.0, 0.0), Line::new(0.0, 0.0))),
            Nonlinearity::SoftPlus => Some((Line::new(0.0, 1.0), Line::new(0.0, 0.0))),
            _ => None,
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        CATALOG
            .iter()
            .copied()
            .find(|nl| nl.name() == lower)
            .ok_or_else(|| Error::UnknownFixture(s.to_string()))
    }
}

/// Serialized by name; affine maps are not round-tripped.
impl Serialize for Nonlinearity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Nonlinearity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

/// A uniform sampling grid on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub spacing: f64,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, spacing: f64) -> Self {
        GridSpec { lo, hi, spacing }
    }

    /// `[−50, 50]` at spacing `10⁻³`.
    pub fn condition1_default() -> Self {
        GridSpec::new(-50.0, 50.0, 1e-3)
    }

    /// `[c/ε^b, 10·c/ε^b]` with 10⁴ intervals; mirrored for the left side.
    pub fn condition2_default(cc: &ConditionConstants, eps: f64) -> Self {
        let lo = cc.asymptote_onset(eps);
        let hi = 10.0 * lo;
        GridSpec::new(lo, hi, (hi - lo) / 10_000.0)
    }

    /// `[−g1, g1]` at spacing `10⁻⁴`.
    pub fn condition3_default(near: &NearOrigin) -> Self {
        GridSpec::new(-near.g1, near.g1, 1e-4)
    }

    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.spacing).ceil() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    /// Grid points; the last one is clamped to `hi`.
    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.len();
        (0..n).map(move |i| (self.lo + i as f64 * self.spacing).min(self.hi))
    }

    fn check(&self) -> Result<()> {
        if !(self.spacing > 0.0) || !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(Error::Grid(format!("malformed grid {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "1")]
    BoundedSecondDerivative,
    #[serde(rename = "2")]
    LinearAsymptotes,
    #[serde(rename = "3")]
    LinearNearOrigin,
}

/// The first grid point at which a claimed bound failed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub x: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertResult {
    pub fixture: String,
    pub condition: Condition,
    /// Accuracy level, for condition 2 only.
    pub eps: Option<f64>,
    pub claimed: f64,
    pub observed: f64,
    pub argmax: f64,
    pub pass: bool,
    pub violation: Option<Violation>,
    pub points: usize,
}

/// Running maximum with first-violation tracking.
struct Scan {
    max: f64,
    argmax: f64,
    violation: Option<Violation>,
    points: usize,
}

impl Scan {
    fn new() -> Self {
        Scan {
            max: f64::NEG_INFINITY,
            argmax: f64::NAN,
            violation: None,
            points: 0,
        }
    }

    /// Records `value` at `x`; `violation` carries the offending quantity
    /// when the point breaks the bound.
    fn push(&mut self, x: f64, value: f64, violation: Option<f64>) {
        self.points += 1;
        if value > self.max {
            self.max = value;
            self.argmax = x;
        }
        if let (Some(value), None) = (violation, self.violation) {
            self.violation = Some(Violation { x, value });
        }
    }
}

/// Checks `sup |f″| ≤ claimed_a` on the grid, then refines around the
/// observed maximiser at spacing `10⁻⁵`.
pub fn verify_condition1(nl: &Nonlinearity, claimed_a: f64, grid: &GridSpec) -> Result<CertResult> {
    grid.check()?;
    if grid.lo > -50.0 || grid.hi < 50.0 || grid.spacing > 1e-3 {
        return Err(Error::Grid(
            "condition 1 needs [−50, 50] at spacing ≤ 1e-3".into(),
        ));
    }
    let limit = claimed_a + CONDITION1_TOLERANCE;
    let mut scan = Scan::new();
    let visit = |scan: &mut Scan, x: f64| {
        let v = nl.second_derivative(x).abs();
        scan.push(x, v, (v > limit).then_some(v));
    };
    grid.points().for_each(|x| visit(&mut scan, x));
    for &d in nl.second_derivative_discontinuities() {
        if d >= grid.lo && d <= grid.hi {
            for x in [d - grid.spacing, d, d + grid.spacing] {
                visit(&mut scan, x);
            }
        }
    }
    let centre = scan.argmax;
    GridSpec::new(centre - 0.1, centre + 0.1, 1e-5)
        .points()
        .for_each(|x| visit(&mut scan, x));

    Ok(CertResult {
        fixture: nl.name().to_string(),
        condition: Condition::BoundedSecondDerivative,
        eps: None,
        claimed: claimed_a,
        observed: scan.max,
        argmax: scan.argmax,
        pass: scan.violation.is_none(),
        violation: scan.violation,
        points: scan.points,
    })
}

/// Checks both linear asymptotes at accuracy `eps`. `grid` spans the right
/// range `[c/ε^b, 10·c/ε^b]`; the left range is its mirror image.
pub fn verify_condition2(
    nl: &Nonlinearity,
    cc: &ConditionConstants,
    eps: f64,
    grid: &GridSpec,
) -> Result<CertResult> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::param("eps", format!("{eps} is outside (0, 1]")));
    }
    grid.check()?;
    let onset = cc.asymptote_onset(eps);
    if grid.lo > onset || grid.hi < 10.0 * onset * (1.0 - 1e-12) {
        return Err(Error::Grid(format!(
            "condition 2 at eps={eps} needs [{onset}, {}]",
            10.0 * onset
        )));
    }
    let mut scan = Scan::new();
    for x in grid.points() {
        if x < onset {
            continue;
        }
        let right = (nl.value(x) - cc.right.eval(x)).abs();
        scan.push(x, right, (right > eps).then_some(right));
        let left = (nl.value(-x) - cc.left.eval(-x)).abs();
        scan.push(-x, left, (left > eps).then_some(left));
    }
    Ok(CertResult {
        fixture: nl.name().to_string(),
        condition: Condition::LinearAsymptotes,
        eps: Some(eps),
        claimed: eps,
        observed: scan.max,
        argmax: scan.argmax,
        pass: scan.violation.is_none(),
        violation: scan.violation,
        points: scan.points,
    })
}

/// Checks `|g2·f⁻¹(y) − y| ≤ g3·y²` on `[−g1, g1] \ {0}`. `observed` is the
/// largest `|g2·f⁻¹(y) − y| / y²` seen.
pub fn verify_condition3(nl: &Nonlinearity, cc: &ConditionConstants, grid: &GridSpec) -> Result<CertResult> {
    let near = cc.near_origin.ok_or_else(|| Error::Unsupported {
        fixture: nl.name().to_string(),
        what: "near-origin constants",
    })?;
    if nl.inverse_domain().is_none() {
        return Err(Error::Unsupported {
            fixture: nl.name().to_string(),
            what: "an inverse",
        });
    }
    grid.check()?;
    if grid.lo > -near.g1 || grid.hi < near.g1 || grid.spacing > 1e-4 {
        return Err(Error::Grid(format!(
            "condition 3 needs [−{0}, {0}] at spacing ≤ 1e-4",
            near.g1
        )));
    }
    let mut scan = Scan::new();
    for y in grid.points() {
        if y.abs() < grid.spacing / 2.0 || y.abs() > near.g1 {
            continue;
        }
        let inv = nl.inverse(y).ok_or_else(|| Error::Unsupported {
            fixture: nl.name().to_string(),
            what: "an inverse on [−g1, g1]",
        })?;
        let gap = (near.g2 * inv - y).abs();
        let violates = gap > near.g3 * y * y + CONDITION3_TOLERANCE;
        scan.push(y, gap / (y * y), violates.then_some(gap));
    }
    Ok(CertResult {
        fixture: nl.name().to_string(),
        condition: Condition::LinearNearOrigin,
        eps: None,
        claimed: near.g3,
        observed: scan.max,
        argmax: scan.argmax,
        pass: scan.violation.is_none(),
        violation: scan.violation,
        points: scan.points,
    })
}

/// Runs every applicable verifier for `nl` on its default grids, with
/// condition 2 checked at each of `eps_levels`.
pub fn certify(nl: &Nonlinearity, eps_levels: &[f64]) -> Result<Vec<CertResult>> {
    let cc = nl.constants();
    let mut out = vec![verify_condition1(nl, cc.a, &GridSpec::condition1_default())?];
    for &eps in eps_levels {
        out.push(verify_condition2(nl, &cc, eps, &GridSpec::condition2_default(&cc, eps))?);
    }
    if let Some(near) = cc.near_origin {
        out.push(verify_condition3(nl, &cc, &GridSpec::condition3_default(&near))?);
    }
    Ok(out)
}

/// Default accuracy levels for condition 2.
pub const DEFAULT_EPS_LEVELS: [f64; 4] = [1.0, 0.5, 0.1, 0.01];
