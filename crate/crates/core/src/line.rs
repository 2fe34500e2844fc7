use serde::{Deserialize, Serialize};

/// The affine map `x ↦ slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

impl Line {
    pub const fn new(slope: f64, intercept: f64) -> Self {
        Line { slope, intercept }
    }

    pub const fn constant(value: f64) -> Self {
        Line::new(0.0, value)
    }

    /// The line through `(x0, y0)` and `(x1, y1)`.
    pub fn through(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let slope = (y1 - y0) / (x1 - x0);
        Line::new(slope, y0 - slope * x0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}
