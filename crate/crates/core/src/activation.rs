//! Scalar maps that can be applied entrywise.

use crate::catalog::Nonlinearity;
use crate::pwl::PwlFunction;

pub trait Activation: Sync {
    fn value(&self, x: f64) -> f64;
    /// Derivative, taken from the right where `f` has a kink.
    fn derivative(&self, x: f64) -> f64;
}

impl Activation for Nonlinearity {
    fn value(&self, x: f64) -> f64 {
        Nonlinearity::value(self, x)
    }

    fn derivative(&self, x: f64) -> f64 {
        Nonlinearity::derivative(self, x)
    }
}

impl Activation for PwlFunction {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.slope(x)
    }
}
