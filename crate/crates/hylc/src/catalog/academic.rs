//! Scalar system ẋ = −ax + b with reset to b₂ at x = b₁.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{HybridSystem, Region};
use crate::scalar::Scalar;

use super::ClosedForm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Academic {
    pub a: f64,
    pub b: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Default for Academic {
    fn default() -> Self {
        Self { a: 2.0, b: 6.0, b1: 2.0, b2: 1.0 }
    }
}

impl Academic {
    pub fn new(a: f64, b: f64, b1: f64, b2: f64) -> Self {
        Self { a, b, b1, b2 }
    }

    /// a > 0 and b > a b₁ > a b₂ > 0.
    pub fn check(&self) -> Result<()> {
        let Academic { a, b, b1, b2 } = *self;
        if ![a, b, b1, b2].iter().all(|v| v.is_finite()) || !(a > 0.0 && b > a * b1 && a * b1 > a * b2 && a * b2 > 0.0) {
            return Err(Error::Parameter("need a > 0 and b > a b1 > a b2 > 0".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        [("a", self.a), ("b", self.b), ("b1", self.b1), ("b2", self.b2)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn system<T: Scalar>(&self) -> Result<HybridSystem<T>> {
        self.check()?;
        let (a, b, b1, b2) = (T::lit(self.a), T::lit(self.b), T::lit(self.b1), T::lit(self.b2));
        let region = Region::new(&[(T::zero(), b1)])?;
        Ok(HybridSystem::new("academic", 1, move |x, o| o[0] = b - a * x[0], move |_, o| o[0] = b2, move |x| b1 - x[0], region, T::lit(0.01))?
            .with_grad_h(|_, o| o[0] = -T::one())
            .with_params(self.params()))
    }

    /// T* = (1/a) ln((a b₂ − b)/(a b₁ − b)).
    pub fn period(&self) -> f64 {
        self.time_to_impact(&[self.b2])
    }
}

impl ClosedForm for Academic {
    fn flow(&self, x0: &[f64], t: f64) -> Vec<f64> {
        let e = self.b / self.a;
        vec![(x0[0] - e) * (-self.a * t).exp() + e]
    }

    fn jump(&self, _x: &[f64]) -> Vec<f64> {
        vec![self.b2]
    }

    fn time_to_impact(&self, x0: &[f64]) -> f64 {
        if x0[0] >= self.b1 {
            return 0.0;
        }
        ((self.a * x0[0] - self.b) / (self.a * self.b1 - self.b)).ln() / self.a
    }
}
