//! Clockwise rotation ẋ = b(x₂, −x₁) with reset to (c, 0) on the negative x₂ axis.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::certify::Certificate;
use crate::error::{Error, Result};
use crate::model::{HybridSystem, Region};
use crate::scalar::Scalar;

use super::ClosedForm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub b: f64,
    pub c: f64,
    /// Inner radius margin: M keeps |x| ≥ c − eps.
    pub eps: f64,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::new(0.8, 3.5)
    }
}

impl Rotation {
    pub fn new(b: f64, c: f64) -> Self {
        Self { b, c, eps: 0.5 * c }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.b > 0.0 && self.c > 0.0 && self.b.is_finite() && self.c.is_finite()) {
            return Err(Error::Parameter("need b > 0 and c > 0".into()));
        }
        if !(self.eps > 0.0 && self.eps < self.c) {
            return Err(Error::Parameter("need 0 < eps < c".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        [("b", self.b), ("c", self.c), ("eps", self.eps)].into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn system<T: Scalar>(&self) -> Result<HybridSystem<T>> {
        self.check()?;
        let (b, c) = (T::lit(self.b), T::lit(self.c));
        let r_min = T::lit(self.c - self.eps);
        let region = Region::new(&[(T::lit(-0.5 * self.c), T::lit(3.0 * self.c)), (T::lit(-3.0 * self.c), T::lit(3.0 * self.c))])?
            .with_predicate(move |x: &[T]| (x[0] * x[0] + x[1] * x[1]).sqrt() >= r_min);
        Ok(HybridSystem::new(
            "rotation",
            2,
            move |x, o| {
                o[0] = b * x[1];
                o[1] = -b * x[0];
            },
            move |_, o| {
                o[0] = c;
                o[1] = T::zero();
            },
            |x| x[0],
            region,
            T::lit(0.1),
        )?
        .with_grad_h(|_, o| {
            o[0] = T::one();
            o[1] = T::zero();
        })
        .with_params(self.params()))
    }

    pub fn period(&self) -> f64 {
        PI / (2.0 * self.b)
    }

    /// p(x) = x₁² + x₂² − c² anchored at the origin.
    pub fn certificate<T: Scalar>(&self) -> Result<Certificate<T>> {
        let c2 = T::lit(self.c * self.c);
        let two = T::lit(2.0);
        Ok(Certificate::new(move |x: &[T]| x[0] * x[0] + x[1] * x[1] - c2, vec![T::zero(); 2], 2)?.with_grad_p(move |x, o| {
            o[0] = two * x[0];
            o[1] = two * x[1];
        }))
    }
}

impl ClosedForm for Rotation {
    fn flow(&self, x0: &[f64], t: f64) -> Vec<f64> {
        let (s, c) = (self.b * t).sin_cos();
        vec![x0[0] * c + x0[1] * s, -x0[0] * s + x0[1] * c]
    }

    fn jump(&self, _x: &[f64]) -> Vec<f64> {
        vec![self.c, 0.0]
    }

    fn time_to_impact(&self, x0: &[f64]) -> f64 {
        if x0[0] == 0.0 && x0[1] <= 0.0 {
            return 0.0;
        }
        // clockwise sweep from the current angle down to −π/2
        let theta = x0[1].atan2(x0[0]);
        (theta + FRAC_PI_2).rem_euclid(2.0 * PI) / self.b
    }
}
