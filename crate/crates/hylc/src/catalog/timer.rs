//! Unit-rate timer reset to 0 at 1.

use crate::error::Result;
use crate::model::{HybridSystem, Region};
use crate::scalar::Scalar;

use super::ClosedForm;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timer;

impl Timer {
    pub fn system<T: Scalar>(&self) -> Result<HybridSystem<T>> {
        let region = Region::new(&[(T::zero(), T::one())])?;
        Ok(HybridSystem::new("timer", 1, |_, o| o[0] = T::one(), |_, o| o[0] = T::zero(), |x| T::one() - x[0], region, T::lit(0.5))?
            .with_grad_h(|_, o| o[0] = -T::one()))
    }
}

impl ClosedForm for Timer {
    fn flow(&self, x0: &[f64], t: f64) -> Vec<f64> {
        vec![x0[0] + t]
    }

    fn jump(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0]
    }

    fn time_to_impact(&self, x0: &[f64]) -> f64 {
        (1.0 - x0[0]).max(0.0)
    }
}
