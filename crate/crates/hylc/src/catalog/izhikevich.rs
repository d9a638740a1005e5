//! Izhikevich spiking neuron: membrane potential v and recovery w, reset at v = 30.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{HybridSystem, Region};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Izhikevich {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub i_ext: f64,
}

impl Default for Izhikevich {
    fn default() -> Self {
        Self { a: 0.02, b: 0.2, c: -55.0, d: 4.0, i_ext: 10.0 }
    }
}

/// Spike threshold.
pub const V_PEAK: f64 = 30.0;

impl Izhikevich {
    pub fn new(a: f64, b: f64, c: f64, d: f64, i_ext: f64) -> Self {
        Self { a, b, c, d, i_ext }
    }

    pub fn check(&self) -> Result<()> {
        let v = [self.a, self.b, self.c, self.d, self.i_ext];
        if !v.iter().all(|x| x.is_finite()) || self.a <= 0.0 {
            return Err(Error::Parameter("Izhikevich parameters must be finite with a > 0".into()));
        }
        if !(self.c > -90.0 && self.c < V_PEAK) {
            return Err(Error::Parameter("reset potential c must lie in (-90, 30)".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d), ("I_ext", self.i_ext)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn system<T: Scalar>(&self) -> Result<HybridSystem<T>> {
        self.check()?;
        let Izhikevich { a, b, c, d, i_ext } = *self;
        let region = Region::new(&[(T::lit(-90.0), T::lit(40.0)), (T::lit(-30.0), T::lit(325.0 + i_ext))])?;
        let (at, bt, ct, dt) = (T::lit(a), T::lit(b), T::lit(c), T::lit(d));
        let (k2, k1, k0) = (T::lit(0.04), T::lit(5.0), T::lit(140.0 + i_ext));
        Ok(HybridSystem::new(
            "izhikevich",
            2,
            move |x, o| {
                o[0] = k2 * x[0] * x[0] + k1 * x[0] + k0 - x[1];
                o[1] = at * (bt * x[0] - x[1]);
            },
            move |x, o| {
                o[0] = ct;
                o[1] = x[1] + dt;
            },
            |x| T::lit(V_PEAK) - x[0],
            region,
            T::one(),
        )?
        .with_grad_h(|_, o| {
            o[0] = -T::one();
            o[1] = T::zero();
        })
        .with_params(self.params()))
    }
}
