//! TCP-like congestion control: queue q and rate r, multiplicative decrease at q = q_max.

use std::collections::BTreeMap;

use crate::certify::Certificate;
use crate::error::{Error, Result};
use crate::model::{HybridSystem, Region};
use crate::scalar::Scalar;

use super::ClosedForm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tcp {
    pub b: f64,
    pub a: f64,
    pub m: f64,
    pub q_max: f64,
    /// Radius of the excluded ball around (q_max, B).
    pub eps: f64,
}

impl Default for Tcp {
    fn default() -> Self {
        Self { b: 1.0, a: 1.0, m: 0.25, q_max: 1.0, eps: 1e-3 }
    }
}

impl Tcp {
    pub fn new(b: f64, a: f64, m: f64, q_max: f64) -> Self {
        Self { b, a, m, q_max, ..Self::default() }
    }

    fn check_basic(&self) -> Result<()> {
        let all = [self.b, self.a, self.m, self.q_max];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Parameter("TCP parameters must be finite and positive".into()));
        }
        // eps = 0 keeps the tangency point (q_max, B) in M
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Parameter("TCP eps must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// m(B + √(2a q_max)) < B.
    pub fn check(&self) -> Result<()> {
        self.check_basic()?;
        let peak = self.b + (2.0 * self.a * self.q_max).sqrt();
        if self.m * peak >= self.b {
            return Err(Error::Parameter(format!(
                "m(B + sqrt(2 a q_max)) = {:.4} must be below B = {}",
                self.m * peak,
                self.b
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        [("B", self.b), ("a", self.a), ("m", self.m), ("q_max", self.q_max), ("eps", self.eps)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn system<T: Scalar>(&self) -> Result<HybridSystem<T>> {
        self.check()?;
        // every pre-jump rate from inside the box stays below this cap
        let r_cap = 0.5 * ((self.b + (2.0 * self.a * self.q_max).sqrt()) + self.b / self.m);
        self.build(r_cap)
    }

    /// Skips the parameter condition; used to exhibit failing assumption checks.
    pub fn system_unchecked<T: Scalar>(&self) -> Result<HybridSystem<T>> {
        self.check_basic()?;
        self.build(2.0 * (self.b + (2.0 * self.a * self.q_max).sqrt()))
    }

    fn build<T: Scalar>(&self, r_cap: f64) -> Result<HybridSystem<T>> {
        let Tcp { b, a, m, q_max, eps } = *self;
        let q_lo = q_max - (r_cap - b).powi(2) / (2.0 * a);
        let region = Region::new(&[(T::lit(q_lo), T::lit(1.25 * q_max)), (T::zero(), T::lit(r_cap))])?
            .with_predicate(move |x: &[T]| {
                let dq = x[0] - T::lit(q_max);
                let dr = x[1] - T::lit(b);
                (dq * dq + dr * dr).sqrt() >= T::lit(eps)
            });
        let (bt, at, mt, qt) = (T::lit(b), T::lit(a), T::lit(m), T::lit(q_max));
        Ok(HybridSystem::new(
            "tcp",
            2,
            move |x, o| {
                o[0] = x[1] - bt;
                o[1] = at;
            },
            move |x, o| {
                o[0] = x[0];
                o[1] = mt * x[1];
            },
            move |x| qt - x[0],
            region,
            T::lit(0.05),
        )?
        .with_grad_h(|_, o| {
            o[0] = -T::one();
            o[1] = T::zero();
        })
        .with_params(self.params()))
    }

    pub fn fixed_point(&self) -> [f64; 2] {
        [self.q_max, 2.0 * self.b / (1.0 + self.m)]
    }

    pub fn period(&self) -> f64 {
        2.0 * self.b * (1.0 - self.m) / (self.a + self.m * self.a)
    }

    /// P(q_max, r) = (q_max, 2B − m r).
    pub fn poincare(&self, r: f64) -> [f64; 2] {
        [self.q_max, 2.0 * self.b - self.m * r]
    }

    /// R with p = q − (r−B)²/(2a) − R vanishing on the cycle.
    pub fn certificate_level(&self) -> f64 {
        let (b, a, m) = (self.b, self.a, self.m);
        self.q_max - b * b * (m - 1.0).powi(2) / (2.0 * a * (m + 1.0).powi(2))
    }

    pub fn certificate<T: Scalar>(&self) -> Result<Certificate<T>> {
        let (b, a, r0) = (T::lit(self.b), T::lit(self.a), T::lit(self.certificate_level()));
        let two = T::lit(2.0);
        Ok(Certificate::new(move |x: &[T]| x[0] - (x[1] - b) * (x[1] - b) / (two * a) - r0, vec![T::zero(); 2], 2)?
            .with_grad_p(move |x, o| {
                o[0] = T::one();
                o[1] = -(x[1] - b) / a;
            }))
    }
}

impl ClosedForm for Tcp {
    fn flow(&self, x0: &[f64], t: f64) -> Vec<f64> {
        vec![x0[0] + (x0[1] - self.b) * t + 0.5 * self.a * t * t, x0[1] + self.a * t]
    }

    fn jump(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0], self.m * x[1]]
    }

    fn time_to_impact(&self, x0: &[f64]) -> f64 {
        if (x0[0] - self.q_max).abs() <= 1e-12 && x0[1] >= self.b {
            return 0.0;
        }
        // a t²/2 + (r0 − B) t + (q0 − q_max) = 0, taking the root with r ≥ B
        let (qa, qb, qc) = (0.5 * self.a, x0[1] - self.b, x0[0] - self.q_max);
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return f64::INFINITY;
        }
        let s = disc.sqrt();
        [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)]
            .into_iter()
            .filter(|&t| t > 0.0 && x0[1] + self.a * t >= self.b)
            .fold(f64::INFINITY, f64::min)
    }
}
