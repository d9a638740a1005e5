//! Passive compass-gait walker on a slope. State (θn, θs, θ̇n, θ̇s): swing
//! and stance leg angles and their rates.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::error::{Error, Result};
use crate::model::{HybridSystem, Region};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompassGait {
    /// Gravity.
    pub gamma: f64,
    pub m_h: f64,
    pub m: f64,
    pub a: f64,
    pub b: f64,
    /// Slope angle.
    pub phi: f64,
    /// Width of the excluded scuffing and backward-motion bands.
    pub eps: f64,
}

impl Default for CompassGait {
    fn default() -> Self {
        Self { gamma: 9.81, m_h: 12.0, m: 5.0, a: 0.5, b: 0.5, phi: 0.0524, eps: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Consts<T> {
    gamma: T,
    m_h: T,
    m: T,
    a: T,
    b: T,
    l: T,
    phi: T,
}

impl<T: Scalar> Consts<T> {
    /// Accelerations (θ̈n, θ̈s) from M q̈ + N q̇ + G = 0.
    fn accel(&self, x: &[T]) -> (T, T) {
        let Consts { gamma, m_h, m, a, b, l, .. } = *self;
        let (tn, ts, dn, ds) = (x[0], x[1], x[2], x[3]);
        let alpha = tn - ts;
        let m11 = m * b * b;
        let m12 = -m * l * b * (ts - tn).cos();
        let m22 = (m_h + m) * l * l + m * a * a;
        let k = m * l * b * alpha.sin();
        let r1 = -(-k * ds * ds) - m * b * gamma * tn.sin();
        let r2 = -(k * dn * dn) + (m_h * l + m * a + m * l) * gamma * ts.sin();
        let det = m11 * m22 - m12 * m12;
        if det.abs() < T::lit(1e-12) {
            return (T::nan(), T::nan());
        }
        ((m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det)
    }

    /// Post-impact rates Q⁺⁻¹ Q⁻ q̇ with legs relabelled.
    fn impact(&self, x: &[T]) -> (T, T) {
        let Consts { m_h, m, a, b, l, .. } = *self;
        let alpha = x[0] - x[1];
        let ca = alpha.cos();
        let two = T::lit(2.0);
        let qm = [[-m * a * b, -m * a * b + (m_h * l * l + two * m * a * l) * ca], [T::zero(), -m * a * b]];
        let qp = [
            [m * b * b - m * b * l * ca, (m + m_h) * l * l + m * a * a - m * b * l * ca],
            [m * b * b, -m * b * l * ca],
        ];
        let w = [qm[0][0] * x[2] + qm[0][1] * x[3], qm[1][0] * x[2] + qm[1][1] * x[3]];
        let det = qp[0][0] * qp[1][1] - qp[0][1] * qp[1][0];
        if det.abs() < T::lit(1e-12) {
            return (T::nan(), T::nan());
        }
        ((qp[1][1] * w[0] - qp[0][1] * w[1]) / det, (qp[0][0] * w[1] - qp[1][0] * w[0]) / det)
    }
}

impl CompassGait {
    pub fn check(&self) -> Result<()> {
        let pos = [self.gamma, self.m_h, self.m, self.a, self.b, self.eps];
        if !pos.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Parameter("compass-gait masses, lengths, gravity and eps must be positive".into()));
        }
        if !(self.phi.abs() < FRAC_PI_4) {
            return Err(Error::Parameter("slope angle must lie in (-pi/4, pi/4)".into()));
        }
        Ok(())
    }

    pub fn leg_length(&self) -> f64 {
        self.a + self.b
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        [
            ("gamma", self.gamma),
            ("m_h", self.m_h),
            ("m", self.m),
            ("a", self.a),
            ("b", self.b),
            ("phi", self.phi),
            ("eps", self.eps),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn system<T: Scalar>(&self) -> Result<HybridSystem<T>> {
        self.check()?;
        let k = Consts {
            gamma: T::lit(self.gamma),
            m_h: T::lit(self.m_h),
            m: T::lit(self.m),
            a: T::lit(self.a),
            b: T::lit(self.b),
            l: T::lit(self.leg_length()),
            phi: T::lit(self.phi),
        };
        let eps = T::lit(self.eps);
        let phi = k.phi;
        let window = move |x: &[T]| x[0] - x[1] >= eps;
        let predicate = move |x: &[T]| {
            let (tn, ts, dn, ds) = (x[0], x[1], x[2], x[3]);
            let sn = (tn + phi).sin();
            // stance leg rotating backwards
            let m0 = ds > -eps;
            // feet level with the swing foot moving down or leg rates aligned
            let level = (tn + ts + phi + phi).abs() < eps;
            let m1 = level && sn * (dn + ds) > -eps;
            let m2 = level && dn > -eps;
            // swing leg passing the stance leg while moving backwards
            let m3 = (tn - ts).abs() < eps && sn * (dn - ds) < eps;
            !m0 && !m3 && !(window(x) && (m1 || m2))
        };
        let h = T::lit(FRAC_PI_2);
        let v = T::lit(10.0);
        let region = Region::new(&[(-h, h), (-h, h), (-v, v), (-v, v)])?.with_predicate(predicate);
        Ok(HybridSystem::new(
            "compass",
            4,
            move |x, o| {
                let (an, as_) = k.accel(x);
                o[0] = x[2];
                o[1] = x[3];
                o[2] = an;
                o[3] = as_;
            },
            move |x, o| {
                let (dn, ds) = k.impact(x);
                o[0] = x[1];
                o[1] = x[0];
                o[2] = dn;
                o[3] = ds;
            },
            move |x| (x[1] + phi).cos() - (x[0] + phi).cos(),
            region,
            T::lit(0.05),
        )?
        .with_grad_h(move |x, o| {
            o[0] = (x[0] + phi).sin();
            o[1] = -(x[1] + phi).sin();
            o[2] = T::zero();
            o[3] = T::zero();
        })
        .with_impact_window(window)
        .with_params(self.params()))
    }
}
