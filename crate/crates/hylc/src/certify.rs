//! Invariance certificates on a cycle, Zhukovskii reparameterizations, and
//! incremental graphical stability checks on sampled solution pairs.
//!
//! All checks here work on finitely many sampled solutions. A pass means
//! "consistent with the property at these samples", not a proof.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycles::LimitCycle;
use crate::error::{Error, Result};
use crate::flow::IntegratorConfig;
use crate::linalg::{all_finite, dist, dot};
use crate::model::{HybridSystem, ScalarFn, VectorFn};
use crate::scalar::Scalar;
use crate::sim::{interpolate, simulate, ArcTermination, HybridArc};

/// Nested finite-difference step for the certificate conditions.
pub const CERT_FD_STEP: f64 = 1e-4;
pub const CERT_TOL: f64 = 1e-5;
const MIN_CYCLE_SAMPLES: usize = 200;

/// W = (p − p(x̄))^n̄ built from a scalar field p that vanishes on the cycle.
#[derive(Clone)]
pub struct Certificate<T> {
    p: ScalarFn<T>,
    grad_p: Option<VectorFn<T>>,
    x_bar: Vec<T>,
    n_bar: u32,
    p_bar: T,
}

impl<T: Scalar> std::fmt::Debug for Certificate<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Certificate")
            .field("x_bar", &self.x_bar)
            .field("n_bar", &self.n_bar)
            .field("p_bar", &self.p_bar)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Certificate<T> {
    pub fn new(p: impl Fn(&[T]) -> T + Send + Sync + 'static, x_bar: Vec<T>, n_bar: u32) -> Result<Self> {
        if n_bar < 2 || !n_bar.is_multiple_of(2) {
            return Err(Error::InvalidInput("n_bar must be an even integer ≥ 2".into()));
        }
        if !all_finite(&x_bar) {
            return Err(Error::InvalidInput("x_bar has non-finite entries".into()));
        }
        let p_bar = p(&x_bar);
        if !(p_bar.abs() > T::zero()) || !p_bar.is_finite() {
            return Err(Error::InvalidInput("p(x_bar) must be finite and nonzero".into()));
        }
        Ok(Self { p: Arc::new(p), grad_p: None, x_bar, n_bar, p_bar })
    }

    /// Analytic ∇p; W's gradient then uses the chain rule for the first layer.
    pub fn with_grad_p(mut self, grad: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.grad_p = Some(Arc::new(grad));
        self
    }

    pub fn without_grad_p(mut self) -> Self {
        self.grad_p = None;
        self
    }

    pub fn p(&self, x: &[T]) -> T {
        (self.p)(x)
    }

    pub fn x_bar(&self) -> &[T] {
        &self.x_bar
    }

    pub fn n_bar(&self) -> u32 {
        self.n_bar
    }

    pub fn w(&self, x: &[T]) -> T {
        (self.p(x) - self.p_bar).powi(self.n_bar as i32)
    }

    fn grad_w(&self, x: &[T], step: T) -> Vec<T> {
        let n = x.len();
        let mut out = vec![T::zero(); n];
        match &self.grad_p {
            Some(gp) => {
                gp(x, &mut out);
                let k = T::of_usize(self.n_bar as usize) * (self.p(x) - self.p_bar).powi(self.n_bar as i32 - 1);
                for v in &mut out {
                    *v = *v * k;
                }
            }
            None => {
                let mut xp = x.to_vec();
                for i in 0..n {
                    xp[i] = x[i] + step;
                    let wp = self.w(&xp);
                    xp[i] = x[i] - step;
                    let wm = self.w(&xp);
                    xp[i] = x[i];
                    out[i] = (wp - wm) / (step + step);
                }
            }
        }
        out
    }

    /// ⟨∇W(x), f(x)⟩.
    fn lie_w(&self, sys: &HybridSystem<T>, x: &[T], step: T) -> T {
        dot(&self.grad_w(x, step), &sys.f(x))
    }

    /// ⟨∇⟨∇W, f⟩(x), f(x)⟩ by central differences of the first Lie derivative.
    fn lie2_w(&self, sys: &HybridSystem<T>, x: &[T], step: T) -> T {
        let n = x.len();
        let fx = sys.f(x);
        let mut xp = x.to_vec();
        let mut acc = T::zero();
        for i in 0..n {
            xp[i] = x[i] + step;
            let lp = self.lie_w(sys, &xp, step);
            xp[i] = x[i] - step;
            let lm = self.lie_w(sys, &xp, step);
            xp[i] = x[i];
            acc = acc + (lp - lm) / (step + step) * fx[i];
        }
        acc
    }
}

/// Polynomial p as JSON: `{"p": {"2,0": 1.0, "0,0": -1.0}, "x_bar": [0, 0], "n_bar": 2}`;
/// each key lists the exponent of every state component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialCertificate {
    pub p: BTreeMap<String, f64>,
    pub x_bar: Vec<f64>,
    pub n_bar: u32,
}

impl PolynomialCertificate {
    pub fn build<T: Scalar>(&self, n: usize) -> Result<Certificate<T>> {
        let mut terms: Vec<(Vec<i32>, T)> = Vec::new();
        for (k, &c) in &self.p {
            let exps: Vec<i32> = k
                .split(',')
                .map(|s| s.trim().parse::<i32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidInput(format!("bad monomial key '{k}'")))?;
            if exps.len() != n || exps.iter().any(|&e| e < 0) {
                return Err(Error::InvalidInput(format!("monomial '{k}' needs {n} nonnegative exponents")));
            }
            if !c.is_finite() {
                return Err(Error::InvalidInput(format!("coefficient of '{k}' is not finite")));
            }
            terms.push((exps, T::lit(c)));
        }
        if self.x_bar.len() != n {
            return Err(Error::InvalidInput(format!("x_bar needs {n} components")));
        }
        let eval_terms = terms.clone();
        let p = move |x: &[T]| {
            eval_terms
                .iter()
                .fold(T::zero(), |acc, (e, c)| acc + *c * e.iter().zip(x).fold(T::one(), |m, (&k, &v)| m * v.powi(k)))
        };
        let grad = move |x: &[T], out: &mut [T]| {
            out.iter_mut().for_each(|v| *v = T::zero());
            for (e, c) in &terms {
                for i in 0..x.len() {
                    if e[i] == 0 {
                        continue;
                    }
                    let mut m = *c * T::of_usize(e[i] as usize);
                    for (j, (&k, &v)) in e.iter().zip(x).enumerate() {
                        m = m * if j == i { v.powi(k - 1) } else { v.powi(k) };
                    }
                    out[i] = out[i] + m;
                }
            }
        };
        Ok(Certificate::new(p, self.x_bar.iter().map(|&v| T::lit(v)).collect(), self.n_bar)?.with_grad_p(grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport<T> {
    pub samples: usize,
    /// max(0, −W) over the cycle samples.
    pub nonnegativity_residual: T,
    /// max |⟨∇W, f⟩| over cycle samples in C.
    pub flow_residual: T,
    /// max |⟨∇⟨∇W, f⟩, f⟩| over cycle samples in C.
    pub second_order_residual: T,
    /// |W(g(x)) − W(x)| at the cycle's point in D.
    pub jump_residual: T,
    pub positivity_min: T,
    pub cert_tol: T,
    pub analytic_gradient: bool,
    pub verdict: CertVerdict,
}

impl<T: Scalar> CertificateReport<T> {
    pub fn max_residual(&self) -> T {
        self.nonnegativity_residual
            .max(self.flow_residual)
            .max(self.second_order_residual)
            .max(self.jump_residual)
    }
}

/// Evaluates the four invariance conditions along a sampled cycle.
pub fn check_certificate<T: Scalar>(
    sys: &HybridSystem<T>,
    cert: &Certificate<T>,
    cycle: &LimitCycle<T>,
    cert_tol: T,
) -> Result<CertificateReport<T>> {
    if cycle.samples.len() < MIN_CYCLE_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "cycle has {} samples, need at least {MIN_CYCLE_SAMPLES}",
            cycle.samples.len()
        )));
    }
    if cert.x_bar.len() != sys.dim() {
        return Err(Error::InvalidInput("x_bar dimension does not match the system".into()));
    }
    let step = T::lit(CERT_FD_STEP);
    let mut positivity_min = T::infinity();
    let mut flow_residual = T::zero();
    let mut second_order_residual = T::zero();
    for (_, x) in &cycle.samples {
        positivity_min = positivity_min.min(cert.w(x));
        flow_residual = flow_residual.max(cert.lie_w(sys, x, step).abs());
        second_order_residual = second_order_residual.max(cert.lie2_w(sys, x, step).abs());
    }
    let jump_residual = (cert.w(&sys.g(&cycle.x_pre)) - cert.w(&cycle.x_pre)).abs();
    let nonnegativity_residual = (-positivity_min).max(T::zero());
    let ok = [nonnegativity_residual, flow_residual, second_order_residual, jump_residual]
        .iter()
        .all(|r| r.is_finite() && *r <= cert_tol)
        && positivity_min > T::zero();
    Ok(CertificateReport {
        samples: cycle.samples.len(),
        nonnegativity_residual,
        flow_residual,
        second_order_residual,
        jump_residual,
        positivity_min,
        cert_tol,
        analytic_gradient: cert.grad_p.is_some(),
        verdict: if ok { CertVerdict::Pass } else { CertVerdict::Fail },
    })
}

/// τ(t) = scale·t on [0, t1], then t + shift (continuous at t1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reparameterization<T> {
    pub t1: T,
    pub scale: T,
    pub shift: T,
}

impl<T: Scalar> Reparameterization<T> {
    pub fn identity() -> Self {
        Self { t1: T::zero(), scale: T::one(), shift: T::zero() }
    }

    pub fn eval(&self, t: T) -> T {
        if t <= self.t1 {
            self.scale * t
        } else {
            t + self.shift
        }
    }

    pub fn breakpoints(&self) -> Vec<T> {
        vec![self.t1]
    }

    /// max |t − τ(t)| on [0, t_end]; attained at t1 or beyond it.
    pub fn max_time_offset(&self, t_end: T) -> T {
        let at_t1 = (self.t1 - self.eval(self.t1.min(t_end))).abs();
        if t_end > self.t1 {
            at_t1.max(self.shift.abs())
        } else {
            (t_end - self.eval(t_end)).abs().max(at_t1)
        }
    }
}

fn first_impact<T: Scalar>(arc: &HybridArc<T>) -> Result<T> {
    arc.jumps.first().map(|r| r.t).ok_or(Error::NoReturn)
}

/// Matches the first impacts of two solutions: τ maps T₁ to T₂.
pub fn build_impact_reparameterization<T: Scalar>(
    phi1: &HybridArc<T>,
    phi2: &HybridArc<T>,
) -> Result<Reparameterization<T>> {
    let t1 = first_impact(phi1)?;
    let t2 = first_impact(phi2)?;
    if !(t1 > T::zero()) || !(t2 > T::zero()) {
        return Err(Error::DegenerateStart);
    }
    Ok(Reparameterization { t1, scale: t2 / t1, shift: t2 - t1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfilePoint<T> {
    pub t: T,
    pub j: usize,
    /// None when (τ(t), j) is outside φ₂'s domain.
    pub distance: Option<T>,
}

/// |φ₁(t,j) − φ₂(τ(t),j)| at every sample of φ₁.
pub fn zhukovskii_profile<T: Scalar>(
    phi1: &HybridArc<T>,
    phi2: &HybridArc<T>,
    tau: &Reparameterization<T>,
) -> Vec<ProfilePoint<T>> {
    phi1.iter_samples()
        .map(|(t, j, x)| {
            let distance = phi2.state_at(tau.eval(t), j).map(|y| dist(x, &y));
            ProfilePoint { t, j, distance }
        })
        .collect()
}

/// |φ₁(t,j) − φ₂(t,j')| at equal ordinary time, ignoring jump counters.
pub fn euclidean_profile<T: Scalar>(phi1: &HybridArc<T>, phi2: &HybridArc<T>) -> Vec<ProfilePoint<T>> {
    phi1.iter_samples()
        .map(|(t, j, x)| ProfilePoint { t, j, distance: phi2.state_at_time(t).map(|(_, y)| dist(x, &y)) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZhukovskiiReport<T> {
    pub sup_distance: T,
    pub matched: usize,
    pub unmatched: usize,
    /// max |t − τ(t)| over φ₁'s time range.
    pub max_time_offset: T,
}

pub fn zhukovskii_distance<T: Scalar>(
    phi1: &HybridArc<T>,
    phi2: &HybridArc<T>,
    tau: &Reparameterization<T>,
) -> Result<ZhukovskiiReport<T>> {
    let prof = zhukovskii_profile(phi1, phi2, tau);
    let matched: Vec<T> = prof.iter().filter_map(|p| p.distance).collect();
    if matched.is_empty() {
        return Err(Error::InvalidPairing);
    }
    Ok(ZhukovskiiReport {
        sup_distance: matched.iter().fold(T::zero(), |m, &d| m.max(d)),
        matched: matched.len(),
        unmatched: prof.len() - matched.len(),
        max_time_offset: tau.max_time_offset(phi1.t_end()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness<T> {
    pub t: T,
    pub j: usize,
    /// Smallest state gap found inside the time window (infinite if the window is empty).
    pub gap: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementalReport<T> {
    pub eps: T,
    pub holds: bool,
    pub witness: Option<Witness<T>>,
    pub checked: usize,
    /// Samples whose jump counter φ₂ never reached before its horizon.
    pub skipped: usize,
}

/// Smallest |x − φ₂(s, j)| over s ∈ [lo, hi] inside one segment, treating
/// the samples as a polyline in (s, state).
fn window_gap<T: Scalar>(samples: &[(T, Vec<T>)], x: &[T], lo: T, hi: T) -> T {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return T::infinity();
    };
    let lo = lo.max(first.0);
    let hi = hi.min(last.0);
    if lo > hi {
        return T::infinity();
    }
    let mut pts: Vec<Vec<T>> = Vec::new();
    pts.push(interpolate(samples, lo).expect("lo inside segment"));
    let start = samples.partition_point(|s| s.0 <= lo);
    let end = samples.partition_point(|s| s.0 < hi).max(start);
    for s in &samples[start..end] {
        pts.push(s.1.clone());
    }
    pts.push(interpolate(samples, hi).expect("hi inside segment"));
    if pts.len() == 1 {
        return dist(x, &pts[0]);
    }
    pts.windows(2)
        .map(|w| crate::geom::point_segment_distance(x, &w[0], &w[1]))
        .fold(T::infinity(), |m, d| m.min(d))
}

/// For each sample (t,j) of φ₁, looks for s with |t−s| ≤ ε and
/// |φ₁(t,j) − φ₂(s,j)| ≤ ε; stops at the first sample without one.
pub fn check_incremental_stability<T: Scalar>(phi1: &HybridArc<T>, phi2: &HybridArc<T>, eps: T) -> IncrementalReport<T> {
    let mut checked = 0;
    let mut skipped = 0;
    let phi2_truncated = matches!(phi2.terminated_by, ArcTermination::HorizonT | ArcTermination::HorizonJ);
    for (t, j, x) in phi1.iter_samples() {
        let gap = match phi2.segment(j) {
            Some(seg) => window_gap(&seg.samples, x, t - eps, t + eps),
            None if phi2_truncated => {
                skipped += 1;
                continue;
            }
            None => T::infinity(),
        };
        checked += 1;
        if !(gap <= eps) {
            return IncrementalReport { eps, holds: false, witness: Some(Witness { t, j, gap }), checked, skipped };
        }
    }
    IncrementalReport { eps, holds: true, witness: None, checked, skipped }
}

/// Pair checks in parallel; results keep the input order.
pub fn check_incremental_stability_batch<T: Scalar>(
    pairs: &[(HybridArc<T>, HybridArc<T>)],
    eps: T,
) -> Vec<IncrementalReport<T>> {
    pairs.par_iter().map(|(a, b)| check_incremental_stability(a, b, eps)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonexistenceReport<T> {
    pub shift: T,
    /// |φ₁(0,0) − φ₂(0,0)| for the two phase-shifted solutions.
    pub initial_gap: T,
    pub rows: Vec<IncrementalReport<T>>,
    /// Smallest ε in the grid for which the δS check passed.
    pub smallest_passing_eps: Option<T>,
    pub horizon: T,
}

/// Two solutions on the cycle, the second started `shift` seconds along it,
/// checked for δS at each ε. A cycle forces failures for small ε.
pub fn check_nonexistence_signal<T: Scalar>(
    sys: &HybridSystem<T>,
    cycle: &LimitCycle<T>,
    shift: T,
    eps_grid: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<NonexistenceReport<T>> {
    if !(shift >= T::zero() && shift < cycle.period) {
        return Err(Error::InvalidInput("shift must lie in [0, T*)".into()));
    }
    let x2 = interpolate(&cycle.samples, shift).ok_or(Error::InvalidInput("shift outside the cycle samples".into()))?;
    let horizon = T::lit(5.5) * cycle.period;
    let j_max = 1_000_000;
    let phi1 = simulate(sys, &cycle.x_post, horizon, j_max, cfg)?;
    let phi2 = simulate(sys, &x2, horizon, j_max, cfg)?;
    let rows: Vec<IncrementalReport<T>> =
        eps_grid.par_iter().map(|&e| check_incremental_stability(&phi1, &phi2, e)).collect();
    let smallest_passing_eps = rows.iter().filter(|r| r.holds).map(|r| r.eps).fold(None, |m: Option<T>, e| {
        Some(m.map_or(e, |v| v.min(e)))
    });
    Ok(NonexistenceReport { shift, initial_gap: dist(&cycle.x_post, &x2), rows, smallest_passing_eps, horizon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Region;

    fn timer() -> HybridSystem<f64> {
        let region = Region::new(&[(0.0, 1.0)]).unwrap();
        HybridSystem::new("timer", 1, |_, o| o[0] = 1.0, |_, o| o[0] = 0.0, |x| 1.0 - x[0], region, 0.5).unwrap()
    }

    #[test]
    fn certificate_rejects_bad_exponent_or_anchor() {
        assert!(Certificate::new(|x: &[f64]| x[0], vec![1.0], 3).is_err());
        assert!(Certificate::new(|x: &[f64]| x[0], vec![0.0], 2).is_err());
        assert!(Certificate::new(|x: &[f64]| x[0], vec![1.0], 2).is_ok());
    }

    #[test]
    fn polynomial_certificate_evaluates() {
        let doc = r#"{"p": {"2,0": 1.0, "0,2": 1.0, "0,0": -4.0}, "x_bar": [0, 0], "n_bar": 2}"#;
        let pc: PolynomialCertificate = serde_json::from_str(doc).unwrap();
        let c: Certificate<f64> = pc.build(2).unwrap();
        assert_eq!(c.p(&[1.0, 2.0]), 1.0);
        assert_eq!(c.w(&[0.0, 2.0]), 16.0);
        let mut g = [0.0; 2];
        (c.grad_p.as_ref().unwrap())(&[1.0, 2.0], &mut g);
        assert_eq!(g, [2.0, 4.0]);
        assert!(serde_json::from_str::<PolynomialCertificate>(r#"{"p": {}, "x_bar": [], "n_bar": 2, "x": 1}"#).is_err());
        let bad = PolynomialCertificate { p: [("1".to_string(), 1.0)].into(), x_bar: vec![0.0, 0.0], n_bar: 2 };
        assert!(bad.build::<f64>(2).is_err());
    }

    #[test]
    fn reparameterization_shape() {
        let cfg = IntegratorConfig::default();
        let s = timer();
        let a = simulate(&s, &[0.8], 3.0, 10, &cfg).unwrap();
        let b = simulate(&s, &[0.0], 3.0, 10, &cfg).unwrap();
        let tau = build_impact_reparameterization(&a, &b).unwrap();
        assert!((tau.scale - 5.0).abs() < 1e-9 && (tau.shift - 0.8).abs() < 1e-9);
        assert_eq!(tau.eval(0.0), 0.0);
        let c = simulate(&s, &[1.0], 3.0, 10, &cfg).unwrap();
        assert!(matches!(build_impact_reparameterization(&c, &b), Err(Error::DegenerateStart)));
        let id = build_impact_reparameterization(&a, &a).unwrap();
        assert_eq!(id.scale, 1.0);
        assert_eq!(id.shift, 0.0);
    }

    #[test]
    fn identical_arcs_are_incrementally_close() {
        let s = timer();
        let a = simulate(&s, &[0.3], 4.0, 10, &IntegratorConfig::default()).unwrap();
        for eps in [0.0, 0.01, 1.0] {
            assert!(check_incremental_stability(&a, &a, eps).holds);
        }
        let z = zhukovskii_distance(&a, &a, &Reparameterization::identity()).unwrap();
        assert_eq!(z.sup_distance, 0.0);
        assert_eq!(z.unmatched, 0);
    }

    #[test]
    fn time_offset_of_tau() {
        let tau: Reparameterization<f64> = Reparameterization { t1: 0.2, scale: 5.0, shift: 0.8 };
        assert!((tau.max_time_offset(3.0) - 0.8).abs() < 1e-15);
        assert!((tau.max_time_offset(0.1) - 0.4).abs() < 1e-15);
    }
}
