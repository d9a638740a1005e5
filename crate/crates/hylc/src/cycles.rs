//! Hybrid Poincaré maps, their fixed points and linearization, and the
//! limit cycles they define.

use num_complex::Complex;
use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flow::{flow_until_impact, rk4_signed, FlowTermination, IntegratorConfig};
use crate::geom::PolylineIndex;
use crate::linalg::{self, all_finite, dist, norm, Matrix};
use crate::model::{in_jump_set, HybridSystem};
use crate::scalar::Scalar;

/// Tolerance on |h| accepted as "on the guard" for Poincaré-map inputs.
const GUARD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardProjection {
    /// Newton steps along ∇h.
    Normal,
    /// Flow forward or backward along f until h = 0.
    AlongFlow,
}

/// P(x) and the flow time of the return.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareReturn<T> {
    pub x: Vec<T>,
    pub t_return: T,
}

/// One return of the hybrid Poincaré map: jump, then flow to the next impact.
pub fn poincare_return<T: Scalar>(sys: &HybridSystem<T>, x: &[T], cfg: &IntegratorConfig<T>) -> Result<PoincareReturn<T>> {
    if x.len() != sys.dim() || !all_finite(x) {
        return Err(Error::InvalidInput("state has wrong length or non-finite entries".into()));
    }
    let tol = T::lit(GUARD_TOL).max(cfg.event_tol);
    if !in_jump_set(sys, x, tol) {
        return Err(Error::InvalidInput("Poincaré map input is not in M ∩ D".into()));
    }
    let y = sys.g(x);
    if !all_finite(&y) {
        return Err(Error::Divergence { t: 0.0 });
    }
    let r = flow_until_impact(sys, &y, cfg)?;
    match (r.terminated_by, r.impact) {
        (FlowTermination::Impact, Some(imp)) => Ok(PoincareReturn { x: imp.x, t_return: imp.t }),
        (FlowTermination::LeftRegion, _) => Err(Error::LeftRegion),
        _ => Err(Error::NoReturn),
    }
}

pub fn poincare_map<T: Scalar>(sys: &HybridSystem<T>, x: &[T], cfg: &IntegratorConfig<T>) -> Result<Vec<T>> {
    poincare_return(sys, x, cfg).map(|r| r.x)
}

/// Moves x onto the guard surface h = 0.
pub fn project_to_guard<T: Scalar>(
    sys: &HybridSystem<T>,
    x: &[T],
    how: GuardProjection,
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<T>> {
    let target = T::lit(1e-13);
    let mut y = x.to_vec();
    for _ in 0..60 {
        let hv = sys.h(&y);
        if hv.abs() <= target {
            break;
        }
        match how {
            GuardProjection::Normal => {
                let gh = sys.grad_h(&y);
                let g2 = linalg::dot(&gh, &gh);
                if !(g2 > T::zero()) {
                    return Err(Error::Transversality(0.0));
                }
                for (yi, gi) in y.iter_mut().zip(&gh) {
                    *yi = *yi - hv * *gi / g2;
                }
            }
            GuardProjection::AlongFlow => {
                let l = sys.lie(&y);
                if !(l.abs() > T::lit(1e-14)) {
                    return Err(Error::Transversality(l.as_f64()));
                }
                y = flow_for(sys, &y, -hv / l, cfg.step)?;
            }
        }
        if !all_finite(&y) {
            return Err(Error::Divergence { t: 0.0 });
        }
    }
    if sys.h(&y).abs() > T::lit(GUARD_TOL) {
        return Err(non_convergence(&y, sys.h(&y)));
    }
    Ok(y)
}

/// Flows x for signed time s with RK4 substeps no longer than `step`.
fn flow_for<T: Scalar>(sys: &HybridSystem<T>, x: &[T], s: T, step: T) -> Result<Vec<T>> {
    let k = (s.abs() / step).ceil().to_usize().unwrap_or(1).max(1);
    let hstep = s / T::of_usize(k);
    let mut y = x.to_vec();
    for _ in 0..k {
        y = rk4_signed(sys, &y, hstep)?;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointConfig<T> {
    pub fp_tol: T,
    pub max_iters: usize,
    /// Non-contracting Picard iterations tolerated before switching to Newton.
    pub stall_iters: usize,
}

impl<T: Scalar> Default for FixedPointConfig<T> {
    fn default() -> Self {
        Self { fp_tol: T::lit(1e-9), max_iters: 500, stall_iters: 50 }
    }
}

/// Picard iteration on P with a Newton fallback on P(x) − x.
pub fn find_fixed_point<T: Scalar>(
    sys: &HybridSystem<T>,
    x_guess: &[T],
    cfg: &IntegratorConfig<T>,
    fp: &FixedPointConfig<T>,
) -> Result<Vec<T>> {
    if x_guess.len() != sys.dim() || !all_finite(x_guess) {
        return Err(Error::InvalidInput("guess has wrong length or non-finite entries".into()));
    }
    let mut x = project_to_guard(sys, x_guess, GuardProjection::AlongFlow, cfg)?;
    let mut best = x.clone();
    let mut best_res = T::infinity();
    let mut stalled = 0usize;
    let mut newton = false;
    for _ in 0..fp.max_iters {
        let px = match poincare_map(sys, &x, cfg) {
            Ok(p) => p,
            Err(e) if !best_res.is_finite() => return Err(e),
            Err(_) => return Err(non_convergence(&best, best_res)),
        };
        let res = dist(&px, &x);
        if res < best_res {
            if res < best_res * T::lit(0.999) {
                stalled = 0;
            } else {
                stalled += 1;
            }
            best_res = res;
            best = x.clone();
        } else {
            stalled += 1;
        }
        if res <= fp.fp_tol {
            return Ok(x);
        }
        if stalled >= fp.stall_iters {
            newton = true;
        }
        if newton {
            let jac = poincare_jacobian(sys, &best, None, GuardProjection::Normal, cfg)?;
            let pb = poincare_map(sys, &best, cfg)?;
            let n = sys.dim();
            let mut a = jac.clone();
            for i in 0..n {
                a[(i, i)] = a[(i, i)] - T::one();
            }
            let rhs: Vec<T> = pb.iter().zip(&best).map(|(&p, &b)| b - p).collect();
            let delta = a.solve(&rhs).ok_or_else(|| non_convergence(&best, best_res))?;
            let cand: Vec<T> = best.iter().zip(&delta).map(|(&b, &d)| b + d).collect();
            x = project_to_guard(sys, &cand, GuardProjection::Normal, cfg)?;
        } else {
            x = px;
        }
    }
    Err(non_convergence(&best, best_res))
}

fn non_convergence<T: Scalar>(best: &[T], residual: T) -> Error {
    Error::NonConvergence { best: best.iter().map(|v| v.as_f64()).collect(), residual: residual.as_f64() }
}

/// Default finite-difference step 1e-5·(1+|x*|).
pub fn default_fd_step<T: Scalar>(x_star: &[T]) -> T {
    T::lit(1e-5) * (T::one() + norm(x_star))
}

/// Central-difference Jacobian of P with perturbed points projected back
/// onto the guard surface.
pub fn poincare_jacobian<T: Scalar>(
    sys: &HybridSystem<T>,
    x_star: &[T],
    fd_step: Option<T>,
    how: GuardProjection,
    cfg: &IntegratorConfig<T>,
) -> Result<Matrix<T>> {
    let n = sys.dim();
    if x_star.len() != n || !all_finite(x_star) {
        return Err(Error::InvalidInput("state has wrong length or non-finite entries".into()));
    }
    let d0 = fd_step.unwrap_or_else(|| default_fd_step(x_star));
    if !(d0 > T::zero()) {
        return Err(Error::InvalidInput("fd_step must be positive".into()));
    }
    let mut jac = Matrix::zeros(n, n);
    for k in 0..n {
        let mut d = d0;
        let mut attempt = 0;
        let col = loop {
            let eval = |sign: T| -> Result<Vec<T>> {
                let mut xp = x_star.to_vec();
                xp[k] = xp[k] + sign * d;
                let xp = project_to_guard(sys, &xp, how, cfg)?;
                poincare_map(sys, &xp, cfg)
            };
            match (eval(T::one()), eval(-T::one())) {
                (Ok(a), Ok(b)) => break a.iter().zip(&b).map(|(&p, &m)| (p - m) / (d + d)).collect::<Vec<T>>(),
                (Err(e), _) | (_, Err(e)) => {
                    attempt += 1;
                    if attempt > 3 {
                        return Err(e);
                    }
                    d = d * T::lit(0.25);
                }
            }
        };
        jac.set_col(k, &col);
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    AsymptoticallyStable,
    Unstable,
    Marginal,
}

pub fn classify_stability<T: Scalar>(eigs: &[Complex<T>], eig_tol: T) -> StabilityVerdict {
    let rho = eigs.iter().fold(T::zero(), |m, z| m.max(z.norm()));
    if rho < T::one() - eig_tol {
        StabilityVerdict::AsymptoticallyStable
    } else if rho > T::one() + eig_tol {
        StabilityVerdict::Unstable
    } else {
        StabilityVerdict::Marginal
    }
}

pub(crate) fn serialize_complex<T: Scalar, S: Serializer>(v: &[Complex<T>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct PoincareAnalysis<T> {
    pub fixed_point: Vec<T>,
    pub residual: T,
    pub jacobian: Matrix<T>,
    #[serde(serialize_with = "serialize_complex")]
    pub eigenvalues: Vec<Complex<T>>,
    pub spectral_radius: T,
    pub verdict: StabilityVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisConfig<T> {
    pub fd_step: Option<T>,
    pub projection: GuardProjection,
    pub eig_tol: T,
}

impl<T: Scalar> Default for AnalysisConfig<T> {
    fn default() -> Self {
        Self { fd_step: None, projection: GuardProjection::Normal, eig_tol: T::lit(1e-6) }
    }
}

/// Jacobian, eigenvalues and verdict at a fixed point.
pub fn analyze_fixed_point<T: Scalar>(
    sys: &HybridSystem<T>,
    x_star: &[T],
    cfg: &IntegratorConfig<T>,
    opts: &AnalysisConfig<T>,
) -> Result<PoincareAnalysis<T>> {
    let px = poincare_map(sys, x_star, cfg)?;
    let residual = dist(&px, x_star);
    let jacobian = poincare_jacobian(sys, x_star, opts.fd_step, opts.projection, cfg)?;
    let eigenvalues = linalg::eigenvalues(&jacobian)?;
    let spectral_radius = eigenvalues.iter().fold(T::zero(), |m, z| m.max(z.norm()));
    let verdict = classify_stability(&eigenvalues, opts.eig_tol);
    Ok(PoincareAnalysis { fixed_point: x_star.to_vec(), residual, jacobian, eigenvalues, spectral_radius, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCycle<T> {
    pub period: T,
    pub x_pre: Vec<T>,
    pub x_post: Vec<T>,
    /// (t, x) over one period, from x_post at t = 0 to the impact at T*.
    pub samples: Vec<(T, Vec<T>)>,
    pub transversality_value: T,
}

impl<T: Scalar> LimitCycle<T> {
    pub fn states(&self) -> Vec<Vec<T>> {
        self.samples.iter().map(|s| s.1.clone()).collect()
    }

    /// |x|_O against the sampled cycle, treated as a polyline. Builds an
    /// index per call; use `distance_index` for repeated queries.
    pub fn distance(&self, x: &[T]) -> T {
        self.index(T::zero()).distance(x)
    }

    pub fn distance_index(&self) -> CycleIndex<T> {
        CycleIndex(self.index(T::zero()))
    }

    pub(crate) fn index(&self, cell: T) -> PolylineIndex<T> {
        PolylineIndex::new(&self.states(), cell)
    }
}

pub fn extract_limit_cycle<T: Scalar>(
    sys: &HybridSystem<T>,
    x_star: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<LimitCycle<T>> {
    let ret = poincare_return(sys, x_star, cfg)?;
    let res = dist(&ret.x, x_star);
    if res > T::lit(1e-6) * (T::one() + norm(x_star)) {
        return Err(Error::InvalidInput(format!("not a fixed point of P: |P(x) - x| = {:e}", res.as_f64())));
    }
    let transversality_value = sys.lie(x_star);
    if transversality_value >= -cfg.event_tol {
        return Err(Error::Transversality(transversality_value.as_f64()));
    }
    let x_post = sys.g(x_star);
    let fine = IntegratorConfig { sample_stride: 1, ..*cfg };
    let r = flow_until_impact(sys, &x_post, &fine)?;
    let period = r.t_impact();
    Ok(LimitCycle { period, x_pre: x_star.to_vec(), x_post, samples: r.samples, transversality_value })
}

/// Reusable |x|_O queries against one cycle.
#[derive(Debug, Clone)]
pub struct CycleIndex<T>(PolylineIndex<T>);

impl<T: Scalar> CycleIndex<T> {
    pub fn distance(&self, x: &[T]) -> T {
        self.0.distance(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectConfig<T> {
    /// Successive impacts that must agree.
    pub k_impacts: usize,
    /// Cap on Poincaré returns before giving up.
    pub max_returns: usize,
    pub fixed_point: FixedPointConfig<T>,
}

impl<T: Scalar> Default for DetectConfig<T> {
    fn default() -> Self {
        Self { k_impacts: 8, max_returns: 5000, fixed_point: FixedPointConfig::default() }
    }
}

/// Follows the solution from x0 through successive impacts; when K of them
/// agree to 10·fp_tol the fixed point is refined and its cycle returned.
pub fn detect_limit_cycle<T: Scalar>(
    sys: &HybridSystem<T>,
    x0: &[T],
    cfg: &IntegratorConfig<T>,
    det: &DetectConfig<T>,
) -> Result<Option<LimitCycle<T>>> {
    let first = flow_until_impact(sys, x0, cfg)?;
    let mut x = match (first.terminated_by, first.impact) {
        (FlowTermination::Impact, Some(imp)) => imp.x,
        _ => return Ok(None),
    };
    let cauchy = T::lit(10.0) * det.fixed_point.fp_tol;
    let mut elapsed = first.samples.last().map_or(T::zero(), |s| s.0);
    let mut agree = 1usize;
    for _ in 0..det.max_returns {
        let r = match poincare_return(sys, &x, cfg) {
            Ok(r) => r,
            Err(Error::NoReturn | Error::LeftRegion | Error::Divergence { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        elapsed = elapsed + r.t_return;
        agree = if dist(&r.x, &x) <= cauchy { agree + 1 } else { 1 };
        x = r.x;
        if agree >= det.k_impacts {
            let xs = find_fixed_point(sys, &x, cfg, &det.fixed_point)?;
            return extract_limit_cycle(sys, &xs, cfg).map(Some);
        }
        if elapsed > cfg.horizon {
            break;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceReport<T> {
    pub value: T,
    /// The flow hit the horizon before reaching D.
    pub truncated: bool,
}

/// d(x): largest distance to the cycle along the flow from x up to its impact.
pub fn distance_function_d<T: Scalar>(
    sys: &HybridSystem<T>,
    x: &[T],
    cycle: &LimitCycle<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<DistanceReport<T>> {
    let r = flow_until_impact(sys, x, cfg)?;
    if r.terminated_by == FlowTermination::LeftRegion {
        return Err(Error::LeftRegion);
    }
    let idx = cycle.index(T::zero());
    let value = r.samples.iter().fold(T::zero(), |m, (_, y)| m.max(idx.distance(y)));
    Ok(DistanceReport { value, truncated: r.terminated_by == FlowTermination::Horizon })
}

/// Cycle summary in the JSON layout used by reports.
#[derive(Debug, Clone, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct CycleReport<T> {
    pub fixed_point: Vec<T>,
    #[serde(rename = "T_star")]
    pub t_star: T,
    #[serde(serialize_with = "serialize_complex")]
    pub eigenvalues: Vec<Complex<T>>,
    pub verdict: StabilityVerdict,
    pub transversality: T,
    pub residual: T,
    pub spectral_radius: T,
    pub jacobian: Matrix<T>,
    pub x_post: Vec<T>,
}

impl<T: Scalar> CycleReport<T> {
    pub fn new(cycle: &LimitCycle<T>, analysis: &PoincareAnalysis<T>) -> Self {
        Self {
            fixed_point: analysis.fixed_point.clone(),
            t_star: cycle.period,
            eigenvalues: analysis.eigenvalues.clone(),
            verdict: analysis.verdict,
            transversality: cycle.transversality_value,
            residual: analysis.residual,
            spectral_radius: analysis.spectral_radius,
            jacobian: analysis.jacobian.clone(),
            x_post: cycle.x_post.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Region;

    // q' = r - 1, r' = 1, jump r+ = r/4 at q = 1
    fn tcp() -> HybridSystem<f64> {
        let region = Region::new(&[(-1.5, 1.25), (0.0, 3.2)]).unwrap();
        HybridSystem::new(
            "tcp",
            2,
            |x, o| {
                o[0] = x[1] - 1.0;
                o[1] = 1.0
            },
            |x, o| {
                o[0] = x[0];
                o[1] = 0.25 * x[1]
            },
            |x| 1.0 - x[0],
            region,
            0.05,
        )
        .unwrap()
        .with_grad_h(|_, o| {
            o[0] = -1.0;
            o[1] = 0.0
        })
    }

    #[test]
    fn map_matches_closed_form() {
        let s = tcp();
        let cfg = IntegratorConfig::default();
        let p = poincare_map(&s, &[1.0, 1.2], &cfg).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] - 1.7).abs() < 1e-9, "{p:?}");
        assert!(poincare_map(&s, &[0.5, 1.2], &cfg).is_err());
    }

    #[test]
    fn fixed_point_and_cycle() {
        let s = tcp();
        let cfg = IntegratorConfig::default();
        let x = find_fixed_point(&s, &[1.0, 1.0], &cfg, &FixedPointConfig::default()).unwrap();
        assert!((x[1] - 1.6).abs() < 1e-8);
        let a = analyze_fixed_point(&s, &x, &cfg, &AnalysisConfig::default()).unwrap();
        assert_eq!(a.verdict, StabilityVerdict::AsymptoticallyStable);
        assert!(a.jacobian[(0, 0)].abs() < 1e-6 && (a.jacobian[(1, 1)] + 0.25).abs() < 1e-6);
        let c = extract_limit_cycle(&s, &x, &cfg).unwrap();
        assert!((c.period - 1.2).abs() < 1e-9);
        assert!(c.transversality_value < 0.0);
        assert!(c.distance(&[1.0, 1.6]) < 1e-9);
    }

    #[test]
    fn sliding_projection_keeps_a_tangent_column() {
        let s = tcp();
        let cfg = IntegratorConfig::default();
        let j = poincare_jacobian(&s, &[1.0, 1.6], None, GuardProjection::AlongFlow, &cfg).unwrap();
        assert!(j[(1, 0)].abs() > 0.1);
        let e = crate::linalg::eigenvalues(&j).unwrap();
        assert!(e.iter().any(|z| (z.re + 0.25).abs() < 1e-4));
    }

    #[test]
    fn verdicts() {
        let c = |v: &[f64]| v.iter().map(|&r| Complex::new(r, 0.0)).collect::<Vec<_>>();
        assert_eq!(classify_stability(&c(&[0.0, -0.25]), 1e-6), StabilityVerdict::AsymptoticallyStable);
        assert_eq!(classify_stability(&c(&[1.1]), 1e-6), StabilityVerdict::Unstable);
        assert_eq!(classify_stability(&c(&[1.0]), 1e-6), StabilityVerdict::Marginal);
    }

    #[test]
    fn detection_on_decay_is_absent() {
        let region = Region::new(&[(0.0, 2.0)]).unwrap();
        let s = HybridSystem::new("decay", 1, |x, o| o[0] = -x[0], |x, o| o[0] = x[0], |_| 1.0, region, 0.1).unwrap();
        let cfg = IntegratorConfig::default().with_horizon(50.0);
        assert!(detect_limit_cycle(&s, &[1.0], &cfg, &DetectConfig::default()).unwrap().is_none());
    }
}
