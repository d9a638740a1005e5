//! Hybrid systems with guard-carved flow and jump sets restricted to a
//! region M, plus a sampling check of the structural assumptions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::scalar::Scalar;

pub type VectorFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
pub type ScalarFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
pub type Predicate<T> = Arc<dyn Fn(&[T]) -> bool + Send + Sync>;

/// Default tolerance for set-membership tests, in state units.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Point in a hybrid time domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HybridTime<T> {
    pub t: T,
    pub j: usize,
}

/// Bounding box plus an optional predicate.
#[derive(Clone)]
pub struct Region<T> {
    lo: Vec<T>,
    hi: Vec<T>,
    predicate: Option<Predicate<T>>,
}

impl<T: Scalar> Region<T> {
    pub fn new(bounds: &[(T, T)]) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidInput("region box needs at least one axis".into()));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidInput(format!("box axis {i} is empty or unbounded")));
            }
        }
        Ok(Self {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            predicate: None,
        })
    }

    pub fn with_predicate(mut self, p: impl Fn(&[T]) -> bool + Send + Sync + 'static) -> Self {
        self.predicate = Some(Arc::new(p));
        self
    }

    /// Same predicate, different box.
    pub fn with_box(&self, bounds: &[(T, T)]) -> Result<Self> {
        let mut r = Self::new(bounds)?;
        r.predicate = self.predicate.clone();
        Ok(r)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn bounds(&self) -> Vec<(T, T)> {
        self.lo.iter().copied().zip(self.hi.iter().copied()).collect()
    }

    pub fn in_box(&self, x: &[T], tol: T) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }

    pub fn contains(&self, x: &[T], tol: T) -> bool {
        self.in_box(x, tol) && self.predicate.as_ref().is_none_or(|p| p(x))
    }
}

/// Hybrid system data (C, f, D, g) with C = {h ≥ 0} ∩ M and
/// D = {h = 0, L_f h ≤ 0} ∩ M.
///
/// An optional impact window restricts where the guard is active: outside
/// it the state counts as flowing regardless of the sign of h and no jump
/// is possible.
#[derive(Clone)]
pub struct HybridSystem<T> {
    name: String,
    n: usize,
    f: VectorFn<T>,
    g: VectorFn<T>,
    h: ScalarFn<T>,
    grad_h: Option<VectorFn<T>>,
    region: Region<T>,
    window: Option<Predicate<T>>,
    params: BTreeMap<String, f64>,
    min_dwell: T,
}

impl<T: Scalar> fmt::Debug for HybridSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("params", &self.params)
            .field("box", &self.region.bounds())
            .field("min_dwell", &self.min_dwell)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> HybridSystem<T> {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        f: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
        g: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
        h: impl Fn(&[T]) -> T + Send + Sync + 'static,
        region: Region<T>,
        min_dwell: T,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("state dimension must be at least 1".into()));
        }
        if region.dim() != n {
            return Err(Error::InvalidInput(format!(
                "region box has {} axes for a {n}-dimensional state",
                region.dim()
            )));
        }
        if !(min_dwell > T::zero() && min_dwell.is_finite()) {
            return Err(Error::InvalidInput("min_dwell must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            n,
            f: Arc::new(f),
            g: Arc::new(g),
            h: Arc::new(h),
            grad_h: None,
            region,
            window: None,
            params: BTreeMap::new(),
            min_dwell,
        })
    }

    pub fn with_grad_h(mut self, grad: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.grad_h = Some(Arc::new(grad));
        self
    }

    pub fn with_impact_window(mut self, w: impl Fn(&[T]) -> bool + Send + Sync + 'static) -> Self {
        self.window = Some(Arc::new(w));
        self
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn with_box(mut self, bounds: &[(T, T)]) -> Result<Self> {
        if bounds.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "box has {} axes for a {}-dimensional state",
                bounds.len(),
                self.n
            )));
        }
        self.region = self.region.with_box(bounds)?;
        Ok(self)
    }

    pub fn with_min_dwell(mut self, min_dwell: T) -> Result<Self> {
        if !(min_dwell > T::zero() && min_dwell.is_finite()) {
            return Err(Error::InvalidInput("min_dwell must be positive".into()));
        }
        self.min_dwell = min_dwell;
        Ok(self)
    }

    /// Drops the analytic gradient so that L_f h falls back to finite differences.
    pub fn without_grad_h(mut self) -> Self {
        self.grad_h = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn region(&self) -> &Region<T> {
        &self.region
    }

    pub fn min_dwell(&self) -> T {
        self.min_dwell
    }

    pub fn has_grad_h(&self) -> bool {
        self.grad_h.is_some()
    }

    pub fn flow_into(&self, x: &[T], out: &mut [T]) {
        (self.f)(x, out)
    }

    pub fn jump_into(&self, x: &[T], out: &mut [T]) {
        (self.g)(x, out)
    }

    pub fn f(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        (self.f)(x, &mut out);
        out
    }

    pub fn g(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        (self.g)(x, &mut out);
        out
    }

    pub fn h(&self, x: &[T]) -> T {
        (self.h)(x)
    }

    pub fn window_open(&self, x: &[T]) -> bool {
        self.window.as_ref().is_none_or(|w| w(x))
    }

    pub fn grad_h(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        match &self.grad_h {
            Some(gr) => gr(x, &mut out),
            None => self.grad_h_fd_into(x, None, &mut out),
        }
        out
    }

    /// Central differences; the default step is 1e-6·(1+|x_i|).
    pub fn grad_h_fd(&self, x: &[T], step: Option<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        self.grad_h_fd_into(x, step, &mut out);
        out
    }

    fn grad_h_fd_into(&self, x: &[T], step: Option<T>, out: &mut [T]) {
        let mut xp = x.to_vec();
        for i in 0..self.n {
            let d = step.unwrap_or_else(|| T::lit(1e-6) * (T::one() + x[i].abs()));
            xp[i] = x[i] + d;
            let hp = self.h(&xp);
            xp[i] = x[i] - d;
            let hm = self.h(&xp);
            xp[i] = x[i];
            out[i] = (hp - hm) / (d + d);
        }
    }

    /// ⟨∇h(x), f(x)⟩ without input validation.
    pub fn lie(&self, x: &[T]) -> T {
        let fx = self.f(x);
        let gh = self.grad_h(x);
        gh.iter().zip(&fx).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }
}

fn check_state<T: Scalar>(sys: &HybridSystem<T>, x: &[T]) -> Result<()> {
    if x.len() != sys.dim() {
        return Err(Error::InvalidInput(format!(
            "state has {} components, system '{}' has {}",
            x.len(),
            sys.name(),
            sys.dim()
        )));
    }
    if !all_finite(x) {
        return Err(Error::InvalidInput("non-finite state component".into()));
    }
    Ok(())
}

/// x ∈ M and h(x) ≥ -tol (or the impact window is closed).
pub fn flow_membership<T: Scalar>(sys: &HybridSystem<T>, x: &[T], tol: T) -> Result<bool> {
    check_state(sys, x)?;
    Ok(sys.region.contains(x, T::lit(MEMBERSHIP_TOL).max(tol))
        && (!sys.window_open(x) || sys.h(x) >= -tol))
}

/// x ∈ M, |h(x)| ≤ tol and L_f h(x) ≤ tol, inside the impact window.
pub fn jump_membership<T: Scalar>(sys: &HybridSystem<T>, x: &[T], tol: T) -> Result<bool> {
    check_state(sys, x)?;
    Ok(in_jump_set(sys, x, tol))
}

pub(crate) fn in_jump_set<T: Scalar>(sys: &HybridSystem<T>, x: &[T], tol: T) -> bool {
    sys.region.contains(x, T::lit(MEMBERSHIP_TOL).max(tol))
        && sys.window_open(x)
        && sys.h(x).abs() <= tol
        && sys.lie(x) <= tol
}

/// L_f h(x) using the analytic gradient when the system has one.
pub fn lie_derivative_h<T: Scalar>(sys: &HybridSystem<T>, x: &[T]) -> Result<T> {
    check_state(sys, x)?;
    Ok(sys.lie(x))
}

/// L_f h(x) with a finite-difference gradient at the given step.
pub fn lie_derivative_h_fd<T: Scalar>(sys: &HybridSystem<T>, x: &[T], step: Option<T>) -> Result<T> {
    check_state(sys, x)?;
    let fx = sys.f(x);
    let gh = sys.grad_h_fd(x, step);
    Ok(crate::linalg::dot(&gh, &fx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport<T> {
    pub samples: usize,
    pub lie_derivative_min: Option<T>,
    pub lie_derivative_max: Option<T>,
    /// Sampled points of M∩D where L_f h is not strictly negative.
    pub guard_violations: Vec<Vec<T>>,
    pub g_maps_back_into_d: bool,
    /// Sampled x ∈ M∩D with g(x) ∈ M∩D.
    pub g_witnesses: Vec<Vec<T>>,
    pub empty_jump_set: bool,
    pub transversality: Verdict,
    pub jump_disjoint: Verdict,
    pub verdict: Verdict,
}

const SCAN_INTERVALS: usize = 32;
const MAX_WITNESSES: usize = 16;

/// Samples M∩D along box-aligned lines through random box points and
/// checks L_f h < 0 there and g(M∩D) ∩ (M∩D) = ∅.
pub fn validate_assumptions<T: Scalar>(
    sys: &HybridSystem<T>,
    sample_count: usize,
    seed: u64,
) -> Result<ValidationReport<T>> {
    if sample_count == 0 {
        return Err(Error::InvalidInput("sample_count must be at least 1".into()));
    }
    let tol = T::lit(MEMBERSHIP_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = sys.region.bounds();
    let mut points: Vec<Vec<T>> = Vec::new();
    for _ in 0..sample_count {
        let u: Vec<T> = bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * T::lit(rng.random::<f64>()))
            .collect();
        for axis in 0..sys.dim() {
            for p in guard_roots_on_line(sys, &u, axis, bounds[axis]) {
                if sys.region.contains(&p, tol) && sys.window_open(&p) && sys.lie(&p) <= tol {
                    points.push(p);
                }
            }
        }
    }
    let mut lie_min: Option<T> = None;
    let mut lie_max: Option<T> = None;
    let mut guard_violations = Vec::new();
    let mut g_witnesses = Vec::new();
    for p in &points {
        let l = sys.lie(p);
        lie_min = Some(lie_min.map_or(l, |m| m.min(l)));
        lie_max = Some(lie_max.map_or(l, |m| m.max(l)));
        if l > -tol && guard_violations.len() < MAX_WITNESSES {
            guard_violations.push(p.clone());
        }
        let gp = sys.g(p);
        if all_finite(&gp) && in_jump_set(sys, &gp, tol) && g_witnesses.len() < MAX_WITNESSES {
            g_witnesses.push(p.clone());
        }
    }
    let transversality = if guard_violations.is_empty() { Verdict::Pass } else { Verdict::Fail };
    let jump_disjoint = if g_witnesses.is_empty() { Verdict::Pass } else { Verdict::Fail };
    let verdict = if transversality == Verdict::Pass && jump_disjoint == Verdict::Pass {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ValidationReport {
        samples: points.len(),
        lie_derivative_min: lie_min,
        lie_derivative_max: lie_max,
        g_maps_back_into_d: !g_witnesses.is_empty(),
        guard_violations,
        g_witnesses,
        empty_jump_set: points.is_empty(),
        transversality,
        jump_disjoint,
        verdict,
    })
}

/// Zeros of h along the line through `u` parallel to `axis`.
fn guard_roots_on_line<T: Scalar>(sys: &HybridSystem<T>, u: &[T], axis: usize, (lo, hi): (T, T)) -> Vec<Vec<T>> {
    let tol = T::lit(MEMBERSHIP_TOL);
    let mut p = u.to_vec();
    let mut at = |s: T| {
        p[axis] = s;
        (sys.h(&p), p.clone())
    };
    let grid: Vec<T> = (0..=SCAN_INTERVALS)
        .map(|i| lo + (hi - lo) * T::of_usize(i) / T::of_usize(SCAN_INTERVALS))
        .collect();
    let vals: Vec<T> = grid.iter().map(|&s| at(s).0).collect();
    let mut roots = Vec::new();
    for i in 0..SCAN_INTERVALS {
        let (a, b) = (vals[i], vals[i + 1]);
        if !(a.is_finite() && b.is_finite()) {
            continue;
        }
        if a.abs() <= tol {
            roots.push(at(grid[i]).1);
            continue;
        }
        if i + 1 == SCAN_INTERVALS && b.abs() <= tol {
            roots.push(at(grid[i + 1]).1);
            continue;
        }
        if (a > T::zero()) == (b > T::zero()) || b.abs() <= tol {
            continue;
        }
        let (mut s0, mut s1, mut h0) = (grid[i], grid[i + 1], a);
        for _ in 0..200 {
            let mid = T::lit(0.5) * (s0 + s1);
            if mid <= s0 || mid >= s1 {
                break;
            }
            let hm = at(mid).0;
            if (hm > T::zero()) == (h0 > T::zero()) {
                s0 = mid;
                h0 = hm;
            } else {
                s1 = mid;
            }
        }
        let (h_lo, p_lo) = at(s0);
        let (h_hi, p_hi) = at(s1);
        roots.push(if h_lo.abs() <= h_hi.abs() { p_lo } else { p_hi });
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_timer() -> HybridSystem<f64> {
        let region = Region::new(&[(0.0, 1.0)]).unwrap();
        HybridSystem::new("timer", 1, |_, o| o[0] = 1.0, |_, o| o[0] = 0.0, |x| 1.0 - x[0], region, 0.5).unwrap()
    }

    #[test]
    fn membership_on_a_timer() {
        let s = unit_timer();
        assert!(flow_membership(&s, &[1.0], 0.0).unwrap());
        assert!(flow_membership(&s, &[0.3], 0.0).unwrap());
        assert!(jump_membership(&s, &[1.0], 0.0).unwrap());
        assert!(!jump_membership(&s, &[0.3], 1e-9).unwrap());
        assert!((lie_derivative_h(&s, &[0.42]).unwrap() + 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_input() {
        let s = unit_timer();
        assert!(flow_membership(&s, &[f64::NAN], 0.0).is_err());
        assert!(flow_membership(&s, &[0.1, 0.2], 0.0).is_err());
        assert!(Region::<f64>::new(&[(1.0, 0.0)]).is_err());
        assert!(Region::<f64>::new(&[(0.0, f64::INFINITY)]).is_err());
        let region = Region::new(&[(0.0, 1.0)]).unwrap();
        assert!(HybridSystem::new("x", 1, |_, _| {}, |_, _| {}, |_| 0.0, region, 0.0).is_err());
    }

    #[test]
    fn window_masks_the_guard() {
        let region = Region::new(&[(-2.0, 2.0), (-2.0, 2.0)]).unwrap();
        let s = HybridSystem::new("w", 2, |_, o| o.copy_from_slice(&[1.0, 0.0]), |x, o| o.copy_from_slice(x), |x| -x[0], region, 0.1)
            .unwrap()
            .with_impact_window(|x| x[1] > 0.0);
        // h < 0 but window closed: still flowing, never jumping
        assert!(flow_membership(&s, &[1.0, -1.0], 0.0).unwrap());
        assert!(!jump_membership(&s, &[0.0, -1.0], 1e-9).unwrap());
        assert!(!flow_membership(&s, &[1.0, 1.0], 0.0).unwrap());
        assert!(jump_membership(&s, &[0.0, 1.0], 1e-9).unwrap());
    }

    #[test]
    fn timer_validation_passes_deterministically() {
        let s = unit_timer();
        let a = validate_assumptions(&s, 20, 7).unwrap();
        let b = validate_assumptions(&s, 20, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.verdict, Verdict::Pass);
        assert!(!a.empty_jump_set);
        assert!((a.lie_derivative_max.unwrap() + 1.0).abs() < 1e-8);
    }

    #[test]
    fn empty_jump_set_is_a_warning() {
        let region = Region::new(&[(0.0, 1.0)]).unwrap();
        let s = HybridSystem::new("decay", 1, |x, o| o[0] = -x[0], |x, o| o[0] = x[0], |_| 1.0, region, 0.1).unwrap();
        let r = validate_assumptions(&s, 5, 1).unwrap();
        assert!(r.empty_jump_set);
        assert_eq!(r.verdict, Verdict::Pass);
    }
}
