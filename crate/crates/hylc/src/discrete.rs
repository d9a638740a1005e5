//! The computed Poincaré map P_s realized with a fixed step s, its fixed
//! points, and how both approach the exact map as s shrinks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycles::{poincare_map, project_to_guard, GuardProjection};
use crate::error::{Error, Result};
use crate::flow::{rk4_signed, IntegratorConfig};
use crate::linalg::{all_finite, dist, norm};
use crate::model::{HybridSystem, MEMBERSHIP_TOL};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepScheme {
    Euler,
    /// Exact on the TCP flow, which is quadratic in t.
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComputedMapConfig<T> {
    pub s: T,
    pub scheme: StepScheme,
    /// Iterates with h ≤ impact_tol count as having reached the guard.
    pub impact_tol: T,
    pub k_cap: usize,
}

impl<T: Scalar> ComputedMapConfig<T> {
    pub fn new(s: T) -> Self {
        Self { s, scheme: StepScheme::default(), impact_tol: T::lit(1e-9) * s, k_cap: 10_000_000 }
    }

    pub fn with_scheme(mut self, scheme: StepScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > T::zero() && self.s.is_finite()) {
            return Err(Error::InvalidInput("step s must be positive".into()));
        }
        if self.k_cap == 0 {
            return Err(Error::InvalidInput("k_cap must be at least 1".into()));
        }
        if !(self.impact_tol >= T::zero()) {
            return Err(Error::InvalidInput("impact_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputedReturn<T> {
    pub x: Vec<T>,
    /// Steps k taken, so ks ≥ T_I > (k−1)s.
    pub steps: usize,
}

fn step<T: Scalar>(sys: &HybridSystem<T>, x: &[T], s: T, scheme: StepScheme) -> Result<Vec<T>> {
    match scheme {
        StepScheme::Euler => {
            let f = sys.f(x);
            Ok(x.iter().zip(&f).map(|(&a, &b)| a + s * b).collect())
        }
        StepScheme::Rk4 => rk4_signed(sys, x, s),
    }
}

/// Largest |h| one step can produce, used to accept iterates that
/// overshot the guard as inputs.
fn overshoot_slack<T: Scalar>(sys: &HybridSystem<T>, x: &[T], s: T) -> T {
    T::lit(1.5) * s * norm(&sys.grad_h(x)) * norm(&sys.f(x)) + T::lit(MEMBERSHIP_TOL)
}

/// The discrete impact condition: h ≤ tol and L_f h ≤ 0 inside the window.
fn crossed<T: Scalar>(sys: &HybridSystem<T>, x: &[T], tol: T) -> bool {
    sys.window_open(x) && sys.h(x) <= tol && sys.lie(x) <= T::lit(MEMBERSHIP_TOL)
}

/// P_s(x): jump, then steps of size s until the first iterate that meets
/// the guard condition. No refinement of the crossing.
pub fn poincare_euler<T: Scalar>(sys: &HybridSystem<T>, x: &[T], cfg: &ComputedMapConfig<T>) -> Result<ComputedReturn<T>> {
    cfg.validate()?;
    if x.len() != sys.dim() || !all_finite(x) {
        return Err(Error::InvalidInput("state has wrong length or non-finite entries".into()));
    }
    let slack = overshoot_slack(sys, x, cfg.s);
    if !(sys.region().in_box(x, slack) && crossed(sys, x, slack) && sys.h(x) >= -slack) {
        return Err(Error::InvalidInput("computed-map input is not in D".into()));
    }
    let mut y = sys.g(x);
    if !all_finite(&y) {
        return Err(Error::Divergence { t: 0.0 });
    }
    for k in 1..=cfg.k_cap {
        y = step(sys, &y, cfg.s, cfg.scheme)?;
        if !all_finite(&y) {
            return Err(Error::Divergence { t: (T::of_usize(k) * cfg.s).as_f64() });
        }
        if crossed(sys, &y, cfg.impact_tol) {
            return Ok(ComputedReturn { x: y, steps: k });
        }
        if !sys.region().contains(&y, T::lit(MEMBERSHIP_TOL)) {
            return Err(Error::LeftRegion);
        }
    }
    Err(Error::NoReturn)
}

/// Picard iteration of P_s with each iterate moved back onto h = 0 along
/// ∇h. Without that the overshoot of a transient return persists: on TCP
/// every state with the right step count is a fixed point of the raw map.
/// Returns the last iterate, its residual and whether it met `tol`.
pub fn computed_fixed_point<T: Scalar>(
    sys: &HybridSystem<T>,
    x_guess: &[T],
    cfg: &ComputedMapConfig<T>,
    tol: T,
    max_iters: usize,
) -> Result<(Vec<T>, T, bool)> {
    let icfg = IntegratorConfig::default();
    let mut x = project_to_guard(sys, x_guess, GuardProjection::Normal, &icfg)?;
    let mut res = T::infinity();
    for _ in 0..max_iters {
        let px = project_to_guard(sys, &poincare_euler(sys, &x, cfg)?.x, GuardProjection::Normal, &icfg)?;
        res = dist(&px, &x);
        x = px;
        if res <= tol * (T::one() + norm(&x)) {
            return Ok((x, res, true));
        }
    }
    Ok((x, res, false))
}

pub const DRIFT_TOL: f64 = 1e-13;
pub const DRIFT_MAX_ITERS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub s: f64,
    pub x_s: Option<Vec<f64>>,
    pub drift: Option<f64>,
    pub converged: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftTable {
    pub scheme: StepScheme,
    pub x_star: Vec<f64>,
    pub rows: Vec<DriftRow>,
}

impl DriftTable {
    /// CSV `s,drift`; rows without a converged fixed point leave drift empty.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["s", "drift"])?;
        for r in &self.rows {
            let d = match (r.converged, r.drift) {
                (true, Some(d)) => d.to_string(),
                _ => String::new(),
            };
            wr.write_record([r.s.to_string(), d])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Fixed point of P_s for each s against the exact x*, sorted by s descending.
pub fn fixed_point_drift<T: Scalar>(
    sys: &HybridSystem<T>,
    s_grid: &[T],
    x_guess: &[T],
    x_star: &[T],
    scheme: StepScheme,
) -> Result<DriftTable> {
    if s_grid.is_empty() {
        return Err(Error::InvalidInput("s grid is empty".into()));
    }
    let mut grid = s_grid.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let rows = grid
        .par_iter()
        .map(|&s| {
            let cfg = ComputedMapConfig::new(s).with_scheme(scheme);
            match computed_fixed_point(sys, x_guess, &cfg, T::lit(DRIFT_TOL), DRIFT_MAX_ITERS) {
                Ok((x, res, converged)) => DriftRow {
                    s: s.as_f64(),
                    drift: Some(dist(&x, x_star).as_f64()),
                    x_s: Some(x.iter().map(|v| v.as_f64()).collect()),
                    converged,
                    reason: (!converged).then(|| format!("residual {:e} after {DRIFT_MAX_ITERS} iterations", res.as_f64())),
                },
                Err(e) => DriftRow { s: s.as_f64(), x_s: None, drift: None, converged: false, reason: Some(e.to_string()) },
            }
        })
        .collect();
    Ok(DriftTable { scheme, x_star: x_star.iter().map(|v| v.as_f64()).collect(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosenessRow {
    pub s: f64,
    /// max_j |P_s^j(x) − P^j(x)| per start.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    /// Largest |P_s^j(x) − x*| over the second half of the orbits.
    pub tail_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosenessReport {
    pub jumps: usize,
    pub eps: f64,
    pub scheme: StepScheme,
    pub rows: Vec<ClosenessRow>,
    /// Largest s in the grid whose gaps are all ≤ eps.
    pub admissible_s: Option<f64>,
    /// Starts whose gap at the smallest s exceeds the gap at the largest s.
    pub ordering_violations: Vec<usize>,
}

impl ClosenessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Iterates P_s and the exact P for `jumps` returns from each start.
#[allow(clippy::too_many_arguments)]
pub fn closeness_study<T: Scalar>(
    sys: &HybridSystem<T>,
    starts: &[Vec<T>],
    jumps: usize,
    s_grid: &[T],
    eps: T,
    scheme: StepScheme,
    x_star: Option<&[T]>,
    cfg: &IntegratorConfig<T>,
) -> Result<ClosenessReport> {
    if jumps == 0 {
        return Err(Error::InvalidInput("J must be at least 1".into()));
    }
    if starts.is_empty() || s_grid.is_empty() {
        return Err(Error::InvalidInput("need at least one start and one s".into()));
    }
    let exact: Vec<Vec<Vec<T>>> = starts
        .par_iter()
        .map(|x0| {
            let mut orbit = Vec::with_capacity(jumps);
            let mut x = x0.clone();
            for _ in 0..jumps {
                x = poincare_map(sys, &x, cfg)?;
                orbit.push(x.clone());
            }
            Ok(orbit)
        })
        .collect::<Result<_>>()?;
    let mut grid = s_grid.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let rows = grid
        .par_iter()
        .map(|&s| {
            let mcfg = ComputedMapConfig::new(s).with_scheme(scheme);
            let mut gaps = Vec::with_capacity(starts.len());
            let mut tail = T::zero();
            for (x0, orbit) in starts.iter().zip(&exact) {
                let mut x = x0.clone();
                let mut gap = T::zero();
                for (k, xe) in orbit.iter().enumerate() {
                    x = poincare_euler(sys, &x, &mcfg)?.x;
                    gap = gap.max(dist(&x, xe));
                    if let Some(xs) = x_star {
                        if 2 * k >= jumps {
                            tail = tail.max(dist(&x, xs));
                        }
                    }
                }
                gaps.push(gap.as_f64());
            }
            let max_gap = gaps.iter().copied().fold(0.0, f64::max);
            Ok(ClosenessRow { s: s.as_f64(), gaps, max_gap, tail_radius: x_star.map(|_| tail.as_f64()) })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps_f = eps.as_f64();
    let admissible_s = rows.iter().find(|r| r.max_gap <= eps_f).map(|r| r.s);
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    let ordering_violations = (0..starts.len()).filter(|&i| last.gaps[i] > first.gaps[i]).collect();
    Ok(ClosenessReport { jumps, eps: eps_f, scheme, rows, admissible_s, ordering_violations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub scheme: StepScheme,
    /// (s, max over the grid of |P_s − P|), s descending.
    pub rows: Vec<(f64, f64)>,
    /// Least-squares slope of log gap against log s.
    pub slope: f64,
    /// Empirical constant in gap ≤ C·s.
    pub c_estimate: f64,
}

/// Compares P_s with P computed by RK4 at step s/100 with refined impacts.
pub fn consistency_study<T: Scalar>(
    sys: &HybridSystem<T>,
    d_grid: &[Vec<T>],
    s_grid: &[T],
    scheme: StepScheme,
    cfg: &IntegratorConfig<T>,
) -> Result<ConsistencyReport> {
    if d_grid.is_empty() || s_grid.len() < 2 {
        return Err(Error::InvalidInput("need a nonempty grid and at least two step sizes".into()));
    }
    let mut grid = s_grid.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let rows = grid
        .par_iter()
        .map(|&s| {
            let fine = cfg.with_step(s / T::lit(100.0));
            let mcfg = ComputedMapConfig::new(s).with_scheme(scheme);
            let mut gap = T::zero();
            for x in d_grid {
                let p = poincare_map(sys, x, &fine)?;
                let ps = poincare_euler(sys, x, &mcfg)?.x;
                gap = gap.max(dist(&p, &ps));
            }
            Ok((s.as_f64(), gap.as_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.1 > 0.0).map(|r| (r.0.ln(), r.1.ln())).collect();
    let slope = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / k, a.1 + p.1 / k));
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    let c_estimate = rows.iter().fold(0.0f64, |m, r| m.max(r.1 / r.0));
    Ok(ConsistencyReport { scheme, rows, slope, c_estimate })
}
