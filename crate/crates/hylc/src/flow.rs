//! Fixed-step RK4 integration with bisection-refined guard crossings.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::model::{in_jump_set, HybridSystem, MEMBERSHIP_TOL};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig<T> {
    pub step: T,
    pub event_tol: T,
    pub max_bisections: u32,
    pub horizon: T,
    /// Record every k-th step (impact and end points are always kept).
    pub sample_stride: usize,
}

impl<T: Scalar> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            step: T::lit(1e-3),
            event_tol: T::lit(1e-10),
            max_bisections: 80,
            horizon: T::lit(1e3),
            sample_stride: 1,
        }
    }
}

impl<T: Scalar> IntegratorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > T::zero() && self.step.is_finite()) {
            return Err(Error::InvalidInput("step must be positive".into()));
        }
        if !(self.event_tol > T::zero()) {
            return Err(Error::InvalidInput("event_tol must be positive".into()));
        }
        if !(self.horizon > T::zero()) {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidInput("sample_stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_step(mut self, step: T) -> Self {
        self.step = step;
        self
    }

    pub fn with_horizon(mut self, horizon: T) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }
}

/// Right-hand side and set data seen by the integrator. The nominal system
/// and its perturbed or inflated variants all go through this interface.
pub(crate) trait Dynamics<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn deriv(&self, t: T, j: usize, x: &[T], out: &mut [T]);
    fn jump(&self, t: T, j: usize, x: &[T], out: &mut [T]);
    /// Nonpositive exactly on the (active) jump set.
    fn event(&self, t: T, j: usize, x: &[T]) -> T;
    fn in_jump_set(&self, t: T, j: usize, x: &[T], tol: T) -> bool;
    fn in_flow_set(&self, t: T, j: usize, x: &[T], tol: T) -> bool;
    fn min_dwell(&self) -> T;
}

pub(crate) struct Nominal<'a, T>(pub &'a HybridSystem<T>);

impl<T: Scalar> Dynamics<T> for Nominal<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn deriv(&self, _t: T, _j: usize, x: &[T], out: &mut [T]) {
        self.0.flow_into(x, out)
    }
    fn jump(&self, _t: T, _j: usize, x: &[T], out: &mut [T]) {
        self.0.jump_into(x, out)
    }
    fn event(&self, _t: T, _j: usize, x: &[T]) -> T {
        guard_event(self.0, x, T::zero())
    }
    fn in_jump_set(&self, _t: T, _j: usize, x: &[T], tol: T) -> bool {
        in_jump_set(self.0, x, tol)
    }
    fn in_flow_set(&self, _t: T, _j: usize, x: &[T], tol: T) -> bool {
        flow_ok(self.0, x, T::zero(), tol)
    }
    fn min_dwell(&self) -> T {
        self.0.min_dwell()
    }
}

/// max(h - shift, L_f h): nonpositive iff h ≤ shift and L_f h ≤ 0.
pub(crate) fn guard_event<T: Scalar>(sys: &HybridSystem<T>, x: &[T], shift: T) -> T {
    if !sys.window_open(x) {
        return T::one();
    }
    (sys.h(x) - shift).max(sys.lie(x))
}

/// x ∈ M and h(x) ≥ -(slack + tol), unless the impact window is closed.
pub(crate) fn flow_ok<T: Scalar>(sys: &HybridSystem<T>, x: &[T], slack: T, tol: T) -> bool {
    sys.region().contains(x, T::lit(MEMBERSHIP_TOL))
        && (!sys.window_open(x) || sys.h(x) >= -(slack + tol))
}

pub(crate) struct Workspace<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub(crate) fn new(n: usize) -> Self {
        let z = vec![T::zero(); n];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }
}

pub(crate) fn rk4_into<T: Scalar, D: Dynamics<T> + ?Sized>(
    d: &D,
    t: T,
    j: usize,
    x: &[T],
    h: T,
    ws: &mut Workspace<T>,
    out: &mut [T],
) {
    let half = T::lit(0.5);
    let six = T::lit(6.0);
    let two = T::lit(2.0);
    let n = x.len();
    d.deriv(t, j, x, &mut ws.k1);
    for i in 0..n {
        ws.tmp[i] = x[i] + half * h * ws.k1[i];
    }
    d.deriv(t + half * h, j, &ws.tmp, &mut ws.k2);
    for i in 0..n {
        ws.tmp[i] = x[i] + half * h * ws.k2[i];
    }
    d.deriv(t + half * h, j, &ws.tmp, &mut ws.k3);
    for i in 0..n {
        ws.tmp[i] = x[i] + h * ws.k3[i];
    }
    d.deriv(t + h, j, &ws.tmp, &mut ws.k4);
    for i in 0..n {
        out[i] = x[i] + h / six * (ws.k1[i] + two * ws.k2[i] + two * ws.k3[i] + ws.k4[i]);
    }
}

/// One classical RK4 step of ẋ = f(x).
pub fn rk4_step<T: Scalar>(sys: &HybridSystem<T>, x: &[T], step: T) -> Result<Vec<T>> {
    if !(step > T::zero()) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    rk4_signed(sys, x, step)
}

/// RK4 step that also accepts negative `step` (backward flow).
pub(crate) fn rk4_signed<T: Scalar>(sys: &HybridSystem<T>, x: &[T], step: T) -> Result<Vec<T>> {
    let mut ws = Workspace::new(sys.dim());
    let mut out = vec![T::zero(); sys.dim()];
    rk4_into(&Nominal(sys), T::zero(), 0, x, step, &mut ws, &mut out);
    if all_finite(&out) {
        Ok(out)
    } else {
        Err(Error::Divergence { t: step.as_f64() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowTermination {
    Impact,
    Horizon,
    LeftRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Impact<T> {
    pub t: T,
    pub x: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowResult<T> {
    pub samples: Vec<(T, Vec<T>)>,
    pub impact: Option<Impact<T>>,
    pub terminated_by: FlowTermination,
}

impl<T: Scalar> FlowResult<T> {
    /// Time to impact, infinite when the horizon was reached first.
    pub fn t_impact(&self) -> T {
        self.impact.as_ref().map_or(T::infinity(), |i| i.t)
    }

    /// CSV rows `t,x0,...`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let n = self.samples.first().map_or(0, |s| s.1.len());
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for (t, x) in &self.samples {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) enum FlowEnd<T> {
    Impact { t: T, x: Vec<T> },
    Horizon,
    LeftRegion,
    Divergence { t: T },
}

pub(crate) struct FlowRun<T> {
    pub samples: Vec<(T, Vec<T>)>,
    pub end: FlowEnd<T>,
}

fn push_sample<T: Scalar>(samples: &mut Vec<(T, Vec<T>)>, t: T, x: Vec<T>) {
    match samples.last_mut() {
        // an impact closer than one ulp of t to the previous sample replaces it
        Some(last) if t <= last.0 => *last = (t, x),
        _ => samples.push((t, x)),
    }
}

/// Integrates from (t0, j, x0) until the event function turns nonpositive,
/// the state leaves the flow set, or t reaches `t_stop`.
pub(crate) fn integrate<T: Scalar, D: Dynamics<T> + ?Sized>(
    d: &D,
    t0: T,
    j: usize,
    x0: &[T],
    t_stop: T,
    cfg: &IntegratorConfig<T>,
) -> FlowRun<T> {
    let n = d.dim();
    let mut ws = Workspace::new(n);
    let mut x = x0.to_vec();
    let mut xn = vec![T::zero(); n];
    let mut t = t0;
    let mut samples = vec![(t0, x0.to_vec())];
    if t_stop <= t0 {
        return FlowRun { samples, end: FlowEnd::Horizon };
    }
    let mut k: u64 = 0;
    loop {
        let t_nom = t0 + T::lit((k + 1) as f64) * cfg.step;
        let last = t_nom >= t_stop;
        let tn = if last { t_stop } else { t_nom };
        let h = tn - t;
        rk4_into(d, t, j, &x, h, &mut ws, &mut xn);
        if !all_finite(&xn) {
            return FlowRun { samples, end: FlowEnd::Divergence { t: tn } };
        }
        if d.event(tn, j, &xn) <= T::zero() {
            let (tau, x_hit) = refine(d, t, j, &x, h, &xn, cfg, &mut ws);
            if !d.in_jump_set(t + tau, j, &x_hit, cfg.event_tol) {
                return FlowRun { samples, end: FlowEnd::LeftRegion };
            }
            push_sample(&mut samples, t + tau, x_hit.clone());
            return FlowRun { samples, end: FlowEnd::Impact { t: t + tau, x: x_hit } };
        }
        if !d.in_flow_set(tn, j, &xn, cfg.event_tol) {
            return FlowRun { samples, end: FlowEnd::LeftRegion };
        }
        std::mem::swap(&mut x, &mut xn);
        t = tn;
        k += 1;
        if last || k.is_multiple_of(cfg.sample_stride as u64) {
            push_sample(&mut samples, t, x.clone());
        }
        if last {
            return FlowRun { samples, end: FlowEnd::Horizon };
        }
    }
}

/// Bisects the substep length in (0, h] for the first point with a
/// nonpositive event value, re-integrating from `x` each time.
#[allow(clippy::too_many_arguments)]
fn refine<T: Scalar, D: Dynamics<T> + ?Sized>(
    d: &D,
    t: T,
    j: usize,
    x: &[T],
    h: T,
    x_end: &[T],
    cfg: &IntegratorConfig<T>,
    ws: &mut Workspace<T>,
) -> (T, Vec<T>) {
    let (mut lo, mut hi) = (T::zero(), h);
    let mut x_hi = x_end.to_vec();
    let mut xm = vec![T::zero(); x.len()];
    for _ in 0..cfg.max_bisections {
        let mid = T::lit(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        rk4_into(d, t, j, x, mid, ws, &mut xm);
        if d.event(t + mid, j, &xm) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
            x_hi.copy_from_slice(&xm);
        }
    }
    (hi, x_hi)
}

/// Flows from x0 to the first impact with D, the horizon, or a region exit.
pub fn flow_until_impact<T: Scalar>(
    sys: &HybridSystem<T>,
    x0: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<FlowResult<T>> {
    cfg.validate()?;
    if x0.len() != sys.dim() || !all_finite(x0) {
        return Err(Error::InvalidInput("initial state has wrong length or non-finite entries".into()));
    }
    if in_jump_set(sys, x0, cfg.event_tol) {
        return Ok(FlowResult {
            samples: vec![(T::zero(), x0.to_vec())],
            impact: Some(Impact { t: T::zero(), x: x0.to_vec() }),
            terminated_by: FlowTermination::Impact,
        });
    }
    if !flow_ok(sys, x0, T::zero(), cfg.event_tol) {
        return Err(Error::InvalidInput("initial state is outside C ∪ D".into()));
    }
    let run = integrate(&Nominal(sys), T::zero(), 0, x0, cfg.horizon, cfg);
    let (impact, terminated_by) = match run.end {
        FlowEnd::Impact { t, x } => (Some(Impact { t, x }), FlowTermination::Impact),
        FlowEnd::Horizon => (None, FlowTermination::Horizon),
        FlowEnd::LeftRegion => (None, FlowTermination::LeftRegion),
        FlowEnd::Divergence { t } => return Err(Error::Divergence { t: t.as_f64() }),
    };
    Ok(FlowResult { samples: run.samples, impact, terminated_by })
}

/// T_I(x): 0 on D, infinite if no impact occurs before the horizon.
pub fn time_to_impact<T: Scalar>(sys: &HybridSystem<T>, x: &[T], cfg: &IntegratorConfig<T>) -> Result<T> {
    let r = flow_until_impact(sys, x, cfg)?;
    match r.terminated_by {
        FlowTermination::LeftRegion => Err(Error::LeftRegion),
        _ => Ok(r.t_impact()),
    }
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
    fn rk4_is_exact_for_constant_fields() {
        let s = timer();
        assert!((rk4_step(&s, &[0.2], 0.1).unwrap()[0] - 0.3).abs() < 1e-16);
        assert!(rk4_step(&s, &[0.2], 0.0).is_err());
    }

    #[test]
    fn timer_impact_time() {
        let s = timer();
        let cfg = IntegratorConfig::default();
        let r = flow_until_impact(&s, &[0.3], &cfg).unwrap();
        assert_eq!(r.terminated_by, FlowTermination::Impact);
        assert!((r.t_impact() - 0.7).abs() < 1e-12);
        let imp = r.impact.unwrap();
        assert!((1.0 - imp.x[0]).abs() <= cfg.event_tol);
        assert!(r.samples.windows(2).all(|w| w[1].0 > w[0].0));
        assert_eq!(time_to_impact(&s, &[1.0], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn horizon_gives_infinite_impact_time() {
        let s = timer();
        let cfg = IntegratorConfig::default().with_horizon(0.25);
        let r = flow_until_impact(&s, &[0.1], &cfg).unwrap();
        assert_eq!(r.terminated_by, FlowTermination::Horizon);
        assert!(r.t_impact().is_infinite());
        assert!((r.samples.last().unwrap().0 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn region_exit_is_reported() {
        // guard never reached; the state drifts out of the box
        let region = Region::new(&[(-1.0, 1.0)]).unwrap();
        let s = HybridSystem::new("drift", 1, |_, o| o[0] = 1.0, |_, o| o[0] = 0.0, |_| 1.0, region, 0.1).unwrap();
        let r = flow_until_impact(&s, &[0.0], &IntegratorConfig::default()).unwrap();
        assert_eq!(r.terminated_by, FlowTermination::LeftRegion);
        assert!(time_to_impact(&s, &[0.0], &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn stride_thins_samples_but_keeps_the_impact() {
        let s = timer();
        let cfg = IntegratorConfig::default().with_stride(100);
        let r = flow_until_impact(&s, &[0.0], &cfg).unwrap();
        assert!(r.samples.len() <= 12);
        assert!((r.samples.last().unwrap().0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = timer();
        let r = flow_until_impact(&s, &[0.5], &IntegratorConfig::default().with_stride(250)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x0\n0,0.5\n"));
    }
}
