//! Perturbed and inflated simulations, robustness-margin sweeps and
//! practical KL envelope checks.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycles::LimitCycle;
use crate::error::{Error, Result};
use crate::flow::{flow_ok, guard_event, Dynamics, IntegratorConfig, Nominal};
use crate::geom::{simplify_polyline, PolylineIndex};
use crate::model::{in_jump_set, HybridSystem, MEMBERSHIP_TOL};
use crate::scalar::Scalar;
use crate::sim::{simulate_with, ArcTermination, HybridArc};

/// Which part of the dynamics a d₁/d₂ channel acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Flow,
    Jump,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// amplitude · sin(frequency · t + phase), componentwise.
    Sinusoid { amplitude: Vec<f64>, frequency: f64, phase: f64 },
    /// Uniform in [-amplitude, amplitude] per component, redrawn every `cell`
    /// seconds of flow time and at every jump.
    Noise { amplitude: Vec<f64>, cell: f64, seed: u64 },
}

/// One disturbance d_i with its norm bound M̄_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    #[serde(default)]
    pub signal: Signal,
    #[serde(default)]
    pub bound: f64,
    #[serde(default)]
    pub scope: Scope,
}

impl Channel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(signal: Signal, bound: f64, scope: Scope) -> Self {
        Self { signal, bound, scope }
    }

    fn is_zero(&self) -> bool {
        self.bound == 0.0 || matches!(self.signal, Signal::Zero)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.bound.is_finite() && self.bound >= 0.0) {
            return Err(Error::InvalidInput("perturbation bounds must be finite and nonnegative".into()));
        }
        let len_ok = |v: &Vec<f64>| v.len() == n && v.iter().all(|a| a.is_finite());
        let ok = match &self.signal {
            Signal::Zero => true,
            Signal::Constant { value } => len_ok(value),
            Signal::Sinusoid { amplitude, frequency, phase } => len_ok(amplitude) && frequency.is_finite() && phase.is_finite(),
            Signal::Noise { amplitude, cell, .. } => len_ok(amplitude) && *cell > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("perturbation signal must have {n} finite components")))
        }
    }

    /// d(t, j), scaled down if needed so |d| ≤ bound.
    fn sample<T: Scalar>(&self, t: T, j: usize, out: &mut [T]) {
        let tf = t.as_f64();
        match &self.signal {
            Signal::Zero => out.iter_mut().for_each(|o| *o = T::zero()),
            Signal::Constant { value } => out.iter_mut().zip(value).for_each(|(o, v)| *o = T::lit(*v)),
            Signal::Sinusoid { amplitude, frequency, phase } => {
                let s = (frequency * tf + phase).sin();
                out.iter_mut().zip(amplitude).for_each(|(o, a)| *o = T::lit(a * s));
            }
            Signal::Noise { amplitude, cell, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(j as u64);
                let k = (tf / cell).floor().max(0.0) as u128;
                rng.set_word_pos(k * 2 * amplitude.len() as u128);
                out.iter_mut().zip(amplitude).for_each(|(o, a)| *o = T::lit(a * (2.0 * rng.random::<f64>() - 1.0)));
            }
        }
        let norm = out.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        let bound = T::lit(self.bound);
        if norm > bound {
            let k = if norm > T::zero() { bound / norm } else { T::zero() };
            out.iter_mut().for_each(|o| *o = *o * k);
        }
    }
}

/// Disturbances of ẋ = f(x + d₁) + d₂, x⁺ = g(x + d₁) + d₂, with flow
/// membership tested at x + d₃ and jump membership at x + d₄.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    #[serde(default)]
    pub d1: Channel,
    #[serde(default)]
    pub d2: Channel,
    #[serde(default)]
    pub d3: Channel,
    #[serde(default)]
    pub d4: Channel,
}

impl PerturbationSpec {
    pub fn zero() -> Self {
        Self::default()
    }

    /// d₂ = (ρ sin t, 0, …) applied at jumps.
    pub fn jump_sinusoid(n: usize, rho: f64) -> Self {
        let mut amplitude = vec![0.0; n];
        amplitude[0] = rho;
        Self {
            d2: Channel::new(Signal::Sinusoid { amplitude, frequency: 1.0, phase: 0.0 }, rho.abs(), Scope::Jump),
            ..Self::default()
        }
    }

    /// Every amplitude and bound multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let sc = |c: &Channel| {
            let signal = match &c.signal {
                Signal::Zero => Signal::Zero,
                Signal::Constant { value } => Signal::Constant { value: value.iter().map(|v| v * k).collect() },
                Signal::Sinusoid { amplitude, frequency, phase } => Signal::Sinusoid {
                    amplitude: amplitude.iter().map(|v| v * k).collect(),
                    frequency: *frequency,
                    phase: *phase,
                },
                Signal::Noise { amplitude, cell, seed } => {
                    Signal::Noise { amplitude: amplitude.iter().map(|v| v * k).collect(), cell: *cell, seed: *seed }
                }
            };
            Channel { signal, bound: c.bound * k.abs(), scope: c.scope }
        };
        Self { d1: sc(&self.d1), d2: sc(&self.d2), d3: sc(&self.d3), d4: sc(&self.d4) }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        [&self.d1, &self.d2, &self.d3, &self.d4].iter().try_for_each(|c| c.validate(n))
    }

    pub fn is_zero(&self) -> bool {
        [&self.d1, &self.d2, &self.d3, &self.d4].iter().all(|c| c.is_zero())
    }
}

struct Perturbed<'a, T> {
    sys: &'a HybridSystem<T>,
    p: &'a PerturbationSpec,
}

impl<T: Scalar> Perturbed<'_, T> {
    fn shifted(&self, c: &Channel, t: T, j: usize, x: &[T]) -> Vec<T> {
        let mut d = vec![T::zero(); x.len()];
        c.sample(t, j, &mut d);
        x.iter().zip(&d).map(|(&a, &b)| a + b).collect()
    }

    fn acts(c: &Channel, on: Scope) -> bool {
        !c.is_zero() && (c.scope == Scope::Both || c.scope == on)
    }

    fn apply(&self, on: Scope, t: T, j: usize, x: &[T], out: &mut [T], map: impl Fn(&[T], &mut [T])) {
        if Self::acts(&self.p.d1, on) {
            map(&self.shifted(&self.p.d1, t, j, x), out);
        } else {
            map(x, out);
        }
        if Self::acts(&self.p.d2, on) {
            let mut d = vec![T::zero(); x.len()];
            self.p.d2.sample(t, j, &mut d);
            out.iter_mut().zip(&d).for_each(|(o, &v)| *o = *o + v);
        }
    }
}

impl<T: Scalar> Dynamics<T> for Perturbed<'_, T> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }
    fn deriv(&self, t: T, j: usize, x: &[T], out: &mut [T]) {
        self.apply(Scope::Flow, t, j, x, out, |y, o| self.sys.flow_into(y, o))
    }
    fn jump(&self, t: T, j: usize, x: &[T], out: &mut [T]) {
        self.apply(Scope::Jump, t, j, x, out, |y, o| self.sys.jump_into(y, o))
    }
    fn event(&self, t: T, j: usize, x: &[T]) -> T {
        if self.p.d4.is_zero() {
            guard_event(self.sys, x, T::zero())
        } else {
            guard_event(self.sys, &self.shifted(&self.p.d4, t, j, x), T::zero())
        }
    }
    fn in_jump_set(&self, t: T, j: usize, x: &[T], tol: T) -> bool {
        if self.p.d4.is_zero() {
            in_jump_set(self.sys, x, tol)
        } else {
            in_jump_set(self.sys, &self.shifted(&self.p.d4, t, j, x), tol)
        }
    }
    fn in_flow_set(&self, t: T, j: usize, x: &[T], tol: T) -> bool {
        if self.p.d3.is_zero() {
            flow_ok(self.sys, x, T::zero(), tol)
        } else {
            flow_ok(self.sys, &self.shifted(&self.p.d3, t, j, x), T::zero(), tol)
        }
    }
    fn min_dwell(&self) -> T {
        self.sys.min_dwell()
    }
}

pub fn simulate_perturbed<T: Scalar>(
    sys: &HybridSystem<T>,
    x0: &[T],
    pert: &PerturbationSpec,
    t_max: T,
    j_max: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<HybridArc<T>> {
    pert.validate(sys.dim())?;
    if pert.is_zero() {
        return simulate_with(&Nominal(sys), x0, t_max, j_max, cfg);
    }
    simulate_with(&Perturbed { sys, p: pert }, x0, t_max, j_max, cfg)
}

/// Where inside D_ε the inflated system jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JumpPolicy {
    /// On first entry into D_ε (h = ε).
    #[default]
    Earliest,
    /// On leaving C_ε (h = −ε).
    Latest,
}

/// x ∈ D_ε: inside M and the impact window, |h| ≤ ε and L_f h ≤ 0, up to `tol`.
pub fn in_inflated_jump_set<T: Scalar>(sys: &HybridSystem<T>, x: &[T], eps: T, tol: T) -> bool {
    sys.region().contains(x, T::lit(MEMBERSHIP_TOL).max(tol))
        && sys.window_open(x)
        && sys.h(x).abs() <= eps + tol
        && sys.lie(x) <= tol
}

struct Inflated<'a, T> {
    sys: &'a HybridSystem<T>,
    eps: T,
    policy: JumpPolicy,
}

impl<T: Scalar> Dynamics<T> for Inflated<'_, T> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }
    fn deriv(&self, _t: T, _j: usize, x: &[T], out: &mut [T]) {
        self.sys.flow_into(x, out)
    }
    fn jump(&self, _t: T, _j: usize, x: &[T], out: &mut [T]) {
        self.sys.jump_into(x, out)
    }
    fn event(&self, _t: T, _j: usize, x: &[T]) -> T {
        match self.policy {
            JumpPolicy::Earliest => guard_event(self.sys, x, self.eps),
            JumpPolicy::Latest => guard_event(self.sys, x, -self.eps),
        }
    }
    fn in_jump_set(&self, _t: T, _j: usize, x: &[T], tol: T) -> bool {
        match self.policy {
            JumpPolicy::Earliest => in_inflated_jump_set(self.sys, x, self.eps, tol),
            JumpPolicy::Latest => {
                in_inflated_jump_set(self.sys, x, self.eps, tol) && self.sys.h(x) <= -self.eps + tol
            }
        }
    }
    fn in_flow_set(&self, _t: T, _j: usize, x: &[T], tol: T) -> bool {
        flow_ok(self.sys, x, self.eps, tol)
    }
    fn min_dwell(&self) -> T {
        self.sys.min_dwell()
    }
}

/// Solution of the inflated system H^ε: flow while h ≥ −ε, jump inside D_ε.
pub fn simulate_inflated<T: Scalar>(
    sys: &HybridSystem<T>,
    eps: T,
    policy: JumpPolicy,
    x0: &[T],
    t_max: T,
    j_max: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<HybridArc<T>> {
    if !(eps >= T::zero() && eps.is_finite()) {
        return Err(Error::InvalidInput("inflation eps must be finite and nonnegative".into()));
    }
    if eps == T::zero() {
        return simulate_with(&Nominal(sys), x0, t_max, j_max, cfg);
    }
    simulate_with(&Inflated { sys, eps, policy }, x0, t_max, j_max, cfg)
}

/// Settle and measurement windows, in periods of the cycle.
pub const SETTLE_PERIODS: f64 = 10.0;
pub const MEASURE_PERIODS: f64 = 10.0;
pub const BISECTION_STEPS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepMode {
    /// Margin ρ scales the template disturbance.
    Perturbation { template: PerturbationSpec },
    /// Margin ε̄ is the inflation of the flow and jump sets.
    Inflation { policy: JumpPolicy },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub margin: f64,
    pub trials: usize,
    pub pass_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMetadata {
    pub system: String,
    pub params: BTreeMap<String, f64>,
    pub mode: SweepMode,
    pub seed: u64,
    pub k_box: Vec<[f64; 2]>,
    pub eps_levels: Vec<f64>,
    pub margin_grid: Vec<f64>,
    pub trials: usize,
    pub period: f64,
    pub settle_periods: f64,
    pub measure_periods: f64,
    pub bisection_steps: usize,
    pub step: f64,
    pub sample_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub metadata: SweepMetadata,
}

impl SweepTable {
    /// CSV with header `eps,margin,trials,pass_fraction`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["eps", "margin", "trials", "pass_fraction"])?;
        for r in &self.rows {
            wr.write_record([r.eps.to_string(), r.margin.to_string(), r.trials.to_string(), r.pass_fraction.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn metadata_json(&self) -> String {
        serde_json::to_string_pretty(&self.metadata).expect("metadata serializes")
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].margin <= w[1].margin)
    }
}

pub struct SweepRequest<'a, T> {
    pub sys: &'a HybridSystem<T>,
    pub cycle: &'a LimitCycle<T>,
    pub mode: SweepMode,
    pub k_box: Vec<[f64; 2]>,
    pub eps_levels: Vec<f64>,
    pub margin_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

/// Initial points drawn uniformly from the box.
pub fn sample_box(k_box: &[[f64; 2]], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| k_box.iter().map(|b| b[0] + (b[1] - b[0]) * rng.random::<f64>()).collect()).collect()
}

struct Evaluator<'a, T> {
    req: &'a SweepRequest<'a, T>,
    starts: Vec<Vec<T>>,
    index: PolylineIndex<T>,
    cfg: IntegratorConfig<T>,
    /// Per-margin trial distances, shared across eps levels.
    cache: BTreeMap<u64, Vec<f64>>,
}

impl<T: Scalar> Evaluator<'_, T> {
    fn distances(&mut self, margin: f64) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.get(&margin.to_bits()) {
            return Ok(v.clone());
        }
        let period = self.req.cycle.period;
        let settle = T::lit(SETTLE_PERIODS) * period;
        let t_max = settle + T::lit(MEASURE_PERIODS) * period;
        let j_max = (t_max / self.req.sys.min_dwell()).to_usize().unwrap_or(usize::MAX / 2).saturating_add(2);
        let (req, index, cfg) = (self.req, &self.index, &self.cfg);
        let v = self
            .starts
            .par_iter()
            .map(|x0| -> Result<f64> {
                let arc = match &req.mode {
                    SweepMode::Perturbation { template } => {
                        simulate_perturbed(req.sys, x0, &template.scaled(margin), t_max, j_max, cfg)?
                    }
                    SweepMode::Inflation { policy } => {
                        simulate_inflated(req.sys, T::lit(margin), *policy, x0, t_max, j_max, cfg)?
                    }
                };
                Ok(tail_distance(&arc, index, settle).unwrap_or(f64::INFINITY))
            })
            .collect::<Result<Vec<f64>>>()?;
        self.cache.insert(margin.to_bits(), v.clone());
        Ok(v)
    }

    fn worst(&mut self, margin: f64) -> Result<f64> {
        Ok(self.distances(margin)?.into_iter().fold(0.0, f64::max))
    }
}

/// Largest distance to the cycle after `settle`; None when the arc ended
/// abnormally, never reached the measurement window, or strayed farther
/// than the index cell.
fn tail_distance<T: Scalar>(arc: &HybridArc<T>, index: &PolylineIndex<T>, settle: T) -> Option<f64> {
    match arc.terminated_by {
        ArcTermination::HorizonT | ArcTermination::HorizonJ => {}
        _ => return None,
    }
    if arc.t_end() < settle {
        return None;
    }
    let mut d = T::zero();
    for (t, _, x) in arc.iter_samples() {
        if t >= settle {
            // beyond one cell the trial already fails every eps level
            d = d.max(index.distance_within_cell(x)?);
        }
    }
    Some(d.as_f64())
}

/// For each eps level, the largest margin for which every trial solution
/// stays within eps of the cycle after the settle window.
pub fn sweep_margin<T: Scalar>(req: &SweepRequest<'_, T>, cfg: &IntegratorConfig<T>) -> Result<SweepTable> {
    cfg.validate()?;
    let n = req.sys.dim();
    if req.eps_levels.is_empty() || req.margin_grid.is_empty() {
        return Err(Error::InvalidInput("eps levels and margin grid must be nonempty".into()));
    }
    let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite() && *x > 0.0);
    if !sorted(&req.eps_levels) || !sorted(&req.margin_grid) {
        return Err(Error::InvalidInput("eps levels and margin grid must be positive and strictly increasing".into()));
    }
    if req.k_box.len() != n || req.k_box.iter().any(|b| !(b[0] <= b[1])) {
        return Err(Error::InvalidInput(format!("K box needs {n} nonempty intervals")));
    }
    if req.trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    if let SweepMode::Perturbation { template } = &req.mode {
        template.validate(n)?;
    }
    let starts: Vec<Vec<T>> =
        sample_box(&req.k_box, req.trials, req.seed).into_iter().map(|x| x.into_iter().map(T::lit).collect()).collect();
    let max_eps = req.eps_levels.last().copied().unwrap_or(1.0);
    // dense cycle samples make grid cells crowded; thinning to 1e-3·eps_min
    // keeps every tail distance within that of the exact value
    let tol = T::lit(1e-3 * req.eps_levels[0]);
    let index = PolylineIndex::new(&simplify_polyline(&req.cycle.states(), tol), T::lit(max_eps));
    let mut ev = Evaluator { req, starts, index, cfg: *cfg, cache: BTreeMap::new() };

    let mut rows = Vec::new();
    let mut lo = 0.0f64;
    for &eps in &req.eps_levels {
        // the previous level's margin passes here too, so the table is monotone
        let mut hi = None;
        let above: Vec<f64> = req.margin_grid.iter().copied().filter(|&m| m > lo).collect();
        for m in above {
            if ev.worst(m)? <= eps {
                lo = m;
            } else {
                hi = Some(m);
                break;
            }
        }
        if let Some(mut hi) = hi {
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                if ev.worst(mid)? <= eps {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let pass_fraction = if lo > 0.0 {
            let d = ev.distances(lo)?;
            d.iter().filter(|&&v| v <= eps).count() as f64 / d.len() as f64
        } else {
            1.0
        };
        rows.push(SweepRow { eps, margin: lo, trials: req.trials, pass_fraction });
    }
    let metadata = SweepMetadata {
        system: req.sys.name().to_string(),
        params: req.sys.params().clone(),
        mode: req.mode.clone(),
        seed: req.seed,
        k_box: req.k_box.clone(),
        eps_levels: req.eps_levels.clone(),
        margin_grid: req.margin_grid.clone(),
        trials: req.trials,
        period: req.cycle.period.as_f64(),
        settle_periods: SETTLE_PERIODS,
        measure_periods: MEASURE_PERIODS,
        bisection_steps: BISECTION_STEPS,
        step: cfg.step.as_f64(),
        sample_stride: cfg.sample_stride,
    };
    Ok(SweepTable { rows, metadata })
}

/// Fit of β(r, τ) = C·r·e^{−λτ} to the distance envelopes, with τ = t + j.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlReport {
    pub eps: f64,
    /// Distance to the cycle stands in for a proper indicator on the basin.
    pub indicator: &'static str,
    pub c: f64,
    pub lambda: f64,
    /// Largest excess of a distance over C·r₀·e^{−λτ} + eps.
    pub max_violation: f64,
    /// Largest distance over the last quarter of each arc.
    pub tail_max: f64,
    pub points: usize,
    pub trivial: bool,
    pub holds: bool,
}

/// Constant C above which a fitted envelope no longer counts as a bound.
pub const KL_C_CAP: f64 = 1e3;

pub fn check_practical_kl<T: Scalar>(arcs: &[HybridArc<T>], cycle: &LimitCycle<T>, eps: T) -> Result<KlReport> {
    if arcs.is_empty() {
        return Err(Error::InvalidInput("need at least one arc".into()));
    }
    let eps_f = eps.as_f64();
    let index = cycle.index(T::zero());
    // per arc: (r0, [(τ, envelope)]) where the envelope is the running sup from the end
    let mut data = Vec::new();
    let mut tail_max = 0.0f64;
    for arc in arcs {
        let pts: Vec<(f64, f64)> =
            arc.iter_samples().map(|(t, j, x)| (t.as_f64() + j as f64, index.distance(x).as_f64())).collect();
        let Some(&(tau_end, _)) = pts.last() else { continue };
        let r0 = pts[0].1;
        let mut env = pts.clone();
        let mut sup = 0.0f64;
        for p in env.iter_mut().rev() {
            sup = sup.max(p.1);
            p.1 = sup;
        }
        let cut = 0.75 * tau_end;
        tail_max = tail_max.max(pts.iter().filter(|p| p.0 >= cut).fold(0.0, |m, p| m.max(p.1)));
        data.push((r0, pts, env));
    }
    let fit: Vec<(f64, f64)> = data
        .iter()
        .filter(|(r0, _, _)| *r0 > 0.0)
        .flat_map(|(r0, _, env)| env.iter().filter(|p| p.1 > eps_f).map(move |p| (p.0, (p.1 / r0).ln())))
        .collect();
    if fit.is_empty() {
        return Ok(KlReport {
            eps: eps_f,
            indicator: "distance_to_cycle",
            c: 0.0,
            lambda: 0.0,
            max_violation: 0.0,
            tail_max,
            points: 0,
            trivial: true,
            holds: true,
        });
    }
    let (lambda, c) = if fit.len() >= 2 {
        let k = fit.len() as f64;
        let (sx, sy) = fit.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / k, sy / k);
        let sxx: f64 = fit.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            let slope = sxy / sxx;
            (-slope, (my - slope * mx).exp())
        } else {
            (0.0, my.exp())
        }
    } else {
        (0.0, fit[0].1.exp())
    };
    // smallest C making the envelope a bound for the fitted λ
    let mut c_bound = c;
    let mut max_violation = f64::NEG_INFINITY;
    for (r0, pts, _) in &data {
        for &(tau, d) in pts {
            let beta = c * r0 * (-lambda * tau).exp();
            max_violation = max_violation.max(d - beta - eps_f);
            let base = r0 * (-lambda * tau).exp();
            if d > eps_f && base > 0.0 {
                c_bound = c_bound.max((d - eps_f) / base);
            }
        }
    }
    let holds = lambda > 0.0 && c_bound <= KL_C_CAP && tail_max <= eps_f;
    Ok(KlReport {
        eps: eps_f,
        indicator: "distance_to_cycle",
        c: c_bound,
        lambda,
        max_violation,
        tail_max,
        points: fit.len(),
        trivial: false,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Tcp;
    use crate::cycles::{extract_limit_cycle, find_fixed_point, FixedPointConfig};
    use crate::sim::simulate;

    fn tcp() -> HybridSystem<f64> {
        Tcp::default().system().unwrap()
    }

    #[test]
    fn zero_perturbation_is_bitwise_nominal() {
        let s = tcp();
        let cfg = IntegratorConfig::default();
        let a = simulate(&s, &[0.2, 0.2], 6.0, 20, &cfg).unwrap();
        let b = simulate_perturbed(&s, &[0.2, 0.2], &PerturbationSpec::zero(), 6.0, 20, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_inflated(&s, 0.0, JumpPolicy::Earliest, &[0.2, 0.2], 6.0, 20, &cfg).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn signals_respect_bounds() {
        let ch = Channel::new(Signal::Constant { value: vec![3.0, 4.0] }, 1.0, Scope::Both);
        let mut o = [0.0f64; 2];
        ch.sample(0.0, 0, &mut o);
        assert!(((o[0] * o[0] + o[1] * o[1]).sqrt() - 1.0).abs() < 1e-12);
        let nz = Channel::new(Signal::Noise { amplitude: vec![1.0, 1.0], cell: 0.1, seed: 9 }, 0.5, Scope::Flow);
        let (mut a, mut b) = ([0.0f64; 2], [0.0f64; 2]);
        nz.sample(0.31, 2, &mut a);
        nz.sample(0.39, 2, &mut b);
        assert_eq!(a, b);
        nz.sample(0.41, 2, &mut b);
        assert_ne!(a, b);
        assert!((a[0] * a[0] + a[1] * a[1]).sqrt() <= 0.5 + 1e-15);
    }

    #[test]
    fn earliest_inflation_jumps_inside_the_band() {
        let s = tcp();
        let cfg = IntegratorConfig::default();
        let arc = simulate_inflated(&s, 0.02, JumpPolicy::Earliest, &[0.7, 0.6], 20.0, 100, &cfg).unwrap();
        assert!(arc.jump_count() > 5);
        for r in &arc.jumps {
            assert!((r.x_minus[0] - 1.0).abs() <= 0.02 + 1e-9, "{:?}", r.x_minus);
        }
        let late = simulate_inflated(&s, 0.02, JumpPolicy::Latest, &[0.7, 0.6], 20.0, 100, &cfg).unwrap();
        assert!(late.jumps.iter().all(|r| (r.x_minus[0] - 1.02).abs() < 1e-8));
    }

    #[test]
    fn nominal_jumps_lie_in_every_inflated_jump_set() {
        let s = tcp();
        let arc = simulate(&s, &[0.2, 0.2], 10.0, 50, &IntegratorConfig::default()).unwrap();
        for eps in [0.0, 0.01, 0.1] {
            assert!(arc.jumps.iter().all(|r| in_inflated_jump_set(&s, &r.x_minus, eps, 1e-8)));
        }
    }

    #[test]
    fn unperturbed_tcp_satisfies_kl() {
        let s = tcp();
        let cfg = IntegratorConfig::default();
        let x = find_fixed_point(&s, &[1.0, 1.2], &cfg, &FixedPointConfig::default()).unwrap();
        let cycle = extract_limit_cycle(&s, &x, &cfg).unwrap();
        let arcs: Vec<_> =
            [[0.7, 0.6], [0.68, 0.64]].iter().map(|x0| simulate(&s, x0, 20.0, 100, &cfg.with_stride(10)).unwrap()).collect();
        let rep = check_practical_kl(&arcs, &cycle, 1e-3).unwrap();
        assert!(rep.holds, "{rep:?}");
    }
}
