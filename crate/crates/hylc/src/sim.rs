//! Hybrid arcs: alternating event-located flows and jumps.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{integrate, Dynamics, FlowEnd, IntegratorConfig, Nominal};
use crate::linalg::{all_finite, dist};
use crate::model::HybridSystem;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment<T> {
    pub j: usize,
    pub t_start: T,
    pub t_end: T,
    pub samples: Vec<(T, Vec<T>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpRecord<T> {
    pub t: T,
    /// Jump counter before the jump.
    pub j: usize,
    pub x_minus: Vec<T>,
    pub x_plus: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcTermination {
    HorizonT,
    HorizonJ,
    LeftRegion,
    DwellViolation,
    Divergence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridArc<T> {
    pub n: usize,
    pub segments: Vec<Segment<T>>,
    pub jumps: Vec<JumpRecord<T>>,
    pub terminated_by: ArcTermination,
}

impl<T: Scalar> HybridArc<T> {
    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    pub fn t_end(&self) -> T {
        self.segments.last().map_or(T::zero(), |s| s.t_end)
    }

    pub fn final_state(&self) -> &[T] {
        &self.segments.last().and_then(|s| s.samples.last()).expect("arc has a sample").1
    }

    pub fn segment(&self, j: usize) -> Option<&Segment<T>> {
        self.segments.get(j)
    }

    /// All samples as (t, j, x).
    pub fn iter_samples(&self) -> impl Iterator<Item = (T, usize, &[T])> {
        self.segments
            .iter()
            .flat_map(|s| s.samples.iter().map(move |(t, x)| (*t, s.j, x.as_slice())))
    }

    /// φ(t, j) by linear interpolation inside segment j.
    pub fn state_at(&self, t: T, j: usize) -> Option<Vec<T>> {
        self.segments.get(j).and_then(|s| interpolate(&s.samples, t))
    }

    /// State at time t on the last segment whose interval contains t.
    pub fn state_at_time(&self, t: T) -> Option<(usize, Vec<T>)> {
        self.segments
            .iter()
            .rev()
            .find(|s| s.t_start <= t && t <= s.t_end)
            .and_then(|s| interpolate(&s.samples, t).map(|x| (s.j, x)))
    }

    /// Trajectory CSV: header `t,j,x0,...`; jump instants appear twice
    /// (x_minus at j, x_plus at j+1).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "j".to_string()];
        header.extend((0..self.n).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for (t, j, x) in self.iter_samples() {
            let mut row = vec![t.to_string(), j.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Linear interpolation in a time-ordered sample list; None outside it.
pub(crate) fn interpolate<T: Scalar>(samples: &[(T, Vec<T>)], t: T) -> Option<Vec<T>> {
    let first = samples.first()?;
    let last = samples.last()?;
    if t < first.0 || t > last.0 {
        return None;
    }
    let k = samples.partition_point(|s| s.0 <= t);
    if k == 0 {
        return Some(first.1.clone());
    }
    let (t0, x0) = &samples[k - 1];
    if k == samples.len() || *t0 == t {
        return Some(x0.clone());
    }
    let (t1, x1) = &samples[k];
    let w = (t - *t0) / (*t1 - *t0);
    Some(x0.iter().zip(x1).map(|(&a, &b)| a + w * (b - a)).collect())
}

/// Solution of the nominal system from x0 until T_max of flow time or J_max jumps.
pub fn simulate<T: Scalar>(
    sys: &HybridSystem<T>,
    x0: &[T],
    t_max: T,
    j_max: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<HybridArc<T>> {
    simulate_with(&Nominal(sys), x0, t_max, j_max, cfg)
}

pub(crate) fn simulate_with<T: Scalar, D: Dynamics<T> + ?Sized>(
    d: &D,
    x0: &[T],
    t_max: T,
    j_max: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<HybridArc<T>> {
    cfg.validate()?;
    let n = d.dim();
    if x0.len() != n || !all_finite(x0) {
        return Err(Error::InvalidInput("initial state has wrong length or non-finite entries".into()));
    }
    if !(t_max >= T::zero()) {
        return Err(Error::InvalidInput("T_max must be nonnegative".into()));
    }
    if !d.in_flow_set(T::zero(), 0, x0, cfg.event_tol) && !d.in_jump_set(T::zero(), 0, x0, cfg.event_tol) {
        return Err(Error::InvalidInput("initial state is outside C ∪ D".into()));
    }
    let mut segments = Vec::new();
    let mut jumps: Vec<JumpRecord<T>> = Vec::new();
    let mut t = T::zero();
    let mut j = 0usize;
    let mut x = x0.to_vec();
    let mut seg_samples = vec![(t, x.clone())];
    let mut xp = vec![T::zero(); n];
    let terminated_by = loop {
        // jump priority on C ∩ D
        let x_minus = if d.in_jump_set(t, j, &x, cfg.event_tol) {
            Some(x.clone())
        } else {
            let run = integrate(d, t, j, &x, t_max, cfg);
            let mut samples = run.samples;
            // the segment already holds its first sample
            seg_samples.extend(samples.drain(1..));
            match run.end {
                FlowEnd::Impact { t: ti, x: xi } => {
                    t = ti;
                    Some(xi)
                }
                FlowEnd::Horizon => {
                    t = seg_samples.last().map_or(t, |s| s.0);
                    x = seg_samples.last().map_or(x, |s| s.1.clone());
                    break ArcTermination::HorizonT;
                }
                FlowEnd::LeftRegion => {
                    t = seg_samples.last().map_or(t, |s| s.0);
                    break ArcTermination::LeftRegion;
                }
                FlowEnd::Divergence { .. } => {
                    t = seg_samples.last().map_or(t, |s| s.0);
                    break ArcTermination::Divergence;
                }
            }
        };
        let x_minus = x_minus.expect("jump state");
        if let Some(prev) = jumps.last() {
            if t - prev.t < d.min_dwell() {
                break ArcTermination::DwellViolation;
            }
        }
        d.jump(t, j, &x_minus, &mut xp);
        if !all_finite(&xp) {
            break ArcTermination::Divergence;
        }
        segments.push(Segment { j, t_start: seg_samples[0].0, t_end: t, samples: std::mem::take(&mut seg_samples) });
        jumps.push(JumpRecord { t, j, x_minus, x_plus: xp.clone() });
        j += 1;
        x = xp.clone();
        seg_samples = vec![(t, x.clone())];
        if j >= j_max {
            break ArcTermination::HorizonJ;
        }
        if t >= t_max {
            break ArcTermination::HorizonT;
        }
    };
    let _ = x;
    segments.push(Segment { j, t_start: seg_samples[0].0, t_end: t.max(seg_samples[0].0), samples: seg_samples });
    Ok(HybridArc { n, segments, jumps, terminated_by })
}

/// Sampled states from the final `tail_fraction` of the arc (measured in
/// t + j), deduplicated on a grid of the given pitch.
pub fn omega_limit_estimate<T: Scalar>(arc: &HybridArc<T>, tail_fraction: T, pitch: T) -> Result<Vec<Vec<T>>> {
    if !(tail_fraction > T::zero() && tail_fraction < T::one()) {
        return Err(Error::InvalidInput("tail_fraction must lie in (0, 1)".into()));
    }
    if !(pitch > T::zero()) {
        return Err(Error::InvalidInput("pitch must be positive".into()));
    }
    let total = arc.t_end() + T::of_usize(arc.jump_count());
    let cut = (T::one() - tail_fraction) * total;
    let tail_jumps = arc.jumps.iter().filter(|r| r.t + T::of_usize(r.j) >= cut).count();
    if tail_jumps < 2 {
        return Err(Error::InsufficientData(format!("{tail_jumps} jumps in the tail, need at least 2")));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (t, j, x) in arc.iter_samples() {
        if t + T::of_usize(j) < cut {
            continue;
        }
        let key: Vec<i64> = x.iter().map(|v| (*v / pitch).floor().to_i64().unwrap_or(i64::MAX)).collect();
        if seen.insert(key) {
            out.push(x.to_vec());
        }
    }
    Ok(out)
}

/// |x|_A for a finite sample set A.
pub fn distance_to_samples<T: Scalar>(x: &[T], samples: &[Vec<T>]) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    Ok(samples.iter().fold(T::infinity(), |acc, s| acc.min(dist(x, s))))
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
    fn timer_arc_structure() {
        let s = timer();
        let arc = simulate(&s, &[0.4], 3.0, 10, &IntegratorConfig::default()).unwrap();
        assert_eq!(arc.terminated_by, ArcTermination::HorizonT);
        assert_eq!(arc.jump_count(), 3);
        for w in arc.segments.windows(2) {
            assert_eq!(w[0].t_end, w[1].t_start);
            assert_eq!(w[1].j, w[0].j + 1);
        }
        assert!((arc.t_end() - 3.0).abs() < 1e-12);
        for r in &arc.jumps {
            assert_eq!(r.x_plus, s.g(&r.x_minus));
        }
    }

    #[test]
    fn jump_horizon_and_priority() {
        let s = timer();
        // starting on D jumps immediately
        let arc = simulate(&s, &[1.0], 10.0, 2, &IntegratorConfig::default()).unwrap();
        assert_eq!(arc.jumps[0].t, 0.0);
        assert_eq!(arc.terminated_by, ArcTermination::HorizonJ);
        assert_eq!(arc.jump_count(), 2);
    }

    #[test]
    fn dwell_guard_stops_fast_jumping() {
        let region = Region::new(&[(0.0, 1.0)]).unwrap();
        // resets to 0.95: only 0.05 s between jumps
        let s = HybridSystem::new("t", 1, |_, o| o[0] = 1.0, |_, o| o[0] = 0.95, |x| 1.0 - x[0], region, 0.1).unwrap();
        let arc = simulate(&s, &[0.0], 5.0, 100, &IntegratorConfig::default()).unwrap();
        assert_eq!(arc.terminated_by, ArcTermination::DwellViolation);
        assert_eq!(arc.jump_count(), 1);
    }

    #[test]
    fn rejects_start_outside() {
        let s = timer();
        assert!(simulate(&s, &[1.5], 1.0, 1, &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn distance_to_a_sample_set() {
        let set = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert!((distance_to_samples(&[0.5, 1.0], &set).unwrap() - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(distance_to_samples(&[1.0, 0.0], &set).unwrap(), 0.0);
        assert!(distance_to_samples::<f64>(&[0.0], &[]).is_err());
    }

    #[test]
    fn omega_needs_two_tail_jumps() {
        let s = timer();
        let arc = simulate(&s, &[0.0], 1.5, 10, &IntegratorConfig::default()).unwrap();
        assert!(omega_limit_estimate(&arc, 0.5, 1e-5).is_err());
        let arc = simulate(&s, &[0.0], 20.0, 100, &IntegratorConfig::default()).unwrap();
        let pts = omega_limit_estimate(&arc, 0.5, 1e-3).unwrap();
        assert!(pts.iter().all(|p| (-1e-9..=1.0 + 1e-9).contains(&p[0])));
        assert!(pts.len() >= 800 && pts.len() <= 1002, "{}", pts.len());
    }

    #[test]
    fn state_lookup_interpolates_within_segments() {
        let s = timer();
        let arc = simulate(&s, &[0.0], 2.5, 10, &IntegratorConfig::default().with_stride(50)).unwrap();
        let x = arc.state_at(1.3251, 1).unwrap();
        assert!((x[0] - 0.3251).abs() < 1e-12);
        assert!(arc.state_at(0.5, 1).is_none());
        let (j, x) = arc.state_at_time(1.0).unwrap();
        assert_eq!(j, 1);
        assert!(x[0].abs() < 1e-9);
    }
}
