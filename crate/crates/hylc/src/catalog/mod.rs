//! Parameterized benchmark systems with closed-form extras used as oracles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::certify::Certificate;
use crate::error::{Error, Result};
use crate::model::HybridSystem;
use crate::scalar::Scalar;

mod academic;
mod compass;
mod izhikevich;
mod rotation;
mod tcp;
mod timer;

pub use academic::Academic;
pub use compass::CompassGait;
pub use izhikevich::{Izhikevich, V_PEAK};
pub use rotation::Rotation;
pub use tcp::Tcp;
pub use timer::Timer;

/// Analytic flow, jump and time-to-impact for systems that have them.
pub trait ClosedForm {
    fn flow(&self, x0: &[f64], t: f64) -> Vec<f64>;
    fn jump(&self, x: &[f64]) -> Vec<f64>;
    /// First flow time at which the solution from x0 reaches D; ∞ if never.
    fn time_to_impact(&self, x0: &[f64]) -> f64;

    /// φ(t, j) of the solution from x0 when (t, j) lies in its domain.
    fn solution_at(&self, x0: &[f64], t: f64, j: usize) -> Option<Vec<f64>> {
        let mut t0 = 0.0;
        let mut x = x0.to_vec();
        for _ in 0..j {
            let ti = self.time_to_impact(&x);
            if !ti.is_finite() {
                return None;
            }
            x = self.jump(&self.flow(&x, ti));
            t0 += ti;
        }
        let span = self.time_to_impact(&x);
        let s = t - t0;
        (s >= -1e-12 && s <= span + 1e-12).then(|| self.flow(&x, s.max(0.0)))
    }

    /// P(x) = flow of g(x) to its impact.
    fn poincare(&self, x: &[f64]) -> Vec<f64> {
        let y = self.jump(x);
        self.flow(&y, self.time_to_impact(&y))
    }
}

pub fn make_tcp<T: Scalar>(b: f64, a: f64, m: f64, q_max: f64) -> Result<HybridSystem<T>> {
    Tcp::new(b, a, m, q_max).system()
}

pub fn make_izhikevich<T: Scalar>(a: f64, b: f64, c: f64, d: f64, i_ext: f64) -> Result<HybridSystem<T>> {
    Izhikevich::new(a, b, c, d, i_ext).system()
}

pub fn make_compass_gait<T: Scalar>(gamma: f64, m_h: f64, m: f64, a: f64, b: f64, phi: f64) -> Result<HybridSystem<T>> {
    CompassGait { gamma, m_h, m, a, b, phi, ..CompassGait::default() }.system()
}

pub fn make_academic<T: Scalar>(a: f64, b: f64, b1: f64, b2: f64) -> Result<HybridSystem<T>> {
    Academic::new(a, b, b1, b2).system()
}

pub fn make_timer<T: Scalar>() -> Result<HybridSystem<T>> {
    Timer.system()
}

pub fn make_rotation<T: Scalar>(b: f64, c: f64) -> Result<HybridSystem<T>> {
    Rotation::new(b, c).system()
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub description: &'static str,
}

/// Where a reference value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Reported for the benchmark; only meaningful at default parameters.
    Reported,
    /// Evaluated from a closed form at the given parameters.
    ClosedForm,
}

#[derive(Debug, Clone, Serialize)]
pub struct Reference {
    pub origin: Origin,
    pub fixed_point: Option<Vec<f64>>,
    pub fixed_point_tol: f64,
    pub period: Option<f64>,
    pub period_tol: f64,
    /// Eigenvalues of the Poincaré Jacobian as [re, im].
    pub eigenvalues: Option<Vec<[f64; 2]>>,
    pub eig_tol: f64,
    pub note: Option<&'static str>,
}

impl Reference {
    fn closed_form(fixed_point: Vec<f64>, period: f64, eigenvalues: Option<Vec<[f64; 2]>>) -> Self {
        Self {
            origin: Origin::ClosedForm,
            fixed_point: Some(fixed_point),
            fixed_point_tol: 1e-6,
            period: Some(period),
            period_tol: 1e-6,
            eigenvalues,
            eig_tol: 1e-4,
            note: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub dim: usize,
    pub params: Vec<ParamSpec>,
    pub default_x0: Vec<f64>,
    /// Starting point for `find_fixed_point` at default parameters.
    pub fixed_point_guess: Vec<f64>,
    pub has_closed_form: bool,
    pub has_certificate: bool,
    /// Whether `validate_assumptions` passes at default parameters.
    pub validates: bool,
}

fn p(name: &'static str, default: f64, description: &'static str) -> ParamSpec {
    ParamSpec { name, default, description }
}

pub fn entries() -> Vec<CatalogEntry> {
    let tcp = Tcp::default();
    let iz = Izhikevich::default();
    let cg = CompassGait::default();
    let ac = Academic::default();
    let rot = Rotation::default();
    vec![
        CatalogEntry {
            name: "tcp",
            description: "TCP-like congestion control with multiplicative rate decrease at a full queue",
            dim: 2,
            params: vec![
                p("B", tcp.b, "link bandwidth"),
                p("a", tcp.a, "additive rate increase"),
                p("m", tcp.m, "multiplicative decrease factor"),
                p("q_max", tcp.q_max, "queue capacity"),
                p("eps", tcp.eps, "radius of the excluded ball around (q_max, B)"),
            ],
            default_x0: vec![0.2, 0.2],
            fixed_point_guess: vec![tcp.q_max, 1.2],
            has_closed_form: true,
            has_certificate: true,
            validates: true,
        },
        CatalogEntry {
            name: "izhikevich",
            description: "Izhikevich neuron with spike reset",
            dim: 2,
            params: vec![
                p("a", iz.a, "recovery time scale"),
                p("b", iz.b, "recovery sensitivity"),
                p("c", iz.c, "reset potential"),
                p("d", iz.d, "recovery increment at reset"),
                p("I_ext", iz.i_ext, "injected current"),
            ],
            default_x0: vec![-55.0, -6.0],
            fixed_point_guess: vec![V_PEAK, -7.5],
            has_closed_form: false,
            has_certificate: false,
            validates: true,
        },
        CatalogEntry {
            name: "compass",
            description: "passive compass-gait walker on a slope",
            dim: 4,
            params: vec![
                p("gamma", cg.gamma, "gravitational acceleration"),
                p("m_h", cg.m_h, "hip mass"),
                p("m", cg.m, "leg mass"),
                p("a", cg.a, "distance from foot to leg mass"),
                p("b", cg.b, "distance from leg mass to hip"),
                p("phi", cg.phi, "slope angle"),
                p("eps", cg.eps, "width of the excluded bands"),
            ],
            default_x0: vec![0.0, 0.0, 2.0, -0.4],
            fixed_point_guess: vec![0.22, -0.33, -1.78, -1.47],
            has_closed_form: false,
            has_certificate: false,
            validates: true,
        },
        CatalogEntry {
            name: "academic",
            description: "scalar relaxation x' = -a x + b reset from b1 to b2",
            dim: 1,
            params: vec![p("a", ac.a, "decay rate"), p("b", ac.b, "drive"), p("b1", ac.b1, "threshold"), p("b2", ac.b2, "reset value")],
            default_x0: vec![0.5],
            fixed_point_guess: vec![ac.b1],
            has_closed_form: true,
            has_certificate: false,
            validates: true,
        },
        CatalogEntry {
            name: "timer",
            description: "unit-rate timer reset to 0 at 1",
            dim: 1,
            params: vec![],
            default_x0: vec![0.0],
            fixed_point_guess: vec![1.0],
            has_closed_form: true,
            has_certificate: false,
            validates: true,
        },
        CatalogEntry {
            name: "rotation",
            description: "clockwise rotation reset to (c, 0) on the negative x2 axis",
            dim: 2,
            params: vec![p("b", rot.b, "angular rate"), p("c", rot.c, "reset radius"), p("eps", rot.eps, "inner radius margin")],
            default_x0: vec![4.0, 3.0],
            fixed_point_guess: vec![0.0, -rot.c],
            has_closed_form: true,
            has_certificate: true,
            validates: true,
        },
    ]
}

pub fn entry(name: &str) -> Result<CatalogEntry> {
    entries().into_iter().find(|e| e.name == name).ok_or_else(|| Error::UnknownSystem(name.to_string()))
}

impl CatalogEntry {
    pub fn defaults(&self) -> BTreeMap<String, f64> {
        self.params.iter().map(|p| (p.name.to_string(), p.default)).collect()
    }

    /// Defaults overridden by `overrides`; unknown or non-finite values are errors.
    pub fn resolve(&self, overrides: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
        let mut out = self.defaults();
        for (k, v) in overrides {
            if !out.contains_key(k) {
                return Err(Error::Parameter(format!("{} has no parameter '{k}'", self.name)));
            }
            if !v.is_finite() {
                return Err(Error::Parameter(format!("parameter '{k}' must be finite")));
            }
            out.insert(k.clone(), *v);
        }
        Ok(out)
    }

    pub fn build<T: Scalar>(&self, overrides: &BTreeMap<String, f64>) -> Result<HybridSystem<T>> {
        let pr = self.resolve(overrides)?;
        match self.name {
            "tcp" => tcp_of(&pr).system(),
            "izhikevich" => izh_of(&pr).system(),
            "compass" => compass_of(&pr).system(),
            "academic" => academic_of(&pr).system(),
            "timer" => Timer.system(),
            "rotation" => rotation_of(&pr).system(),
            other => Err(Error::UnknownSystem(other.to_string())),
        }
    }

    pub fn certificate<T: Scalar>(&self, overrides: &BTreeMap<String, f64>) -> Result<Option<Certificate<T>>> {
        let pr = self.resolve(overrides)?;
        match self.name {
            "tcp" => tcp_of(&pr).certificate().map(Some),
            "rotation" => rotation_of(&pr).certificate().map(Some),
            _ => Ok(None),
        }
    }

    pub fn closed_form(&self, overrides: &BTreeMap<String, f64>) -> Result<Option<Box<dyn ClosedForm>>> {
        let pr = self.resolve(overrides)?;
        Ok(match self.name {
            "tcp" => Some(Box::new(tcp_of(&pr))),
            "academic" => Some(Box::new(academic_of(&pr))),
            "timer" => Some(Box::new(Timer)),
            "rotation" => Some(Box::new(rotation_of(&pr))),
            _ => None,
        })
    }

    /// Reference values; reported ones are only given at default parameters.
    pub fn reference(&self, overrides: &BTreeMap<String, f64>) -> Result<Option<Reference>> {
        let pr = self.resolve(overrides)?;
        let at_defaults = pr == self.defaults();
        Ok(match self.name {
            "tcp" => {
                let t = tcp_of(&pr);
                Some(Reference::closed_form(t.fixed_point().to_vec(), t.period(), Some(vec![[0.0, 0.0], [-t.m, 0.0]])))
            }
            "academic" => {
                let a = academic_of(&pr);
                Some(Reference::closed_form(vec![a.b1], a.period(), Some(vec![[0.0, 0.0]])))
            }
            "timer" => Some(Reference::closed_form(vec![1.0], 1.0, Some(vec![[0.0, 0.0]]))),
            "rotation" => {
                let r = rotation_of(&pr);
                Some(Reference::closed_form(vec![0.0, -r.c], r.period(), Some(vec![[0.0, 0.0], [0.0, 0.0]])))
            }
            "izhikevich" if at_defaults => Some(Reference {
                origin: Origin::Reported,
                fixed_point: Some(vec![V_PEAK, -7.5]),
                fixed_point_tol: 0.05,
                period: Some(31.2),
                period_tol: 0.5,
                eigenvalues: Some(vec![[0.0, 0.0], [-0.025, 0.0]]),
                eig_tol: 0.01,
                note: Some("reported period is given as both 31.22 and 31.24"),
            }),
            "compass" if at_defaults => Some(Reference {
                origin: Origin::Reported,
                fixed_point: Some(vec![0.22, -0.32, -1.79, -1.49]),
                fixed_point_tol: 0.02,
                period: Some(0.734),
                period_tol: 0.02,
                eigenvalues: Some(vec![[0.8897, 0.0], [-0.7456, 0.0], [0.0, 0.0], [0.0013, 0.0]]),
                eig_tol: 0.05,
                note: Some(
                    "the reported eigenvalues are not reproduced by the stated model: the computed spectral radius is about 0.56",
                ),
            }),
            _ => None,
        })
    }
}

fn tcp_of(p: &BTreeMap<String, f64>) -> Tcp {
    Tcp { b: p["B"], a: p["a"], m: p["m"], q_max: p["q_max"], eps: p["eps"] }
}

fn izh_of(p: &BTreeMap<String, f64>) -> Izhikevich {
    Izhikevich::new(p["a"], p["b"], p["c"], p["d"], p["I_ext"])
}

fn compass_of(p: &BTreeMap<String, f64>) -> CompassGait {
    CompassGait { gamma: p["gamma"], m_h: p["m_h"], m: p["m"], a: p["a"], b: p["b"], phi: p["phi"], eps: p["eps"] }
}

fn academic_of(p: &BTreeMap<String, f64>) -> Academic {
    Academic::new(p["a"], p["b"], p["b1"], p["b2"])
}

fn rotation_of(p: &BTreeMap<String, f64>) -> Rotation {
    Rotation { b: p["b"], c: p["c"], eps: p["eps"] }
}

/// Serializable system description: a catalog name plus parameters, with
/// optional overrides of the region box and dwell guard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub system: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub region_box: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_dwell: Option<f64>,
}

impl SystemSpec {
    pub fn new(system: impl Into<String>) -> Self {
        Self { system: system.into(), params: BTreeMap::new(), region_box: None, min_dwell: None }
    }

    /// Fully explicit spec: resolved parameters plus the constructed box and dwell.
    pub fn resolved(system: &str, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let e = entry(system)?;
        let params = e.resolve(overrides)?;
        let sys: HybridSystem<f64> = e.build(&params)?;
        Ok(Self {
            system: system.to_string(),
            params,
            region_box: Some(sys.region().bounds().into_iter().map(|(lo, hi)| [lo, hi]).collect()),
            min_dwell: Some(sys.min_dwell()),
        })
    }

    pub fn build<T: Scalar>(&self) -> Result<HybridSystem<T>> {
        let mut sys = entry(&self.system)?.build::<T>(&self.params)?;
        if let Some(b) = &self.region_box {
            let bounds: Vec<(T, T)> = b.iter().map(|r| (T::lit(r[0]), T::lit(r[1]))).collect();
            sys = sys.with_box(&bounds)?;
        }
        if let Some(d) = self.min_dwell {
            sys = sys.with_min_dwell(T::lit(d))?;
        }
        Ok(sys)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("malformed system JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::IntegratorConfig;
    use crate::model::{validate_assumptions, Verdict};
    use crate::sim::simulate;

    #[test]
    fn tcp_examples() {
        let t = Tcp::new(1.0, 1.0, 0.25, 1.0);
        assert!(t.system::<f64>().is_ok());
        assert_eq!(t.fixed_point(), [1.0, 1.6]);
        assert!((t.period() - 1.2).abs() < 1e-15);
        assert!(make_tcp::<f64>(1.0, 1.0, 0.9, 1.0).is_err());
        assert!((Tcp::new(2.0, 1.0, 0.25, 1.0).fixed_point()[1] - 3.2).abs() < 1e-15);
        assert!(Tcp::new(1.0, 1.0, 1.5, 1.0).system_unchecked::<f64>().is_ok());
    }

    #[test]
    fn academic_examples() {
        assert!((Academic::default().period() - 2f64.ln() / 2.0).abs() < 1e-15);
        assert!(make_academic::<f64>(1.0, 2.0, 3.0, 1.0).is_err());
        assert!((Academic::new(1.0, 4.0, 2.0, 1.0).period() - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rotation_quarter_turn() {
        let r = Rotation::default();
        let p = r.poincare(&[0.0, -3.5]);
        assert!(p[0].abs() < 1e-12 && (p[1] + 3.5).abs() < 1e-12);
        assert!((r.time_to_impact(&[3.5, 0.0]) - std::f64::consts::PI / 1.6).abs() < 1e-12);
        assert!(make_rotation::<f64>(0.8, -1.0).is_err());
    }

    #[test]
    fn compass_rejects_steep_slope() {
        assert!(make_compass_gait::<f64>(9.81, 12.0, 5.0, 0.5, 0.5, 0.9).is_err());
    }

    #[test]
    fn compass_impact_does_not_add_energy() {
        let cg = CompassGait::default();
        let sys = cg.system::<f64>().unwrap();
        let (m, mh, a, b) = (cg.m, cg.m_h, cg.a, cg.b);
        let l = a + b;
        let ke = |x: &[f64]| {
            let c = (x[1] - x[0]).cos();
            let (dn, ds) = (x[2], x[3]);
            0.5 * (m * b * b * dn * dn - 2.0 * m * l * b * c * dn * ds + ((mh + m) * l * l + m * a * a) * ds * ds)
        };
        let pre = [0.22, -0.33, -1.78, -1.47];
        assert!(ke(&sys.g(&pre)) <= ke(&pre));
    }

    #[test]
    fn defaults_validate() {
        for e in entries() {
            let sys: HybridSystem<f64> = e.build(&BTreeMap::new()).unwrap();
            let rep = validate_assumptions(&sys, 400, 7).unwrap();
            assert_eq!(rep.verdict == Verdict::Pass, e.validates, "{}: {rep:?}", e.name);
        }
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(entry("nosuch"), Err(Error::UnknownSystem(_))));
        let e = entry("tcp").unwrap();
        assert!(e.resolve(&BTreeMap::from([("zz".to_string(), 1.0)])).is_err());
        assert!(SystemSpec::from_json(r#"{"system":"tcp","extra":1}"#).is_err());
    }

    #[test]
    fn spec_round_trip_simulates_identically() {
        let spec = SystemSpec::resolved("tcp", &BTreeMap::new()).unwrap();
        let back = SystemSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, back);
        let cfg = IntegratorConfig::default().with_horizon(5.0);
        let a = simulate(&spec.build::<f64>().unwrap(), &[0.2, 0.2], 5.0, 10, &cfg).unwrap();
        let b = simulate(&entry("tcp").unwrap().build::<f64>(&BTreeMap::new()).unwrap(), &[0.2, 0.2], 5.0, 10, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
