//! `hylc`: simulate hybrid systems, locate and certify their limit cycles,
//! and run robustness and discretization studies.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hylc::catalog::{self, SystemSpec};
use hylc::certify::{self, CertVerdict, PolynomialCertificate};
use hylc::cycles::{self, CycleReport, DetectConfig, FixedPointConfig, LimitCycle, StabilityVerdict};
use hylc::discrete::{self, StepScheme};
use hylc::robust::{self, JumpPolicy, PerturbationSpec, SweepMode, SweepRequest};
use hylc::{simulate, HybridSystemF64, IntegratorConfigF64};

const SCHEMA: &str = "hylc/1";

#[derive(Parser)]
#[command(name = "hylc", version, about = "Hybrid limit cycles: simulation, analysis and certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Catalog system name (see `hylc catalog list`).
    #[arg(long)]
    system: Option<String>,
    /// System JSON as emitted by `hylc catalog show`.
    #[arg(long, conflicts_with = "system")]
    system_file: Option<PathBuf>,
    /// Parameter overrides, e.g. `m=0.3,B=2`.
    #[arg(long, value_parser = parse_params)]
    params: Option<BTreeMap<String, f64>>,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Flow-time horizon.
    #[arg(long)]
    tmax: Option<f64>,
    /// Jump horizon.
    #[arg(long)]
    jmax: Option<usize>,
    /// Integrator step.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 1e-10)]
    event_tol: f64,
    /// Output directory (created if missing).
    #[arg(long, default_value = "hylc-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sweeps.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one solution; writes trajectory.csv and domain.json.
    Simulate(Common),
    /// Find the limit cycle and its Poincaré linearization; writes cycle.json and cycle.csv.
    Cycle(Common),
    /// Robustness-margin sweep; writes sweep.csv and sweep.json.
    Robust {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Mode::Perturbation)]
        mode: Mode,
        /// Tolerance levels, ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        /// Coarse margin grid, ascending.
        #[arg(long, value_delimiter = ',')]
        margins: Option<Vec<f64>>,
        /// Box of initial points as lo:hi per axis, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        k_box: Option<Vec<String>>,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = Policy::Earliest)]
        policy: Policy,
        /// Perturbation template JSON scaled by the margin; defaults to d2 = (sin t, 0, ...) at jumps.
        #[arg(long)]
        perturbation: Option<PathBuf>,
    },
    /// Certificate, Zhukovskii and incremental-stability reports; writes certify.json.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Polynomial certificate JSON; defaults to the catalog certificate.
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        cert_tol: f64,
        /// Phase shift along the cycle for the incremental-stability check.
        #[arg(long)]
        shift: Option<f64>,
        /// Tolerances for the incremental-stability check.
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.25,0.5")]
        eps: Vec<f64>,
    },
    /// Computed Poincaré map study; writes drift.csv and closeness.json.
    Discrete {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.03,0.01,0.003")]
        s: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Scheme::Rk4)]
        scheme: Scheme,
        /// Returns per orbit in the closeness study.
        #[arg(long, default_value_t = 5)]
        jumps: usize,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
    /// Catalog of built-in systems.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Subcommand)]
enum CatalogAction {
    /// List systems with their parameter schemas.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Print the fully resolved system JSON (also written to --out when given).
    Show {
        name: String,
        #[arg(long, value_parser = parse_params)]
        params: Option<BTreeMap<String, f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy)]
enum Mode {
    Perturbation,
    Inflation,
}

#[derive(ValueEnum, Clone, Copy)]
enum Policy {
    Earliest,
    Latest,
}

#[derive(ValueEnum, Clone, Copy)]
enum Scheme {
    Euler,
    Rk4,
}

/// A usage error (exit 1) as opposed to a failed analysis (exit 2).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn parse_params(s: &str) -> std::result::Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for kv in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got '{kv}'"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

/// Why no cycle was found, with the best fixed-point iterate if any.
type CycleFailure = (String, Option<Vec<f64>>);

struct Ctx {
    spec: SystemSpec,
    sys: HybridSystemF64,
    entry: catalog::CatalogEntry,
    cfg: IntegratorConfigF64,
    common: Common,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let spec = match (&common.system, &common.system_file) {
            (Some(name), None) => {
                let mut s = SystemSpec::new(name.clone());
                s.params = common.params.clone().unwrap_or_default();
                s
            }
            (None, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                let mut s = SystemSpec::from_json(&text).map_err(|e| usage(e.to_string()))?;
                if let Some(p) = &common.params {
                    s.params.extend(p.clone());
                }
                s
            }
            _ => return Err(usage("one of --system or --system-file is required")),
        };
        let entry = catalog::entry(&spec.system).map_err(|e| usage(e.to_string()))?;
        let sys = spec.build::<f64>().map_err(|e| usage(e.to_string()))?;
        let cfg = IntegratorConfigF64 { step: common.step, event_tol: common.event_tol, ..Default::default() };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        if let Some(x0) = &common.x0 {
            if x0.len() != sys.dim() || x0.iter().any(|v| !v.is_finite()) {
                return Err(usage(format!("--x0 needs {} finite values", sys.dim())));
            }
        }
        for (name, v) in [("tmax", common.tmax)] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(usage(format!("--{name} must be finite and nonnegative")));
                }
            }
        }
        Ok(Self { spec, sys, entry, cfg, common: common.clone() })
    }

    fn x0(&self) -> Vec<f64> {
        self.common.x0.clone().unwrap_or_else(|| self.entry.default_x0.clone())
    }

    fn out_dir(&self) -> Result<&Path> {
        let d = &self.common.out;
        fs::create_dir_all(d).with_context(|| format!("cannot create output directory {}", d.display()))?;
        Ok(d)
    }

    fn header(&self, command: &str) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("schema".into(), json!(SCHEMA));
        m.insert("command".into(), json!(command));
        m.insert("system".into(), json!(self.spec.system));
        m.insert("params".into(), json!(self.sys.params()));
        m.insert("seed".into(), json!(self.common.seed));
        m
    }

    /// Cycle from the catalog's fixed-point guess, falling back to detection from x0.
    fn cycle(&self) -> std::result::Result<(LimitCycle<f64>, &'static str), CycleFailure> {
        let fp = FixedPointConfig::default();
        let guess = self.common.x0.clone().unwrap_or_else(|| self.entry.fixed_point_guess.clone());
        let found = cycles::find_fixed_point(&self.sys, &guess, &self.cfg, &fp)
            .and_then(|x| cycles::extract_limit_cycle(&self.sys, &x, &self.cfg));
        match found {
            Ok(c) => Ok((c, "fixed_point_search")),
            Err(e) => {
                let best = match &e {
                    hylc::Error::NonConvergence { best, .. } => Some(best.clone()),
                    _ => None,
                };
                match cycles::detect_limit_cycle(&self.sys, &self.x0(), &self.cfg, &DetectConfig::default()) {
                    Ok(Some(c)) => Ok((c, "detection")),
                    Ok(None) => Err((format!("no limit cycle found: {e}"), best)),
                    Err(d) => Err((format!("no limit cycle found: {e}; detection: {d}"), best)),
                }
            }
        }
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_simulate(common: &Common) -> Result<u8> {
    let ctx = Ctx::new(common)?;
    let x0 = ctx.x0();
    let tmax = common.tmax.unwrap_or(20.0);
    let jmax = common.jmax.unwrap_or(1000);
    let arc = simulate(&ctx.sys, &x0, tmax, jmax, &ctx.cfg).map_err(|e| usage(e.to_string()))?;
    let dir = ctx.out_dir()?;
    let f = fs::File::create(dir.join("trajectory.csv")).context("cannot write trajectory.csv")?;
    arc.write_csv(std::io::BufWriter::new(f))?;
    let mut doc = ctx.header("simulate");
    doc.insert("x0".into(), json!(x0));
    doc.insert("tmax".into(), json!(tmax));
    doc.insert("jmax".into(), json!(jmax));
    doc.insert("integrator".into(), json!(ctx.cfg));
    doc.insert("terminated_by".into(), json!(arc.terminated_by));
    doc.insert(
        "domain".into(),
        json!(arc.segments.iter().map(|s| json!({"j": s.j, "t_start": s.t_start, "t_end": s.t_end})).collect::<Vec<_>>()),
    );
    doc.insert("jumps".into(), json!(arc.jumps));
    write_json(&dir.join("domain.json"), &Value::Object(doc))?;
    Ok(0)
}

fn cmd_cycle(common: &Common) -> Result<u8> {
    let ctx = Ctx::new(common)?;
    let dir = ctx.out_dir()?;
    let mut doc = ctx.header("cycle");
    let (cycle, method) = match ctx.cycle() {
        Ok(c) => c,
        Err((reason, best)) => {
            doc.insert("status".into(), json!("non_convergence"));
            doc.insert("reason".into(), json!(reason));
            doc.insert("best".into(), json!(best));
            write_json(&dir.join("cycle.json"), &Value::Object(doc))?;
            return Ok(2);
        }
    };
    let analysis = match cycles::analyze_fixed_point(&ctx.sys, &cycle.x_pre, &ctx.cfg, &Default::default()) {
        Ok(a) => a,
        Err(e) => {
            doc.insert("status".into(), json!("non_convergence"));
            doc.insert("reason".into(), json!(format!("linearization failed: {e}")));
            write_json(&dir.join("cycle.json"), &Value::Object(doc))?;
            return Ok(2);
        }
    };
    let report = CycleReport::new(&cycle, &analysis);
    doc.insert("method".into(), json!(method));
    doc.insert("cycle".into(), json!(report));
    let reference = ctx.entry.reference(&ctx.spec.params).ok().flatten();
    if let Some(r) = &reference {
        let mut cmp = serde_json::Map::new();
        if let Some(fp) = &r.fixed_point {
            let e = hylc::linalg::dist(fp, &cycle.x_pre);
            cmp.insert("fixed_point_error".into(), json!(e));
            cmp.insert("fixed_point_ok".into(), json!(e <= r.fixed_point_tol));
        }
        if let Some(t) = r.period {
            let e = (t - cycle.period).abs();
            cmp.insert("period_error".into(), json!(e));
            cmp.insert("period_ok".into(), json!(e <= r.period_tol));
        }
        if let Some(ev) = &r.eigenvalues {
            let rho_ref = ev.iter().fold(0.0f64, |m, z| m.max(z[0].hypot(z[1])));
            let e = (rho_ref - analysis.spectral_radius).abs();
            cmp.insert("spectral_radius_error".into(), json!(e));
            cmp.insert("eigenvalues_ok".into(), json!(e <= r.eig_tol));
        }
        let all_ok = cmp.values().filter_map(Value::as_bool).all(|b| b);
        doc.insert("reference".into(), json!(r));
        doc.insert("comparison".into(), Value::Object(cmp));
        doc.insert("deviation".into(), json!(!all_ok));
    }
    let status = match analysis.verdict {
        StabilityVerdict::AsymptoticallyStable => "ok",
        StabilityVerdict::Marginal => "marginal",
        StabilityVerdict::Unstable => "fail",
    };
    doc.insert("status".into(), json!(status));
    if status != "ok" {
        doc.insert("reason".into(), json!(format!("spectral radius {}", analysis.spectral_radius)));
    }
    write_json(&dir.join("cycle.json"), &Value::Object(doc))?;
    let mut w = csv::Writer::from_path(dir.join("cycle.csv")).context("cannot write cycle.csv")?;
    let mut head = vec!["t".to_string()];
    head.extend((0..ctx.sys.dim()).map(|i| format!("x{i}")));
    w.write_record(&head)?;
    for (t, x) in &cycle.samples {
        let mut rec = vec![t.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(if status == "ok" { 0 } else { 2 })
}

fn parse_box(items: &[String]) -> Result<Vec<[f64; 2]>> {
    items
        .iter()
        .map(|s| {
            let (a, b) = s.split_once(':').ok_or_else(|| usage(format!("box axis '{s}' must be lo:hi")))?;
            let lo: f64 = a.parse().map_err(|_| usage(format!("bad number '{a}'")))?;
            let hi: f64 = b.parse().map_err(|_| usage(format!("bad number '{b}'")))?;
            Ok([lo, hi])
        })
        .collect()
}

fn default_k_box(system: &str) -> Option<Vec<[f64; 2]>> {
    match system {
        "izhikevich" => Some(vec![[-57.0, -53.0], [-6.2, -5.8]]),
        "tcp" => Some(vec![[0.68, 0.72], [0.58, 0.64]]),
        _ => None,
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_robust(
    common: &Common,
    mode: Mode,
    eps: &[f64],
    margins: Option<&[f64]>,
    k_box: Option<&[String]>,
    trials: usize,
    policy: Policy,
    perturbation: Option<&Path>,
) -> Result<u8> {
    let ctx = Ctx::new(common)?;
    let dir = ctx.out_dir()?;
    let k_box = match k_box {
        Some(b) => parse_box(b)?,
        None => default_k_box(&ctx.spec.system).ok_or_else(|| usage("--k-box is required for this system"))?,
    };
    let policy = match policy {
        Policy::Earliest => JumpPolicy::Earliest,
        Policy::Latest => JumpPolicy::Latest,
    };
    let (mode, default_grid): (SweepMode, Vec<f64>) = match mode {
        Mode::Perturbation => {
            let template = match perturbation {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    serde_json::from_str::<PerturbationSpec>(&text).map_err(|e| usage(format!("malformed perturbation JSON: {e}")))?
                }
                None => PerturbationSpec::jump_sinusoid(ctx.sys.dim(), 1.0),
            };
            (SweepMode::Perturbation { template }, vec![0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0])
        }
        Mode::Inflation => (SweepMode::Inflation { policy }, vec![0.0025, 0.005, 0.01, 0.02, 0.04, 0.08, 0.16]),
    };
    let mut doc = ctx.header("robust");
    let (cycle, _) = match ctx.cycle() {
        Ok(c) => c,
        Err((reason, _)) => {
            doc.insert("status".into(), json!("non_convergence"));
            doc.insert("reason".into(), json!(reason));
            write_json(&dir.join("sweep.json"), &Value::Object(doc))?;
            return Ok(2);
        }
    };
    let req = SweepRequest {
        sys: &ctx.sys,
        cycle: &cycle,
        mode,
        k_box,
        eps_levels: eps.to_vec(),
        margin_grid: margins.map(<[f64]>::to_vec).unwrap_or(default_grid),
        trials,
        seed: common.seed,
    };
    let scfg = ctx.cfg.with_stride(10);
    let table = robust::sweep_margin(&req, &scfg).map_err(|e| match e {
        hylc::Error::InvalidInput(m) => usage(m),
        other => anyhow!(other),
    })?;
    let f = fs::File::create(dir.join("sweep.csv")).context("cannot write sweep.csv")?;
    table.write_csv(f)?;
    doc.insert("status".into(), json!("ok"));
    doc.insert("metadata".into(), json!(table.metadata));
    doc.insert("rows".into(), json!(table.rows));
    doc.insert("monotone".into(), json!(table.is_monotone()));
    write_json(&dir.join("sweep.json"), &Value::Object(doc))?;
    Ok(0)
}

fn cmd_certify(common: &Common, certificate: Option<&Path>, cert_tol: f64, shift: Option<f64>, eps: &[f64]) -> Result<u8> {
    let ctx = Ctx::new(common)?;
    let dir = ctx.out_dir()?;
    let mut doc = ctx.header("certify");
    let (cycle, _) = match ctx.cycle() {
        Ok(c) => c,
        Err((reason, _)) => {
            doc.insert("status".into(), json!("non_convergence"));
            doc.insert("reason".into(), json!(reason));
            write_json(&dir.join("certify.json"), &Value::Object(doc))?;
            return Ok(2);
        }
    };
    let cert = match certificate {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            let pc: PolynomialCertificate =
                serde_json::from_str(&text).map_err(|e| usage(format!("malformed certificate JSON: {e}")))?;
            Some(pc.build::<f64>(ctx.sys.dim()).map_err(|e| usage(e.to_string()))?)
        }
        None => ctx.entry.certificate::<f64>(&ctx.spec.params).map_err(|e| usage(e.to_string()))?,
    };
    let mut failed = false;
    let mut reasons = Vec::new();
    match cert {
        Some(c) => {
            let rep = certify::check_certificate(&ctx.sys, &c, &cycle, cert_tol)?;
            if rep.verdict == CertVerdict::Fail {
                failed = true;
                reasons.push(format!("certificate residual {:e} exceeds {cert_tol:e}", rep.max_residual()));
            }
            doc.insert("certificate".into(), json!(rep));
        }
        None => {
            doc.insert("certificate".into(), Value::Null);
        }
    }
    // Zhukovskii closeness of a nearby solution to the cycle solution
    let horizon = 5.0 * cycle.period;
    let phi1 = simulate(&ctx.sys, &cycle.x_post, horizon, 1_000_000, &ctx.cfg)?;
    let x_near = match &common.x0 {
        Some(x) => x.clone(),
        None => {
            let k = (cycle.samples.len() / 10).max(1).min(cycle.samples.len() - 1);
            cycle.samples[k].1.clone()
        }
    };
    let phi2 = simulate(&ctx.sys, &x_near, horizon, 1_000_000, &ctx.cfg)?;
    match certify::build_impact_reparameterization(&phi1, &phi2).and_then(|tau| {
        let r = certify::zhukovskii_distance(&phi1, &phi2, &tau)?;
        Ok((tau, r))
    }) {
        Ok((tau, r)) => {
            doc.insert("zhukovskii".into(), json!({"x0": x_near, "reparameterization": tau, "report": r}));
        }
        Err(e) => {
            doc.insert("zhukovskii".into(), json!({"x0": x_near, "error": e.to_string()}));
        }
    }
    if let Some(s) = shift {
        let rep = certify::check_nonexistence_signal(&ctx.sys, &cycle, s, eps, &ctx.cfg).map_err(|e| usage(e.to_string()))?;
        doc.insert("incremental".into(), json!(rep));
    }
    doc.insert("status".into(), json!(if failed { "fail" } else { "ok" }));
    if failed {
        doc.insert("reason".into(), json!(reasons.join("; ")));
    }
    write_json(&dir.join("certify.json"), &Value::Object(doc))?;
    Ok(if failed { 2 } else { 0 })
}

fn cmd_discrete(common: &Common, s: &[f64], scheme: Scheme, jumps: usize, eps: f64) -> Result<u8> {
    let ctx = Ctx::new(common)?;
    let dir = ctx.out_dir()?;
    let scheme = match scheme {
        Scheme::Euler => StepScheme::Euler,
        Scheme::Rk4 => StepScheme::Rk4,
    };
    if s.is_empty() || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(usage("--s needs positive step sizes"));
    }
    let mut doc = ctx.header("discrete");
    let (cycle, _) = match ctx.cycle() {
        Ok(c) => c,
        Err((reason, _)) => {
            doc.insert("status".into(), json!("non_convergence"));
            doc.insert("reason".into(), json!(reason));
            write_json(&dir.join("closeness.json"), &Value::Object(doc))?;
            return Ok(2);
        }
    };
    let x_star = cycle.x_pre.clone();
    let drift = discrete::fixed_point_drift(&ctx.sys, s, &ctx.entry.fixed_point_guess, &x_star, scheme)?;
    let f = fs::File::create(dir.join("drift.csv")).context("cannot write drift.csv")?;
    drift.write_csv(f)?;
    let closeness =
        discrete::closeness_study(&ctx.sys, std::slice::from_ref(&x_star), jumps, s, eps, scheme, Some(&x_star), &ctx.cfg)?;
    let consistency = if s.len() >= 2 {
        discrete::consistency_study(&ctx.sys, std::slice::from_ref(&x_star), s, scheme, &ctx.cfg).ok()
    } else {
        None
    };
    let unconverged: Vec<f64> = drift.rows.iter().filter(|r| !r.converged).map(|r| r.s).collect();
    doc.insert("drift".into(), json!(drift));
    doc.insert("closeness".into(), json!(closeness));
    doc.insert("consistency".into(), json!(consistency));
    let status = if unconverged.is_empty() { "ok" } else { "non_convergence" };
    doc.insert("status".into(), json!(status));
    if !unconverged.is_empty() {
        doc.insert("reason".into(), json!(format!("no fixed point of P_s for s in {unconverged:?}")));
    }
    write_json(&dir.join("closeness.json"), &Value::Object(doc))?;
    Ok(if unconverged.is_empty() { 0 } else { 2 })
}

/// Stdout writes that tolerate a closed pipe (`hylc catalog list | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn cmd_catalog(action: &CatalogAction) -> Result<u8> {
    match action {
        CatalogAction::List { json } => {
            let entries = catalog::entries();
            if *json {
                emit(&serde_json::to_string_pretty(&json!({"schema": SCHEMA, "systems": entries}))?);
            } else {
                for e in &entries {
                    let ps: Vec<String> = e.params.iter().map(|p| format!("{}={}", p.name, p.default)).collect();
                    emit(&format!("{:<12} {}  [{}]", e.name, e.description, ps.join(", ")));
                }
            }
        }
        CatalogAction::Show { name, params, out } => {
            let spec = SystemSpec::resolved(name, &params.clone().unwrap_or_default()).map_err(|e| usage(e.to_string()))?;
            let text = spec.to_json();
            emit(&text);
            if let Some(dir) = out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("system.json"), format!("{text}\n"))?;
            }
        }
    }
    Ok(0)
}

fn jobs_of(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Simulate(c) | Command::Cycle(c) => c.jobs,
        Command::Robust { common, .. } | Command::Certify { common, .. } | Command::Discrete { common, .. } => common.jobs,
        Command::Catalog { .. } => None,
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Cycle(c) => cmd_cycle(c),
        Command::Robust { common, mode, eps, margins, k_box, trials, policy, perturbation } => cmd_robust(
            common,
            *mode,
            eps,
            margins.as_deref(),
            k_box.as_deref(),
            *trials,
            *policy,
            perturbation.as_deref(),
        ),
        Command::Certify { common, certificate, cert_tol, shift, eps } => {
            cmd_certify(common, certificate.as_deref(), *cert_tol, *shift, eps)
        }
        Command::Discrete { common, s, scheme, jumps, eps } => cmd_discrete(common, s, *scheme, *jumps, *eps),
        Command::Catalog { action } => cmd_catalog(action),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let jobs = jobs_of(&cli.command);
    let result = match jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| anyhow!(e))
            .and_then(|pool| pool.install(|| run(&cli))),
        Some(_) => Err(usage("--jobs must be at least 1")),
        None => run(&cli),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
