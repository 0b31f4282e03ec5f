//! Command orchestration and artifact emission.
//!
//! Exit codes: 0 success, 2 non-convergence (artifacts are still written),
//! 1 for configuration and every other error.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::cauchy::{self, EigenmodeSource, Form, Source, ZeroSource};
use crate::error::{CglError, Result};
use crate::field::{self, CField, Grid};
use crate::io::config::{ForcingSpec, InitialSpec, RunConfig};
use crate::io::{field_csv, read_cglf, write_cglf};
use crate::params::{self, RegionBounds};
use crate::periodic::{self, OuterOptions, PeriodicMethod, PeriodicResult, PicardOptions, WarmStart};
use crate::verification::{self, DiagnosticsReport, MonitorInputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// Slack constant of the energy monitor used by `solve-cauchy` and `verify-run`.
pub const MONITOR_SLACK_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    VerifyParams,
    RasterRegion,
    SolveCauchy,
    /// `None` takes the method from `solver.method`.
    FindPeriodic(Option<PeriodicMethod>),
    ContinueEps,
    VerifyRun,
}

impl FromStr for Command {
    type Err = CglError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "verify-params" => Command::VerifyParams,
            "raster-region" => Command::RasterRegion,
            "solve-cauchy" => Command::SolveCauchy,
            "find-periodic" => Command::FindPeriodic(None),
            "find-periodic-outer" => Command::FindPeriodic(Some(PeriodicMethod::Outer)),
            "find-periodic-direct" => Command::FindPeriodic(Some(PeriodicMethod::Direct)),
            "continue-eps" => Command::ContinueEps,
            "verify-run" => Command::VerifyRun,
            _ => return Err(CglError::Config(format!("unknown command '{s}'"))),
        })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::VerifyParams => "verify-params",
            Command::RasterRegion => "raster-region",
            Command::SolveCauchy => "solve-cauchy",
            Command::FindPeriodic(None) => "find-periodic",
            Command::FindPeriodic(Some(PeriodicMethod::Outer)) => "find-periodic-outer",
            Command::FindPeriodic(Some(PeriodicMethod::Direct)) => "find-periodic-direct",
            Command::ContinueEps => "continue-eps",
            Command::VerifyRun => "verify-run",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, content)?;
        Ok(())
    }

    fn bytes(&mut self, name: &str, content: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(p, content)?;
        Ok(())
    }

    fn json(&mut self, name: &str, v: &serde_json::Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| CglError::Format(e.to_string()))?;
        s.push('\n');
        self.text(name, &s)
    }

    fn field(&mut self, stem: &str, u: &CField) -> Result<()> {
        let p = self.path(&format!("{stem}.cglf"));
        write_cglf(&p, u)?;
        self.text(&format!("{stem}.csv"), &field_csv(u))
    }

    fn snapshots(&mut self, states: &[CField]) -> Result<()> {
        let sub = self.dir.join("snapshots");
        fs::create_dir_all(&sub)?;
        for (k, u) in states.iter().enumerate() {
            let p = self.path(&format!("snapshots/state_{k:06}.cglf"));
            write_cglf(&p, u)?;
        }
        Ok(())
    }
}

/// A stored field rotated in the complex plane: `e^{i(ωt + phase)}·F₀`.
struct RotatingField {
    base: CField,
    omega: f64,
    phase: f64,
}

impl Source for RotatingField {
    fn sample(&self, t: f64, grid: &Arc<Grid>) -> Result<CField> {
        if **self.base.grid_arc() != **grid {
            return Err(CglError::GridMismatch("forcing file grid differs from the configured grid".into()));
        }
        let (s, c) = (self.omega * t + self.phase).sin_cos();
        Ok(self.base.map_nodes(|[a, b]| [c * a - s * b, s * a + c * b]))
    }

    fn is_zero(&self) -> bool {
        self.base.data().iter().all(|&v| v == 0.0)
    }
}

pub fn build_forcing(cfg: &RunConfig, grid: &Arc<Grid>) -> Result<Box<dyn Source>> {
    Ok(match &cfg.forcing {
        ForcingSpec::Zero => Box::new(ZeroSource),
        ForcingSpec::Eigenmode { mode, amplitude, omega, phase } => {
            let s = EigenmodeSource { mode: mode.clone(), amplitude: *amplitude, omega: *omega, phase: *phase };
            s.sample(0.0, grid)?;
            Box::new(s)
        }
        ForcingSpec::File { path, omega, phase } => {
            let base = read_cglf(path)?;
            let s = RotatingField { base, omega: *omega, phase: *phase };
            s.sample(0.0, grid)?;
            Box::new(s)
        }
    })
}

pub fn build_initial(cfg: &RunConfig, grid: &Arc<Grid>) -> Result<CField> {
    match &cfg.initial {
        InitialSpec::Zero => Ok(CField::zeros(grid.clone())),
        InitialSpec::Random { amplitude, modes } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok(CField::random_smooth(grid.clone(), *modes, *amplitude, &mut rng))
        }
        InitialSpec::File { path } => {
            let u = read_cglf(path)?;
            if **u.grid_arc() != **grid {
                return Err(CglError::GridMismatch("initial file grid differs from the configured grid".into()));
            }
            Ok(u)
        }
    }
}

/// `√(τ Σ_{n=1}^{N} ‖F(t_n)‖²)`, the discrete `L²(0,T;𝕃²)` norm used by the monitors.
pub fn forcing_norm(f: &dyn Source, grid: &Arc<Grid>, period: f64, tau: f64) -> Result<f64> {
    let n = (period / tau).round() as usize;
    let mut s = Vec::with_capacity(n);
    for k in 1..=n {
        s.push(field::norm2(&f.sample(k as f64 * tau, grid)?).powi(2));
    }
    Ok((tau * field::kahan_sum(s)).sqrt())
}

fn outer_options(cfg: &RunConfig) -> OuterOptions {
    let s = &cfg.solver;
    let mut o = OuterOptions::new(s.theta, s.outer_tol, s.outer_maxit, s.poincare_tol, s.poincare_maxit);
    o.outer.timings = cfg.output.timings;
    o.poincare.timings = cfg.output.timings;
    o
}

/// Runs one command, writing artifacts under `out`. Errors map to exit code 1.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let mut art = Artifacts::new(out)?;
    let (code, summary) = match command {
        Command::VerifyParams => verify_params(cfg, &mut art)?,
        Command::RasterRegion => raster(cfg, &mut art)?,
        Command::SolveCauchy => solve(cfg, &mut art)?,
        Command::FindPeriodic(m) => find_periodic(cfg, m.unwrap_or(cfg.solver.method), &mut art)?,
        Command::ContinueEps => continue_eps(cfg, &mut art)?,
        Command::VerifyRun => verify_run(cfg, &mut art)?,
    };
    Ok(RunOutcome { exit_code: code, artifacts: art.written, summary })
}

/// Exit code of a finished [`run`] call.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) => o.exit_code,
        Err(_) => EXIT_ERROR,
    }
}

fn verify_params(cfg: &RunConfig, art: &mut Artifacts) -> Result<(i32, String)> {
    let p = &cfg.params;
    let report = params::validate_params(p)?;
    let pair = params::find_admissible_pair(p)?;
    let grid = Arc::new(cfg.grid()?);
    let f = build_forcing(cfg, &grid)?;
    let nf = forcing_norm(f.as_ref(), &grid, p.period, cfg.scheme.tau)?;
    let constants = verification::constants_report(p, nf, grid.measure())?;
    art.json(
        "params_report.json",
        &json!({
            "params": p,
            "report": report,
            "admissible_pair": pair,
            "forcing_norm": nf,
            "constants": constants,
        }),
    )?;
    let summary = format!(
        "c_q = {:.6}, in region = {}, admissible pair = {}",
        report.c_q,
        report.in_region,
        pair.map_or("none".to_string(), |a| format!("(delta = {}, eps = {}, J = {})", a.delta, a.eps_bal, a.j_value))
    );
    Ok((EXIT_OK, summary))
}

fn raster(cfg: &RunConfig, art: &mut Artifacts) -> Result<(i32, String)> {
    let rs = &cfg.region;
    let r = match rs.r {
        Some(r) => r,
        None => params::strength_exponent_inv(cfg.params.q)?,
    };
    let bounds = RegionBounds { xmin: rs.xmin, xmax: rs.xmax, ymin: rs.ymin, ymax: rs.ymax };
    let raster = params::raster_region(bounds, rs.resolution, rs.resolution, r)?;
    art.bytes("region.pgm", &raster.to_pgm())?;
    let mut csv = String::from("x,y,inside,in_union\n");
    for (x, y, a, b) in &raster.disagreements {
        csv.push_str(&format!("{x:.17e},{y:.17e},{a},{b}\n"));
    }
    art.text("region_disagreements.csv", &csv)?;
    let total = raster.nx * raster.ny;
    let inside = raster.cells.iter().filter(|c| c.inside).count();
    art.json(
        "region_summary.json",
        &json!({
            "bounds": bounds,
            "nx": raster.nx,
            "ny": raster.ny,
            "r": r,
            "samples": total,
            "inside": inside,
            "agreement": raster.agreement,
            "agreement_fraction": raster.agreement as f64 / total as f64,
            "disagreements": raster.disagreements.len(),
        }),
    )?;
    Ok((EXIT_OK, format!("{}x{} raster, {} disagreements", raster.nx, raster.ny, raster.disagreements.len())))
}

fn solve(cfg: &RunConfig, art: &mut Artifacts) -> Result<(i32, String)> {
    let p = &cfg.params;
    let grid = Arc::new(cfg.grid()?);
    let f = build_forcing(cfg, &grid)?;
    let u0 = build_initial(cfg, &grid)?;
    let traj = cauchy::solve_cauchy(&u0, p.period, p, &cfg.scheme, f.as_ref(), &ZeroSource)?;
    art.text("diagnostics.csv", &traj.diagnostics_csv())?;
    art.field("final", traj.last())?;
    if cfg.output.snapshots {
        art.snapshots(&strided(&traj.states, cfg.output.stride))?;
    }
    let mut energy_pass = None;
    // the monitor covers the contraction form (frozen h = 0) and the full form
    if matches!(cfg.scheme.form, Form::Ivp | Form::Full) && p.eps > 0.0 {
        let zero = ZeroSource;
        let frozen: Option<&dyn Source> = if cfg.scheme.form == Form::Ivp { Some(&zero) } else { None };
        let inputs = MonitorInputs { params: p, forcing: f.as_ref(), frozen, pair: None, slack_factor: MONITOR_SLACK_FACTOR };
        let rep = verification::energy_monitor(&traj, &inputs)?;
        art.text("energy_report.json", &(rep.to_json() + "\n"))?;
        art.text("energy_margins.csv", &rep.margins_csv())?;
        energy_pass = Some(rep.all_pass());
    }
    let residual = cauchy::pde_residual(&traj, p, cfg.scheme.form, f.as_ref(), &ZeroSource)?;
    art.json(
        "summary.json",
        &json!({
            "steps": cfg.scheme.steps_for(p.period)?,
            "final_norm2": field::norm2(traj.last()),
            "pde_residual": residual,
            "energy_monitor_pass": energy_pass,
        }),
    )?;
    Ok((EXIT_OK, format!("final norm {:.6e}, residual {:.3e}", field::norm2(traj.last()), residual)))
}

fn periodic_solve(cfg: &RunConfig, method: PeriodicMethod, grid: &Arc<Grid>, f: &dyn Source) -> Result<PeriodicResult> {
    let p = &cfg.params;
    let opts = outer_options(cfg);
    let start = build_initial(cfg, grid)?;
    match method {
        PeriodicMethod::Outer => {
            let warm = WarmStart { u0: Some(start), h: None };
            periodic::outer_fixed_point(p, f, grid, &cfg.scheme, &opts, &warm)
        }
        PeriodicMethod::Direct => {
            let scheme = cfg.scheme.with_form(Form::Full);
            let mut o = PicardOptions::new(cfg.solver.outer_tol, cfg.solver.outer_maxit);
            o.timings = cfg.output.timings;
            periodic::direct_poincare(p, f, &scheme, &o, &start)
        }
    }
}

/// Every `stride`-th state plus the last one.
fn strided(states: &[CField], stride: usize) -> Vec<CField> {
    let mut out: Vec<CField> = states.iter().step_by(stride.max(1)).cloned().collect();
    if !(states.len() - 1).is_multiple_of(stride.max(1)) {
        out.push(states[states.len() - 1].clone());
    }
    out
}

fn method_name(m: PeriodicMethod) -> &'static str {
    match m {
        PeriodicMethod::Outer => "outer",
        PeriodicMethod::Direct => "direct",
    }
}

fn write_periodic(cfg: &RunConfig, method: PeriodicMethod, res: &PeriodicResult, art: &mut Artifacts) -> Result<()> {
    art.field("u0", &res.u0)?;
    art.text("iterations.jsonl", &res.history_jsonl())?;
    if cfg.output.snapshots {
        art.snapshots(&strided(&res.trajectory.states, cfg.output.stride))?;
    }
    art.json(
        "summary.json",
        &json!({
            "method": method_name(method),
            "converged": res.converged,
            "eps": res.eps_used,
            "periodicity_residual": res.periodicity_residual,
            "pde_residual": res.pde_residual,
            "h_residual": res.h_residual,
            "iterations": res.history.len(),
            "uniform": periodic::uniform_diagnostics(&res.trajectory, &cfg.params.with_eps(res.eps_used)),
        }),
    )
}

fn find_periodic(cfg: &RunConfig, method: PeriodicMethod, art: &mut Artifacts) -> Result<(i32, String)> {
    let grid = Arc::new(cfg.grid()?);
    let f = build_forcing(cfg, &grid)?;
    let res = periodic_solve(cfg, method, &grid, f.as_ref())?;
    write_periodic(cfg, method, &res, art)?;
    let code = if res.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok((
        code,
        format!(
            "{} solve {}: periodicity {:.3e}, equation residual {:.3e}",
            method_name(method),
            if res.converged { "converged" } else { "did not converge" },
            res.periodicity_residual,
            res.pde_residual
        ),
    ))
}

fn continue_eps(cfg: &RunConfig, art: &mut Artifacts) -> Result<(i32, String)> {
    let grid = Arc::new(cfg.grid()?);
    let f = build_forcing(cfg, &grid)?;
    let opts = outer_options(cfg);
    let res = periodic::epsilon_continuation(
        &cfg.params,
        f.as_ref(),
        &grid,
        &cfg.schedule,
        &cfg.scheme,
        cfg.solver.method,
        &opts,
    )?;
    let eps_done: Vec<f64> = res.stages.iter().map(|s| s.eps_used).collect();
    let slope = verification::vanish_rate(&eps_done, &res.vanishing).ok();
    let mut summary = res.summary_json();
    summary["vanish_rate"] = json!(slope);
    art.json("continuation.json", &summary)?;
    let mut log = String::new();
    for s in &res.stages {
        log.push_str(&s.history_jsonl());
    }
    art.text("iterations.jsonl", &log)?;
    let last = res.stages.last().expect("at least one stage ran");
    art.field("final", &last.u0)?;
    let code = if res.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok((
        code,
        format!(
            "{} of {} stages, final residual {:.3e}, vanish rate {}",
            res.stages.len(),
            res.schedule.len(),
            res.final_residual,
            slope.map_or("n/a".into(), |s| format!("{s:.4}"))
        ),
    ))
}

fn verify_run(cfg: &RunConfig, art: &mut Artifacts) -> Result<(i32, String)> {
    let p = &cfg.params;
    let grid = Arc::new(cfg.grid()?);
    let f = build_forcing(cfg, &grid)?;
    let method = cfg.solver.method;
    let res = periodic_solve(cfg, method, &grid, f.as_ref())?;
    write_periodic(cfg, method, &res, art)?;

    let u = &res.u0;
    let mut report = DiagnosticsReport { identity_residuals: verification::check_identities(u, p.q, p.r, 1.0)?, ..Default::default() };
    let key = verification::check_key_inequality(u, p.q)?;
    report.inequality_margins.insert("key_inequality".into(), key.margin);
    let nf = forcing_norm(f.as_ref(), &grid, p.period, cfg.scheme.tau)?;
    for (k, v) in verification::check_moreau(u, 1.0, p.q)? {
        report.inequality_margins.insert(format!("moreau_{k}"), v);
    }
    let eta = verification::eta(p, nf);
    if eta.is_finite() && p.r > p.q {
        for (k, v) in verification::check_interpolation(u, p.q, p.r, eta)? {
            report.inequality_margins.insert(format!("interpolation_{k}"), v);
        }
    }
    report.constants = verification::constants_report(p, nf, grid.measure())?;

    let hs = match &res.forcing_h {
        Some(h) => Some(cauchy::SampledSource::new(p.period, h.clone())?),
        None => None,
    };
    let frozen = hs.as_ref().map(|s| s as &dyn Source);
    let inputs = MonitorInputs { params: p, forcing: f.as_ref(), frozen, pair: None, slack_factor: MONITOR_SLACK_FACTOR };
    let energy = verification::energy_monitor(&res.trajectory, &inputs)?;
    for (k, b) in &energy.bound_checks {
        report.bound_checks.insert(k.clone(), *b);
    }
    for (k, s) in &energy.max_slack {
        report.inequality_margins.insert(format!("energy_slack_{k}"), *s);
    }
    art.text("diagnostics.json", &(report.to_json() + "\n"))?;
    art.text("energy_report.json", &(energy.to_json() + "\n"))?;
    art.text("energy_margins.csv", &energy.margins_csv())?;
    let code = if res.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok((
        code,
        format!(
            "solve {}, monitors {}",
            if res.converged { "converged" } else { "did not converge" },
            if energy.all_pass() { "pass" } else { "report violations" }
        ),
    ))
}
