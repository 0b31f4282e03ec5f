//! Line-based run configuration: `section.key = value`, `#` starts a comment.
//!
//! Parsing collects every problem in the file, each tagged with its line
//! number, instead of stopping at the first one.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use crate::cauchy::{Form, Order, SchemeConfig};
use crate::params::Params;
use crate::periodic::PeriodicMethod;
use crate::proximal;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line, or 0 for problems not tied to a line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ForcingSpec {
    Zero,
    Eigenmode { mode: Vec<usize>, amplitude: f64, omega: f64, phase: f64 },
    /// A CGLF field rotated in the complex plane at frequency `omega`.
    File { path: PathBuf, omega: f64, phase: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialSpec {
    Zero,
    /// Random combination of the lowest sine modes, drawn from `run.seed`.
    Random { amplitude: f64, modes: usize },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSpec {
    pub theta: f64,
    pub poincare_tol: f64,
    pub outer_tol: f64,
    pub poincare_maxit: usize,
    pub outer_maxit: usize,
    pub method: PeriodicMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionSpec {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub resolution: usize,
    /// Defaults to `1/c_q` for the configured `q`.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub stride: usize,
    pub snapshots: bool,
    pub timings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub params: Params,
    pub grid: GridSpec,
    pub scheme: SchemeConfig,
    pub forcing: ForcingSpec,
    pub initial: InitialSpec,
    pub solver: SolverSpec,
    pub schedule: Vec<f64>,
    pub region: RegionSpec,
    pub output: OutputSpec,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: Params::default(),
            grid: GridSpec { dim: 1, nx: 63, ny: 63, lx: 1.0, ly: 1.0 },
            scheme: SchemeConfig::new(1e-3, Order::Lie, Form::Ivp),
            forcing: ForcingSpec::Eigenmode { mode: vec![1], amplitude: 5.0, omega: 0.0, phase: 0.0 },
            initial: InitialSpec::Zero,
            solver: SolverSpec {
                theta: 0.5,
                poincare_tol: 1e-12,
                outer_tol: 1e-9,
                poincare_maxit: 400,
                outer_maxit: 200,
                method: PeriodicMethod::Outer,
            },
            schedule: (0..9).map(|k| 10f64.powf(-1.0 - 0.5 * k as f64)).collect(),
            region: RegionSpec { xmin: -5.0, xmax: 5.0, ymin: -5.0, ymax: 5.0, resolution: 512, r: None },
            output: OutputSpec { dir: None, stride: 1, snapshots: false, timings: false },
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn grid(&self) -> crate::Result<crate::field::Grid> {
        match self.grid.dim {
            1 => crate::field::Grid::line(self.grid.nx, self.grid.lx),
            _ => crate::field::Grid::rect(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly),
        }
    }
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "params.lambda",
    "params.kappa",
    "params.alpha",
    "params.beta",
    "params.gamma",
    "params.q",
    "params.r",
    "params.eps",
    "params.mu",
    "params.period",
    "grid.dim",
    "grid.nx",
    "grid.ny",
    "grid.lx",
    "grid.ly",
    "scheme.tau",
    "scheme.order",
    "scheme.form",
    "scheme.linear_tol",
    "scheme.max_linear_iter",
    "forcing.kind",
    "forcing.mode",
    "forcing.amplitude",
    "forcing.omega",
    "forcing.phase",
    "forcing.path",
    "initial.kind",
    "initial.amplitude",
    "initial.modes",
    "initial.path",
    "solver.theta",
    "solver.poincare_tol",
    "solver.outer_tol",
    "solver.poincare_maxit",
    "solver.outer_maxit",
    "solver.method",
    "continuation.schedule",
    "region.xmin",
    "region.xmax",
    "region.ymin",
    "region.ymax",
    "region.resolution",
    "region.r",
    "output.dir",
    "output.stride",
    "output.snapshots",
    "output.timings",
    "run.seed",
];

struct Entry {
    line: usize,
    value: String,
}

struct Reader {
    entries: BTreeMap<String, Entry>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn err(&mut self, line: usize, message: impl Into<String>) {
        self.errors.push(ConfigError { line, message: message.into() });
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn raw(&self, key: &str) -> Option<(usize, String)> {
        self.entries.get(key).map(|e| (e.line, e.value.clone()))
    }

    fn real(&mut self, key: &str, default: f64) -> f64 {
        match self.raw(key) {
            None => default,
            Some((line, v)) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => x,
                _ => {
                    self.err(line, format!("{key}: expected a real number, got '{v}'"));
                    default
                }
            },
        }
    }

    fn opt_real(&mut self, key: &str) -> Option<f64> {
        self.entries.contains_key(key).then(|| self.real(key, f64::NAN))
    }

    fn int(&mut self, key: &str, default: usize) -> usize {
        match self.raw(key) {
            None => default,
            Some((line, v)) => match v.parse::<usize>() {
                Ok(x) => x,
                _ => {
                    self.err(line, format!("{key}: expected a non-negative integer, got '{v}'"));
                    default
                }
            },
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> u64 {
        match self.raw(key) {
            None => default,
            Some((line, v)) => match v.parse::<u64>() {
                Ok(x) => x,
                _ => {
                    self.err(line, format!("{key}: expected a non-negative integer, got '{v}'"));
                    default
                }
            },
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.raw(key) {
            None => default,
            Some((line, v)) => match v.as_str() {
                "true" => true,
                "false" => false,
                _ => {
                    self.err(line, format!("{key}: expected true or false, got '{v}'"));
                    default
                }
            },
        }
    }

    fn word<'a>(&mut self, key: &str, choices: &[&'a str], default: &'a str) -> &'a str {
        match self.raw(key) {
            None => default,
            Some((line, v)) => match choices.iter().find(|c| **c == v) {
                Some(c) => c,
                None => {
                    self.err(line, format!("{key}: expected one of {}, got '{v}'", choices.join(" | ")));
                    default
                }
            },
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|(_, v)| PathBuf::from(v))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<Vec<T>> {
        let (line, v) = self.raw(key)?;
        let mut out = Vec::new();
        for item in v.split(',') {
            match item.trim().parse::<T>() {
                Ok(x) => out.push(x),
                Err(_) => {
                    self.err(line, format!("{key}: expected a comma-separated list of {what}, got '{v}'"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn check(&mut self, ok: bool, key: &str, message: &str) {
        if !ok {
            let line = self.line(key);
            self.err(line, message.to_string());
        }
    }
}

fn tokenize(text: &str) -> Reader {
    let mut r = Reader { entries: BTreeMap::new(), errors: Vec::new() };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            r.err(line, format!("expected 'section.key = value', got '{content}'"));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            r.err(line, format!("unknown key '{k}'"));
            continue;
        }
        if v.is_empty() {
            r.err(line, format!("{k}: missing value"));
            continue;
        }
        if let Some(prev) = r.entries.get(k) {
            let first = prev.line;
            r.err(line, format!("{k}: duplicate key (first set on line {first})"));
            continue;
        }
        r.entries.insert(k.to_string(), Entry { line, value: v.to_string() });
    }
    r
}

/// Parses and validates a configuration. Missing keys take the defaults of
/// [`RunConfig::default`].
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let mut r = tokenize(text);
    let d = RunConfig::default();

    let dp = d.params;
    let params = Params {
        lambda: r.real("params.lambda", dp.lambda),
        kappa: r.real("params.kappa", dp.kappa),
        alpha: r.real("params.alpha", dp.alpha),
        beta: r.real("params.beta", dp.beta),
        gamma: r.real("params.gamma", dp.gamma),
        q: r.real("params.q", dp.q),
        r: r.real("params.r", dp.r),
        eps: r.real("params.eps", dp.eps),
        mu: r.real("params.mu", dp.mu),
        period: r.real("params.period", dp.period),
    };
    r.check(params.lambda > 0.0, "params.lambda", "lambda must be positive");
    r.check(params.kappa > 0.0, "params.kappa", "kappa must be positive");
    r.check(params.q > 2.0, "params.q", "q must exceed 2");
    let rl = if r.entries.contains_key("params.r") { "params.r" } else { "params.q" };
    r.check(params.r > params.q, rl, "r must exceed q");
    r.check(params.eps >= 0.0, "params.eps", "eps must be non-negative");
    r.check(params.mu >= 0.0, "params.mu", "mu must be non-negative");
    r.check(params.period > 0.0, "params.period", "period must be positive");

    let grid = GridSpec {
        dim: r.int("grid.dim", d.grid.dim),
        nx: r.int("grid.nx", d.grid.nx),
        ny: r.int("grid.ny", d.grid.ny),
        lx: r.real("grid.lx", d.grid.lx),
        ly: r.real("grid.ly", d.grid.ly),
    };
    r.check(grid.dim == 1 || grid.dim == 2, "grid.dim", "grid.dim must be 1 or 2");
    r.check(grid.nx >= 1, "grid.nx", "grid.nx must be at least 1");
    r.check(grid.ny >= 1, "grid.ny", "grid.ny must be at least 1");
    r.check(grid.lx > 0.0, "grid.lx", "grid.lx must be positive");
    r.check(grid.ly > 0.0, "grid.ly", "grid.ly must be positive");

    let order = match r.word("scheme.order", &["lie", "strang"], "lie") {
        "strang" => Order::Strang,
        _ => Order::Lie,
    };
    let form = match r.word("scheme.form", &["ivp", "ivp_mu", "full"], "ivp") {
        "full" => Form::Full,
        "ivp_mu" => {
            r.check(params.mu > 0.0, "params.mu", "scheme.form = ivp_mu needs params.mu > 0");
            Form::IvpMu(params.mu)
        }
        _ => Form::Ivp,
    };
    let scheme = SchemeConfig {
        tau: r.real("scheme.tau", d.scheme.tau),
        order,
        form,
        linear_tol: r.real("scheme.linear_tol", proximal::DEFAULT_LINEAR_TOL),
        max_linear_iter: r.int("scheme.max_linear_iter", proximal::DEFAULT_MAX_ITER),
    };
    r.check(scheme.tau > 0.0, "scheme.tau", "tau must be positive");
    if scheme.tau > 0.0 && params.period > 0.0 {
        r.check(scheme.steps_for(params.period).is_ok(), "scheme.tau", "tau must divide params.period");
    }
    r.check(
        scheme.linear_tol > 0.0 && scheme.linear_tol <= 1e-6,
        "scheme.linear_tol",
        "linear_tol must lie in (0, 1e-6]",
    );
    r.check(scheme.max_linear_iter >= 1, "scheme.max_linear_iter", "max_linear_iter must be at least 1");
    if form == Form::Full {
        r.check(scheme.tau * params.gamma < 1.0, "scheme.tau", "tau*gamma must be below 1 for the full form");
    }

    let omega = r.real("forcing.omega", 0.0);
    let phase = r.real("forcing.phase", 0.0);
    let forcing = match r.word("forcing.kind", &["zero", "eigenmode", "file"], "eigenmode") {
        "zero" => ForcingSpec::Zero,
        "file" => match r.path("forcing.path") {
            Some(path) => {
                if !path.exists() {
                    let line = r.line("forcing.path");
                    r.err(line, format!("forcing.path: file '{}' does not exist", path.display()));
                }
                ForcingSpec::File { path, omega, phase }
            }
            None => {
                let line = r.line("forcing.kind");
                r.err(line, "forcing.kind = file needs forcing.path");
                ForcingSpec::Zero
            }
        },
        _ => {
            let mode = r.list::<usize>("forcing.mode", "positive integers").unwrap_or_else(|| vec![1; grid.dim.clamp(1, 2)]);
            let ok = mode.len() == grid.dim && mode.iter().all(|&k| k >= 1);
            r.check(ok, "forcing.mode", "forcing.mode needs one positive wave number per grid axis");
            ForcingSpec::Eigenmode { mode, amplitude: r.real("forcing.amplitude", 5.0), omega, phase }
        }
    };
    if omega != 0.0 && params.period > 0.0 {
        let cycles = omega * params.period / (2.0 * std::f64::consts::PI);
        r.check(
            (cycles - cycles.round()).abs() <= 1e-9 * cycles.abs().max(1.0),
            "forcing.omega",
            "forcing period must divide params.period (omega*T/(2 pi) must be an integer)",
        );
    }

    let initial = match r.word("initial.kind", &["zero", "random", "file"], "zero") {
        "random" => InitialSpec::Random { amplitude: r.real("initial.amplitude", 1.0), modes: r.int("initial.modes", 4) },
        "file" => match r.path("initial.path") {
            Some(path) => {
                if !path.exists() {
                    let line = r.line("initial.path");
                    r.err(line, format!("initial.path: file '{}' does not exist", path.display()));
                }
                InitialSpec::File { path }
            }
            None => {
                let line = r.line("initial.kind");
                r.err(line, "initial.kind = file needs initial.path");
                InitialSpec::Zero
            }
        },
        _ => InitialSpec::Zero,
    };

    let ds = &d.solver;
    let solver = SolverSpec {
        theta: r.real("solver.theta", ds.theta),
        poincare_tol: r.real("solver.poincare_tol", ds.poincare_tol),
        outer_tol: r.real("solver.outer_tol", ds.outer_tol),
        poincare_maxit: r.int("solver.poincare_maxit", ds.poincare_maxit),
        outer_maxit: r.int("solver.outer_maxit", ds.outer_maxit),
        method: match r.word("solver.method", &["outer", "direct"], "outer") {
            "direct" => PeriodicMethod::Direct,
            _ => PeriodicMethod::Outer,
        },
    };
    r.check(solver.theta > 0.0 && solver.theta <= 1.0, "solver.theta", "theta must lie in (0, 1]");
    r.check(solver.poincare_tol > 0.0, "solver.poincare_tol", "poincare_tol must be positive");
    r.check(solver.outer_tol > 0.0, "solver.outer_tol", "outer_tol must be positive");
    r.check(solver.poincare_maxit >= 1, "solver.poincare_maxit", "poincare_maxit must be at least 1");
    r.check(solver.outer_maxit >= 1, "solver.outer_maxit", "outer_maxit must be at least 1");

    let schedule = r.list::<f64>("continuation.schedule", "reals").unwrap_or(d.schedule.clone());
    r.check(
        !schedule.is_empty() && schedule.iter().all(|e| *e > 0.0) && schedule.windows(2).all(|w| w[1] < w[0]),
        "continuation.schedule",
        "continuation.schedule must be positive and strictly decreasing",
    );

    let dr = &d.region;
    let region = RegionSpec {
        xmin: r.real("region.xmin", dr.xmin),
        xmax: r.real("region.xmax", dr.xmax),
        ymin: r.real("region.ymin", dr.ymin),
        ymax: r.real("region.ymax", dr.ymax),
        resolution: r.int("region.resolution", dr.resolution),
        r: r.opt_real("region.r"),
    };
    r.check(region.xmin < region.xmax, "region.xmax", "region.xmin must be below region.xmax");
    r.check(region.ymin < region.ymax, "region.ymax", "region.ymin must be below region.ymax");
    r.check(region.resolution >= 2, "region.resolution", "region.resolution must be at least 2");
    if let Some(rv) = region.r {
        r.check(rv > 0.0, "region.r", "region.r must be positive");
    }

    let output = OutputSpec {
        dir: r.path("output.dir"),
        stride: r.int("output.stride", 1),
        snapshots: r.boolean("output.snapshots", false),
        timings: r.boolean("output.timings", false),
    };
    r.check(output.stride >= 1, "output.stride", "output.stride must be at least 1");
    let seed = r.u64("run.seed", 0);

    if r.errors.is_empty() {
        Ok(RunConfig { params, grid, scheme, forcing, initial, solver, schedule, region, output, seed })
    } else {
        r.errors.sort_by_key(|e| e.line);
        Err(ConfigErrors(r.errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = parse_config("# nothing here\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.scheme.tau, 1e-3);
        assert_eq!((c.grid.dim, c.grid.nx), (1, 63));
        assert_eq!(c.params.period, 1.0);
        assert_eq!(c.solver.theta, 0.5);
    }

    #[test]
    fn reads_values() {
        let text = "params.q = 3.5 # trailing comment\nparams.r = 5\ngrid.dim = 2\ngrid.nx = 15\ngrid.ny = 11\n\
                    forcing.mode = 2, 1\nscheme.order = strang\nscheme.form = full\nsolver.method = direct\n\
                    continuation.schedule = 0.1, 0.01\noutput.timings = true\nrun.seed = 42\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.params.q, 3.5);
        assert_eq!((c.grid.nx, c.grid.ny), (15, 11));
        assert_eq!(c.forcing, ForcingSpec::Eigenmode { mode: vec![2, 1], amplitude: 5.0, omega: 0.0, phase: 0.0 });
        assert_eq!(c.scheme.order, Order::Strang);
        assert_eq!(c.scheme.form, Form::Full);
        assert_eq!(c.solver.method, PeriodicMethod::Direct);
        assert_eq!(c.schedule, vec![0.1, 0.01]);
        assert!(c.output.timings);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn constraint_error() {
        let e = parse_config("params.q = 1.5\n").unwrap_err();
        assert!(e.0.iter().any(|e| e.line == 1 && e.message.contains("q must exceed 2")), "{e}");
    }

    #[test]
    fn expression_is_type_error_with_line() {
        let e = parse_config("# header\nparams.r = params.q\n").unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert_eq!(e.0[0].line, 2);
        assert!(e.0[0].message.contains("expected a real number"));
    }

    #[test]
    fn collects_all_errors() {
        let text = "params.q = 1.5\nfoo.bar = 1\nscheme.tau = 0.3\nparams.q = 4\nsolver.theta = 2\nnot a pair\n";
        let e = parse_config(text).unwrap_err();
        let lines: Vec<usize> = e.0.iter().map(|e| e.line).collect();
        for l in [1, 2, 3, 4, 5, 6] {
            assert!(lines.contains(&l), "missing line {l}: {e}");
        }
    }

    #[test]
    fn forcing_period_must_divide_t() {
        assert!(parse_config("forcing.omega = 6.283185307179586\n").is_ok());
        assert!(parse_config("forcing.omega = 1.0\n").is_err());
        assert!(parse_config("forcing.kind = file\nforcing.path = /definitely/missing.cglf\n").is_err());
    }
}
