use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cgl_periodic::io::config::{parse_config, RunConfig};
use cgl_periodic::periodic::PeriodicMethod;
use cgl_periodic::runner::{self, Command, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "cgl", version, about = "Time-periodic solutions of the complex Ginzburg-Landau equation")]
struct Cli {
    /// Configuration file (`section.key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed for randomized fields; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check parameters and report c_q, region flags and an admissible pair.
    VerifyParams,
    /// Rasterize the admissible region to a PGM image.
    RasterRegion,
    /// Integrate one period from the configured initial state.
    SolveCauchy,
    /// Compute a periodic solution.
    FindPeriodic {
        #[arg(value_enum)]
        method: Option<Method>,
    },
    /// Follow the periodic solution along the epsilon schedule.
    ContinueEps,
    /// Periodic solve followed by identity, inequality and energy checks.
    VerifyRun,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Outer,
    Direct,
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text).map_err(|e| e.to_string())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("CGL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error:\n{e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let command = match cli.command {
        Cmd::VerifyParams => Command::VerifyParams,
        Cmd::RasterRegion => Command::RasterRegion,
        Cmd::SolveCauchy => Command::SolveCauchy,
        Cmd::FindPeriodic { method } => Command::FindPeriodic(method.map(|m| match m {
            Method::Outer => PeriodicMethod::Outer,
            Method::Direct => PeriodicMethod::Direct,
        })),
        Cmd::ContinueEps => Command::ContinueEps,
        Cmd::VerifyRun => Command::VerifyRun,
    };
    let out = cli.output.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("cgl-out"));
    if cli.verbose {
        eprintln!("{command}: writing to {}", out.display());
    }
    let result = runner::run(command, &cfg, &out);
    let code = runner::exit_code(&result);
    match result {
        Ok(o) => {
            println!("{}", o.summary);
            if cli.verbose {
                for a in &o.artifacts {
                    eprintln!("  {}", a.display());
                }
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(code as u8)
}
