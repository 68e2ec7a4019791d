use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpct::scenario::{self, Overrides, ScalingBlock, TerminalKind};
use mpct::{commands, CliError};

#[derive(Parser)]
#[command(name = "mpct", version, about = "MPC for tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed loop at one horizon.
    Simulate(Common),
    /// Open-loop solve and closed loop for each horizon and scaling.
    Sweep(Common),
    /// Tracking vs standard vs infinite-horizon proxy from one initial state.
    Compare(Common),
    /// Sampled assumption checks and terminal certification.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated horizons; the first is used by `simulate` and `compare`.
    #[arg(long, value_parser = parse_horizons)]
    horizons: Option<Horizons>,
    /// `linear` or `constant:<c>`.
    #[arg(long)]
    scaling: Option<ScalingBlock>,
    #[arg(long)]
    terminal: Option<TerminalKind>,
    #[arg(long)]
    svg: bool,
}

#[derive(Clone)]
struct Horizons(Vec<usize>);

fn parse_horizons(s: &str) -> Result<Horizons, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()
        .map(Horizons)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let (cmd, c) = match cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Compare(c) => ("compare", c),
        Command::Verify(c) => ("verify", c),
    };
    if let Some(Horizons(h)) = &c.horizons {
        if h.is_empty() {
            return Err(CliError::config("--horizons: empty horizon list"));
        }
    }
    let overrides = Overrides {
        steps: c.steps,
        horizons: c.horizons.map(|h| h.0),
        scaling: c.scaling,
        terminal: c.terminal,
    };
    let sc = scenario::load(&c.config, &overrides)?;
    match cmd {
        "simulate" => {
            let r = commands::simulate(&sc, &c.out, c.svg)?;
            if let Some(t) = r.trace.failed_at {
                eprintln!("solver failure at t = {t}; partial trace written");
            }
            Ok(r.exit_code())
        }
        "sweep" => commands::sweep(&sc, &c.out).map(|_| 0),
        "compare" => commands::compare(&sc, &c.out, c.svg).map(|_| 0),
        _ => commands::verify(&sc, &c.out).map(|_| 0),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MPCT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
