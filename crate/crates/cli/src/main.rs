use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use momentrisk::config::{parse_override, RunConfig};
use momentrisk::pipeline::{Pipeline, Stage};
use momentrisk::Result;

/// Intraday higher-moment risk factors: ingest, decompose, sort and price.
#[derive(Parser)]
#[command(name = "momentrisk", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set tvp.draws=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Worker threads (0 uses all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for all artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate intraday bars, risk-free rates and control factors.
    Simulate,
    /// Clean bars onto the five-minute grid and build excess returns.
    Ingest,
    /// Realized variance, skewness and kurtosis per asset-day and week.
    Moments,
    /// Split moment series into short- and long-horizon components.
    Decompose,
    /// Aggregate market and idiosyncratic moment factors.
    Factors,
    /// Rolling-window quantile portfolio sorts.
    Sort,
    /// Static two-pass risk premia.
    Crosssection,
    /// Time-varying risk premia.
    Tvp,
    /// Render tables from available results.
    Report,
    /// Run several stages in dependency order (all when none are given).
    Run { stages: Vec<String> },
}

fn stages(cmd: &Command) -> Result<Vec<Stage>> {
    Ok(match cmd {
        Command::Simulate => vec![Stage::Simulate],
        Command::Ingest => vec![Stage::Ingest],
        Command::Moments => vec![Stage::Moments],
        Command::Decompose => vec![Stage::Decompose],
        Command::Factors => vec![Stage::Factors],
        Command::Sort => vec![Stage::Sort],
        Command::Crosssection => vec![Stage::Crosssection],
        Command::Tvp => vec![Stage::Tvp],
        Command::Report => vec![Stage::Report],
        Command::Run { stages } if stages.is_empty() => Stage::ALL.to_vec(),
        Command::Run { stages } => stages.iter().map(|s| s.parse()).collect::<Result<_>>()?,
    })
}

fn run(cli: &Cli) -> Result<()> {
    let mut overrides = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    if let Some(t) = cli.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    if let Some(d) = &cli.out_dir {
        overrides.push(("out_dir".into(), d.display().to_string()));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), std::env::vars(), &overrides)?;
    Pipeline::new(cfg).run(&stages(&cli.command)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class() as u8)
        }
    }
}
