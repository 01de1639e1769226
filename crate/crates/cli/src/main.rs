use std::path::PathBuf;
use std::process::ExitCode;

use barlab::commands;
use barlab::config::RunConfig;
use barlab::exit::{error_line, Category};
use barlab_core::dataset::Split;
use barlab_core::exec::{with_threads, Exec};
use barlab_core::features::FeatureSetTag;
use barlab_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "barlab", version, about = "Timing-enhanced bars and distributional forecasts from trade ticks")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 runs every stage sequentially.
    #[arg(long, global = true, env = "BARLAB_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Out {
    /// Output directory, overriding the configured path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Tagged {
    #[arg(long)]
    feature_set: Option<FeatureSetTag>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic trade ticks.
    GenTicks(Out),
    /// Aggregate ticks into one-minute bars.
    BuildBars(Out),
    /// Window, filter, normalize and materialize a feature set.
    BuildDataset(Tagged),
    /// Train one checkpoint per seed.
    Train {
        #[command(flatten)]
        t: Tagged,
        /// Train only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Two-stage hyperparameter search.
    Grid(Tagged),
    /// Score a checkpoint on a dataset split and write the report files.
    Evaluate {
        #[command(flatten)]
        t: Tagged,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Checkpoint seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summary statistics of a split's standardized targets.
    Stats {
        #[command(flatten)]
        t: Tagged,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Aggregate every evaluation report into seed averages.
    Report(Out),
    /// Print the default configuration.
    DefaultConfig,
}

fn dispatch(cli: &Cli, exec: Exec) -> Result<()> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", String::from_utf8_lossy(&RunConfig::default().to_json()));
        return Ok(());
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <file> is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let tag = |t: &Tagged| t.feature_set.unwrap_or(cfg.feature_set);
    let done = |p: PathBuf| println!("{}", p.display());
    match &cli.command {
        Command::GenTicks(o) => done(commands::gen_ticks(&cfg, o.out.as_deref(), exec)?),
        Command::BuildBars(o) => done(commands::build_bars(&cfg, o.out.as_deref(), exec)?),
        Command::BuildDataset(t) => done(commands::build_dataset_cmd(&cfg, tag(t), t.out.as_deref(), exec)?),
        Command::Train { t, seed } => {
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.train.seeds.clone());
            commands::train_cmd(&cfg, tag(t), &seeds, t.out.as_deref())?
                .into_iter()
                .for_each(done);
        }
        Command::Grid(t) => done(commands::grid_cmd(&cfg, tag(t), t.out.as_deref(), exec)?),
        Command::Evaluate { t, split, seed } => {
            let seed = seed.unwrap_or(cfg.train.seeds[0]);
            done(commands::evaluate_cmd(&cfg, tag(t), *split, seed, t.out.as_deref(), exec)?)
        }
        Command::Stats { t, split } => done(commands::stats_cmd(&cfg, tag(t), *split, t.out.as_deref())?),
        Command::Report(o) => done(commands::report_cmd(&cfg, o.out.as_deref())?),
        Command::DefaultConfig => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Category::Usage.code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.threads == Some(1) { Exec::Sequential } else { Exec::Parallel };
    match with_threads(cli.threads, || dispatch(&cli, exec)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(barlab::exit::categorize(&e).code() as u8)
        }
    }
}
