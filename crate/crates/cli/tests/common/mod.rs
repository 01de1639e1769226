#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use barlab::config::RunConfig;
use barlab_core::dataset::{DateRange, SplitSpec};
use chrono::NaiveDate;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

/// Two symbols over ten trading days with a tiny network: every stage
/// runs, in seconds.
pub fn small_config(root: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.synth.symbols = 2;
    c.synth.days = 10;
    c.splits = SplitSpec {
        train: DateRange { start: date(2021, 1, 4), end: date(2021, 1, 13) },
        valid: DateRange { start: date(2021, 1, 13), end: date(2021, 1, 14) },
        test: DateRange { start: date(2021, 1, 14), end: date(2021, 1, 16) },
    };
    c.train.hidden = 16;
    c.train.blocks = 1;
    c.train.batch_size = 128;
    c.train.epochs = 2;
    c.train.batches_per_epoch = 4;
    c.train.seeds = vec![1];
    c.train.learning_rate = 1e-3;
    c.paths.ticks = root.join("ticks");
    c.paths.bars = root.join("bars");
    c.paths.datasets = root.join("datasets");
    c.paths.runs = root.join("runs");
    c.paths.reports = root.join("reports");
    c
}

pub fn write_config(root: &Path, c: &RunConfig) -> PathBuf {
    std::fs::create_dir_all(root).unwrap();
    let p = root.join("config.json");
    std::fs::write(&p, c.to_json()).unwrap();
    p
}

pub fn barlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_barlab"))
        .args(args)
        .env_remove("BARLAB_THREADS")
        .output()
        .expect("binary runs")
}

/// Runs one subcommand and panics with its stderr on failure.
pub fn ok(args: &[&str]) -> String {
    let o = barlab(args);
    assert!(
        o.status.success(),
        "barlab {args:?} failed with {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Every stage for the full feature set, seed 1, evaluated on the test split.
pub fn full_pipeline(config: &Path, threads: &str) {
    let c = config.to_str().unwrap();
    for cmd in [
        vec!["gen-ticks"],
        vec!["build-bars"],
        vec!["build-dataset", "--feature-set", "full"],
        vec!["train", "--feature-set", "full", "--seed", "1"],
        vec!["evaluate", "--feature-set", "full", "--seed", "1", "--split", "test"],
    ] {
        let mut args = vec!["--config", c, "--threads", threads];
        args.extend(cmd);
        ok(&args);
    }
}
