mod common;

use std::fs;

use barlab::config::{RunConfig, EFFECTIVE_CONFIG, FINGERPRINT};
use barlab_core::eval::read_report;
use common::{barlab, full_pipeline, ok, small_config, write_config};
use proptest::prelude::*;

#[test]
fn default_config_parses_back() {
    let out = ok(&["default-config"]);
    let c: RunConfig = serde_json::from_str(&out).unwrap();
    assert_eq!(c, RunConfig::default());
}

#[test]
fn usage_errors_exit_with_two() {
    let o = barlab(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    let o = barlab(&["train", "--feature-set", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_config_error() {
    let o = barlab(&["gen-ticks"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, b"{\"session\": {}, \"surprise\": 1}").unwrap();
    let o = barlab(&["--config", p.to_str().unwrap(), "gen-ticks"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn off_grid_learning_rate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.train.learning_rate = 3e-4;
    let p = write_config(dir.path(), &c);
    let o = barlab(&["--config", p.to_str().unwrap(), "gen-ticks"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_writes_every_artifact_and_checks_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config(dir.path());
    let p = write_config(dir.path(), &c);
    full_pipeline(&p, "1");
    let cfg = p.to_str().unwrap();

    for d in ["ticks", "bars", "datasets", "runs"] {
        let d = dir.path().join(d);
        assert!(d.join(EFFECTIVE_CONFIG).is_file() && d.join(FINGERPRINT).is_file(), "{}", d.display());
    }
    for f in ["full-seed1.manifest.json", "full-seed1.weights.bin", "full-seed1.log.csv"] {
        assert!(dir.path().join("runs").join(f).is_file(), "{f}");
    }
    let rep = dir.path().join("reports/full-seed1-test");
    for f in ["report.json", "calibration.csv", "deciles.csv", "target_hist.csv", "mean_hexbin.csv", "var_density.csv", "var_hexbin.csv"] {
        assert!(rep.join(f).is_file(), "{f}");
    }
    let r = read_report(&rep.join("report.json")).unwrap();
    assert!(r.n > 100 && r.nll.is_finite());

    ok(&["--config", cfg, "stats", "--feature-set", "full", "--split", "train"]);
    assert!(dir.path().join("reports/stats-train/target_stats.json").is_file());
    ok(&["--config", cfg, "report"]);
    let summary = fs::read_to_string(dir.path().join("reports/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2, "{summary}");

    // a checkpoint presented under another feature set's name is refused
    ok(&["--config", cfg, "build-dataset", "--feature-set", "basic"]);
    let runs = dir.path().join("runs");
    for ext in ["manifest.json", "weights.bin"] {
        fs::copy(runs.join(format!("full-seed1.{ext}")), runs.join(format!("basic-seed1.{ext}"))).unwrap();
    }
    let o = barlab(&["--config", cfg, "evaluate", "--feature-set", "basic", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[manifest]"));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), &small_config(dir.path()));
    let o = barlab(&["--config", p.to_str().unwrap(), "train", "--feature-set", "full"]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn config_json_round_trips(symbols in 1u32..50, days in 1u32..60, seed in any::<u64>(), alpha in 0.0..1.0f64, vol in 1e-5..1e-2f64) {
        let mut c = RunConfig::default();
        c.synth.symbols = symbols;
        c.synth.days = days;
        c.synth.seed = seed;
        c.synth.alpha_td = alpha;
        c.synth.minute_vol = vol;
        let back: RunConfig = serde_json::from_slice(&c.to_json()).unwrap();
        prop_assert_eq!(back, c);
    }
}
