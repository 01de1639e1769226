//! Run configuration and output-directory fingerprints.

use std::path::{Path, PathBuf};

use barlab_core::bars::BarBuildConfig;
use barlab_core::dataset::SplitSpec;
use barlab_core::features::FeatureSetTag;
use barlab_core::ingest::{SessionSpec, SynthConfig};
use barlab_core::io_util::{fingerprint, write_bytes_atomic};
use barlab_core::model::{GridSpec, TrainConfig};
use barlab_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const FINGERPRINT: &str = "effective_config.sha256";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub ticks: PathBuf,
    pub bars: PathBuf,
    pub datasets: PathBuf,
    pub runs: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            ticks: "out/ticks".into(),
            bars: "out/bars".into(),
            datasets: "out/datasets".into(),
            runs: "out/runs".into(),
            reports: "out/reports".into(),
        }
    }
}

impl Paths {
    fn all(&self) -> [(&'static str, &PathBuf); 5] {
        [
            ("ticks", &self.ticks),
            ("bars", &self.bars),
            ("datasets", &self.datasets),
            ("runs", &self.runs),
            ("reports", &self.reports),
        ]
    }
}

/// Every top-level key is required; nested sections fill omitted fields
/// with their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub session: SessionSpec,
    pub synth: SynthConfig,
    pub splits: SplitSpec,
    pub bar_build: BarBuildConfig,
    pub feature_set: FeatureSetTag,
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: GridSpec,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            session: SessionSpec::default(),
            synth: SynthConfig::default(),
            splits: SplitSpec::default(),
            bar_build: BarBuildConfig::default(),
            feature_set: FeatureSetTag::Full,
            train: TrainConfig::default(),
            grid: GridSpec::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{} line {}: {e}", path.display(), e.line())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.ticks,
            &mut cfg.paths.bars,
            &mut cfg.paths.datasets,
            &mut cfg.paths.runs,
            &mut cfg.paths.reports,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Propagates the session into dependent sections and validates.
    pub fn finish(&mut self) -> Result<()> {
        self.bar_build.session = self.session.clone();
        self.session.validate()?;
        self.synth.validate(&self.session)?;
        self.splits.validate()?;
        self.train.validate()?;
        let all = self.paths.all();
        for (i, (a, pa)) in all.iter().enumerate() {
            for (b, pb) in &all[i + 1..] {
                if pa == pb {
                    return Err(Error::Config(format!("paths.{a} and paths.{b} must differ")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("config serializes");
        v.push(b'\n');
        v
    }
}

/// Writes the effective config and its content hash into `dir`.
pub fn stamp(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let json = cfg.to_json();
    write_bytes_atomic(&dir.join(EFFECTIVE_CONFIG), &json)?;
    write_bytes_atomic(&dir.join(FINGERPRINT), format!("{}\n", fingerprint(&json)).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let mut c = RunConfig::default();
        c.finish().unwrap();
        let back: RunConfig = serde_json::from_slice(&c.to_json()).unwrap();
        assert_eq!(back.paths, c.paths);
        assert_eq!(back.train, c.train);
    }

    #[test]
    fn missing_top_level_key_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&RunConfig::default().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("splits");
        let p = dir.path().join("c.json");
        std::fs::write(&p, serde_json::to_vec(&v).unwrap()).unwrap();
        match RunConfig::load(&p) {
            Err(Error::Config(m)) => assert!(m.contains("splits"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn paths_resolve_against_config_dir_and_must_differ() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, RunConfig::default().to_json()).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.paths.bars, dir.path().join("out/bars"));
        let mut bad = RunConfig::default();
        bad.paths.runs = bad.paths.reports.clone();
        assert!(matches!(bad.finish(), Err(Error::Config(_))));
    }
}
