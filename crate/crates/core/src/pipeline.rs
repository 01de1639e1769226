//! In-memory end-to-end pipeline: synthetic ticks to bars to datasets,
//! without touching the filesystem.

use crate::bars::{build_bars, Bar, BarBuildConfig};
use crate::dataset::{build_samples, materialize, BarStore, Dataset, Samples, Split, SplitSpec};
use crate::error::Result;
use crate::exec::Exec;
use crate::features::FeatureSetTag;
use crate::ingest::{generate_partition, SessionSpec, SynthConfig};

/// Bars of every synthetic partition, in (symbol, day) order.
pub fn synth_bars(cfg: &SynthConfig, bar_cfg: &BarBuildConfig, exec: Exec) -> Result<Vec<Bar>> {
    let session = &bar_cfg.session;
    cfg.validate(session)?;
    session.validate()?;
    let curve = cfg.curve(session);
    let days = cfg.trading_days();
    let parts: Vec<(u32, u32)> = (0..cfg.symbols)
        .flat_map(|s| (0..cfg.days).map(move |d| (s, d)))
        .collect();
    let bars = exec.try_map(&parts, |&(s, d)| {
        let ticks = generate_partition(cfg, session, &curve, s, d, days[d as usize]);
        build_bars(&ticks, bar_cfg)
    })?;
    Ok(bars.into_iter().flatten().collect())
}

/// Bars grouped for windowing, plus the accepted samples of every split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub store: BarStore,
    pub samples: Samples,
    pub session: SessionSpec,
}

impl Prepared {
    pub fn dataset(&self, tag: FeatureSetTag, split: Split, exec: Exec) -> Result<Dataset> {
        materialize(&self.store, self.samples.split(split), tag, &self.samples.norm, &self.session, exec)
    }
}

pub fn prepare(cfg: &SynthConfig, bar_cfg: &BarBuildConfig, splits: &SplitSpec, exec: Exec) -> Result<Prepared> {
    let store = BarStore::from_bars(synth_bars(cfg, bar_cfg, exec)?)?;
    let samples = build_samples(&store, splits, &bar_cfg.session, exec)?;
    Ok(Prepared {
        store,
        samples,
        session: bar_cfg.session.clone(),
    })
}
