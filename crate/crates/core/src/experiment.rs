//! Feature-set comparison: every feature set trained on the same data for
//! each seed, then evaluated on a held-out split.

use serde::{Deserialize, Serialize};

use crate::bars::BarBuildConfig;
use crate::dataset::{Split, SplitSpec};
use crate::error::Result;
use crate::eval::{aux_from_store, eval_samples, evaluate, EvalReport};
use crate::exec::Exec;
use crate::features::FeatureSetTag;
use crate::ingest::SynthConfig;
use crate::model::train::predict_dataset;
use crate::model::{train, TrainConfig};
use crate::pipeline::{prepare, Prepared};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub bar_build: BarBuildConfig,
    pub splits: SplitSpec,
    pub train: TrainConfig,
    pub feature_sets: Vec<FeatureSetTag>,
    /// Split the trained models are evaluated on.
    pub eval_split: Split,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            bar_build: BarBuildConfig::default(),
            splits: SplitSpec::default(),
            train: TrainConfig::default(),
            feature_sets: FeatureSetTag::ALL.to_vec(),
            eval_split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_valid_nll: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetResult {
    pub feature_set: FeatureSetTag,
    pub runs: Vec<SeedRun>,
    pub mean_valid_nll: f64,
    /// Across-seed standard error of the validation NLL.
    pub se_valid_nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub samples: [usize; 3],
    pub results: Vec<FeatureSetResult>,
}

impl ExperimentResult {
    pub fn get(&self, tag: FeatureSetTag) -> Option<&FeatureSetResult> {
        self.results.iter().find(|r| r.feature_set == tag)
    }
}

/// Mean and standard error (sample standard deviation over √n).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn run_on(p: &Prepared, cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentResult> {
    cfg.train.validate()?;
    let aux = aux_from_store(
        &p.store,
        &p.samples.split(cfg.eval_split).iter().map(|r| r.key).collect::<Vec<_>>(),
    )?;
    let mut results = Vec::new();
    for &tag in &cfg.feature_sets {
        let tr = p.dataset(tag, Split::Train, exec)?;
        let va = p.dataset(tag, Split::Valid, exec)?;
        let ev = p.dataset(tag, cfg.eval_split, exec)?;
        let dropout = cfg.train.dropout_for(tag);
        let mut runs = Vec::new();
        for &seed in &cfg.train.seeds {
            let o = train(&tr, &va, &cfg.train, dropout, seed)?;
            log::info!("{tag} seed {seed}: best validation NLL {:.6} at epoch {}", o.best_valid_nll, o.best_epoch);
            let preds = predict_dataset(&o.model, &ev, cfg.train.eval_batch)?;
            let samples = eval_samples(&ev, &preds, Some(&aux))?;
            let run = format!("{tag}-seed{seed}");
            let (report, _) = evaluate(&samples, &p.samples.norm, tag, cfg.eval_split, &run, exec)?;
            runs.push(SeedRun {
                seed,
                best_epoch: o.best_epoch,
                best_valid_nll: o.best_valid_nll,
                report,
            });
        }
        let (mean_valid_nll, se_valid_nll) = mean_se(&runs.iter().map(|r| r.best_valid_nll).collect::<Vec<_>>());
        results.push(FeatureSetResult {
            feature_set: tag,
            runs,
            mean_valid_nll,
            se_valid_nll,
        });
    }
    Ok(ExperimentResult {
        samples: [p.samples.train.len(), p.samples.valid.len(), p.samples.test.len()],
        results,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentResult> {
    let p = prepare(&cfg.synth, &cfg.bar_build, &cfg.splits, exec)?;
    run_on(&p, cfg, exec)
}
