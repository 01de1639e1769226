//! One function per subcommand.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use barlab_core::bars::build_bar_dir;
use barlab_core::dataset::{build_dataset, read_split, BarStore, Split};
use barlab_core::eval::{
    aux_from_store, emit_report, eval_samples, evaluate, histogram, read_report, robust_range, target_stats,
    EvalReport, HIST_BINS,
};
use barlab_core::exec::Exec;
use barlab_core::experiment::mean_se;
use barlab_core::features::FeatureSetTag;
use barlab_core::ingest::generate_ticks;
use barlab_core::io_util::{write_atomic, write_json};
use barlab_core::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use barlab_core::model::train::{predict_dataset, write_train_log};
use barlab_core::model::{grid_search, train};
use barlab_core::{Error, Result};
use serde::Serialize;

use crate::config::{stamp, RunConfig};

pub fn run_name(tag: FeatureSetTag, seed: u64) -> String {
    format!("{tag}-seed{seed}")
}

pub fn gen_ticks(cfg: &RunConfig, out: Option<&Path>, exec: Exec) -> Result<PathBuf> {
    let dir = out.unwrap_or(&cfg.paths.ticks).to_path_buf();
    let files = generate_ticks(&cfg.synth, &cfg.session, &dir, exec)?;
    stamp(&dir, cfg)?;
    log::info!("wrote {} tick files to {}", files.len(), dir.display());
    Ok(dir)
}

pub fn build_bars(cfg: &RunConfig, out: Option<&Path>, exec: Exec) -> Result<PathBuf> {
    let dir = out.unwrap_or(&cfg.paths.bars).to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let files = build_bar_dir(&cfg.paths.ticks, &dir, &cfg.bar_build, exec)?;
    stamp(&dir, cfg)?;
    log::info!("wrote {} bar files to {}", files.len(), dir.display());
    Ok(dir)
}

pub fn build_dataset_cmd(cfg: &RunConfig, tag: FeatureSetTag, out: Option<&Path>, exec: Exec) -> Result<PathBuf> {
    let dir = out.unwrap_or(&cfg.paths.datasets).to_path_buf();
    let s = build_dataset(&cfg.paths.bars, &cfg.splits, &cfg.session, &[tag], &dir, exec)?;
    stamp(&dir, cfg)?;
    log::info!("{tag}: samples {:?}, rejected {:?}", s.counts, s.rejects);
    Ok(dir)
}

pub fn train_cmd(cfg: &RunConfig, tag: FeatureSetTag, seeds: &[u64], out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let dir = out.unwrap_or(&cfg.paths.runs).to_path_buf();
    let (tr, meta) = read_split(&cfg.paths.datasets, tag, Split::Train)?;
    let (va, _) = read_split(&cfg.paths.datasets, tag, Split::Valid)?;
    let dropout = cfg.train.dropout_for(tag);
    let mut written = Vec::new();
    for &seed in seeds {
        let o = train(&tr, &va, &cfg.train, dropout, seed)?;
        let run = run_name(tag, seed);
        let ckpt = Checkpoint::new(
            &run,
            o.model,
            &meta,
            seed,
            cfg.train.learning_rate,
            cfg.train.weight_decay,
            o.best_epoch,
            o.best_valid_nll,
        );
        save_checkpoint(&dir, &ckpt)?;
        let log_path = dir.join(format!("{run}.log.csv"));
        write_train_log(&log_path, &o.log)?;
        log::info!("{run}: best validation NLL {:.6} at epoch {}", o.best_valid_nll, o.best_epoch);
        written.push(dir.join(format!("{run}.manifest.json")));
    }
    stamp(&dir, cfg)?;
    Ok(written)
}

pub fn grid_cmd(cfg: &RunConfig, tag: FeatureSetTag, out: Option<&Path>, exec: Exec) -> Result<PathBuf> {
    let dir = out.unwrap_or(&cfg.paths.runs).to_path_buf();
    let (tr, _) = read_split(&cfg.paths.datasets, tag, Split::Train)?;
    let (va, _) = read_split(&cfg.paths.datasets, tag, Split::Valid)?;
    let result = grid_search(&tr, &va, &cfg.train, &cfg.grid, exec)?;
    let path = dir.join(format!("{tag}.grid.json"));
    write_json(&path, &result)?;
    let w = &result.winner;
    log::info!(
        "{tag}: winner dropout {} weight decay {} learning rate {} (mean validation NLL {:?})",
        w.dropout,
        w.weight_decay,
        w.learning_rate,
        w.mean_nll
    );
    stamp(&dir, cfg)?;
    Ok(path)
}

pub fn evaluate_cmd(cfg: &RunConfig, tag: FeatureSetTag, split: Split, seed: u64, out: Option<&Path>, exec: Exec) -> Result<PathBuf> {
    let run = run_name(tag, seed);
    let ckpt = load_checkpoint(&cfg.paths.runs, &run)?;
    let (ds, meta) = read_split(&cfg.paths.datasets, tag, split)?;
    ckpt.validate_against(&meta)?;
    let preds = predict_dataset(&ckpt.model, &ds, cfg.train.eval_batch)?;
    let aux = if cfg.paths.bars.is_dir() {
        Some(aux_from_store(&BarStore::from_dir(&cfg.paths.bars, exec)?, &ds.keys)?)
    } else {
        log::warn!("no bar directory at {}; skipping the VWAP-to-close baseline", cfg.paths.bars.display());
        None
    };
    let samples = eval_samples(&ds, &preds, aux.as_deref())?;
    let (report, plots) = evaluate(&samples, &meta.norm, tag, split, &run, exec)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.reports.join(format!("{run}-{split}")));
    emit_report(&dir, &report, &plots)?;
    stamp(&dir, cfg)?;
    log::info!("{run} on {split}: NLL {:.6}, directional accuracy {:.4}", report.nll, report.directional_overall);
    Ok(dir)
}

pub fn stats_cmd(cfg: &RunConfig, tag: FeatureSetTag, split: Split, out: Option<&Path>) -> Result<PathBuf> {
    let (ds, _) = read_split(&cfg.paths.datasets, tag, split)?;
    let y: Vec<f64> = ds.y.iter().map(|&v| v as f64).collect();
    let stats = target_stats(&y)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.reports.join(format!("stats-{split}")));
    write_json(&dir.join("target_stats.json"), &stats)?;
    let (lo, hi) = robust_range(&y, 0.001);
    let h = histogram(&y, HIST_BINS, lo, hi);
    write_atomic(&dir.join("target_hist.csv"), |f| {
        writeln!(f, "bin_lo,bin_hi,count,density")?;
        for i in 0..h.counts.len() {
            let (a, b) = h.edges(i);
            writeln!(f, "{a},{b},{},{}", h.counts[i], h.density(i))?;
        }
        Ok(())
    })?;
    stamp(&dir, cfg)?;
    Ok(dir)
}

#[derive(Debug, Serialize)]
pub struct SummaryRow {
    pub feature_set: FeatureSetTag,
    pub split: Split,
    pub runs: Vec<String>,
    pub nll_mean: f64,
    pub nll_se: f64,
    pub ablation_delta_mean: f64,
    pub cal_error_x100_mean: f64,
    pub r2_mean: f64,
    pub directional_mean: f64,
    pub baseline_nll: f64,
}

/// Collects every `report.json` below the reports directory into per
/// (feature set, split) seed averages.
pub fn report_cmd(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let root = &cfg.paths.reports;
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::Io { path: root.clone(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("report.json").is_file())
        .collect();
    dirs.sort();
    let mut groups: BTreeMap<(FeatureSetTag, Split), Vec<EvalReport>> = BTreeMap::new();
    for d in &dirs {
        let r = read_report(&d.join("report.json"))?;
        groups.entry((r.feature_set, r.split)).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::Config(format!("no report.json found under {}", root.display())));
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((feature_set, split), rs)| {
            let (nll_mean, nll_se) = mean_se(&rs.iter().map(|r| r.nll).collect::<Vec<_>>());
            SummaryRow {
                feature_set,
                split,
                runs: rs.iter().map(|r| r.run.clone()).collect(),
                nll_mean,
                nll_se,
                ablation_delta_mean: mean(rs.iter().map(|r| r.ablation_delta).collect()),
                cal_error_x100_mean: mean(rs.iter().map(|r| 100.0 * r.calibration.cal_error).collect()),
                r2_mean: mean(rs.iter().map(|r| r.r2).collect()),
                directional_mean: mean(rs.iter().map(|r| r.directional_overall).collect()),
                baseline_nll: mean(rs.iter().map(|r| r.baselines.std_normal_nll).collect()),
            }
        })
        .collect();
    let dir = out.unwrap_or(root).to_path_buf();
    write_json(&dir.join("summary.json"), &rows)?;
    write_atomic(&dir.join("summary.csv"), |f| {
        writeln!(
            f,
            "feature_set,split,seeds,nll_mean,nll_se,ablation_delta,cal_error_x100,r2,directional,baseline_nll"
        )?;
        for r in &rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                r.feature_set,
                r.split,
                r.runs.len(),
                r.nll_mean,
                r.nll_se,
                r.ablation_delta_mean,
                r.cal_error_x100_mean,
                r.r2_mean,
                r.directional_mean,
                r.baseline_nll
            )?;
        }
        Ok(())
    })?;
    stamp(&dir, cfg)?;
    Ok(dir)
}
