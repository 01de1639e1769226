//! The evaluation report and its files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plots::{plot_data, Hexbin, PlotData};
use super::{
    baselines, calibration_from_cdf, directional, mean_of, mse_r2, target_stats, terms, Baselines, CalibrationCurve,
    DecileRow, EvalSample, TargetStats, DEFAULT_CAL_LEVELS,
};
use crate::dataset::{NormStats, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::FeatureSetTag;
use crate::io_util::{read_json, write_atomic, write_json};

pub const REPORT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u16,
    pub run: String,
    pub feature_set: FeatureSetTag,
    pub split: Split,
    pub n: usize,
    pub nll: f64,
    pub nll_gauss_ablation: f64,
    pub ablation_delta: f64,
    pub calibration: CalibrationCurve,
    pub mse: f64,
    pub r2: f64,
    pub cond_var_rmse: f64,
    pub directional_overall: f64,
    pub deciles: Vec<DecileRow>,
    pub baselines: Baselines,
    pub target_stats: TargetStats,
}

impl EvalReport {
    /// Every scalar in the report, by dotted name.
    pub fn scalars(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        flatten("", &serde_json::to_value(self).expect("report serializes"), &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, f64)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        serde_json::Value::Number(n) => out.push((prefix.to_string(), n.as_f64().expect("finite number"))),
        serde_json::Value::Object(m) => m.iter().for_each(|(k, x)| flatten(&join(k), x, out)),
        serde_json::Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| flatten(&join(&i.to_string()), x, out)),
        _ => {}
    }
}

fn null_fields(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        serde_json::Value::Null => out.push(prefix.to_string()),
        serde_json::Value::Object(m) => m.iter().for_each(|(k, x)| null_fields(&join(k), x, out)),
        serde_json::Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| null_fields(&join(&i.to_string()), x, out)),
        _ => {}
    }
}

/// Computes every metric of one split. Per-sample terms run on `exec`;
/// all reductions are sequential in sample order.
pub fn evaluate(
    samples: &[EvalSample],
    norm: &NormStats,
    tag: FeatureSetTag,
    split: Split,
    run: &str,
    exec: Exec,
) -> Result<(EvalReport, PlotData)> {
    if samples.is_empty() {
        return Err(Error::Undefined("evaluation set is empty".into()));
    }
    let t = terms(samples, exec)?;
    let nll = mean_of(&t.nll_t);
    let nll_gauss = mean_of(&t.nll_gauss);
    let calibration = calibration_from_cdf(&t.cdf, DEFAULT_CAL_LEVELS)?;
    let (mse, r2) = mse_r2(samples)?;
    let cond_var_rmse = super::cond_var_rmse(samples)?;
    let dir = directional(samples)?;
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let report = EvalReport {
        schema_version: REPORT_VERSION,
        run: run.to_string(),
        feature_set: tag,
        split,
        n: samples.len(),
        nll,
        nll_gauss_ablation: nll_gauss,
        ablation_delta: nll_gauss - nll,
        calibration,
        mse,
        r2,
        cond_var_rmse,
        directional_overall: dir.overall,
        deciles: dir.deciles,
        baselines: baselines(samples, norm)?,
        target_stats: target_stats(&y)?,
    };
    // non-finite floats serialize as null
    let mut nulls = Vec::new();
    null_fields("", &serde_json::to_value(&report)?, &mut nulls);
    if let Some(k) = nulls.first() {
        return Err(Error::NonFinite(format!("report field {k} is not finite")));
    }
    Ok((report, plot_data(samples)))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    read_json(path)
}

fn write_hexbin(path: &Path, h: &Hexbin, xname: &str, yname: &str) -> Result<()> {
    write_atomic(path, |f| {
        writeln!(f, "{xname}_lo,{xname}_hi,{yname}_lo,{yname}_hi,count")?;
        let wx = (h.x_range.1 - h.x_range.0) / h.n as f64;
        let wy = (h.y_range.1 - h.y_range.0) / h.n as f64;
        for i in 0..h.n {
            for j in 0..h.n {
                let (x0, y0) = (h.x_range.0 + i as f64 * wx, h.y_range.0 + j as f64 * wy);
                writeln!(f, "{},{},{},{},{}", x0, x0 + wx, y0, y0 + wy, h.counts[i * h.n + j])?;
            }
        }
        Ok(())
    })
}

/// Writes `report.json` and the CSV plot data into `dir`.
pub fn emit_report(dir: &Path, report: &EvalReport, plots: &PlotData) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = |n: &str| dir.join(n);
    write_json(&p("report.json"), report)?;
    let c = &report.calibration;
    write_atomic(&p("calibration.csv"), |f| {
        writeln!(f, "level,empirical")?;
        for (a, b) in c.levels.iter().zip(&c.empirical) {
            writeln!(f, "{a},{b}")?;
        }
        Ok(())
    })?;
    write_atomic(&p("deciles.csv"), |f| {
        writeln!(f, "decile,count,abs_mu_lo,abs_mu_hi,accuracy")?;
        for r in &report.deciles {
            writeln!(f, "{},{},{},{},{}", r.decile, r.count, r.lo, r.hi, r.accuracy)?;
        }
        Ok(())
    })?;
    let h = &plots.target_hist;
    write_atomic(&p("target_hist.csv"), |f| {
        writeln!(f, "bin_lo,bin_hi,count,density")?;
        for i in 0..h.counts.len() {
            let (a, b) = h.edges(i);
            writeln!(f, "{a},{b},{},{}", h.counts[i], h.density(i))?;
        }
        Ok(())
    })?;
    write_hexbin(&p("mean_hexbin.csv"), &plots.mean_hexbin, "observed", "predicted_mean")?;
    let (vp, vr) = (&plots.log_var_pred, &plots.log_var_realized);
    write_atomic(&p("var_density.csv"), |f| {
        writeln!(f, "log_var_lo,log_var_hi,predicted_density,realized_density")?;
        for i in 0..vp.counts.len() {
            let (a, b) = vp.edges(i);
            writeln!(f, "{a},{b},{},{}", vp.density(i), vr.density(i))?;
        }
        Ok(())
    })?;
    write_hexbin(&p("var_hexbin.csv"), &plots.var_hexbin, "log_predicted_var", "log_realized_var")?;
    Ok([
        "report.json",
        "calibration.csv",
        "deciles.csv",
        "target_hist.csv",
        "mean_hexbin.csv",
        "var_density.csv",
        "var_hexbin.csv",
    ]
    .iter()
    .map(|n| p(n))
    .collect())
}
