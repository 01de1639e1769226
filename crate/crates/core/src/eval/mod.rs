//! Forecast evaluation: likelihood, Gaussian ablation, calibration, point
//! accuracy, conditional variance, directional accuracy, baselines and
//! target statistics.

mod plots;
mod report;

pub use plots::{hexbin, histogram, robust_range, Hexbin, Histogram, PlotData};
pub use report::{emit_report, evaluate, read_report, EvalReport, REPORT_VERSION};

use serde::{Deserialize, Serialize};

use crate::bars::neumaier;
use crate::dataset::{quantile_sorted, BarStore, Dataset, NormStats, SampleKey};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tdist::{gauss_cdf, gauss_logpdf, t_cdf, t_logpdf, GaussianParams, StudentTParams};

/// `(P99 − P1)/IQR` of the standard normal.
pub const NORMAL_TRIMMED_RANGE_RATIO: f64 = 3.449;
pub const DEFAULT_CAL_LEVELS: usize = 100;
pub const CHI_SQ_BINS: usize = 100;
pub const HIST_BINS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSample {
    pub key: SampleKey,
    /// Standardized observed target.
    pub y: f64,
    pub pred: StudentTParams,
    /// Raw close and VWAP of the last lookback bar, when known.
    pub close: Option<f64>,
    pub vwap: Option<f64>,
}

/// Pairs dataset rows with predictions and optional raw bar quantities.
pub fn eval_samples(ds: &Dataset, preds: &[StudentTParams], aux: Option<&[(f64, f64)]>) -> Result<Vec<EvalSample>> {
    if preds.len() != ds.len() || aux.is_some_and(|a| a.len() != ds.len()) {
        return Err(Error::Contract("predictions and auxiliary data must match the dataset length".into()));
    }
    Ok((0..ds.len())
        .map(|i| EvalSample {
            key: ds.keys[i],
            y: ds.y[i] as f64,
            pred: preds[i],
            close: aux.map(|a| a[i].0),
            vwap: aux.map(|a| a[i].1),
        })
        .collect())
}

/// Close and VWAP of each sample's last lookback bar.
pub fn aux_from_store(store: &BarStore, keys: &[SampleKey]) -> Result<Vec<(f64, f64)>> {
    keys.iter()
        .map(|k| {
            let day = crate::dataset::date_of_epoch_day(k.day);
            store
                .find_day(k.symbol_id, day)
                .and_then(|d| d.bars.iter().find(|b| b.minute == k.minute as u32))
                .map(|b| (b.close, b.vwap))
                .ok_or_else(|| Error::Manifest(format!("no bar for sample {k:?} in the bar store")))
        })
        .collect()
}

/// Compensated mean in slice order.
pub fn mean_of(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for &x in xs {
        neumaier(&mut s, &mut c, x);
    }
    (s + c) / xs.len() as f64
}

fn nonempty(samples: &[EvalSample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Undefined(format!("{what} of an empty evaluation set")));
    }
    Ok(())
}

pub fn nll(samples: &[EvalSample]) -> Result<f64> {
    nonempty(samples, "NLL")?;
    let terms = samples
        .iter()
        .map(|s| t_logpdf(&s.pred, s.y).map(|l| -l))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of(&terms))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub nll_t: f64,
    pub nll_gauss: f64,
    /// `nll_gauss − nll_t`.
    pub delta: f64,
}

/// Swaps every t prediction for the Gaussian with the same mean and variance.
pub fn gaussian_ablation(samples: &[EvalSample]) -> Result<Ablation> {
    let nll_t = nll(samples)?;
    let terms = samples
        .iter()
        .map(|s| gauss_logpdf(&s.pred.matched_gaussian(), s.y).map(|l| -l))
        .collect::<Result<Vec<_>>>()?;
    let nll_gauss = mean_of(&terms);
    Ok(Ablation {
        nll_t,
        nll_gauss,
        delta: nll_gauss - nll_t,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub m: usize,
    pub levels: Vec<f64>,
    pub empirical: Vec<f64>,
    pub cal_error: f64,
    pub chi_sq: f64,
}

/// Calibration from predictive CDF values `F(y_n)`: levels `j/(M+1)`,
/// empirical share of `F < p_j`, summed squared gaps, and the Pearson
/// statistic of a 100-bin histogram of `F` against the uniform.
pub fn calibration_from_cdf(f: &[f64], m: usize) -> Result<CalibrationCurve> {
    if f.is_empty() || m == 0 {
        return Err(Error::Undefined("calibration needs samples and at least one level".into()));
    }
    let mut sorted = f.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = f.len() as f64;
    let levels: Vec<f64> = (1..=m).map(|j| j as f64 / (m + 1) as f64).collect();
    let empirical: Vec<f64> = levels
        .iter()
        .map(|&p| sorted.partition_point(|&v| v < p) as f64 / n)
        .collect();
    let cal_error = levels.iter().zip(&empirical).map(|(p, q)| (p - q) * (p - q)).sum();
    let mut counts = [0u64; CHI_SQ_BINS];
    for &v in f {
        let b = ((v * CHI_SQ_BINS as f64).floor().max(0.0) as usize).min(CHI_SQ_BINS - 1);
        counts[b] += 1;
    }
    let e = n / CHI_SQ_BINS as f64;
    let chi_sq = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    Ok(CalibrationCurve {
        m,
        levels,
        empirical,
        cal_error,
        chi_sq,
    })
}

pub fn calibration(samples: &[EvalSample], m: usize) -> Result<CalibrationCurve> {
    nonempty(samples, "calibration")?;
    let f = samples.iter().map(|s| t_cdf(&s.pred, s.y)).collect::<Result<Vec<_>>>()?;
    calibration_from_cdf(&f, m)
}

/// Mean squared error and R² with the total sum of squares centered on
/// the evaluation-set mean.
pub fn mse_r2_of(y: &[f64], yhat: &[f64]) -> Result<(f64, f64)> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::Undefined("MSE needs equally sized non-empty inputs".into()));
    }
    let sq: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).collect();
    let mse = mean_of(&sq);
    let ybar = mean_of(y);
    let dev: Vec<f64> = y.iter().map(|a| (a - ybar) * (a - ybar)).collect();
    let sst = mean_of(&dev);
    if !(sst > 0.0) {
        return Err(Error::Undefined("R² of a constant target".into()));
    }
    Ok((mse, 1.0 - mse / sst))
}

pub fn mse_r2(samples: &[EvalSample]) -> Result<(f64, f64)> {
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let mu: Vec<f64> = samples.iter().map(|s| s.pred.mu).collect();
    mse_r2_of(&y, &mu)
}

/// RMSE between predicted variance and realized squared error.
pub fn cond_var_rmse(samples: &[EvalSample]) -> Result<f64> {
    nonempty(samples, "conditional-variance RMSE")?;
    let terms = samples
        .iter()
        .map(|s| {
            s.pred.validate()?;
            let e = s.y - s.pred.mu;
            Ok((s.pred.variance() - e * e).powi(2))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of(&terms).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileRow {
    pub decile: usize,
    pub count: usize,
    /// Smallest and largest |μ̂| in the decile.
    pub lo: f64,
    pub hi: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Directional {
    pub overall: f64,
    pub deciles: Vec<DecileRow>,
}

fn sign(x: f64) -> bool {
    x >= 0.0
}

/// Sign agreement overall and by decile of |μ̂|. Deciles come from a stable
/// sort, so ties keep sample order; decile k holds indices
/// `⌊kN/10⌋..⌊(k+1)N/10⌋` of the sorted order.
pub fn directional_of(mu: &[f64], y: &[f64]) -> Result<Directional> {
    if mu.is_empty() || mu.len() != y.len() {
        return Err(Error::Undefined("directional accuracy needs equally sized non-empty inputs".into()));
    }
    let hit: Vec<bool> = mu.iter().zip(y).map(|(&m, &t)| sign(m) == sign(t)).collect();
    let n = mu.len();
    let overall = hit.iter().filter(|&&h| h).count() as f64 / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mu[a].abs().total_cmp(&mu[b].abs()));
    let deciles = (0..10)
        .filter_map(|k| {
            let (lo, hi) = (k * n / 10, (k + 1) * n / 10);
            let idx = &order[lo..hi];
            let first = *idx.first()?;
            let last = *idx.last()?;
            Some(DecileRow {
                decile: k + 1,
                count: idx.len(),
                lo: mu[first].abs(),
                hi: mu[last].abs(),
                accuracy: idx.iter().filter(|&&i| hit[i]).count() as f64 / idx.len() as f64,
            })
        })
        .collect();
    Ok(Directional { overall, deciles })
}

pub fn directional(samples: &[EvalSample]) -> Result<Directional> {
    let mu: Vec<f64> = samples.iter().map(|s| s.pred.mu).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    directional_of(&mu, &y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub std_normal_nll: f64,
    pub std_normal_mse: f64,
    pub std_normal_r2: f64,
    pub std_normal_cal_error: f64,
    pub std_normal_cond_var_rmse: f64,
    /// Raw zero return mapped through the target standardization.
    pub zero_raw_mse: f64,
    /// Samples with a computable previous VWAP-to-close return.
    pub vwap_subset_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vwap_to_close_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vwap_subset_zero_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vwap_subset_zero_raw_mse: Option<f64>,
}

/// Standard-normal, zero-return and previous VWAP-to-close baselines.
pub fn baselines(samples: &[EvalSample], norm: &NormStats) -> Result<Baselines> {
    nonempty(samples, "baselines")?;
    let n01 = GaussianParams { mu: 0.0, var: 1.0 };
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let lp = y.iter().map(|&v| gauss_logpdf(&n01, v).map(|l| -l)).collect::<Result<Vec<_>>>()?;
    let f = y.iter().map(|&v| gauss_cdf(&n01, v)).collect::<Result<Vec<_>>>()?;
    let zeros = vec![0.0; y.len()];
    let (std_normal_mse, std_normal_r2) = mse_r2_of(&y, &zeros)?;
    let cv: Vec<f64> = y.iter().map(|v| (1.0 - v * v).powi(2)).collect();
    let zero_raw = norm.standardize(0.0);
    let zero_raw_mse = mean_of(&y.iter().map(|v| (v - zero_raw) * (v - zero_raw)).collect::<Vec<_>>());

    let mut ys = Vec::new();
    let mut v2c = Vec::new();
    for s in samples {
        if let (Some(c), Some(v)) = (s.close, s.vwap) {
            if c > 0.0 && v > 0.0 {
                ys.push(s.y);
                v2c.push(norm.standardize((c / v).ln()));
            }
        }
    }
    let subset_mse = |f: &[f64]| -> Option<f64> {
        let sq: Vec<f64> = ys.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).collect();
        (!ys.is_empty()).then(|| mean_of(&sq))
    };
    let vwap_to_close_mse = subset_mse(&v2c);
    let vwap_subset_zero_mse = subset_mse(&vec![0.0; ys.len()]);
    let vwap_subset_zero_raw_mse = subset_mse(&vec![zero_raw; ys.len()]);
    Ok(Baselines {
        std_normal_nll: mean_of(&lp),
        std_normal_mse,
        std_normal_r2,
        std_normal_cal_error: calibration_from_cdf(&f, DEFAULT_CAL_LEVELS)?.cal_error,
        std_normal_cond_var_rmse: mean_of(&cv).sqrt(),
        zero_raw_mse,
        vwap_subset_n: ys.len(),
        vwap_to_close_mse,
        vwap_subset_zero_mse,
        vwap_subset_zero_raw_mse,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub iqr: f64,
    pub skewness: f64,
    pub quartile_skewness: f64,
    pub excess_kurtosis: f64,
    pub quantile_excess_kurtosis: f64,
}

/// Moment and quantile summaries. Skewness and kurtosis use the adjusted
/// (sample) estimators; quantiles interpolate linearly between order
/// statistics.
pub fn target_stats(x: &[f64]) -> Result<TargetStats> {
    let n = x.len();
    if n < 100 {
        return Err(Error::Undefined(format!("target statistics need at least 100 values, got {n}")));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| quantile_sorted(&sorted, p);
    let (q1, med, q3) = (q(0.25), q(0.5), q(0.75));
    let iqr = q3 - q1;
    if !(iqr > 0.0) {
        return Err(Error::Undefined("robust statistics need a positive interquartile range".into()));
    }
    let mean = mean_of(x);
    let pw = |k: i32| mean_of(&x.iter().map(|v| (v - mean).powi(k)).collect::<Vec<_>>());
    let (m2, m3, m4) = (pw(2), pw(3), pw(4));
    let nf = n as f64;
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    Ok(TargetStats {
        n,
        mean,
        median: med,
        std: (m2 * nf / (nf - 1.0)).sqrt(),
        iqr,
        skewness: (nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1,
        quartile_skewness: (q3 + q1 - 2.0 * med) / iqr,
        excess_kurtosis: ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)),
        quantile_excess_kurtosis: (q(0.99) - q(0.01)) / iqr - NORMAL_TRIMMED_RANGE_RATIO,
    })
}

/// Per-sample terms shared by the report, computed with `exec` and
/// reduced in sample order.
pub(crate) struct Terms {
    pub nll_t: Vec<f64>,
    pub nll_gauss: Vec<f64>,
    pub cdf: Vec<f64>,
}

pub(crate) fn terms(samples: &[EvalSample], exec: Exec) -> Result<Terms> {
    let per = exec.map(samples, |s| -> Result<(f64, f64, f64)> {
        Ok((
            -t_logpdf(&s.pred, s.y)?,
            -gauss_logpdf(&s.pred.matched_gaussian(), s.y)?,
            t_cdf(&s.pred, s.y)?,
        ))
    });
    let mut t = Terms {
        nll_t: Vec::with_capacity(samples.len()),
        nll_gauss: Vec::with_capacity(samples.len()),
        cdf: Vec::with_capacity(samples.len()),
    };
    for r in per {
        let (a, b, c) = r?;
        t.nll_t.push(a);
        t.nll_gauss.push(b);
        t.cdf.push(c);
    }
    Ok(t)
}
