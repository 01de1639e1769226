//! Binned data behind the distribution, mean and variance plots.

use super::EvalSample;
use crate::dataset::quantile_sorted;

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Values outside `[lo, hi]`, not counted in any bin.
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = self.width();
        (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w)
    }

    /// Density normalized by the total count, outliers included.
    pub fn density(&self, i: usize) -> f64 {
        let n = self.counts.iter().sum::<u64>() + self.below + self.above;
        self.counts[i] as f64 / (n as f64 * self.width())
    }
}

fn bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    (((v - lo) / (hi - lo) * n as f64).floor().max(0.0) as usize).min(n - 1)
}

pub fn histogram(x: &[f64], bins: usize, lo: f64, hi: f64) -> Histogram {
    let mut h = Histogram {
        lo,
        hi,
        counts: vec![0; bins],
        below: 0,
        above: 0,
    };
    for &v in x {
        if v < lo {
            h.below += 1;
        } else if v > hi {
            h.above += 1;
        } else {
            h.counts[bin(v, lo, hi, bins)] += 1;
        }
    }
    h
}

/// Rectangular 2-D counts; points outside the ranges land in the edge cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Hexbin {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub n: usize,
    /// `n × n`, row-major by x bin.
    pub counts: Vec<u64>,
}

pub fn hexbin(x: &[f64], y: &[f64], n: usize, x_range: (f64, f64), y_range: (f64, f64)) -> Hexbin {
    let mut counts = vec![0; n * n];
    for (&a, &b) in x.iter().zip(y) {
        let i = bin(a, x_range.0, x_range.1, n);
        let j = bin(b, y_range.0, y_range.1, n);
        counts[i * n + j] += 1;
    }
    Hexbin {
        x_range,
        y_range,
        n,
        counts,
    }
}

/// `[P(tail), P(1 − tail)]` of the finite values, widened when degenerate.
pub fn robust_range(x: &[f64], tail: f64) -> (f64, f64) {
    let mut s: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
    if s.is_empty() {
        return (-0.5, 0.5);
    }
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub const HEXBIN_GRID: usize = 64;
const VAR_BINS: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub target_hist: Histogram,
    pub mean_hexbin: Hexbin,
    pub log_var_pred: Histogram,
    pub log_var_realized: Histogram,
    pub var_hexbin: Hexbin,
}

/// Smallest positive squared error used before taking logs.
const SQ_ERR_FLOOR: f64 = 1e-300;

pub(crate) fn plot_data(samples: &[EvalSample]) -> PlotData {
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let mu: Vec<f64> = samples.iter().map(|s| s.pred.mu).collect();
    let lvp: Vec<f64> = samples.iter().map(|s| s.pred.variance().ln()).collect();
    let lvr: Vec<f64> = samples
        .iter()
        .map(|s| (s.y - s.pred.mu).powi(2).max(SQ_ERR_FLOOR).ln())
        .collect();
    let (tlo, thi) = robust_range(&y, 0.001);
    let yr = robust_range(&y, 0.005);
    let mr = robust_range(&mu, 0.005);
    let pr = robust_range(&lvp, 0.005);
    let rr = robust_range(&lvr, 0.005);
    let vr = (pr.0.min(rr.0), pr.1.max(rr.1));
    PlotData {
        target_hist: histogram(&y, super::HIST_BINS, tlo, thi),
        mean_hexbin: hexbin(&y, &mu, HEXBIN_GRID, yr, mr),
        log_var_pred: histogram(&lvp, VAR_BINS, vr.0, vr.1),
        log_var_realized: histogram(&lvr, VAR_BINS, vr.0, vr.1),
        var_hexbin: hexbin(&lvp, &lvr, HEXBIN_GRID, pr, rr),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hexbin_conserves_counts() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let y: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.11).cos()).collect();
        let h = hexbin(&x, &y, 64, (-1.0, 1.0), (-0.5, 0.5));
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        assert_eq!(h.counts.len(), 64 * 64);
    }

    #[test]
    fn histogram_density_integrates_to_inside_share() {
        let x: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let h = histogram(&x, 10, 0.0, 0.5);
        let mass: f64 = (0..10).map(|i| h.density(i) * h.width()).sum();
        assert!((mass - (1000 - h.above) as f64 / 1000.0).abs() < 1e-12);
        assert_eq!(h.edges(0), (0.0, 0.05));
    }
}
