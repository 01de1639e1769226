use barlab_core::bars::{Bar, BarBuildConfig};
use barlab_core::exec::Exec;
use barlab_core::features::timing_features;
use barlab_core::ingest::{SessionSpec, SynthConfig};
use barlab_core::pipeline::synth_bars;

struct Fit {
    slope: f64,
    t_stat: f64,
    n: usize,
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..k {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..k {
                    a[r][j] -= f * a[c][j];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..k).map(|i| b[i] / a[i][i]).collect()
}

fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = a.len();
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|j| solve(a.to_vec(), (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect()))
        .collect();
    (0..k).map(|i| (0..k).map(|j| cols[j][i]).collect()).collect()
}

/// OLS with heteroskedasticity-robust (HC0) standard errors; returns the
/// coefficient of regressor 1.
fn ols(x: &[Vec<f64>], y: &[f64]) -> Fit {
    let k = x[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, &v) in x.iter().zip(y) {
        for i in 0..k {
            xty[i] += row[i] * v;
            for j in 0..k {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let beta = solve(xtx.clone(), xty);
    let inv = inverse(&xtx);
    let mut meat = vec![vec![0.0; k]; k];
    for (row, &v) in x.iter().zip(y) {
        let e = v - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..k {
            for j in 0..k {
                meat[i][j] += e * e * row[i] * row[j];
            }
        }
    }
    let var11: f64 = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| inv[1][i] * meat[i][j] * inv[j][1])
        .sum();
    Fit {
        slope: beta[1],
        t_stat: beta[1] / var11.sqrt(),
        n: y.len(),
    }
}

/// Regresses the next VWAP log return on timeDiff, controlling for the
/// bar return, close fraction, log volume and close-over-VWAP. Returns are
/// scaled by each partition's realized volatility.
fn timing_slope(alpha_td: f64) -> Fit {
    let cfg = SynthConfig {
        symbols: 12,
        days: 25,
        alpha_td,
        ..SynthConfig::default()
    };
    let session = SessionSpec::default();
    let bar_cfg = BarBuildConfig {
        session: session.clone(),
        ..BarBuildConfig::default()
    };
    let bars = synth_bars(&cfg, &bar_cfg, Exec::Parallel).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let mut start = 0;
    while start < bars.len() {
        let same = |b: &Bar| b.symbol == bars[start].symbol && b.day == bars[start].day;
        let end = start + bars[start..].iter().take_while(|b| same(b)).count();
        let part = &bars[start..end];
        let rets: Vec<f64> = part.windows(2).map(|w| (w[1].vwap / w[0].vwap).ln()).collect();
        let m = rets.iter().sum::<f64>() / rets.len() as f64;
        let scale = (rets.iter().map(|r| (r - m).powi(2)).sum::<f64>() / rets.len() as f64).sqrt();
        for w in part.windows(2) {
            let (b, n) = (&w[0], &w[1]);
            if n.minute != b.minute + 1 {
                continue;
            }
            let cf = if b.high > b.low { (b.close - b.low) / (b.high - b.low) } else { 0.5 };
            x.push(vec![
                1.0,
                timing_features(b, &session).time_diff,
                (b.close / b.open).ln() / scale,
                cf,
                (b.volume as f64).ln(),
                (b.close / b.vwap).ln() / scale,
            ]);
            y.push((n.vwap / b.vwap).ln() / scale);
        }
        start = end;
    }
    ols(&x, &y)
}

#[test]
fn ols_recovers_a_known_slope() {
    let x: Vec<Vec<f64>> = (0..1000).map(|i| vec![1.0, (i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
    let y: Vec<f64> = x.iter().map(|r| 0.5 + 2.0 * r[1] - r[2]).collect();
    let f = ols(&x, &y);
    assert!((f.slope - 2.0).abs() < 1e-9);
}

#[test]
fn timing_slope_vanishes_without_signal_and_grows_with_it() {
    let fits: Vec<Fit> = [0.0, 0.25, 0.5].into_iter().map(timing_slope).collect();
    for (a, f) in [0.0, 0.25, 0.5].iter().zip(&fits) {
        eprintln!("alpha_td {a}: slope {:.5} t {:.2} over {} minutes", f.slope, f.t_stat, f.n);
        assert!(f.n >= 100_000);
    }
    assert!(fits[0].t_stat.abs() < 3.0, "slope at alpha_td = 0 is significant: t = {}", fits[0].t_stat);
    assert!(fits[1].t_stat > 3.0);
    assert!(fits[0].slope.abs() < fits[1].slope.abs() && fits[1].slope.abs() < fits[2].slope.abs());
}
