//! Per-bar feature dictionary and the three nested feature sets.
//!
//! Column order is fixed; every smaller set is a prefix of the full set.
//!
//! | cols  | group              | normalization          |
//! |-------|--------------------|------------------------|
//! | 0–3   | basic prices       | per-window min–max     |
//! | 4–8   | log returns        | training mean/std      |
//! | 9–13  | volume measures    | training median/IQR    |
//! | 14–17 | bar scale          | none                   |
//! | 18    | time of day        | none (raw minute)      |
//! | 19–23 | volume recent past | training mean/std      |
//! | 24–25 | relative activity  | none                   |
//! | 26–27 | basic timing       | [0, 1] within the bar  |
//! | 28–29 | derived timing     | none                   |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bars::Bar;
use crate::dataset::{NormStats, PriorStats};
use crate::error::{Error, Result};
use crate::ingest::SessionSpec;
use crate::io_util::fingerprint;

pub const LOOKBACK: usize = 20;
pub const N_COLUMNS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSetTag {
    Basic,
    NoTiming,
    Full,
}

impl FeatureSetTag {
    pub const ALL: [FeatureSetTag; 3] = [FeatureSetTag::Basic, FeatureSetTag::NoTiming, FeatureSetTag::Full];

    pub fn dim(self) -> usize {
        match self {
            FeatureSetTag::Basic => 5,
            FeatureSetTag::NoTiming => 26,
            FeatureSetTag::Full => 30,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSetTag::Basic => "basic",
            FeatureSetTag::NoTiming => "no-timing",
            FeatureSetTag::Full => "full",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for FeatureSetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "basic" => Ok(FeatureSetTag::Basic),
            "no-timing" | "notiming" => Ok(FeatureSetTag::NoTiming),
            "full" => Ok(FeatureSetTag::Full),
            _ => Err(Error::Config(format!(
                "unknown feature set {s:?} (expected basic, no-timing or full)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Per-window affine map of the lowest low to −1 and highest high to +1.
    MinMax,
    /// (v − training mean) / training std.
    Standard,
    /// (v − training median) / training IQR.
    Robust,
    /// Fraction of the bar width, in [0, 1].
    BarTime,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub group: String,
    pub normalization: Normalization,
}

const COLUMNS: [(&str, &str, Normalization); N_COLUMNS] = {
    use Normalization::*;
    [
        ("open", "basic_prices", MinMax),
        ("high", "basic_prices", MinMax),
        ("low", "basic_prices", MinMax),
        ("close", "basic_prices", MinMax),
        ("vwap_log_return", "log_returns", Standard),
        ("bar_log_return", "log_returns", Standard),
        // defined as ln(close/high)
        ("high_close_log_return", "log_returns", Standard),
        ("high_low_log_return", "log_returns", Standard),
        ("close_vwap_log_return", "log_returns", Standard),
        ("volume", "volume_measures", Robust),
        ("log_volume", "volume_measures", Robust),
        ("dollar_volume", "volume_measures", Robust),
        ("log_dollar_volume", "volume_measures", Robust),
        ("tick_count", "volume_measures", Robust),
        ("scaled_bar_height", "bar_scale", None),
        ("scaled_close_vs_open", "bar_scale", None),
        ("close_fraction", "bar_scale", None),
        ("open_fraction", "bar_scale", None),
        ("minute_index", "time_of_day", None),
        ("mean_prior_volume", "volume_recent_past", Standard),
        ("std_prior_volume", "volume_recent_past", Standard),
        ("median_prior_volume", "volume_recent_past", Standard),
        ("pct25_prior_volume", "volume_recent_past", Standard),
        ("pct75_prior_volume", "volume_recent_past", Standard),
        ("prior_volume_standard_z", "relative_activity", None),
        ("prior_volume_robust_z", "relative_activity", None),
        ("high_time", "basic_timing", BarTime),
        ("low_time", "basic_timing", BarTime),
        ("time_difference", "derived_timing", None),
        ("timing_surprise", "derived_timing", None),
    ]
};

pub fn column_name(i: usize) -> &'static str {
    COLUMNS[i].0
}

pub fn column_normalization(i: usize) -> Normalization {
    COLUMNS[i].2
}

pub fn columns(tag: FeatureSetTag) -> Vec<ColumnSpec> {
    COLUMNS[..tag.dim()]
        .iter()
        .map(|&(n, g, z)| ColumnSpec {
            name: n.into(),
            group: g.into(),
            normalization: z,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnManifest {
    pub tag: FeatureSetTag,
    pub lookback: usize,
    pub columns: Vec<ColumnSpec>,
}

impl ColumnManifest {
    pub fn new(tag: FeatureSetTag) -> Self {
        Self {
            tag,
            lookback: LOOKBACK,
            columns: columns(tag),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    /// Content hash that checkpoints pin to.
    pub fn hash(&self) -> String {
        fingerprint(&self.to_json())
    }
}

/// Affine map of a window's price range onto [−1, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowScale {
    pub lo: f64,
    pub hi: f64,
}

impl WindowScale {
    pub fn of(bars: &[Bar]) -> Result<Self> {
        let lo = bars.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
        let hi = bars.iter().map(|b| b.high).fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::Contract(format!(
                "min-max scaling needs max(high) > min(low), got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn apply(&self, p: f64) -> f64 {
        2.0 * (p - self.lo) / (self.hi - self.lo) - 1.0
    }
}

/// Scaled (open, high, low, close) for every bar of the window.
pub fn minmax_scale_prices(bars: &[Bar]) -> Result<Vec<[f64; 4]>> {
    let s = WindowScale::of(bars)?;
    Ok(bars
        .iter()
        .map(|b| [s.apply(b.open), s.apply(b.high), s.apply(b.low), s.apply(b.close)])
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogReturns {
    pub vwap_log_return: f64,
    pub bar_log_return: f64,
    pub close_over_high: f64,
    pub high_over_low: f64,
    pub close_over_vwap: f64,
}

impl LogReturns {
    pub fn to_array(self) -> [f64; 5] {
        [
            self.vwap_log_return,
            self.bar_log_return,
            self.close_over_high,
            self.high_over_low,
            self.close_over_vwap,
        ]
    }
}

/// Raw (unnormalized) log-return features of `bar` given its predecessor.
pub fn log_return_features(bar: &Bar, prev: &Bar) -> Result<LogReturns> {
    let prices = [bar.open, bar.high, bar.low, bar.close, bar.vwap, prev.vwap];
    if prices.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Contract(format!(
            "log returns need positive prices, got {prices:?} at minute {}",
            bar.minute
        )));
    }
    Ok(LogReturns {
        vwap_log_return: (bar.vwap / prev.vwap).ln(),
        bar_log_return: (bar.close / bar.open).ln(),
        close_over_high: (bar.close / bar.high).ln(),
        high_over_low: (bar.high / bar.low).ln(),
        close_over_vwap: (bar.close / bar.vwap).ln(),
    })
}

/// Raw volume, log volume, dollar volume, log dollar volume and tick count.
pub fn volume_measures(bar: &Bar) -> [f64; 5] {
    let v = bar.volume as f64;
    let dv = bar.dollar_volume;
    [v, v.ln(), dv, dv.ln(), bar.tick_count as f64]
}

/// Volume measures mapped through their training median/IQR.
pub fn volume_features(bar: &Bar, norm: &Normalizer) -> [f64; 5] {
    let raw = volume_measures(bar);
    std::array::from_fn(|k| norm.apply(9 + k, raw[k]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarScale {
    pub scaled_bar_height: f64,
    pub scaled_close_vs_open: f64,
    pub close_fraction: f64,
    pub open_fraction: f64,
}

pub fn bar_scale_features(bar: &Bar, scale: &WindowScale) -> BarScale {
    let (cf, of) = if bar.high > bar.low {
        let r = bar.high - bar.low;
        ((bar.close - bar.low) / r, (bar.open - bar.low) / r)
    } else {
        (0.5, 0.5)
    };
    BarScale {
        scaled_bar_height: scale.apply(bar.high) - scale.apply(bar.low),
        scaled_close_vs_open: scale.apply(bar.close) - scale.apply(bar.open),
        close_fraction: cf,
        open_fraction: of,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activity {
    pub minute_index: f64,
    pub prior: [f64; 5],
    pub standard_z: f64,
    pub robust_z: f64,
}

/// Minute index, raw prior stats and the two relative-activity scores.
pub fn time_and_activity_features(bar: &Bar, prior: &PriorStats) -> Result<Activity> {
    let iqr = prior.p75 - prior.p25;
    if !(prior.std > 0.0) || !(iqr > 0.0) {
        return Err(Error::Contract(format!(
            "prior volume dispersion must be positive (std {}, iqr {iqr}) at minute {}",
            prior.std, bar.minute
        )));
    }
    let ldv = bar.dollar_volume.ln();
    Ok(Activity {
        minute_index: bar.minute as f64,
        prior: [prior.mean, prior.std, prior.median, prior.p25, prior.p75],
        standard_z: (ldv - prior.mean) / prior.std,
        robust_z: (ldv - prior.median) / iqr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub high_time: f64,
    pub low_time: f64,
    pub time_diff: f64,
    pub timing_surprise: f64,
}

pub fn timing_features(bar: &Bar, session: &SessionSpec) -> Timing {
    let start = session.bar_start(bar.minute);
    let w = session.bar_width_ns as f64;
    let high_time = (bar.high_ts - start) as f64 / w;
    let low_time = (bar.low_ts - start) as f64 / w;
    let surprise = (bar.close > bar.open && bar.high_ts < bar.low_ts)
        || (bar.close < bar.open && bar.low_ts < bar.high_ts);
    Timing {
        high_time,
        low_time,
        time_diff: high_time - low_time,
        timing_surprise: if surprise { 1.0 } else { 0.0 },
    }
}

/// Per-column affine normalization resolved from [`NormStats`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    center: [f64; N_COLUMNS],
    inv_scale: [f64; N_COLUMNS],
}

impl Normalizer {
    pub fn new(norm: &NormStats) -> Result<Self> {
        let mut center = [0.0; N_COLUMNS];
        let mut inv_scale = [1.0; N_COLUMNS];
        for (i, &(name, _, kind)) in COLUMNS.iter().enumerate() {
            if !matches!(kind, Normalization::Standard | Normalization::Robust) {
                continue;
            }
            let f = norm
                .features
                .get(name)
                .ok_or_else(|| Error::Config(format!("normalization stats missing for feature {name}")))?;
            if f.kind != kind {
                return Err(Error::Config(format!(
                    "feature {name} expects {kind:?} normalization, stats carry {:?}",
                    f.kind
                )));
            }
            if !(f.scale > 0.0) || !f.center.is_finite() {
                return Err(Error::Config(format!("degenerate normalization for {name}: {f:?}")));
            }
            center[i] = f.center;
            inv_scale[i] = 1.0 / f.scale;
        }
        Ok(Self { center, inv_scale })
    }

    pub fn identity() -> Self {
        Self {
            center: [0.0; N_COLUMNS],
            inv_scale: [1.0; N_COLUMNS],
        }
    }

    pub fn apply(&self, col: usize, v: f64) -> f64 {
        (v - self.center[col]) * self.inv_scale[col]
    }
}

/// All 30 unnormalized values of one lookback bar.
pub fn raw_row(
    bar: &Bar,
    prev: &Bar,
    prior: &PriorStats,
    scale: &WindowScale,
    session: &SessionSpec,
) -> Result<[f64; N_COLUMNS]> {
    let lr = log_return_features(bar, prev)?.to_array();
    let vol = volume_measures(bar);
    let bs = bar_scale_features(bar, scale);
    let act = time_and_activity_features(bar, prior)?;
    let tm = timing_features(bar, session);
    let mut row = [0.0; N_COLUMNS];
    row[..4].copy_from_slice(&[
        scale.apply(bar.open),
        scale.apply(bar.high),
        scale.apply(bar.low),
        scale.apply(bar.close),
    ]);
    row[4..9].copy_from_slice(&lr);
    row[9..14].copy_from_slice(&vol);
    row[14..18].copy_from_slice(&[
        bs.scaled_bar_height,
        bs.scaled_close_vs_open,
        bs.close_fraction,
        bs.open_fraction,
    ]);
    row[18] = act.minute_index;
    row[19..24].copy_from_slice(&act.prior);
    row[24] = act.standard_z;
    row[25] = act.robust_z;
    row[26..30].copy_from_slice(&[tm.high_time, tm.low_time, tm.time_diff, tm.timing_surprise]);
    Ok(row)
}

/// A filtered window: `bars` holds the context bar followed by the
/// lookback bars; `prior` is aligned with `bars`.
#[derive(Clone, Copy, Debug)]
pub struct WindowView<'a> {
    pub bars: &'a [Bar],
    pub prior: &'a [Option<PriorStats>],
}

/// Fills `out` (row-major, oldest bar first, `LOOKBACK × tag.dim()`).
pub fn assemble(
    w: &WindowView<'_>,
    tag: FeatureSetTag,
    norm: &Normalizer,
    session: &SessionSpec,
    out: &mut [f32],
) -> Result<()> {
    let d = tag.dim();
    if w.bars.len() != LOOKBACK + 1 || w.prior.len() != LOOKBACK + 1 {
        return Err(Error::Contract(format!(
            "window must hold {} bars, got {}",
            LOOKBACK + 1,
            w.bars.len()
        )));
    }
    if out.len() != LOOKBACK * d {
        return Err(Error::Contract(format!(
            "feature buffer holds {} values, expected {}",
            out.len(),
            LOOKBACK * d
        )));
    }
    let feature_bars = &w.bars[1..];
    let scale = WindowScale::of(feature_bars)?;
    for i in 0..LOOKBACK {
        let bar = &w.bars[i + 1];
        let prior = w.prior[i + 1].as_ref().ok_or_else(|| {
            Error::Contract(format!("prior volume stats unavailable at minute {}", bar.minute))
        })?;
        let row = raw_row(bar, &w.bars[i], prior, &scale, session)?;
        for (c, slot) in out[i * d..(i + 1) * d].iter_mut().enumerate() {
            *slot = norm.apply(c, row[c]) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureNorm;
    use chrono::NaiveDate;
    use std::collections::BTreeMap;

    const OPEN: i64 = 34_200_000_000_000;
    const SEC: i64 = 1_000_000_000;

    fn bar(minute: u32, o: f64, h: f64, l: f64, c: f64) -> Bar {
        let start = OPEN + minute as i64 * 60 * SEC;
        Bar {
            symbol: "A".into(),
            day: NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(),
            minute,
            open: o,
            high: h,
            low: l,
            close: c,
            open_ts: start,
            high_ts: start + 20 * SEC,
            low_ts: start + 40 * SEC,
            close_ts: start + 59 * SEC,
            vwap: 0.5 * (h + l),
            volume: 1000,
            dollar_volume: 1000.0 * 0.5 * (h + l),
            tick_count: 40,
            per_code: BTreeMap::new(),
        }
    }

    fn window_bars(lo: f64, hi: f64) -> Vec<Bar> {
        (0..LOOKBACK as u32).map(|m| bar(m, 100.0, if m == 3 { hi } else { 100.0 }, if m == 7 { lo } else { 100.0 }, 100.0)).collect()
    }

    #[test]
    fn minmax_endpoints_and_midpoint() {
        let bars = window_bars(99.0, 101.0);
        let s = WindowScale::of(&bars).unwrap();
        assert_eq!(s.apply(99.0), -1.0);
        assert_eq!(s.apply(101.0), 1.0);
        assert_eq!(s.apply(100.0), 0.0);
        assert_eq!(s.apply(100.5), 0.5);
        let scaled = minmax_scale_prices(&bars).unwrap();
        assert_eq!(scaled[3][1], 1.0);
        assert_eq!(scaled[7][2], -1.0);
    }

    #[test]
    fn minmax_is_shift_invariant_and_rejects_flat() {
        let a = minmax_scale_prices(&window_bars(99.0, 101.0)).unwrap();
        let shifted: Vec<Bar> = window_bars(99.0, 101.0)
            .into_iter()
            .map(|mut b| {
                b.open += 7.0;
                b.high += 7.0;
                b.low += 7.0;
                b.close += 7.0;
                b
            })
            .collect();
        let b = minmax_scale_prices(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for k in 0..4 {
                assert!((x[k] - y[k]).abs() < 1e-12);
            }
        }
        let flat: Vec<Bar> = (0..LOOKBACK as u32).map(|m| bar(m, 50.0, 50.0, 50.0, 50.0)).collect();
        assert!(matches!(minmax_scale_prices(&flat), Err(Error::Contract(_))));
    }

    #[test]
    fn log_returns() {
        let prev = bar(0, 100.0, 100.0, 100.0, 100.0);
        let flat = log_return_features(&bar(1, 100.0, 100.0, 100.0, 100.0), &prev).unwrap();
        assert_eq!(flat.to_array(), [0.0; 5]);
        let b = bar(1, 100.0, 102.0, 99.0, 101.0);
        let lr = log_return_features(&b, &prev).unwrap();
        assert!((lr.close_over_high - (-0.009_852)).abs() < 1e-6);
        assert!(lr.close_over_high <= 0.0 && lr.high_over_low >= 0.0);
        let mut bad = b.clone();
        bad.low = 0.0;
        assert!(log_return_features(&bad, &prev).is_err());
    }

    #[test]
    fn five_tick_bar_dollar_volume() {
        use crate::bars::{build_bars, BarBuildConfig};
        use crate::ingest::Tick;
        let t = |s: i64, p: f64, n: u64| Tick {
            symbol: "A".into(),
            day: NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(),
            ts: OPEN + s * SEC,
            price: p,
            size: n,
            code: String::new(),
        };
        let ticks = [t(1, 100.0, 1), t(2, 102.0, 1), t(3, 98.0, 1), t(4, 102.0, 1), t(5, 99.0, 2)];
        let b = &build_bars(&ticks, &BarBuildConfig::default()).unwrap()[0];
        assert_eq!(volume_measures(b)[2], 600.0);
    }

    #[test]
    fn volume_robust_normalization() {
        let mut features = BTreeMap::new();
        for &(name, kind) in COLUMNS.iter().map(|(n, _, k)| (n, k)).collect::<Vec<_>>().iter() {
            if matches!(kind, Normalization::Standard | Normalization::Robust) {
                features.insert(
                    name.to_string(),
                    FeatureNorm {
                        kind: *kind,
                        center: 1000.0,
                        scale: 250.0,
                    },
                );
            }
        }
        let ns = NormStats {
            target_mean: 0.0,
            target_std: 1.0,
            train_samples: 1,
            features,
        };
        let n = Normalizer::new(&ns).unwrap();
        let mut b = bar(0, 1.0, 1.0, 1.0, 1.0);
        b.volume = 1000;
        assert_eq!(volume_features(&b, &n)[0], 0.0);
        b.volume = 1250;
        assert_eq!(volume_features(&b, &n)[0], 1.0);
        let mut missing = ns.clone();
        missing.features.remove("tick_count");
        assert!(matches!(Normalizer::new(&missing), Err(Error::Config(_))));
    }

    #[test]
    fn bar_scale() {
        let s = WindowScale { lo: 99.0, hi: 101.0 };
        let b = bar(0, 100.0, 100.5, 100.0, 100.5);
        let f = bar_scale_features(&b, &s);
        assert_eq!(f.scaled_bar_height, 0.5);
        assert_eq!(f.close_fraction, 1.0);
        assert_eq!(f.open_fraction, 0.0);
        let flat = bar_scale_features(&bar(0, 100.0, 100.0, 100.0, 100.0), &s);
        assert_eq!((flat.close_fraction, flat.open_fraction), (0.5, 0.5));
    }

    #[test]
    fn activity_scores() {
        let p = PriorStats {
            mean: 3.0,
            std: 2.5f64.sqrt(),
            median: 3.0,
            p25: 2.0,
            p75: 4.0,
        };
        let mut b = bar(12, 1.0, 1.0, 1.0, 1.0);
        b.dollar_volume = 4f64.exp();
        let a = time_and_activity_features(&b, &p).unwrap();
        assert!((a.standard_z - 0.632_455_532).abs() < 1e-6);
        assert!((a.robust_z - 0.5).abs() < 1e-12);
        assert_eq!(a.minute_index, 12.0);
        let zero = PriorStats { std: 0.0, ..p };
        assert!(time_and_activity_features(&b, &zero).is_err());
    }

    #[test]
    fn timing() {
        let s = SessionSpec::default();
        let mut up = bar(2, 100.0, 101.0, 99.0, 100.5);
        let start = s.bar_start(2);
        up.low_ts = start + 5 * SEC;
        up.high_ts = start + 50 * SEC;
        let t = timing_features(&up, &s);
        assert_eq!(t.timing_surprise, 0.0);
        assert!((t.time_diff - 0.75).abs() < 1e-15);
        up.high_ts = start + 5 * SEC;
        up.low_ts = start + 50 * SEC;
        assert_eq!(timing_features(&up, &s).timing_surprise, 1.0);
        let mut one = bar(0, 10.0, 10.0, 10.0, 10.0);
        one.high_ts = one.open_ts;
        one.low_ts = one.open_ts;
        let t = timing_features(&one, &s);
        assert_eq!((t.time_diff, t.timing_surprise), (0.0, 0.0));
    }

    #[test]
    fn tags_and_columns_nest() {
        assert_eq!(FeatureSetTag::ALL.map(|t| t.dim()), [5, 26, 30]);
        let full = columns(FeatureSetTag::Full);
        for tag in FeatureSetTag::ALL {
            assert_eq!(columns(tag)[..], full[..tag.dim()]);
            assert_eq!(tag.as_str().parse::<FeatureSetTag>().unwrap(), tag);
            assert_eq!(FeatureSetTag::from_code(tag.code()), Some(tag));
        }
        assert!(columns(FeatureSetTag::NoTiming)
            .iter()
            .all(|c| !c.group.contains("timing")));
        assert_ne!(
            ColumnManifest::new(FeatureSetTag::Basic).hash(),
            ColumnManifest::new(FeatureSetTag::Full).hash()
        );
    }
}
