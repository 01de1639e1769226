//! Windowed samples: calendar splits, prior-volume history, universe
//! filters, target standardization and the binary dataset format.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bars::{self, neumaier, Bar};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{self, ColumnManifest, FeatureSetTag, Normalization, Normalizer, WindowScale, WindowView, LOOKBACK};
use crate::ingest::SessionSpec;
use crate::io_util::{read_json, write_atomic, write_json};

/// Bars per sample: one context bar plus the lookback.
pub const CONTEXT: usize = LOOKBACK + 1;
pub const MIN_PRICE: f64 = 4.0;
pub const MIN_TICKS: u32 = 30;
pub const PRIOR_DAYS: usize = 5;

pub const DATASET_MAGIC: &[u8; 7] = b"BARLAB\0";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 7 + 2 + 1 + 4 + 4 + 8;

/// Half-open date range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d < self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (expected train, valid or test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: DateRange,
    pub valid: DateRange,
    pub test: DateRange,
}

impl Default for SplitSpec {
    fn default() -> Self {
        let d = |m, day| NaiveDate::from_ymd_opt(2021, m, day).expect("valid date");
        Self {
            train: DateRange { start: d(1, 4), end: d(1, 28) },
            valid: DateRange { start: d(1, 28), end: d(2, 5) },
            test: DateRange { start: d(2, 5), end: d(2, 13) },
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            if r.start >= r.end {
                return Err(Error::Config(format!("splits.{name} is empty: {} >= {}", r.start, r.end)));
            }
        }
        if self.train.end > self.valid.start || self.valid.end > self.test.start {
            return Err(Error::Config("splits must be disjoint and ordered train < valid < test".into()));
        }
        Ok(())
    }

    pub fn split_of(&self, d: NaiveDate) -> Option<Split> {
        if self.train.contains(d) {
            Some(Split::Train)
        } else if self.valid.contains(d) {
            Some(Split::Valid)
        } else if self.test.contains(d) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

/// Same-minute log dollar volume statistics over the previous trading days.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Ordered compensated mean.
pub fn mean(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for &x in xs {
        neumaier(&mut s, &mut c, x);
    }
    (s + c) / xs.len() as f64
}

/// Two-pass sample standard deviation (n − 1).
pub fn sample_std(xs: &[f64], m: f64) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for &x in xs {
        neumaier(&mut s, &mut c, (x - m) * (x - m));
    }
    ((s + c) / (xs.len() as f64 - 1.0)).sqrt()
}

/// Statistics over the last [`PRIOR_DAYS`] values of `history` (oldest
/// first). `None` when fewer values exist or either dispersion is zero.
pub fn prior_volume_stats(history: &[f64]) -> Option<PriorStats> {
    if history.len() < PRIOR_DAYS {
        return None;
    }
    let xs = &history[history.len() - PRIOR_DAYS..];
    let m = mean(xs);
    let std = sample_std(xs, m);
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let p = PriorStats {
        mean: m,
        std,
        median: quantile_sorted(&sorted, 0.5),
        p25: quantile_sorted(&sorted, 0.25),
        p75: quantile_sorted(&sorted, 0.75),
    };
    (p.std > 0.0 && p.p75 > p.p25).then_some(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FilterReason {
    MinPrice,
    MinTicks,
    FlatWindow,
    MissingBars,
    MissingTarget,
    PriorVolume,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::MinPrice => "MIN_PRICE",
            FilterReason::MinTicks => "MIN_TICKS",
            FilterReason::FlatWindow => "FLAT_WINDOW",
            FilterReason::MissingBars => "MISSING_BARS",
            FilterReason::MissingTarget => "MISSING_TARGET",
            FilterReason::PriorVolume => "PRIOR_VOLUME",
        }
    }
}

/// One candidate window ending at minute t.
#[derive(Clone, Debug)]
pub struct Candidate<'a> {
    /// Minutes t−20 … t; `None` where no bar exists.
    pub window: Vec<Option<&'a Bar>>,
    /// Bar at minute t+1.
    pub next: Option<&'a Bar>,
    /// Prior-volume stats for minutes t−19 … t.
    pub prior: Vec<Option<&'a PriorStats>>,
}

fn finite_bar(b: &Bar) -> bool {
    [b.open, b.high, b.low, b.close, b.vwap].iter().all(|v| v.is_finite())
}

/// Returns the first failed rule, checked in declaration order.
pub fn apply_filters(c: &Candidate<'_>) -> Result<(), FilterReason> {
    let present = || c.window.iter().flatten();
    if present().any(|b| !(b.low >= MIN_PRICE)) {
        return Err(FilterReason::MinPrice);
    }
    if present().any(|b| b.tick_count < MIN_TICKS) {
        return Err(FilterReason::MinTicks);
    }
    let feature = c.window.iter().skip(1).flatten();
    let (lo, hi) = feature.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b.low), hi.max(b.high)));
    if hi == lo {
        return Err(FilterReason::FlatWindow);
    }
    let consecutive = c.window.len() == CONTEXT
        && c.window.iter().all(|b| b.is_some_and(finite_bar))
        && c.window.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => b.minute == a.minute + 1 && a.day == b.day && a.symbol == b.symbol,
            _ => false,
        });
    if !consecutive {
        return Err(FilterReason::MissingBars);
    }
    let last = c.window[CONTEXT - 1].expect("checked");
    match c.next {
        Some(n) if n.minute == last.minute + 1 && n.vwap > 0.0 && last.vwap > 0.0 && (n.vwap / last.vwap).ln().is_finite() => {}
        _ => return Err(FilterReason::MissingTarget),
    }
    if c.prior.len() != LOOKBACK || c.prior.iter().any(Option::is_none) {
        return Err(FilterReason::PriorVolume);
    }
    Ok(())
}

/// Bars of one (symbol, day), sorted by minute, with their prior stats.
#[derive(Clone, Debug)]
pub struct DayBars {
    pub symbol_id: u32,
    pub day: NaiveDate,
    pub bars: Vec<Bar>,
    pub prior: Vec<Option<PriorStats>>,
}

/// All bars of a run, ordered by (symbol, day).
#[derive(Clone, Debug, Default)]
pub struct BarStore {
    pub symbols: Vec<String>,
    pub days: Vec<DayBars>,
}

impl BarStore {
    /// Groups bars by (symbol, day) and derives the prior-volume history.
    pub fn from_bars(all: Vec<Bar>) -> Result<Self> {
        let mut groups: BTreeMap<(String, NaiveDate), Vec<Bar>> = BTreeMap::new();
        for b in all {
            groups.entry((b.symbol.clone(), b.day)).or_default().push(b);
        }
        let mut symbols: Vec<String> = groups.keys().map(|(s, _)| s.clone()).collect();
        symbols.dedup();
        let ids: HashMap<&str, u32> = symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();
        let mut days = Vec::with_capacity(groups.len());
        for ((sym, day), mut bars) in groups {
            bars.sort_by_key(|b| b.minute);
            if let Some(w) = bars.windows(2).find(|w| w[0].minute == w[1].minute) {
                return Err(Error::Validation(format!("duplicate bar for {sym} {day} minute {}", w[0].minute)));
            }
            days.push(DayBars {
                symbol_id: ids[sym.as_str()],
                day,
                prior: vec![None; bars.len()],
                bars,
            });
        }
        let mut store = Self { symbols, days };
        store.fill_prior();
        Ok(store)
    }

    pub fn from_dir(dir: &Path, exec: Exec) -> Result<Self> {
        let files = bars::list_bar_files(dir)?;
        let parts = exec.try_map(&files, |p| bars::read_bars(p))?;
        Self::from_bars(parts.into_iter().flatten().collect())
    }

    fn fill_prior(&mut self) {
        let mut history: HashMap<(u32, u32), VecDeque<f64>> = HashMap::new();
        for d in &mut self.days {
            for (i, b) in d.bars.iter().enumerate() {
                let h = history.entry((d.symbol_id, b.minute)).or_default();
                d.prior[i] = prior_volume_stats(h.make_contiguous());
                h.push_back(b.dollar_volume.ln());
                if h.len() > PRIOR_DAYS {
                    h.pop_front();
                }
            }
        }
    }

    pub fn window(&self, r: &SampleRef) -> WindowView<'_> {
        let d = &self.days[r.day_idx as usize];
        let s = r.start as usize;
        WindowView {
            bars: &d.bars[s..s + CONTEXT],
            prior: &d.prior[s..s + CONTEXT],
        }
    }

    /// Bar t of the sample (last lookback bar).
    pub fn last_bar(&self, r: &SampleRef) -> &Bar {
        &self.days[r.day_idx as usize].bars[r.start as usize + LOOKBACK]
    }

    pub fn find_day(&self, symbol_id: u32, day: NaiveDate) -> Option<&DayBars> {
        self.days
            .binary_search_by(|d| (d.symbol_id, d.day).cmp(&(symbol_id, day)))
            .ok()
            .map(|i| &self.days[i])
    }
}

/// Identifies a sample: symbol id, day (days since 1970-01-01) and the
/// minute of its last lookback bar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleKey {
    pub symbol_id: u32,
    pub day: u32,
    pub minute: u16,
}

const EPOCH_CE_DAYS: i32 = 719_163;

pub fn epoch_day(d: NaiveDate) -> u32 {
    use chrono::Datelike;
    (d.num_days_from_ce() - EPOCH_CE_DAYS) as u32
}

pub fn date_of_epoch_day(n: u32) -> NaiveDate {
    NaiveDate::from_num_days_from_ce_opt(n as i32 + EPOCH_CE_DAYS).expect("day in range")
}

/// An accepted sample, pointing back into the [`BarStore`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRef {
    pub key: SampleKey,
    pub day_idx: u32,
    /// Index of the context bar within the day's bars.
    pub start: u32,
    pub target_raw: f64,
}

fn enumerate_day(d: &DayBars, day_idx: u32, session: &SessionSpec) -> (Vec<SampleRef>, BTreeMap<FilterReason, u64>) {
    let mut index = vec![None; session.minutes_per_day as usize];
    for (i, b) in d.bars.iter().enumerate() {
        if let Some(slot) = index.get_mut(b.minute as usize) {
            *slot = Some(i);
        }
    }
    let mut out = Vec::new();
    let mut rejects = BTreeMap::new();
    let minutes = session.minutes_per_day as usize;
    for t in LOOKBACK..minutes.saturating_sub(1) {
        let window: Vec<Option<&Bar>> = (t - LOOKBACK..=t).map(|m| index[m].map(|i| &d.bars[i])).collect();
        let prior = (t + 1 - LOOKBACK..=t)
            .map(|m| index[m].and_then(|i| d.prior[i].as_ref()))
            .collect();
        let next = index[t + 1].map(|i| &d.bars[i]);
        let cand = Candidate { window, next, prior };
        match apply_filters(&cand) {
            Ok(()) => {
                let start = index[t - LOOKBACK].expect("accepted window is complete");
                let vt = d.bars[start + LOOKBACK].vwap;
                let vn = next.expect("accepted").vwap;
                out.push(SampleRef {
                    key: SampleKey {
                        symbol_id: d.symbol_id,
                        day: epoch_day(d.day),
                        minute: t as u16,
                    },
                    day_idx,
                    start: start as u32,
                    target_raw: (vn / vt).ln(),
                });
            }
            Err(r) => *rejects.entry(r).or_insert(0) += 1,
        }
    }
    (out, rejects)
}

/// Normalization constant for one feature column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub kind: Normalization,
    pub center: f64,
    pub scale: f64,
}

/// Training-split statistics used to standardize targets and features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub target_mean: f64,
    pub target_std: f64,
    pub train_samples: u64,
    pub features: BTreeMap<String, FeatureNorm>,
}

impl NormStats {
    pub fn standardize(&self, raw: f64) -> f64 {
        (raw - self.target_mean) / self.target_std
    }
}

/// Feature constants are taken over the last lookback bar of every
/// training sample, in key order.
pub fn compute_norm_stats(store: &BarStore, train: &[SampleRef], session: &SessionSpec) -> Result<NormStats> {
    if train.len() < 2 {
        return Err(Error::Config(format!(
            "training split has {} samples; at least 2 are required",
            train.len()
        )));
    }
    let targets: Vec<f64> = train.iter().map(|r| r.target_raw).collect();
    let target_mean = mean(&targets);
    let target_std = sample_std(&targets, target_mean);
    if !(target_std > 0.0) {
        return Err(Error::Config("training targets have zero variance".into()));
    }

    let cols: Vec<usize> = (0..features::N_COLUMNS)
        .filter(|&c| matches!(features::column_normalization(c), Normalization::Standard | Normalization::Robust))
        .collect();
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(train.len()); cols.len()];
    for r in train {
        let w = store.window(r);
        let scale = WindowScale::of(&w.bars[1..])?;
        let prior = w.prior[LOOKBACK]
            .as_ref()
            .ok_or_else(|| Error::Contract("accepted sample lacks prior stats".into()))?;
        let row = features::raw_row(&w.bars[LOOKBACK], &w.bars[LOOKBACK - 1], prior, &scale, session)?;
        for (k, &c) in cols.iter().enumerate() {
            values[k].push(row[c]);
        }
    }
    let mut feats = BTreeMap::new();
    for (k, &c) in cols.iter().enumerate() {
        let kind = features::column_normalization(c);
        let xs = &mut values[k];
        let (center, scale) = match kind {
            Normalization::Standard => {
                let m = mean(xs);
                (m, sample_std(xs, m))
            }
            _ => {
                xs.sort_by(f64::total_cmp);
                let q = |p| quantile_sorted(xs, p);
                (q(0.5), q(0.75) - q(0.25))
            }
        };
        let name = features::column_name(c);
        if !(scale > 0.0) || !center.is_finite() {
            return Err(Error::Config(format!(
                "training values of {name} have no spread ({kind:?} scale {scale})"
            )));
        }
        feats.insert(name.to_string(), FeatureNorm { kind, center, scale });
    }
    Ok(NormStats {
        target_mean,
        target_std,
        train_samples: train.len() as u64,
        features: feats,
    })
}

/// Accepted samples of every split plus the training statistics.
#[derive(Clone, Debug)]
pub struct Samples {
    pub train: Vec<SampleRef>,
    pub valid: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
    pub norm: NormStats,
    pub rejects: BTreeMap<FilterReason, u64>,
}

impl Samples {
    pub fn split(&self, s: Split) -> &[SampleRef] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Enumerates and filters every window, assigns splits and derives
/// [`NormStats`] from the training samples only.
pub fn build_samples(store: &BarStore, splits: &SplitSpec, session: &SessionSpec, exec: Exec) -> Result<Samples> {
    splits.validate()?;
    session.validate()?;
    let per_day = exec.map_range(store.days.len(), |i| {
        let d = &store.days[i];
        let split = splits.split_of(d.day);
        let (refs, rejects) = match split {
            Some(_) => enumerate_day(d, i as u32, session),
            None => (Vec::new(), BTreeMap::new()),
        };
        (split, refs, rejects)
    });
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut rejects = BTreeMap::new();
    for (split, refs, rej) in per_day {
        match split {
            Some(Split::Train) => train.extend(refs),
            Some(Split::Valid) => valid.extend(refs),
            Some(Split::Test) => test.extend(refs),
            None => {}
        }
        for (k, v) in rej {
            *rejects.entry(k).or_insert(0) += v;
        }
    }
    if train.is_empty() {
        return Err(Error::Config("training split produced no samples".into()));
    }
    let norm = compute_norm_stats(store, &train, session)?;
    Ok(Samples {
        train,
        valid,
        test,
        norm,
        rejects,
    })
}

/// Materialized feature matrices and standardized targets of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub tag: FeatureSetTag,
    pub lookback: usize,
    pub keys: Vec<SampleKey>,
    /// `len × lookback × dim`, row-major, oldest bar first.
    pub x: Vec<f32>,
    pub y: Vec<f32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tag.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.lookback * self.dim()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.input_dim();
        &self.x[i * w..(i + 1) * w]
    }
}

pub fn materialize(
    store: &BarStore,
    refs: &[SampleRef],
    tag: FeatureSetTag,
    norm: &NormStats,
    session: &SessionSpec,
    exec: Exec,
) -> Result<Dataset> {
    let normalizer = Normalizer::new(norm)?;
    let width = LOOKBACK * tag.dim();
    let chunks: Vec<&[SampleRef]> = refs.chunks(1024).collect();
    let parts = exec.try_map(&chunks, |chunk| {
        let mut x = vec![0f32; chunk.len() * width];
        for (r, out) in chunk.iter().zip(x.chunks_mut(width)) {
            features::assemble(&store.window(r), tag, &normalizer, session, out)?;
        }
        Ok(x)
    })?;
    Ok(Dataset {
        tag,
        lookback: LOOKBACK,
        keys: refs.iter().map(|r| r.key).collect(),
        x: parts.concat(),
        y: refs.iter().map(|r| norm.standardize(r.target_raw) as f32).collect(),
    })
}

fn ds_format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        format: "dataset",
        version: DATASET_VERSION,
        msg: msg.into(),
    }
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let width = ds.input_dim();
    let mut b = Vec::with_capacity(HEADER_LEN + ds.len() * (10 + 4 * (width + 1)));
    b.extend_from_slice(DATASET_MAGIC);
    b.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    b.push(ds.tag.code());
    b.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    b.extend_from_slice(&(ds.lookback as u32).to_le_bytes());
    b.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for i in 0..ds.len() {
        let k = ds.keys[i];
        b.extend_from_slice(&k.symbol_id.to_le_bytes());
        b.extend_from_slice(&k.day.to_le_bytes());
        b.extend_from_slice(&k.minute.to_le_bytes());
        for v in ds.row(i) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&ds.y[i].to_le_bytes());
    }
    b
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(ds_format_err(format!("file holds {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..7] != DATASET_MAGIC {
        return Err(ds_format_err("bad magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u16_at(7);
    if version != DATASET_VERSION {
        return Err(ds_format_err(format!("unsupported version {version}")));
    }
    let tag = FeatureSetTag::from_code(bytes[9]).ok_or_else(|| ds_format_err(format!("unknown feature-set tag {}", bytes[9])))?;
    let d = u32_at(10) as usize;
    let lookback = u32_at(14) as usize;
    let count = u64::from_le_bytes(bytes[18..26].try_into().expect("8 bytes"));
    if d != tag.dim() || lookback != LOOKBACK {
        return Err(ds_format_err(format!(
            "header declares D={d}, lookback={lookback}; {tag} expects D={}, lookback={LOOKBACK}",
            tag.dim()
        )));
    }
    let width = d * lookback;
    let rec = 10 + 4 * (width + 1);
    let body = &bytes[HEADER_LEN..];
    let expect = (count as u128) * rec as u128;
    if body.len() as u128 != expect {
        return Err(ds_format_err(format!(
            "{count} samples need {expect} body bytes, found {}",
            body.len()
        )));
    }
    let n = count as usize;
    let mut keys = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * width);
    let mut y = Vec::with_capacity(n);
    for r in body.chunks_exact(rec) {
        keys.push(SampleKey {
            symbol_id: u32::from_le_bytes(r[0..4].try_into().expect("4 bytes")),
            day: u32::from_le_bytes(r[4..8].try_into().expect("4 bytes")),
            minute: u16::from_le_bytes([r[8], r[9]]),
        });
        let floats = &r[10..];
        x.extend(floats[..4 * width].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))));
        y.push(f32::from_le_bytes(floats[4 * width..].try_into().expect("4 bytes")));
    }
    Ok(Dataset {
        tag,
        lookback,
        keys,
        x,
        y,
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let bytes = encode_dataset(ds);
    write_atomic(path, |f| {
        let mut w = BufWriter::with_capacity(1 << 20, f);
        w.write_all(&bytes)?;
        w.flush()
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes).map_err(|e| match e {
        Error::Format { format, version, msg } => Error::Format {
            format,
            version,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// JSON sidecar describing a dataset directory for one feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u16,
    pub tag: FeatureSetTag,
    pub lookback: usize,
    pub columns_hash: String,
    pub symbols: Vec<String>,
    pub splits: SplitSpec,
    pub counts: BTreeMap<Split, u64>,
    pub rejects: BTreeMap<FilterReason, u64>,
    pub norm: NormStats,
}

pub fn split_path(dir: &Path, tag: FeatureSetTag, split: Split) -> PathBuf {
    dir.join(format!("{tag}.{split}.bin"))
}

pub fn meta_path(dir: &Path, tag: FeatureSetTag) -> PathBuf {
    dir.join(format!("{tag}.norm.json"))
}

pub fn columns_path(dir: &Path, tag: FeatureSetTag) -> PathBuf {
    dir.join(format!("{tag}.columns.json"))
}

pub fn read_meta(dir: &Path, tag: FeatureSetTag) -> Result<DatasetMeta> {
    let m: DatasetMeta = read_json(&meta_path(dir, tag))?;
    if m.tag != tag {
        return Err(Error::Manifest(format!("{} describes {}, expected {tag}", meta_path(dir, tag).display(), m.tag)));
    }
    Ok(m)
}

/// Reads one split and checks it against the sidecar.
pub fn read_split(dir: &Path, tag: FeatureSetTag, split: Split) -> Result<(Dataset, DatasetMeta)> {
    let meta = read_meta(dir, tag)?;
    let ds = read_dataset(&split_path(dir, tag, split))?;
    if ds.tag != tag {
        return Err(Error::Manifest(format!("dataset file carries {}, expected {tag}", ds.tag)));
    }
    Ok((ds, meta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub counts: BTreeMap<Split, u64>,
    pub rejects: BTreeMap<FilterReason, u64>,
    pub files: Vec<PathBuf>,
}

/// Writes `<tag>.{train,valid,test}.bin`, `<tag>.norm.json` and
/// `<tag>.columns.json` for each requested feature set.
pub fn write_dataset_dir(
    store: &BarStore,
    samples: &Samples,
    splits: &SplitSpec,
    session: &SessionSpec,
    tags: &[FeatureSetTag],
    out: &Path,
    exec: Exec,
) -> Result<BuildSummary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let counts: BTreeMap<Split, u64> = Split::ALL.iter().map(|&s| (s, samples.split(s).len() as u64)).collect();
    let mut files = Vec::new();
    for &tag in tags {
        let manifest = ColumnManifest::new(tag);
        for split in Split::ALL {
            let ds = materialize(store, samples.split(split), tag, &samples.norm, session, exec)?;
            let p = split_path(out, tag, split);
            write_dataset(&p, &ds)?;
            files.push(p);
        }
        let meta = DatasetMeta {
            format_version: DATASET_VERSION,
            tag,
            lookback: LOOKBACK,
            columns_hash: manifest.hash(),
            symbols: store.symbols.clone(),
            splits: *splits,
            counts: counts.clone(),
            rejects: samples.rejects.clone(),
            norm: samples.norm.clone(),
        };
        let mp = meta_path(out, tag);
        write_json(&mp, &meta)?;
        let cp = columns_path(out, tag);
        crate::io_util::write_bytes_atomic(&cp, &manifest.to_json())?;
        files.extend([mp, cp]);
    }
    Ok(BuildSummary {
        counts,
        rejects: samples.rejects.clone(),
        files,
    })
}

/// Reads a bar directory and writes datasets for `tags` into `out`.
pub fn build_dataset(
    bars_dir: &Path,
    splits: &SplitSpec,
    session: &SessionSpec,
    tags: &[FeatureSetTag],
    out: &Path,
    exec: Exec,
) -> Result<BuildSummary> {
    let store = BarStore::from_dir(bars_dir, exec)?;
    let samples = build_samples(&store, splits, session, exec)?;
    write_dataset_dir(&store, &samples, splits, session, tags, out, exec)
}
