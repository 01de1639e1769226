//! Timing-enhanced one-minute OHLC bars.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingest::{self, SessionSpec, Tick};
use crate::io_util::write_atomic;

pub const BAR_CSV_VERSION: u16 = 1;
pub const BAR_HEADER: [&str; 15] = [
    "symbol",
    "date",
    "minute",
    "open",
    "high",
    "low",
    "close",
    "open_ts",
    "high_ts",
    "low_ts",
    "close_ts",
    "vwap",
    "volume",
    "dollar_volume",
    "ticks",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeStats {
    pub volume: u64,
    pub ticks: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub symbol: String,
    pub day: NaiveDate,
    pub minute: u32,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub open_ts: i64,
    pub high_ts: i64,
    pub low_ts: i64,
    pub close_ts: i64,
    pub vwap: f64,
    /// Shares.
    pub volume: u64,
    pub dollar_volume: f64,
    pub tick_count: u32,
    /// Counts for trades carrying a non-empty condition code, including
    /// codes excluded from the OHLC/VWAP aggregation.
    pub per_code: BTreeMap<String, CodeStats>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarBuildConfig {
    pub excluded_codes: BTreeSet<String>,
    /// Taken from the run-level session.
    #[serde(skip)]
    pub session: SessionSpec,
}

/// Sum of `price·size` and `size` over a bar's included trades.
///
/// Prices on the 4-decimal grid are accumulated as exact integers, so the
/// result does not depend on trade order; anything else falls back to
/// compensated summation.
#[derive(Default)]
struct Notional {
    grid: i128,
    on_grid: bool,
    sum: f64,
    comp: f64,
    volume: u64,
}

impl Notional {
    fn new() -> Self {
        Self {
            on_grid: true,
            ..Self::default()
        }
    }

    fn add(&mut self, price: f64, size: u64) {
        self.volume += size;
        let scaled = price * 1e4;
        let ticks = scaled.round();
        if self.on_grid && (scaled - ticks).abs() <= 1e-6 * ticks.abs().max(1.0) && ticks < 1e15 {
            self.grid += ticks as i128 * size as i128;
        } else {
            self.on_grid = false;
        }
        neumaier(&mut self.sum, &mut self.comp, price * size as f64);
    }

    fn dollar_volume(&self) -> f64 {
        if self.on_grid {
            self.grid as f64 / 1e4
        } else {
            self.sum + self.comp
        }
    }

    fn vwap(&self) -> f64 {
        if self.on_grid {
            (self.grid as f64 / self.volume as f64) / 1e4
        } else {
            (self.sum + self.comp) / self.volume as f64
        }
    }
}

pub(crate) fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Builds the bars of one (symbol, day) partition. Minutes without an
/// included trade produce no bar.
pub fn build_bars(ticks: &[Tick], cfg: &BarBuildConfig) -> Result<Vec<Bar>> {
    let Some(first) = ticks.first() else {
        return Ok(Vec::new());
    };
    let session = &cfg.session;
    for (i, t) in ticks.iter().enumerate() {
        if t.symbol != first.symbol || t.day != first.day {
            return Err(Error::Contract(format!(
                "build_bars expects one (symbol, day) partition; tick {i} is {} {} after {} {}",
                t.symbol, t.day, first.symbol, first.day
            )));
        }
        if i > 0 && t.ts < ticks[i - 1].ts {
            return Err(Error::Contract(format!(
                "ticks not sorted by time at index {i} ({} < {})",
                t.ts,
                ticks[i - 1].ts
            )));
        }
        if !session.contains(t.ts) {
            return Err(Error::Contract(format!("tick {i} at {} lies outside the session", t.ts)));
        }
    }

    let mut bars = Vec::new();
    let mut start = 0;
    while start < ticks.len() {
        let minute = session.minute_of(ticks[start].ts).expect("checked above");
        let mut end = start + 1;
        while end < ticks.len() && session.minute_of(ticks[end].ts) == Some(minute) {
            end += 1;
        }
        if let Some(bar) = aggregate_minute(&ticks[start..end], minute, cfg) {
            bars.push(bar);
        }
        start = end;
    }
    Ok(bars)
}

fn aggregate_minute(ticks: &[Tick], minute: u32, cfg: &BarBuildConfig) -> Option<Bar> {
    let mut per_code: BTreeMap<String, CodeStats> = BTreeMap::new();
    let mut bar: Option<Bar> = None;
    let mut notional = Notional::new();
    for t in ticks {
        if !t.code.is_empty() {
            let e = per_code.entry(t.code.clone()).or_default();
            e.volume += t.size;
            e.ticks += 1;
        }
        if cfg.excluded_codes.contains(&t.code) {
            continue;
        }
        notional.add(t.price, t.size);
        match bar.as_mut() {
            None => {
                bar = Some(Bar {
                    symbol: t.symbol.clone(),
                    day: t.day,
                    minute,
                    open: t.price,
                    high: t.price,
                    low: t.price,
                    close: t.price,
                    open_ts: t.ts,
                    high_ts: t.ts,
                    low_ts: t.ts,
                    close_ts: t.ts,
                    vwap: 0.0,
                    volume: 0,
                    dollar_volume: 0.0,
                    tick_count: 1,
                    per_code: BTreeMap::new(),
                })
            }
            Some(b) => {
                // strict comparisons keep the first occurrence
                if t.price > b.high {
                    b.high = t.price;
                    b.high_ts = t.ts;
                }
                if t.price < b.low {
                    b.low = t.price;
                    b.low_ts = t.ts;
                }
                b.close = t.price;
                b.close_ts = t.ts;
                b.tick_count += 1;
            }
        }
    }
    let mut bar = bar?;
    bar.volume = notional.volume;
    bar.dollar_volume = notional.dollar_volume();
    // guard the last-bit excursions of the division
    bar.vwap = notional.vwap().clamp(bar.low, bar.high);
    bar.per_code = per_code;
    Some(bar)
}

pub fn bar_file_name(symbol: &str, day: NaiveDate) -> String {
    format!("{symbol}_{day}.bars.csv")
}

fn fmt_real(x: f64, min_frac: usize) -> String {
    let mut s = format!("{x}");
    let frac = match s.find('.') {
        Some(i) => s.len() - i - 1,
        None => {
            s.push('.');
            0
        }
    };
    for _ in frac..min_frac {
        s.push('0');
    }
    s
}

pub fn write_bars(path: &Path, bars: &[Bar]) -> Result<()> {
    let codes: BTreeSet<&str> = bars
        .iter()
        .flat_map(|b| b.per_code.keys().map(String::as_str))
        .collect();
    write_atomic(path, |f| {
        let mut w = BufWriter::with_capacity(1 << 18, f);
        let mut header = BAR_HEADER.join(",");
        for c in &codes {
            header.push_str(&format!(",vol[{c}],ticks[{c}]"));
        }
        writeln!(w, "{header}")?;
        for b in bars {
            write!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                b.symbol,
                b.day,
                b.minute,
                fmt_real(b.open, 2),
                fmt_real(b.high, 2),
                fmt_real(b.low, 2),
                fmt_real(b.close, 2),
                b.open_ts,
                b.high_ts,
                b.low_ts,
                b.close_ts,
                fmt_real(b.vwap, 8),
                b.volume,
                fmt_real(b.dollar_volume, 2),
                b.tick_count
            )?;
            for c in &codes {
                match b.per_code.get(*c) {
                    Some(s) => write!(w, ",{},{}", s.volume, s.ticks)?,
                    None => write!(w, ",,")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()
    })
}

fn format_err(msg: String) -> Error {
    Error::Format {
        format: "bar csv",
        version: BAR_CSV_VERSION,
        msg,
    }
}

/// Reads a bar CSV in file order.
pub fn read_bars(path: &Path) -> Result<Vec<Bar>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| format_err(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    if header.len() < BAR_HEADER.len() || header.iter().take(BAR_HEADER.len()).ne(BAR_HEADER.iter().copied()) {
        return Err(format_err(format!("{}: unexpected header {:?}", path.display(), header.iter().collect::<Vec<_>>())));
    }
    let extra: Vec<&str> = header.iter().skip(BAR_HEADER.len()).collect();
    if extra.len() % 2 != 0 {
        return Err(format_err(format!("{}: per-code columns must come in pairs", path.display())));
    }
    let mut codes = Vec::new();
    for pair in extra.chunks(2) {
        let code = pair[0]
            .strip_prefix("vol[")
            .and_then(|s| s.strip_suffix(']'))
            .filter(|c| pair[1] == format!("ticks[{c}]"))
            .ok_or_else(|| format_err(format!("{}: bad per-code columns {pair:?}", path.display())))?;
        codes.push(code.to_string());
    }

    let mut bars = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |col: &str, v: &str, e: &dyn std::fmt::Display| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("bad {col} {v:?}: {e}"),
        };
        macro_rules! field {
            ($i:expr, $t:ty) => {{
                let v = &rec[$i];
                v.parse::<$t>().map_err(|e| perr(BAR_HEADER[$i], v, &e))?
            }};
        }
        let day = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|e| perr("date", &rec[1], &e))?;
        let mut per_code = BTreeMap::new();
        for (k, code) in codes.iter().enumerate() {
            let (v, t) = (&rec[BAR_HEADER.len() + 2 * k], &rec[BAR_HEADER.len() + 2 * k + 1]);
            if v.is_empty() && t.is_empty() {
                continue;
            }
            let volume: u64 = v.parse().map_err(|e| perr("per-code volume", v, &e))?;
            let ticks: u64 = t.parse().map_err(|e| perr("per-code ticks", t, &e))?;
            if volume > 0 || ticks > 0 {
                per_code.insert(code.clone(), CodeStats { volume, ticks });
            }
        }
        bars.push(Bar {
            symbol: rec[0].to_string(),
            day,
            minute: field!(2, u32),
            open: field!(3, f64),
            high: field!(4, f64),
            low: field!(5, f64),
            close: field!(6, f64),
            open_ts: field!(7, i64),
            high_ts: field!(8, i64),
            low_ts: field!(9, i64),
            close_ts: field!(10, i64),
            vwap: field!(11, f64),
            volume: field!(12, u64),
            dollar_volume: field!(13, f64),
            tick_count: field!(14, u32),
            per_code,
        });
    }
    Ok(bars)
}

pub fn list_bar_files(dir: &Path) -> Result<Vec<PathBuf>> {
    crate::io_util::list_files(dir, ".bars.csv")
}

/// Reads every tick file in `ticks_dir` and writes one bar file per
/// (symbol, day) partition into `bars_dir`.
pub fn build_bar_dir(ticks_dir: &Path, bars_dir: &Path, cfg: &BarBuildConfig, exec: Exec) -> Result<Vec<PathBuf>> {
    cfg.session.validate()?;
    let files = ingest::list_tick_files(ticks_dir)?;
    let per_file = exec.try_map(&files, |path| {
        let ticks = ingest::read_ticks(path, &cfg.session)?;
        let mut out = Vec::new();
        for part in ingest::partitions(&ticks) {
            let bars = build_bars(part, cfg)?;
            let dest = bars_dir.join(bar_file_name(&part[0].symbol, part[0].day));
            write_bars(&dest, &bars)?;
            out.push(dest);
        }
        Ok(out)
    })?;
    let mut paths: Vec<PathBuf> = per_file.into_iter().flatten().collect();
    paths.sort();
    paths.dedup();
    Ok(paths)
}
