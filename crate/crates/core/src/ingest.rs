//! Trade ticks: data model, CSV files and the synthetic tick generator.
//!
//! The generator produces one-minute price paths with a controllable amount
//! of signal carried by the previous minute's high/low timing. Per minute:
//!
//! * a latent AR(1) drift is updated,
//! * the open-to-close log return is drawn around
//!   `drift + α_mom·r₋₁ + α_cf·(2·cf₋₁ − 1)·σ_b + α_td·timeDiff₋₁·σ_b`
//!   with a unit-variance Student-t innovation scaled by `σ_b·curve[m]`,
//! * trades are placed at sorted uniform times; log prices follow a Brownian
//!   bridge pinned at the first (open) and last (close) trade, with
//!   Student-t microstructure shocks on interior trades,
//! * the next minute opens at `ln vwap + ρ·(ln close − ln vwap)`, i.e. part
//!   of the last trade's deviation from the minute's VWAP reverts.
//!
//! Close fraction and time difference are measured on the realized trades,
//! so the timing signal is carried exactly by the features built from them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io_util::write_atomic;

pub const TICK_HEADER: [&str; 6] = ["symbol", "date", "ts_ns", "price", "size", "code"];
/// Condition code given to synthetic off-exchange prints.
pub const OFF_EXCHANGE_CODE: &str = "X";
const NS_PER_SEC: i64 = 1_000_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Tick {
    pub symbol: String,
    pub day: NaiveDate,
    /// Nanoseconds since midnight, exchange-local.
    pub ts: i64,
    pub price: f64,
    pub size: u64,
    /// Empty for a regular trade.
    pub code: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSpec {
    pub minutes_per_day: u32,
    pub session_open: NaiveTime,
    pub bar_width_ns: i64,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            minutes_per_day: 390,
            session_open: NaiveTime::from_hms_opt(9, 30, 0).expect("valid time"),
            bar_width_ns: 60 * NS_PER_SEC,
        }
    }
}

impl SessionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.minutes_per_day < 1 {
            return Err(Error::Config("session.minutes_per_day must be >= 1".into()));
        }
        if self.bar_width_ns <= 0 {
            return Err(Error::Config("session.bar_width_ns must be > 0".into()));
        }
        Ok(())
    }

    pub fn open_ns(&self) -> i64 {
        let t = self.session_open;
        t.num_seconds_from_midnight() as i64 * NS_PER_SEC + t.nanosecond() as i64
    }

    /// Exclusive end of the session.
    pub fn close_ns(&self) -> i64 {
        self.open_ns() + self.minutes_per_day as i64 * self.bar_width_ns
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.open_ns() && ts < self.close_ns()
    }

    pub fn bar_start(&self, minute: u32) -> i64 {
        self.open_ns() + minute as i64 * self.bar_width_ns
    }

    pub fn minute_of(&self, ts: i64) -> Option<u32> {
        self.contains(ts)
            .then(|| ((ts - self.open_ns()) / self.bar_width_ns) as u32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub symbols: u32,
    pub days: u32,
    pub seed: u64,
    /// First trading day; weekends are skipped.
    pub start_date: NaiveDate,
    pub base_price_range: [f64; 2],
    /// Standard deviation of the day-to-day log change of the opening price.
    pub day_open_sd: f64,
    pub drift_phi: f64,
    pub drift_shock: f64,
    /// Per-minute return volatility σ_b.
    pub minute_vol: f64,
    /// Intraday volatility multiplier, one entry per session minute. Empty
    /// selects a U-shaped default.
    pub vol_curve: Vec<f64>,
    /// Standard deviation of the log of each symbol's volatility multiplier.
    pub symbol_vol_sd: f64,
    /// Standard deviation of the log of each (symbol, day) volatility multiplier.
    pub day_vol_sd: f64,
    /// Standard deviation of an independent log volatility shock drawn each
    /// minute; it scales the innovation but not the predictable terms.
    pub minute_vol_sd: f64,
    pub alpha_mom: f64,
    pub alpha_cf: f64,
    pub alpha_td: f64,
    /// Degrees of freedom of the minute return innovation.
    pub return_dof: f64,
    pub tick_base: u32,
    pub tick_lambda: f64,
    pub tick_dof: f64,
    /// Interior trade shock scale as a multiple of `σ_b·curve[m]`.
    pub tick_noise_scale: f64,
    pub off_exchange_fraction: f64,
    pub size_log_mean: f64,
    pub size_log_sd: f64,
    /// Share of the close-versus-VWAP deviation carried into the next open.
    pub open_reversion: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            symbols: 20,
            days: 30,
            seed: 20_210_104,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            base_price_range: [20.0, 200.0],
            day_open_sd: 0.02,
            drift_phi: 0.98,
            drift_shock: 5e-5,
            minute_vol: 1e-3,
            vol_curve: Vec::new(),
            symbol_vol_sd: 0.4,
            day_vol_sd: 0.25,
            minute_vol_sd: 0.8,
            alpha_mom: 0.1,
            alpha_cf: 0.1,
            alpha_td: 0.5,
            return_dof: 4.0,
            tick_base: 30,
            tick_lambda: 40.0,
            tick_dof: 4.0,
            tick_noise_scale: 0.1,
            off_exchange_fraction: 0.05,
            size_log_mean: 100f64.ln(),
            size_log_sd: 0.8,
            open_reversion: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, session: &SessionSpec) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth.{m}")));
        if self.symbols == 0 || self.days == 0 {
            return bad("symbols and synth.days must be >= 1");
        }
        let [lo, hi] = self.base_price_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("base_price_range must satisfy 0 < low <= high");
        }
        if !(self.drift_phi.abs() < 1.0) {
            return bad("drift_phi must satisfy |phi| < 1");
        }
        if !(self.minute_vol > 0.0) || self.drift_shock < 0.0 || self.day_open_sd < 0.0 {
            return bad("minute_vol must be > 0 and drift_shock, day_open_sd >= 0");
        }
        if !(self.symbol_vol_sd >= 0.0 && self.day_vol_sd >= 0.0 && self.minute_vol_sd >= 0.0) {
            return bad("symbol_vol_sd, day_vol_sd and minute_vol_sd must be >= 0");
        }
        if !self.vol_curve.is_empty() {
            if self.vol_curve.len() != session.minutes_per_day as usize {
                return bad("vol_curve length must equal session.minutes_per_day");
            }
            if self.vol_curve.iter().any(|v| !(*v > 0.0)) {
                return bad("vol_curve entries must be > 0");
            }
        }
        if !(self.return_dof > 2.0 && self.tick_dof > 2.0) {
            return bad("return_dof and tick_dof must be > 2");
        }
        if !(self.tick_lambda >= 0.0) || self.tick_noise_scale < 0.0 {
            return bad("tick_lambda and tick_noise_scale must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.off_exchange_fraction) {
            return bad("off_exchange_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.open_reversion) {
            return bad("open_reversion must lie in [0, 1]");
        }
        if self.size_log_sd < 0.0 {
            return bad("size_log_sd must be >= 0");
        }
        Ok(())
    }

    pub fn curve(&self, session: &SessionSpec) -> Vec<f64> {
        if self.vol_curve.is_empty() {
            default_vol_curve(session.minutes_per_day as usize)
        } else {
            self.vol_curve.clone()
        }
    }

    pub fn symbol_names(&self) -> Vec<String> {
        (0..self.symbols).map(symbol_name).collect()
    }

    pub fn trading_days(&self) -> Vec<NaiveDate> {
        trading_days(self.start_date, self.days as usize)
    }
}

pub fn symbol_name(i: u32) -> String {
    format!("S{i:03}")
}

/// U-shape: elevated at the open, quiet at midday, rising into the close.
pub fn default_vol_curve(minutes: usize) -> Vec<f64> {
    let last = (minutes.max(2) - 1) as f64;
    (0..minutes)
        .map(|m| {
            let x = m as f64 / last;
            1.0 + 1.2 * (-x / 0.08).exp() + 0.5 * (-(1.0 - x) / 0.1).exp()
        })
        .collect()
}

pub fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn partition_rng(seed: u64, symbol: u32, day: u32) -> ChaCha8Rng {
    let k = splitmix64(seed ^ splitmix64(((symbol as u64) << 32) | day as u64));
    ChaCha8Rng::seed_from_u64(k)
}

fn unit_t(rng: &mut ChaCha8Rng, dist: &StudentT<f64>, nu: f64) -> f64 {
    dist.sample(rng) * ((nu - 2.0) / nu).sqrt()
}

/// Realized per-minute quantities that feed the next minute's conditional mean.
#[derive(Clone, Copy, Debug)]
struct MinuteState {
    ret: f64,
    close_fraction: f64,
    time_diff: f64,
}

/// Generates the trades of one (symbol, day) partition, sorted by time.
pub fn generate_partition(
    cfg: &SynthConfig,
    session: &SessionSpec,
    curve: &[f64],
    symbol_idx: u32,
    day_idx: u32,
    day: NaiveDate,
) -> Vec<Tick> {
    let symbol = symbol_name(symbol_idx);
    let [lo, hi] = cfg.base_price_range;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (base, symbol_vol) = {
        let mut r = partition_rng(cfg.seed, symbol_idx, u32::MAX);
        let base = (lo.ln() + r.random::<f64>() * (hi.ln() - lo.ln())).exp();
        (base, (cfg.symbol_vol_sd * std_normal.sample(&mut r)).exp())
    };
    let mut rng = partition_rng(cfg.seed, symbol_idx, day_idx);
    // base volatility of this partition
    let vol = cfg.minute_vol * symbol_vol * (cfg.day_vol_sd * std_normal.sample(&mut rng)).exp();
    let ret_t = StudentT::new(cfg.return_dof).expect("validated dof");
    let tick_t = StudentT::new(cfg.tick_dof).expect("validated dof");
    let poisson = (cfg.tick_lambda > 0.0).then(|| Poisson::new(cfg.tick_lambda).expect("lambda > 0"));
    let sizes = LogNormal::new(cfg.size_log_mean, cfg.size_log_sd).expect("validated size params");
    let width = session.bar_width_ns;

    let mut level = base.ln() + cfg.day_open_sd * std_normal.sample(&mut rng);
    // start the drift from its stationary distribution
    let stationary = cfg.drift_shock / (1.0 - cfg.drift_phi * cfg.drift_phi).sqrt();
    let mut drift = stationary * std_normal.sample(&mut rng);
    let mut prev = MinuteState {
        ret: 0.0,
        close_fraction: 0.5,
        time_diff: 0.0,
    };
    let mut out = Vec::with_capacity(session.minutes_per_day as usize * 72);

    for m in 0..session.minutes_per_day {
        let sigma_m = vol * curve[m as usize] * (cfg.minute_vol_sd * std_normal.sample(&mut rng)).exp();
        drift = cfg.drift_phi * drift + cfg.drift_shock * std_normal.sample(&mut rng);
        let mean = drift
            + cfg.alpha_mom * prev.ret
            + cfg.alpha_cf * (2.0 * prev.close_fraction - 1.0) * vol
            + cfg.alpha_td * prev.time_diff * vol;
        let ret = mean + sigma_m * unit_t(&mut rng, &ret_t, cfg.return_dof);
        let n = cfg.tick_base as usize
            + poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);

        if n == 0 {
            level += ret;
            prev = MinuteState {
                ret,
                close_fraction: 0.5,
                time_diff: 0.0,
            };
            continue;
        }

        let offsets = tick_offsets(&mut rng, n, width);
        let start = session.bar_start(m);
        let span = (offsets[n - 1] - offsets[0]).max(1) as f64;

        // Brownian bridge between the first and last trade
        let mut walk = Vec::with_capacity(n);
        let mut w = 0.0;
        let mut last_u = 0.0;
        for &o in &offsets {
            let u = (o - offsets[0]) as f64 / span;
            w += (u - last_u).max(0.0).sqrt() * std_normal.sample(&mut rng);
            walk.push((u, w));
            last_u = u;
        }
        let w_end = walk[n - 1].1;
        let close_level = if n == 1 { level } else { level + ret };

        let first = out.len();
        for (i, (&o, &(u, w))) in offsets.iter().zip(&walk).enumerate() {
            let log_p = if i == 0 {
                level
            } else if i == n - 1 {
                close_level
            } else {
                level
                    + u * ret
                    + sigma_m * (w - u * w_end)
                    + cfg.tick_noise_scale * sigma_m * unit_t(&mut rng, &tick_t, cfg.tick_dof)
            };
            let size = sizes.sample(&mut rng).round().max(1.0) as u64;
            let code = if rng.random::<f64>() < cfg.off_exchange_fraction {
                OFF_EXCHANGE_CODE.to_string()
            } else {
                String::new()
            };
            out.push(Tick {
                symbol: symbol.clone(),
                day,
                ts: start + o,
                price: round_price(log_p.exp()),
                size,
                code,
            });
        }

        let realized = realize_minute(&out[first..], width);
        prev = realized.state;
        level = realized.vwap.ln() + cfg.open_reversion * (realized.close.ln() - realized.vwap.ln());
    }
    out
}

/// Sorted, strictly increasing offsets in [0, width).
fn tick_offsets(rng: &mut ChaCha8Rng, n: usize, width: i64) -> Vec<i64> {
    let mut offs: Vec<i64> = (0..n).map(|_| rng.random_range(0..width)).collect();
    offs.sort_unstable();
    for i in 1..n {
        if offs[i] <= offs[i - 1] {
            offs[i] = offs[i - 1] + 1;
        }
    }
    // pull back anything bumped past the bar end
    for i in (0..n).rev() {
        let cap = width - (n - i) as i64;
        if offs[i] > cap {
            offs[i] = cap;
        }
    }
    offs
}

struct Realized {
    state: MinuteState,
    close: f64,
    vwap: f64,
}

fn realize_minute(ticks: &[Tick], width: i64) -> Realized {
    let open = ticks[0].price;
    let close = ticks[ticks.len() - 1].price;
    let (mut high, mut low) = (open, open);
    let (mut high_ts, mut low_ts) = (ticks[0].ts, ticks[0].ts);
    let (mut pv, mut vol) = (0.0, 0.0);
    for t in ticks {
        if t.price > high {
            high = t.price;
            high_ts = t.ts;
        }
        if t.price < low {
            low = t.price;
            low_ts = t.ts;
        }
        pv += t.price * t.size as f64;
        vol += t.size as f64;
    }
    let close_fraction = if high > low {
        (close - low) / (high - low)
    } else {
        0.5
    };
    Realized {
        state: MinuteState {
            ret: (close / open).ln(),
            close_fraction,
            time_diff: (high_ts - low_ts) as f64 / width as f64,
        },
        close,
        vwap: pv / vol,
    }
}

/// Rounds to the 4-decimal price grid used by the tick files.
pub fn round_price(p: f64) -> f64 {
    ((p * 1e4).round() / 1e4).max(1e-4)
}

/// `100.0` → `"100.00"`, `99.1234` → `"99.1234"`.
pub fn format_price(p: f64) -> String {
    let mut s = format!("{p:.4}");
    while s.ends_with('0') && s.len() - s.find('.').unwrap_or(s.len()) > 3 {
        s.pop();
    }
    s
}

pub fn tick_file_name(symbol: &str, day: NaiveDate) -> String {
    format!("{symbol}_{day}.ticks.csv")
}

pub fn write_ticks(path: &Path, ticks: &[Tick]) -> Result<()> {
    write_atomic(path, |w| {
        let mut w = BufWriter::with_capacity(1 << 20, w);
        writeln!(w, "{}", TICK_HEADER.join(","))?;
        for t in ticks {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t.symbol,
                t.day,
                t.ts,
                format_price(t.price),
                t.size,
                t.code
            )?;
        }
        w.flush()
    })
}

/// Writes one tick file per (symbol, day) partition into `dir`.
pub fn generate_ticks(
    cfg: &SynthConfig,
    session: &SessionSpec,
    dir: &Path,
    exec: Exec,
) -> Result<Vec<PathBuf>> {
    cfg.validate(session)?;
    session.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let curve = cfg.curve(session);
    let days = cfg.trading_days();
    let parts: Vec<(u32, u32)> = (0..cfg.symbols)
        .flat_map(|s| (0..cfg.days).map(move |d| (s, d)))
        .collect();
    exec.try_map(&parts, |&(s, d)| {
        let day = days[d as usize];
        let ticks = generate_partition(cfg, session, &curve, s, d, day);
        let path = dir.join(tick_file_name(&symbol_name(s), day));
        write_ticks(&path, &ticks)?;
        Ok(path)
    })
}

/// Reads a tick CSV; the result is sorted by (symbol, day, ts) with file
/// order preserved among equal keys.
pub fn read_ticks(path: &Path, session: &SessionSpec) -> Result<Vec<Tick>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut ticks = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut seen_header = false;
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(parse_err(line, e.to_string()));
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        if !seen_header {
            seen_header = true;
            if record.iter().ne(TICK_HEADER.iter().copied()) {
                return Err(parse_err(line, format!("expected header {}", TICK_HEADER.join(","))));
            }
            continue;
        }
        if record.len() != TICK_HEADER.len() {
            return Err(parse_err(line, format!("expected 6 fields, found {}", record.len())));
        }
        let day = NaiveDate::parse_from_str(&record[1], "%Y-%m-%d")
            .map_err(|e| parse_err(line, format!("bad date {:?}: {e}", &record[1])))?;
        let ts: i64 = record[2]
            .parse()
            .map_err(|e| parse_err(line, format!("bad ts_ns {:?}: {e}", &record[2])))?;
        let price_txt = &record[3];
        if price_txt.split_once('.').is_some_and(|(_, frac)| frac.len() > 4) {
            return Err(parse_err(line, format!("price {price_txt:?} has more than 4 decimals")));
        }
        let price: f64 = price_txt
            .parse()
            .map_err(|e| parse_err(line, format!("bad price {price_txt:?}: {e}")))?;
        let size: i64 = record[4]
            .parse()
            .map_err(|e| parse_err(line, format!("bad size {:?}: {e}", &record[4])))?;
        if !(price > 0.0) || !price.is_finite() {
            return Err(Error::Validation(format!(
                "{} line {line}: price must be > 0, got {price}",
                path.display()
            )));
        }
        if size <= 0 {
            return Err(Error::Validation(format!(
                "{} line {line}: size must be > 0, got {size}",
                path.display()
            )));
        }
        if !session.contains(ts) {
            return Err(Error::Validation(format!(
                "{} line {line}: ts {ts} outside session [{}, {})",
                path.display(),
                session.open_ns(),
                session.close_ns()
            )));
        }
        ticks.push(Tick {
            symbol: record[0].to_string(),
            day,
            ts,
            price,
            size: size as u64,
            code: record[5].to_string(),
        });
    }
    // stable: equal keys keep file order
    ticks.sort_by(|a, b| (&a.symbol, a.day, a.ts).cmp(&(&b.symbol, b.day, b.ts)));
    Ok(ticks)
}

/// Splits a (symbol, day, ts)-sorted tick list into per-partition slices.
pub fn partitions(ticks: &[Tick]) -> Vec<&[Tick]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=ticks.len() {
        if i == ticks.len()
            || ticks[i].symbol != ticks[start].symbol
            || ticks[i].day != ticks[start].day
        {
            if i > start {
                out.push(&ticks[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Tick files in `dir`, sorted by name.
pub fn list_tick_files(dir: &Path) -> Result<Vec<PathBuf>> {
    crate::io_util::list_files(dir, ".ticks.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            symbols: 1,
            days: 1,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn parses_reference_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("XYZ_2021-01-04.ticks.csv");
        fs::write(&p, "symbol,date,ts_ns,price,size,code\nXYZ,2021-01-04,34200000000000,100.00,100,\n").unwrap();
        let ticks = read_ticks(&p, &SessionSpec::default()).unwrap();
        assert_eq!(
            ticks,
            vec![Tick {
                symbol: "XYZ".into(),
                day: NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(),
                ts: 34_200_000_000_000,
                price: 100.0,
                size: 100,
                code: String::new(),
            }]
        );
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.ticks.csv");
        fs::write(&p, "").unwrap();
        assert!(read_ticks(&p, &SessionSpec::default()).unwrap().is_empty());
    }

    #[test]
    fn rejects_out_of_session_and_bad_values() {
        let session = SessionSpec::default();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ticks.csv");
        let late = session.close_ns() + 1;
        fs::write(&p, format!("symbol,date,ts_ns,price,size,code\nA,2021-01-04,{late},10.00,1,\n")).unwrap();
        assert!(matches!(read_ticks(&p, &session), Err(Error::Validation(_))));
        // exactly the exclusive end is also outside
        fs::write(&p, format!("symbol,date,ts_ns,price,size,code\nA,2021-01-04,{},10.00,1,\n", session.close_ns())).unwrap();
        assert!(matches!(read_ticks(&p, &session), Err(Error::Validation(_))));
        fs::write(&p, "symbol,date,ts_ns,price,size,code\nA,2021-01-04,34200000000000,0,1,\n").unwrap();
        assert!(matches!(read_ticks(&p, &session), Err(Error::Validation(_))));
        fs::write(&p, "symbol,date,ts_ns,price,size,code\nA,2021-01-04,34200000000000,1.0,0,\n").unwrap();
        assert!(matches!(read_ticks(&p, &session), Err(Error::Validation(_))));
        fs::write(&p, "symbol,date,ts_ns,price,size,code\nA,2021-01-04,34200000000000,1.0,1,\nA,2021-01-04,oops,1.0,1,\n").unwrap();
        match read_ticks(&p, &session) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_sorts_stably_by_partition_and_time() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mixed.ticks.csv");
        let body = "symbol,date,ts_ns,price,size,code\n\
            B,2021-01-04,34200000000005,1.00,1,\n\
            A,2021-01-04,34200000000009,2.00,1,\n\
            A,2021-01-04,34200000000001,3.00,1,\n\
            A,2021-01-04,34200000000001,4.00,1,X\n";
        fs::write(&p, body).unwrap();
        let t = read_ticks(&p, &SessionSpec::default()).unwrap();
        let prices: Vec<f64> = t.iter().map(|t| t.price).collect();
        assert_eq!(prices, vec![3.0, 4.0, 2.0, 1.0]);
        assert_eq!(partitions(&t).len(), 2);
    }

    #[test]
    fn generated_minutes_have_at_least_tick_base_trades() {
        let cfg = small_cfg();
        let session = SessionSpec::default();
        let curve = cfg.curve(&session);
        let ticks = generate_partition(&cfg, &session, &curve, 0, 0, cfg.start_date);
        let mut counts = vec![0u32; session.minutes_per_day as usize];
        for t in &ticks {
            assert!(session.contains(t.ts));
            assert!(t.price > 0.0 && t.size > 0);
            counts[session.minute_of(t.ts).unwrap() as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c >= cfg.tick_base));
        assert!(ticks.windows(2).all(|w| w[0].ts < w[1].ts), "strictly increasing times");
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let cfg = small_cfg();
        let session = SessionSpec::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = generate_ticks(&cfg, &session, a.path(), Exec::Parallel).unwrap();
        let pb = generate_ticks(&cfg, &session, b.path(), Exec::Sequential).unwrap();
        assert_eq!(pa.len(), 1);
        assert_eq!(fs::read(&pa[0]).unwrap(), fs::read(&pb[0]).unwrap());
        // and the file reads back to the in-memory partition
        let read = read_ticks(&pa[0], &session).unwrap();
        let curve = cfg.curve(&session);
        assert_eq!(read, generate_partition(&cfg, &session, &curve, 0, 0, cfg.start_date));
    }

    #[test]
    fn tick_offsets_are_distinct_even_when_crowded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let offs = tick_offsets(&mut rng, 50, 60);
        assert!(offs.windows(2).all(|w| w[0] < w[1]));
        assert!(*offs.last().unwrap() < 60 && offs[0] >= 0);
    }

    #[test]
    fn config_validation() {
        let s = SessionSpec::default();
        assert!(SynthConfig::default().validate(&s).is_ok());
        let c = SynthConfig {
            vol_curve: vec![1.0; 10],
            ..SynthConfig::default()
        };
        assert!(c.validate(&s).is_err());
        let c = SynthConfig {
            off_exchange_fraction: 1.5,
            ..SynthConfig::default()
        };
        assert!(c.validate(&s).is_err());
        assert!(SessionSpec {
            bar_width_ns: 0,
            ..SessionSpec::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn trading_days_skip_weekends() {
        let d = trading_days(NaiveDate::from_ymd_opt(2021, 1, 7).unwrap(), 4);
        let s: Vec<String> = d.iter().map(|d| d.to_string()).collect();
        assert_eq!(s, ["2021-01-07", "2021-01-08", "2021-01-11", "2021-01-12"]);
    }

    #[test]
    fn price_formatting() {
        assert_eq!(format_price(100.0), "100.00");
        assert_eq!(format_price(99.1234), "99.1234");
        assert_eq!(format_price(5.5), "5.50");
        assert_eq!(format_price(12.345), "12.345");
    }
}
