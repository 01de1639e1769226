use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use barlab_core::bars::{build_bars, Bar, BarBuildConfig};
use barlab_core::ingest::{SessionSpec, Tick};
use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CODES: [&str; 4] = ["", "", "X", "F"];

fn config() -> BarBuildConfig {
    BarBuildConfig {
        excluded_codes: BTreeSet::from(["X".to_string()]),
        session: SessionSpec::default(),
    }
}

fn random_ticks(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tick> {
    let s = SessionSpec::default();
    let day = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    let minutes = rng.random_range(1..=4u32);
    let mut ts: Vec<i64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0..minutes);
            // coarse offsets force timestamp ties
            s.bar_start(m) + rng.random_range(0..50i64) * 1_000_000_000
        })
        .collect();
    ts.sort_unstable();
    ts.into_iter()
        .map(|t| Tick {
            symbol: "S001".into(),
            day,
            ts: t,
            // a small price grid forces price ties
            price: 100.0 + rng.random_range(-8..=8i32) as f64 * 0.25,
            size: rng.random_range(1..=900),
            code: CODES[rng.random_range(0..CODES.len())].into(),
        })
        .collect()
}

/// Straightforward scan per minute, with no shared state across minutes.
fn naive(ticks: &[Tick], cfg: &BarBuildConfig) -> Vec<Bar> {
    let s = &cfg.session;
    let minutes: BTreeSet<u32> = ticks.iter().map(|t| s.minute_of(t.ts).unwrap()).collect();
    let mut out = Vec::new();
    for m in minutes {
        let all: Vec<&Tick> = ticks.iter().filter(|t| s.minute_of(t.ts) == Some(m)).collect();
        let inc: Vec<&Tick> = all.iter().copied().filter(|t| !cfg.excluded_codes.contains(&t.code)).collect();
        if inc.is_empty() {
            continue;
        }
        let high = inc.iter().map(|t| t.price).fold(f64::MIN, f64::max);
        let low = inc.iter().map(|t| t.price).fold(f64::MAX, f64::min);
        let high_ts = inc.iter().find(|t| t.price == high).unwrap().ts;
        let low_ts = inc.iter().find(|t| t.price == low).unwrap().ts;
        let volume: u64 = inc.iter().map(|t| t.size).sum();
        let dollar: f64 = inc.iter().map(|t| t.price * t.size as f64).sum();
        let mut per_code: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for t in all.iter().filter(|t| !t.code.is_empty()) {
            let e = per_code.entry(t.code.clone()).or_default();
            e.0 += t.size;
            e.1 += 1;
        }
        let mut b = Bar {
            symbol: inc[0].symbol.clone(),
            day: inc[0].day,
            minute: m,
            open: inc[0].price,
            high,
            low,
            close: inc[inc.len() - 1].price,
            open_ts: inc[0].ts,
            high_ts,
            low_ts,
            close_ts: inc[inc.len() - 1].ts,
            vwap: dollar / volume as f64,
            volume,
            dollar_volume: dollar,
            tick_count: inc.len() as u32,
            per_code: BTreeMap::new(),
        };
        for (k, (v, n)) in per_code {
            b.per_code.insert(k, barlab_core::bars::CodeStats { volume: v, ticks: n });
        }
        out.push(b);
    }
    out
}

#[test]
fn thousand_random_partitions_match_the_naive_scan() {
    let cfg = config();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t0 = Instant::now();
    for case in 0..1000 {
        let n = rng.random_range(1..=500);
        let ticks = random_ticks(&mut rng, n);
        let got = build_bars(&ticks, &cfg).unwrap();
        let want = naive(&ticks, &cfg);
        assert_eq!(got.len(), want.len(), "case {case}");
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(
                (g.minute, g.open, g.high, g.low, g.close),
                (w.minute, w.open, w.high, w.low, w.close),
                "case {case}"
            );
            assert_eq!((g.open_ts, g.high_ts, g.low_ts, g.close_ts), (w.open_ts, w.high_ts, w.low_ts, w.close_ts));
            assert_eq!((g.volume, g.tick_count), (w.volume, w.tick_count));
            assert!(((g.vwap - w.vwap) / w.vwap).abs() <= 1e-12, "case {case}: {} vs {}", g.vwap, w.vwap);
            assert_eq!(g.per_code, w.per_code, "case {case}");
        }
    }
    assert!(t0.elapsed().as_secs_f64() < 5.0, "took {:?}", t0.elapsed());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bar_invariants(seed in any::<u64>(), n in 1usize..300) {
        let cfg = config();
        let ticks = random_ticks(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let bars = build_bars(&ticks, &cfg).unwrap();
        let included = ticks.iter().filter(|t| t.code != "X").count() as u32;
        prop_assert_eq!(bars.iter().map(|b| b.tick_count).sum::<u32>(), included);
        for w in bars.windows(2) {
            prop_assert!(w[0].minute < w[1].minute);
        }
        for b in &bars {
            prop_assert!(b.low <= b.open.min(b.close) && b.open.max(b.close) <= b.high);
            prop_assert!(b.low <= b.vwap && b.vwap <= b.high);
            prop_assert!(b.open_ts <= b.high_ts.min(b.low_ts) && b.high_ts.max(b.low_ts) <= b.close_ts);
        }
    }

    #[test]
    fn shuffling_ties_keeps_ohlc_prices(seed in any::<u64>()) {
        // reversing trades that share a timestamp may move timestamps of
        // first occurrence but never the extreme prices or the VWAP
        let cfg = config();
        let ticks = random_ticks(&mut ChaCha8Rng::seed_from_u64(seed), 200);
        let mut rev = ticks.clone();
        let mut i = 0;
        while i < rev.len() {
            let j = (i..rev.len()).take_while(|&j| rev[j].ts == rev[i].ts).last().unwrap() + 1;
            rev[i..j].reverse();
            i = j;
        }
        let (a, b) = (build_bars(&ticks, &cfg).unwrap(), build_bars(&rev, &cfg).unwrap());
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((x.high, x.low, x.vwap, x.volume), (y.high, y.low, y.vwap, y.volume));
        }
    }
}
