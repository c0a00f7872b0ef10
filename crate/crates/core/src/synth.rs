//! Synthetic price universes for tests and end-to-end runs.
//!
//! The `pattern` family repeats a short fixed motif per stock. Under slope
//! detection with `K = 3` every position of the motif always receives the
//! same label, so each label is a fixed function of the preceding window.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::TrendLabel;
use crate::market_data::{write_csv, AlignmentPolicy, Bar, PriceSeries, UniverseManifest};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    RandomWalk,
    Pattern,
    SinglePeak,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::RandomWalk => "random-walk",
            Family::Pattern => "pattern",
            Family::SinglePeak => "single-peak",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-walk" => Ok(Family::RandomWalk),
            "pattern" => Ok(Family::Pattern),
            "single-peak" => Ok(Family::SinglePeak),
            other => Err(Error::Invalid(format!(
                "unknown family {other:?} (random-walk, pattern, single-peak)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub stocks: usize,
    pub days: usize,
    pub family: Family,
    pub seed: u64,
    /// First trading day; weekends are skipped.
    pub start: NaiveDate,
}

impl SynthSpec {
    pub fn new(stocks: usize, days: usize, family: Family, seed: u64) -> Self {
        Self {
            stocks,
            days,
            family,
            seed,
            start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stocks == 0 {
            return Err(Error::Invalid(
                "synthetic universe needs at least one stock".into(),
            ));
        }
        if self.days < 2 {
            return Err(Error::Invalid(
                "synthetic series need at least two days".into(),
            ));
        }
        Ok(())
    }
}

/// Close offsets of the motifs the pattern family cycles through, one per
/// stock in turn. A motif of length `2r + 2` labels as `r` rise days, one
/// rise_plus, `r` fall days and one fall_plus, with every slope and band
/// test clear of its threshold by at least 5% of the motif's range.
const MOTIFS: [&[f64]; 4] = [
    &[-9.0, 5.0, 8.0, -6.0],
    &[-1.0, -3.0, 3.0, 1.0, 3.0, -3.0],
    &[-8.0, -4.0, 3.0, 3.0, -1.0, -8.0],
    &[-6.0, -2.0, 5.0, 1.0, 5.0, -6.0],
];

/// One cycle of stock `i`'s pattern: close offsets with the label each day
/// receives when the cycle repeats.
pub fn pattern_cycle(i: usize) -> Vec<(f64, TrendLabel)> {
    let motif = MOTIFS[i % MOTIFS.len()];
    let r = motif.len() / 2 - 1;
    let labels = std::iter::repeat_n(TrendLabel::Rise, r)
        .chain([TrendLabel::RisePlus])
        .chain(std::iter::repeat_n(TrendLabel::Fall, r))
        .chain([TrendLabel::FallPlus]);
    motif.iter().copied().zip(labels).collect()
}

/// Share of each class (by ordinal) planted in stock `i`'s cycle.
pub fn planted_proportions(i: usize) -> [f64; 4] {
    let cycle = pattern_cycle(i);
    let mut counts = [0.0; 4];
    for (_, l) in &cycle {
        counts[l.ordinal()] += 1.0;
    }
    counts.map(|c| c / cycle.len() as f64)
}

// single-peak family: a one-day jump at the midpoint, then a partial give-back
const PEAK_JUMP: f64 = 8.5;
const PEAK_GIVE_BACK: f64 = 1.7;

fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn bars_from_closes<R: Rng>(
    dates: &[NaiveDate],
    closes: &[f64],
    wick: f64,
    rng: &mut R,
    jitter: bool,
) -> Vec<Bar> {
    let mut prev = closes[0];
    dates
        .iter()
        .zip(closes)
        .map(|(&date, &close)| {
            let open = prev;
            prev = close;
            let (up, down) = if jitter {
                (rng.random_range(0.0..wick), rng.random_range(0.0..wick))
            } else {
                (wick, wick)
            };
            Bar {
                date,
                open,
                high: open.max(close) + up,
                low: (open.min(close) - down).max(open.min(close) * 0.5),
                close,
                volume: 1_000_000.0,
            }
        })
        .collect()
}

pub fn stock_id(i: usize) -> String {
    format!("SYN{i:02}")
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<PriceSeries>> {
    spec.validate()?;
    let dates = trading_days(spec.start, spec.days);
    (0..spec.stocks)
        .map(|i| {
            let mut r = rng::stream(spec.seed, &[rng::tag("synth"), i as u64]);
            let (closes, wick, jitter) = match spec.family {
                Family::RandomWalk => {
                    let mut c: f64 = r.random_range(20.0..200.0);
                    let closes = (0..spec.days)
                        .map(|_| {
                            c *= r.random_range(-0.035f64..0.035).exp();
                            c
                        })
                        .collect::<Vec<_>>();
                    let wick = closes.iter().copied().fold(f64::INFINITY, f64::min) * 0.01;
                    (closes, wick, true)
                }
                Family::Pattern => {
                    let cycle = pattern_cycle(i);
                    let phase = r.random_range(0..cycle.len());
                    let base = r.random_range(50.0..150.0);
                    let scale = r.random_range(0.5..2.0);
                    let closes = (0..spec.days)
                        .map(|t| base + scale * cycle[(t + phase) % cycle.len()].0)
                        .collect();
                    (closes, 0.1 * scale, false)
                }
                Family::SinglePeak => {
                    let base = r.random_range(50.0..150.0);
                    let mid = spec.days / 2;
                    let closes = (0..spec.days)
                        .map(|t| match t.cmp(&mid) {
                            std::cmp::Ordering::Less => base + t as f64,
                            std::cmp::Ordering::Equal => base + mid as f64 + PEAK_JUMP,
                            std::cmp::Ordering::Greater => {
                                base + mid as f64 + PEAK_JUMP
                                    - PEAK_GIVE_BACK
                                    - (t - mid - 1) as f64
                            }
                        })
                        .collect::<Vec<_>>();
                    if closes.iter().any(|&c| c <= 1.0) {
                        return Err(Error::Invalid(format!(
                            "single-peak series of {} days would reach non-positive prices",
                            spec.days
                        )));
                    }
                    (closes, 0.1, false)
                }
            };
            PriceSeries::new(
                stock_id(i),
                bars_from_closes(&dates, &closes, wick, &mut r, jitter),
            )
        })
        .collect()
}

/// Writes one CSV per stock plus `universe.json`; returns the manifest path.
pub fn write_universe(dir: &Path, series: &[PriceSeries]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stocks = BTreeMap::new();
    for s in series {
        let file = format!("{}.csv", s.stock_id);
        write_csv(s, dir.join(&file))?;
        stocks.insert(s.stock_id.clone(), PathBuf::from(file));
    }
    let manifest = UniverseManifest {
        policy: AlignmentPolicy::Intersect,
        stocks,
    };
    let path = dir.join("universe.json");
    manifest.write(&path)?;
    Ok(path)
}
