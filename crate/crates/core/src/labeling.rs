//! Slope-detection trend labels.
//!
//! For day `d` and half-width `K` the labeler looks at the 2K closes
//! `d-K+1 ..= d+K`. The slope is the forward aggregate (closes after `d`)
//! minus the backward aggregate (closes up to and including `d`); the mean and
//! population standard deviation of the 2K closes form the threshold band.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendLabel {
    RisePlus = 0,
    Rise = 1,
    Fall = 2,
    FallPlus = 3,
}

impl TrendLabel {
    pub const ALL: [TrendLabel; 4] = [
        TrendLabel::RisePlus,
        TrendLabel::Rise,
        TrendLabel::Fall,
        TrendLabel::FallPlus,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TrendLabel::RisePlus => "rise_plus",
            TrendLabel::Rise => "rise",
            TrendLabel::Fall => "fall",
            TrendLabel::FallPlus => "fall_plus",
        }
    }

    pub fn is_rise_family(self) -> bool {
        matches!(self, TrendLabel::RisePlus | TrendLabel::Rise)
    }

    /// Two-level merge: plus labels collapse onto their plain sign.
    pub fn merged(self) -> Self {
        if self.is_rise_family() {
            TrendLabel::Rise
        } else {
            TrendLabel::Fall
        }
    }
}

impl fmt::Display for TrendLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrendLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAggregate {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingConfig {
    pub k: usize,
    #[serde(default)]
    pub window_aggregate: WindowAggregate,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            k: 3,
            window_aggregate: WindowAggregate::Mean,
        }
    }
}

impl LabelingConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("labeling.k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeStats {
    pub f_bar: f64,
    pub b_bar: f64,
    pub delta: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Window statistics on a slice of closes; `None` when `[d-K+1, d+K]` is not inside it.
pub fn slope_stats_closes(closes: &[f64], d: usize, cfg: &LabelingConfig) -> Option<SlopeStats> {
    let k = cfg.k;
    if k == 0 || d + 1 < k || d + k >= closes.len() {
        return None;
    }
    let back = &closes[d + 1 - k..=d];
    let fwd = &closes[d + 1..=d + k];
    let back_sum: f64 = back.iter().sum();
    let fwd_sum: f64 = fwd.iter().sum();
    let (f_bar, b_bar) = match cfg.window_aggregate {
        WindowAggregate::Mean => (fwd_sum / k as f64, back_sum / k as f64),
        WindowAggregate::Sum => (fwd_sum, back_sum),
    };
    let n = (2 * k) as f64;
    let mu = (back_sum + fwd_sum) / n;
    let ss: f64 = back.iter().chain(fwd).map(|p| (p - mu) * (p - mu)).sum();
    Some(SlopeStats {
        f_bar,
        b_bar,
        delta: f_bar - b_bar,
        mu,
        sigma: (ss / n).sqrt(),
    })
}

pub fn slope_stats(series: &PriceSeries, d: usize, cfg: &LabelingConfig) -> Result<SlopeStats> {
    slope_stats_closes(&series.closes(), d, cfg).ok_or_else(|| {
        Error::Invalid(format!(
            "day {d} has no full {}-day window in a series of {} bars",
            2 * cfg.k,
            series.len()
        ))
    })
}

/// Applies the four-way rule to precomputed statistics.
pub fn classify(close: f64, s: &SlopeStats) -> Option<TrendLabel> {
    if s.delta > 0.0 {
        if close > s.mu + s.sigma {
            Some(TrendLabel::RisePlus)
        } else {
            Some(TrendLabel::Rise)
        }
    } else if s.delta < 0.0 {
        if close < s.mu - s.sigma {
            Some(TrendLabel::FallPlus)
        } else {
            Some(TrendLabel::Fall)
        }
    } else {
        None
    }
}

fn label_closes(closes: &[f64], d: usize, cfg: &LabelingConfig) -> Option<TrendLabel> {
    slope_stats_closes(closes, d, cfg).and_then(|s| classify(closes[d], &s))
}

pub fn label_day(series: &PriceSeries, d: usize, cfg: &LabelingConfig) -> Option<TrendLabel> {
    label_closes(&series.closes(), d, cfg)
}

/// Labels aligned index-by-index with the series bars.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub stock_id: String,
    pub dates: Vec<NaiveDate>,
    pub labels: Vec<Option<TrendLabel>>,
}

impl LabelSequence {
    pub fn get(&self, date: NaiveDate) -> Option<TrendLabel> {
        self.dates
            .binary_search(&date)
            .ok()
            .and_then(|i| self.labels[i])
    }

    pub fn labeled(&self) -> impl Iterator<Item = (NaiveDate, TrendLabel)> + '_ {
        self.dates
            .iter()
            .zip(&self.labels)
            .filter_map(|(d, l)| l.map(|l| (*d, l)))
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    pub fn to_map(&self) -> BTreeMap<NaiveDate, TrendLabel> {
        self.labeled().collect()
    }
}

pub fn label_series(series: &PriceSeries, cfg: &LabelingConfig) -> LabelSequence {
    let closes = series.closes();
    let dates: Vec<NaiveDate> = series.dates().collect();
    if cfg.k == 0 || closes.len() < 2 * cfg.k {
        log::warn!(
            "{}: {} bars is shorter than the {}-day labeling window; no labels",
            series.stock_id,
            closes.len(),
            2 * cfg.k
        );
        return LabelSequence {
            stock_id: series.stock_id.clone(),
            labels: vec![None; dates.len()],
            dates,
        };
    }
    let labels = (0..closes.len())
        .map(|d| label_closes(&closes, d, cfg))
        .collect();
    LabelSequence {
        stock_id: series.stock_id.clone(),
        dates,
        labels,
    }
}

/// `sigma / close` for every labelable day.
pub fn sigma_ratio_series(series: &PriceSeries, cfg: &LabelingConfig) -> Vec<(NaiveDate, f64)> {
    let closes = series.closes();
    series
        .dates()
        .enumerate()
        .filter_map(|(d, date)| {
            slope_stats_closes(&closes, d, cfg).map(|s| (date, s.sigma / closes[d]))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quartiles {
        count: v.len(),
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// Per-calendar-year box-plot summary of pooled ratios.
pub fn yearly_quartiles(ratios: &[(NaiveDate, f64)]) -> BTreeMap<i32, Quartiles> {
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for (d, r) in ratios {
        by_year.entry(d.year()).or_default().push(*r);
    }
    by_year
        .into_iter()
        .filter_map(|(y, v)| quartiles(&v).map(|q| (y, q)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::Bar;
    use proptest::prelude::*;

    fn series_from(closes: &[f64]) -> PriceSeries {
        let base = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        PriceSeries::new(
            "T",
            closes
                .iter()
                .enumerate()
                .map(|(i, &c)| Bar {
                    date: base + chrono::Duration::days(i as i64),
                    open: c,
                    high: c,
                    low: c,
                    close: c,
                    volume: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Independent labeler: recomputes every window statistic from scratch
    /// with explicit index arithmetic over `i = -K+1 ..= K`.
    fn brute_label(closes: &[f64], d: usize, k: usize) -> Option<TrendLabel> {
        let (d, k) = (d as i64, k as i64);
        if d - k + 1 < 0 || d + k >= closes.len() as i64 {
            return None;
        }
        let p = |i: i64| closes[(d + i) as usize];
        let f = (1..=k).map(p).sum::<f64>() / k as f64;
        let b = (-k + 1..=0).map(p).sum::<f64>() / k as f64;
        let mu = (-k + 1..=k).map(p).sum::<f64>() / (2 * k) as f64;
        let sigma =
            ((-k + 1..=k).map(|i| (p(i) - mu).powi(2)).sum::<f64>() / (2 * k) as f64).sqrt();
        let delta = f - b;
        let c = p(0);
        if c > mu + sigma && delta > 0.0 {
            Some(TrendLabel::RisePlus)
        } else if delta > 0.0 {
            Some(TrendLabel::Rise)
        } else if c < mu - sigma && delta < 0.0 {
            Some(TrendLabel::FallPlus)
        } else if delta < 0.0 {
            Some(TrendLabel::Fall)
        } else {
            None
        }
    }

    #[test]
    fn constant_series_has_zero_slope_and_spread() {
        let s = series_from(&[100.0; 10]);
        let st = slope_stats(&s, 4, &LabelingConfig::with_k(3)).unwrap();
        assert_eq!(
            (st.f_bar, st.b_bar, st.mu, st.delta, st.sigma),
            (100.0, 100.0, 100.0, 0.0, 0.0)
        );
        assert_eq!(label_day(&s, 4, &LabelingConfig::with_k(3)), None);
        assert!(sigma_ratio_series(&s, &LabelingConfig::with_k(3))
            .iter()
            .all(|(_, r)| *r == 0.0));
    }

    #[test]
    fn one_to_six_window() {
        // oracle by hand: mean 3.5, squared deviations sum to 17.5
        let s = series_from(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let cfg = LabelingConfig::with_k(3);
        let st = slope_stats(&s, 2, &cfg).unwrap();
        assert_eq!(st.f_bar, 5.0);
        assert_eq!(st.b_bar, 2.0);
        assert_eq!(st.delta, 3.0);
        assert_eq!(st.mu, 3.5);
        assert!((st.sigma - (17.5f64 / 6.0).sqrt()).abs() < 1e-15);
        assert!((st.sigma - 1.7078).abs() < 1e-4);
        assert_eq!(label_day(&s, 2, &cfg), Some(TrendLabel::Rise));
        let ratios = sigma_ratio_series(&s, &cfg);
        assert_eq!(ratios.len(), 1);
        assert!((ratios[0].1 - (17.5f64 / 6.0).sqrt() / 3.0).abs() < 1e-15);
        assert!((ratios[0].1 - 0.5693).abs() < 1e-4);
    }

    #[test]
    fn descending_mirror_is_fall() {
        let s = series_from(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let cfg = LabelingConfig::with_k(3);
        assert_eq!(label_day(&s, 2, &cfg), Some(TrendLabel::Fall));
        // d=3 lacks a 3-day forward window
        assert_eq!(label_day(&s, 3, &cfg), None);
        let longer = series_from(&[8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(label_day(&longer, 3, &cfg), Some(TrendLabel::Fall));
    }

    #[test]
    fn window_out_of_range_is_an_error() {
        let s = series_from(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let cfg = LabelingConfig::with_k(3);
        assert!(slope_stats(&s, 1, &cfg).is_err());
        assert!(slope_stats(&s, 3, &cfg).is_err());
    }

    #[test]
    fn arithmetic_series_delta_is_slope_times_k() {
        for k in [1usize, 2, 3, 5] {
            let closes: Vec<f64> = (0..40).map(|i| 10.0 + 0.37 * i as f64).collect();
            let s = series_from(&closes);
            let cfg = LabelingConfig::with_k(k);
            for d in k - 1..40 - k {
                let st = slope_stats(&s, d, &cfg).unwrap();
                assert!(((st.delta - 0.37 * k as f64) / (0.37 * k as f64)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sum_aggregate_scales_delta_by_k() {
        let closes: Vec<f64> = (0..20).map(|i| 5.0 + (i as f64).sin()).collect();
        let mean = LabelingConfig::with_k(3);
        let sum = LabelingConfig {
            window_aggregate: WindowAggregate::Sum,
            ..mean
        };
        for d in 2..17 {
            let a = slope_stats_closes(&closes, d, &mean).unwrap();
            let b = slope_stats_closes(&closes, d, &sum).unwrap();
            assert!((b.delta - 3.0 * a.delta).abs() < 1e-12);
            assert_eq!(a.sigma, b.sigma);
            assert_eq!(
                classify(closes[d], &a).map(TrendLabel::is_rise_family),
                classify(closes[d], &b).map(TrendLabel::is_rise_family)
            );
        }
    }

    #[test]
    fn single_peak_marks_rise_plus_at_the_top() {
        // steady climb, a spike at day 20, then a slow decline from just below it
        let closes: Vec<f64> = (0..41)
            .map(|i| match i {
                0..20 => 100.0 + i as f64,
                20 => 135.0,
                _ => 150.0 - i as f64,
            })
            .collect();
        let s = series_from(&closes);
        let cfg = LabelingConfig::with_k(3);
        let labels = label_series(&s, &cfg);
        let plus: Vec<usize> = labels
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(TrendLabel::RisePlus))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(plus, vec![20]);
        assert_eq!(brute_label(&closes, 20, 3), Some(TrendLabel::RisePlus));
    }

    #[test]
    fn exact_2k_length_labels_one_day() {
        let s = series_from(&[1.0, 3.0, 2.0, 5.0, 4.0, 7.0]);
        let l = label_series(&s, &LabelingConfig::with_k(3));
        assert_eq!(l.labeled_count(), 1);
        assert!(l.labels[2].is_some());
        let short = label_series(&series_from(&[1.0, 2.0, 3.0]), &LabelingConfig::with_k(3));
        assert_eq!(short.labeled_count(), 0);
    }

    #[test]
    fn increasing_series_has_only_rise_family() {
        let closes: Vec<f64> = (0..60).map(|i| 1.0 + (i as f64).powf(1.3)).collect();
        let l = label_series(&series_from(&closes), &LabelingConfig::with_k(4));
        assert!(l.labels.iter().flatten().all(|x| x.is_rise_family()));
        assert_eq!(l.labeled_count(), 60 - 7);
        // first K-1 and last K days unlabeled
        assert!(l.labels[..3].iter().all(Option::is_none));
        assert!(l.labels[56..].iter().all(Option::is_none));
    }

    #[test]
    fn random_walk_matches_brute_force() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, &[]);
        let mut p = 100.0;
        let closes: Vec<f64> = (0..200)
            .map(|_| {
                p *= 1.0 + rng.random_range(-0.02..0.02);
                p
            })
            .collect();
        let l = label_series(&series_from(&closes), &LabelingConfig::with_k(3));
        for d in 0..200 {
            assert_eq!(l.labels[d], brute_label(&closes, d, 3), "day {d}");
        }
    }

    #[test]
    fn quartile_summary() {
        let q = quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        let q = quartiles(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
        assert!(quartiles(&[]).is_none());
    }

    #[test]
    fn label_names_round_trip() {
        for l in TrendLabel::ALL {
            assert_eq!(l.name().parse::<TrendLabel>().unwrap(), l);
            assert_eq!(TrendLabel::from_ordinal(l.ordinal()), Some(l));
        }
        assert!("up".parse::<TrendLabel>().is_err());
    }

    proptest! {
        #[test]
        fn scale_invariance_and_reversal(
            steps in prop::collection::vec(-0.05f64..0.05, 20..80),
            k in 1usize..6,
            scale in 0.01f64..1000.0,
        ) {
            let mut p = 50.0;
            let closes: Vec<f64> = steps.iter().map(|s| { p *= 1.0 + s; p }).collect();
            let cfg = LabelingConfig::with_k(k);
            let base = label_series(&series_from(&closes), &cfg);
            let scaled: Vec<f64> = closes.iter().map(|c| c * scale).collect();
            let ratios_a = sigma_ratio_series(&series_from(&closes), &cfg);
            let ratios_b = sigma_ratio_series(&series_from(&scaled), &cfg);
            for (a, b) in ratios_a.iter().zip(&ratios_b) {
                prop_assert!((a.1 - b.1).abs() <= 1e-10 * a.1.abs() + 1e-12);
            }
            // labels are compared away from floating ties
            for d in 0..closes.len() {
                if let (Some(a), Some(b)) = (
                    slope_stats_closes(&closes, d, &cfg),
                    slope_stats_closes(&scaled, d, &cfg),
                ) {
                    let tie = a.delta.abs() < 1e-9 * a.mu
                        || ((closes[d] - a.mu).abs() - a.sigma).abs() < 1e-9 * a.mu;
                    if !tie {
                        prop_assert_eq!(classify(closes[d], &a), classify(scaled[d], &b));
                    }
                }
            }
            // reversal: delta flips sign at the mirrored index
            let rev: Vec<f64> = closes.iter().rev().copied().collect();
            let n = closes.len();
            for d in 0..n {
                let Some(a) = slope_stats_closes(&closes, d, &cfg) else { continue };
                // the window [d-K+1, d+K] maps to [n-1-d-K, n-1-d+K-1], centered on n-2-d
                let m = n - 2 - d;
                let b = slope_stats_closes(&rev, m, &cfg).unwrap();
                prop_assert!((a.delta + b.delta).abs() < 1e-9 * a.mu);
                let la = base.labels[d];
                if a.delta.abs() > 1e-9 * a.mu {
                    let lb = classify(rev[m], &b);
                    prop_assert_eq!(la.map(TrendLabel::is_rise_family), lb.map(|l| !l.is_rise_family()));
                }
                if la == Some(TrendLabel::RisePlus) {
                    prop_assert!(a.delta > 0.0);
                }
                if la == Some(TrendLabel::FallPlus) {
                    prop_assert!(a.delta < 0.0);
                }
            }
        }
    }
}
