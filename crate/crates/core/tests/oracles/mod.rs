//! Deliberately naive reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use metatrend::finetune::PredictionRecord;
use metatrend::labeling::TrendLabel;
use rand::Rng;

/// Recomputes every window statistic from scratch with explicit index
/// arithmetic over `i = -K+1 ..= K`.
pub fn brute_label(closes: &[f64], d: usize, k: usize) -> Option<TrendLabel> {
    let (d, k) = (d as i64, k as i64);
    if d - k + 1 < 0 || d + k >= closes.len() as i64 {
        return None;
    }
    let p = |i: i64| closes[(d + i) as usize];
    let front = (1..=k).map(p).sum::<f64>() / k as f64;
    let back = (-k + 1..=0).map(p).sum::<f64>() / k as f64;
    let mu = (-k + 1..=k).map(p).sum::<f64>() / (2 * k) as f64;
    let sigma = ((-k + 1..=k).map(|i| (p(i) - mu).powi(2)).sum::<f64>() / (2 * k) as f64).sqrt();
    let delta = front - back;
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

#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    pub regular_accuracy: f64,
    pub balanced_accuracy: f64,
    pub weighted_f1: f64,
    pub precision: Vec<f64>,
}

/// Counts straight off the records, with `class` mapping a label to its
/// bucket and `n` buckets in total.
pub fn tally(
    records: &[(TrendLabel, TrendLabel)],
    n: usize,
    class: impl Fn(TrendLabel) -> usize,
) -> Tally {
    let total = records.len() as f64;
    let hits = records
        .iter()
        .filter(|(a, p)| class(*a) == class(*p))
        .count() as f64;
    let mut recalls = Vec::new();
    let mut precision = Vec::new();
    let mut wf1 = 0.0;
    for c in 0..n {
        let actual = records.iter().filter(|(a, _)| class(*a) == c).count() as f64;
        let predicted = records.iter().filter(|(_, p)| class(*p) == c).count() as f64;
        let both = records
            .iter()
            .filter(|(a, p)| class(*a) == c && class(*p) == c)
            .count() as f64;
        let prec = if predicted > 0.0 {
            both / predicted
        } else {
            0.0
        };
        let rec = if actual > 0.0 { both / actual } else { 0.0 };
        if actual > 0.0 {
            recalls.push(rec);
        }
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        wf1 += actual / total * f1;
        precision.push(prec);
    }
    Tally {
        regular_accuracy: hits / total,
        balanced_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        weighted_f1: wf1,
        precision,
    }
}

pub fn four(l: TrendLabel) -> usize {
    l.ordinal()
}

pub fn two(l: TrendLabel) -> usize {
    match l {
        TrendLabel::RisePlus | TrendLabel::Rise => 0,
        TrendLabel::Fall | TrendLabel::FallPlus => 1,
    }
}

pub fn random_label<R: Rng>(r: &mut R) -> TrendLabel {
    TrendLabel::ALL[r.random_range(0..4)]
}

pub fn record(
    stock: &str,
    date: NaiveDate,
    actual: TrendLabel,
    predicted: TrendLabel,
) -> PredictionRecord {
    let mut p = [0.1; 4];
    p[predicted.ordinal()] = 0.7;
    let r = PredictionRecord::new(stock.into(), date, actual, p);
    assert_eq!(r.predicted, predicted);
    r
}

/// Day-by-day accounting with plain vectors: liquidate every position that
/// is not a buy, then spread the whole portfolio value evenly over the buys.
pub fn straight_loop_final_value(
    stocks: &[String],
    days: &[NaiveDate],
    prices: &BTreeMap<(String, NaiveDate), f64>,
    signals: &BTreeMap<(String, NaiveDate), TrendLabel>,
    initial: f64,
) -> f64 {
    let mut cash = initial;
    let mut shares = vec![0.0; stocks.len()];
    for day in days {
        let px: Vec<f64> = stocks.iter().map(|s| prices[&(s.clone(), *day)]).collect();
        let is_buy: Vec<bool> = stocks
            .iter()
            .map(|s| signals.get(&(s.clone(), *day)) == Some(&TrendLabel::Rise))
            .collect();
        for i in 0..stocks.len() {
            if !is_buy[i] {
                cash += shares[i] * px[i];
                shares[i] = 0.0;
            }
        }
        let n = is_buy.iter().filter(|b| **b).count();
        if n > 0 {
            let mut value = cash;
            for i in 0..stocks.len() {
                value += shares[i] * px[i];
            }
            for i in 0..stocks.len() {
                shares[i] = if is_buy[i] {
                    value / n as f64 / px[i]
                } else {
                    0.0
                };
            }
            cash = 0.0;
        }
    }
    let last = days.last().unwrap();
    let mut value = cash;
    for (i, s) in stocks.iter().enumerate() {
        value += shares[i] * prices[&(s.clone(), *last)];
    }
    value
}
