//! Long-only, equally weighted portfolio driven by predicted labels.
//!
//! Each trading day, at that day's close: held stocks whose signal is not a
//! buy signal are sold, all cash is pooled, and the pool is split evenly
//! across every stock signalled to buy, netting against existing holdings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::PredictionRecord;
use crate::labeling::TrendLabel;
use crate::market_data::{write_atomic, Universe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub initial_capital: f64,
    pub buy_signals: BTreeSet<TrendLabel>,
    pub sell_signals: BTreeSet<TrendLabel>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            initial_capital: 1.0,
            buy_signals: [TrendLabel::Rise].into(),
            sell_signals: [TrendLabel::RisePlus, TrendLabel::Fall, TrendLabel::FallPlus].into(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_capital.is_finite() && self.initial_capital > 0.0) {
            return Err(Error::Config("initial_capital must be positive".into()));
        }
        if let Some(l) = self.buy_signals.intersection(&self.sell_signals).next() {
            return Err(Error::Config(format!(
                "{l} is both a buy and a sell signal"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub stock_id: String,
    pub side: Side,
    pub shares: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub date: NaiveDate,
    pub holdings: BTreeMap<String, f64>,
    pub cash: f64,
    pub total_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub initial: f64,
    pub points: Vec<(NaiveDate, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub curve: EquityCurve,
    pub trades: Vec<Trade>,
    /// End-of-day portfolio after marking to market.
    pub states: Vec<PortfolioState>,
    /// Largest `|after - before| / before` seen at a rebalance.
    pub max_rebalance_drift: f64,
}

fn price(universe: &Universe, stock: &str, date: NaiveDate) -> Result<f64> {
    universe
        .close(stock, date)
        .ok_or_else(|| Error::MissingPrice {
            stock: stock.to_string(),
            date,
        })
}

pub fn run_backtest(
    records: &[PredictionRecord],
    universe: &Universe,
    cfg: &BacktestConfig,
) -> Result<BacktestResult> {
    cfg.validate()?;
    let mut by_day: BTreeMap<NaiveDate, BTreeMap<&str, TrendLabel>> = BTreeMap::new();
    for r in records {
        by_day
            .entry(r.date)
            .or_default()
            .insert(&r.stock_id, r.predicted);
    }
    if by_day.is_empty() {
        return Err(Error::EmptyDataset(
            "no prediction records to trade on".into(),
        ));
    }

    let mut cash = cfg.initial_capital;
    let mut holdings: BTreeMap<String, f64> = BTreeMap::new();
    let mut trades = Vec::new();
    let mut points = Vec::with_capacity(by_day.len());
    let mut states = Vec::with_capacity(by_day.len());
    let mut max_drift: f64 = 0.0;

    for (&date, signals) in &by_day {
        let mut prices: BTreeMap<String, f64> = BTreeMap::new();
        for id in holdings.keys() {
            prices.insert(id.clone(), price(universe, id, date)?);
        }
        let value_before = cash + holdings.iter().map(|(id, s)| s * prices[id]).sum::<f64>();

        // sell everything not signalled to buy (including missing signals)
        let exits: Vec<String> = holdings
            .keys()
            .filter(|id| {
                !signals
                    .get(id.as_str())
                    .is_some_and(|l| cfg.buy_signals.contains(l))
            })
            .cloned()
            .collect();
        for id in exits {
            let shares = holdings.remove(&id).expect("held");
            cash += shares * prices[&id];
            trades.push(Trade {
                date,
                stock_id: id.clone(),
                side: Side::Sell,
                shares,
                price: prices[&id],
            });
        }

        let buys: Vec<&str> = signals
            .iter()
            .filter(|(_, l)| cfg.buy_signals.contains(l))
            .map(|(id, _)| *id)
            .collect();
        if !buys.is_empty() {
            for id in &buys {
                if !prices.contains_key(*id) {
                    prices.insert(id.to_string(), price(universe, id, date)?);
                }
            }
            let pool = cash + holdings.iter().map(|(id, s)| s * prices[id]).sum::<f64>();
            let per_stock = pool / buys.len() as f64;
            for id in &buys {
                let p = prices[*id];
                let target = per_stock / p;
                let current = holdings.get(*id).copied().unwrap_or(0.0);
                let delta = target - current;
                if delta != 0.0 {
                    trades.push(Trade {
                        date,
                        stock_id: id.to_string(),
                        side: if delta > 0.0 { Side::Buy } else { Side::Sell },
                        shares: delta.abs(),
                        price: p,
                    });
                }
                holdings.insert(id.to_string(), target);
            }
            cash = 0.0;
        }

        let value = cash + holdings.iter().map(|(id, s)| s * prices[id]).sum::<f64>();
        if value_before > 0.0 {
            max_drift = max_drift.max((value - value_before).abs() / value_before);
        }
        points.push((date, value));
        states.push(PortfolioState {
            date,
            holdings: holdings.clone(),
            cash,
            total_value: value,
        });
    }
    Ok(BacktestResult {
        curve: EquityCurve {
            initial: cfg.initial_capital,
            points,
        },
        trades,
        states,
        max_rebalance_drift: max_drift,
    })
}

pub fn cumulative_return(curve: &EquityCurve) -> f64 {
    match curve.points.last() {
        Some(&(_, v)) => v / curve.initial - 1.0,
        None => 0.0,
    }
}

/// Return within each calendar year, measured from the previous year's
/// last value (or the initial capital).
pub fn yearly_returns(curve: &EquityCurve) -> BTreeMap<i32, f64> {
    let mut out = BTreeMap::new();
    let mut base = curve.initial;
    let mut year_end: BTreeMap<i32, f64> = BTreeMap::new();
    for &(d, v) in &curve.points {
        year_end.insert(d.year(), v);
    }
    for (y, v) in year_end {
        out.insert(y, v / base - 1.0);
        base = v;
    }
    out
}

pub fn write_equity(path: &Path, curve: &EquityCurve, config_hash: &str) -> Result<()> {
    let mut out = format!(
        "{}{config_hash}\ndate,total_value\n",
        crate::finetune::CONFIG_HASH_PREFIX
    );
    for (d, v) in &curve.points {
        out.push_str(&format!("{d},{v}\n"));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_trades(path: &Path, trades: &[Trade], config_hash: &str) -> Result<()> {
    let mut out = format!(
        "{}{config_hash}\ndate,stock_id,side,shares,price\n",
        crate::finetune::CONFIG_HASH_PREFIX
    );
    for t in trades {
        let side = match t.side {
            Side::Buy => "buy",
            Side::Sell => "sell",
        };
        out.push_str(&format!(
            "{},{},{side},{},{}\n",
            t.date, t.stock_id, t.shares, t.price
        ));
    }
    write_atomic(path, out.as_bytes())
}
