//! Technical indicators and the 15-row feature matrix.
//!
//! Every indicator returns a full-length series whose first `warmup` cells
//! are `NaN`; callers use the warmup length (or [`FeatureMatrix::valid`])
//! rather than testing for NaN.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::market_data::PriceSeries;

pub const FEATURE_NAMES: [&str; 15] = [
    "open", "high", "low", "close", "ATR", "EMA20", "MOM6", "MOM12", "MA5", "MA10", "CCI", "MACD",
    "SMI", "ROC", "WILLR",
];

pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

/// Hex SHA-256 of the comma-joined feature names; stamped into dataset and
/// parameter files so artifacts built on a different feature layout are rejected.
pub fn feature_checksum() -> String {
    hex::encode(Sha256::digest(FEATURE_NAMES.join(",").as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum IndicatorSpec {
    Atr { period: usize },
    Ema { period: usize },
    Mom { period: usize },
    Ma { period: usize },
    Cci { period: usize },
    Macd { fast: usize, slow: usize },
    Smi { period: usize, smooth: usize },
    Roc { period: usize },
    Willr { period: usize },
}

impl IndicatorSpec {
    pub fn validate(&self) -> Result<()> {
        let periods: &[usize] = match self {
            IndicatorSpec::Atr { period }
            | IndicatorSpec::Ema { period }
            | IndicatorSpec::Mom { period }
            | IndicatorSpec::Ma { period }
            | IndicatorSpec::Cci { period }
            | IndicatorSpec::Roc { period }
            | IndicatorSpec::Willr { period } => std::slice::from_ref(period),
            IndicatorSpec::Macd { fast, slow } => {
                if fast >= slow {
                    return Err(Error::Config(format!(
                        "MACD needs fast < slow, got {fast} >= {slow}"
                    )));
                }
                &[*fast, *slow]
            }
            IndicatorSpec::Smi { period, smooth } => &[*period, *smooth],
        };
        if periods.contains(&0) {
            return Err(Error::Config(format!("{self:?}: periods must be >= 1")));
        }
        Ok(())
    }

    /// Index of the first valid output cell.
    pub fn warmup(&self) -> usize {
        match *self {
            IndicatorSpec::Atr { period }
            | IndicatorSpec::Ema { period }
            | IndicatorSpec::Ma { period }
            | IndicatorSpec::Cci { period }
            | IndicatorSpec::Willr { period } => period - 1,
            IndicatorSpec::Mom { period } | IndicatorSpec::Roc { period } => period,
            IndicatorSpec::Macd { slow, .. } => slow - 1,
            IndicatorSpec::Smi { period, smooth } => period - 1 + 2 * (smooth - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Indicator {
    pub values: Vec<f64>,
    pub warmup: usize,
}

/// EMA with smoothing `2/(n+1)`, seeded by the SMA of the first `n` values
/// starting at `first`. Cells before `first + n - 1` are NaN.
fn ema_from(x: &[f64], first: usize, n: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; x.len()];
    let seed_end = first + n - 1;
    if seed_end >= x.len() {
        return out;
    }
    let alpha = 2.0 / (n as f64 + 1.0);
    let mut prev = x[first..=seed_end].iter().sum::<f64>() / n as f64;
    out[seed_end] = prev;
    for t in seed_end + 1..x.len() {
        prev = alpha * x[t] + (1.0 - alpha) * prev;
        out[t] = prev;
    }
    out
}

fn sma(x: &[f64], n: usize) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            if t + 1 < n {
                f64::NAN
            } else {
                x[t + 1 - n..=t].iter().sum::<f64>() / n as f64
            }
        })
        .collect()
}

fn rolling_extreme(x: &[f64], n: usize, max: bool) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            if t + 1 < n {
                f64::NAN
            } else {
                let w = x[t + 1 - n..=t].iter().copied();
                if max {
                    w.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    w.fold(f64::INFINITY, f64::min)
                }
            }
        })
        .collect()
}

fn true_range(high: &[f64], low: &[f64], close: &[f64]) -> Vec<f64> {
    (0..close.len())
        .map(|t| {
            let hl = high[t] - low[t];
            if t == 0 {
                hl
            } else {
                hl.max((high[t] - close[t - 1]).abs())
                    .max((low[t] - close[t - 1]).abs())
            }
        })
        .collect()
}

pub fn compute_indicator(series: &PriceSeries, spec: &IndicatorSpec) -> Result<Indicator> {
    spec.validate()?;
    let warmup = spec.warmup();
    if series.len() <= warmup {
        return Err(Error::TooShort {
            needed: warmup + 1,
            have: series.len(),
        });
    }
    let bars = series.bars();
    let close: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let high: Vec<f64> = bars.iter().map(|b| b.high).collect();
    let low: Vec<f64> = bars.iter().map(|b| b.low).collect();
    let n_bars = close.len();

    let values = match *spec {
        IndicatorSpec::Atr { period } => {
            let tr = true_range(&high, &low, &close);
            let mut out = vec![f64::NAN; n_bars];
            let mut atr = tr[..period].iter().sum::<f64>() / period as f64;
            out[period - 1] = atr;
            for t in period..n_bars {
                atr = (atr * (period - 1) as f64 + tr[t]) / period as f64;
                out[t] = atr;
            }
            out
        }
        IndicatorSpec::Ema { period } => ema_from(&close, 0, period),
        IndicatorSpec::Mom { period } => (0..n_bars)
            .map(|t| {
                if t < period {
                    f64::NAN
                } else {
                    close[t] - close[t - period]
                }
            })
            .collect(),
        IndicatorSpec::Ma { period } => sma(&close, period),
        IndicatorSpec::Cci { period } => {
            let tp: Vec<f64> = (0..n_bars)
                .map(|t| (high[t] + low[t] + close[t]) / 3.0)
                .collect();
            let avg = sma(&tp, period);
            (0..n_bars)
                .map(|t| {
                    if t + 1 < period {
                        return f64::NAN;
                    }
                    let mad = tp[t + 1 - period..=t]
                        .iter()
                        .map(|v| (v - avg[t]).abs())
                        .sum::<f64>()
                        / period as f64;
                    if mad == 0.0 {
                        0.0
                    } else {
                        (tp[t] - avg[t]) / (0.015 * mad)
                    }
                })
                .collect()
        }
        IndicatorSpec::Macd { fast, slow } => {
            let f = ema_from(&close, 0, fast);
            let s = ema_from(&close, 0, slow);
            (0..n_bars)
                .map(|t| if t + 1 < slow { f64::NAN } else { f[t] - s[t] })
                .collect()
        }
        IndicatorSpec::Smi { period, smooth } => {
            let hh = rolling_extreme(&high, period, true);
            let ll = rolling_extreme(&low, period, false);
            let first = period - 1;
            let dist: Vec<f64> = (0..n_bars)
                .map(|t| {
                    if t < first {
                        0.0
                    } else {
                        close[t] - (hh[t] + ll[t]) / 2.0
                    }
                })
                .collect();
            let range: Vec<f64> = (0..n_bars)
                .map(|t| if t < first { 0.0 } else { hh[t] - ll[t] })
                .collect();
            let d1 = ema_from(&dist, first, smooth);
            let r1 = ema_from(&range, first, smooth);
            let d2 = ema_from(&d1, first + smooth - 1, smooth);
            let r2 = ema_from(&r1, first + smooth - 1, smooth);
            (0..n_bars)
                .map(|t| {
                    if t < warmup {
                        f64::NAN
                    } else if r2[t] == 0.0 {
                        0.0
                    } else {
                        100.0 * d2[t] / (0.5 * r2[t])
                    }
                })
                .collect()
        }
        IndicatorSpec::Roc { period } => (0..n_bars)
            .map(|t| {
                if t < period {
                    f64::NAN
                } else {
                    100.0 * (close[t] / close[t - period] - 1.0)
                }
            })
            .collect(),
        IndicatorSpec::Willr { period } => {
            let hh = rolling_extreme(&high, period, true);
            let ll = rolling_extreme(&low, period, false);
            (0..n_bars)
                .map(|t| {
                    if t + 1 < period {
                        f64::NAN
                    } else if hh[t] == ll[t] {
                        0.0
                    } else {
                        -100.0 * (hh[t] - close[t]) / (hh[t] - ll[t])
                    }
                })
                .collect()
        }
    };
    Ok(Indicator { values, warmup })
}

/// Periods of the eleven indicator rows; defaults are the industry-standard
/// settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndicatorConfig {
    pub atr: usize,
    pub ema: usize,
    pub mom_short: usize,
    pub mom_long: usize,
    pub ma_short: usize,
    pub ma_long: usize,
    pub cci: usize,
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub smi_period: usize,
    pub smi_smooth: usize,
    pub roc: usize,
    pub willr: usize,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self {
            atr: 14,
            ema: 20,
            mom_short: 6,
            mom_long: 12,
            ma_short: 5,
            ma_long: 10,
            cci: 20,
            macd_fast: 12,
            macd_slow: 26,
            smi_period: 14,
            smi_smooth: 3,
            roc: 12,
            willr: 14,
        }
    }
}

impl IndicatorConfig {
    /// Specs in feature-row order (rows 4..15).
    pub fn specs(&self) -> [IndicatorSpec; 11] {
        [
            IndicatorSpec::Atr { period: self.atr },
            IndicatorSpec::Ema { period: self.ema },
            IndicatorSpec::Mom {
                period: self.mom_short,
            },
            IndicatorSpec::Mom {
                period: self.mom_long,
            },
            IndicatorSpec::Ma {
                period: self.ma_short,
            },
            IndicatorSpec::Ma {
                period: self.ma_long,
            },
            IndicatorSpec::Cci { period: self.cci },
            IndicatorSpec::Macd {
                fast: self.macd_fast,
                slow: self.macd_slow,
            },
            IndicatorSpec::Smi {
                period: self.smi_period,
                smooth: self.smi_smooth,
            },
            IndicatorSpec::Roc { period: self.roc },
            IndicatorSpec::Willr { period: self.willr },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.specs().iter().try_for_each(IndicatorSpec::validate)
    }

    pub fn max_warmup(&self) -> usize {
        self.specs()
            .iter()
            .map(IndicatorSpec::warmup)
            .max()
            .unwrap_or(0)
    }
}

/// Feature rows × trading days.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub stock_id: String,
    pub dates: Vec<NaiveDate>,
    pub feature_names: [&'static str; NUM_FEATURES],
    /// `values[row][t]`
    pub values: Vec<Vec<f64>>,
    /// First valid column of each row.
    pub warmups: [usize; NUM_FEATURES],
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn valid(&self, row: usize, t: usize) -> bool {
        t >= self.warmups[row] && t < self.len()
    }

    /// First column at which every row is valid.
    pub fn max_warmup(&self) -> usize {
        self.warmups.iter().copied().max().unwrap_or(0)
    }

    /// CSV with a date column and one column per feature; masked cells empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,");
        out.push_str(&self.feature_names.join(","));
        out.push('\n');
        for t in 0..self.len() {
            out.push_str(&self.dates[t].to_string());
            for row in 0..NUM_FEATURES {
                out.push(',');
                if self.valid(row, t) {
                    out.push_str(&format!("{}", self.values[row][t]));
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn feature_matrix(series: &PriceSeries, cfg: &IndicatorConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let needed = cfg.max_warmup() + crate::tensor::WINDOW;
    if series.len() < needed {
        return Err(Error::TooShort {
            needed,
            have: series.len(),
        });
    }
    let bars = series.bars();
    let mut values: Vec<Vec<f64>> = vec![
        bars.iter().map(|b| b.open).collect(),
        bars.iter().map(|b| b.high).collect(),
        bars.iter().map(|b| b.low).collect(),
        bars.iter().map(|b| b.close).collect(),
    ];
    let mut warmups = [0usize; NUM_FEATURES];
    for (i, spec) in cfg.specs().iter().enumerate() {
        let ind = compute_indicator(series, spec)?;
        warmups[4 + i] = ind.warmup;
        values.push(ind.values);
    }
    Ok(FeatureMatrix {
        stock_id: series.stock_id.clone(),
        dates: series.dates().collect(),
        feature_names: FEATURE_NAMES,
        values,
        warmups,
    })
}
