#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use metatrend::config::TrainConfig;
use metatrend::indicators::{IndicatorConfig, NUM_FEATURES};
use metatrend::labeling::{LabelingConfig, TrendLabel};
use metatrend::market_data::{build_universe, AlignmentPolicy, Universe};
use metatrend::pipeline::stock_datasets;
use metatrend::synth::{generate, Family, SynthSpec};
use metatrend::tensor::{InputTensor, LabeledDataset, LabeledExample, NormPolicy, WINDOW};

pub fn pattern_universe(stocks: usize, days: usize, seed: u64) -> Universe {
    build_universe(
        generate(&SynthSpec::new(stocks, days, Family::Pattern, seed)).unwrap(),
        AlignmentPolicy::Intersect,
    )
    .unwrap()
}

pub fn datasets(u: &Universe) -> BTreeMap<String, LabeledDataset> {
    stock_datasets(
        u,
        &LabelingConfig::default(),
        &IndicatorConfig::default(),
        NormPolicy::Zscore,
    )
    .unwrap()
}

/// Small enough for many runs per test.
pub fn quick_config() -> TrainConfig {
    TrainConfig {
        alpha: 1e-3,
        beta: 1e-3,
        gamma: 1e-3,
        meta_steps: 3,
        inner_epochs: 2,
        finetune_epochs: 2,
        per_class: 4,
        ..TrainConfig::default()
    }
}

/// A window whose every cell is `value`.
pub fn flat_example(stock: &str, day: u64, value: f64, label: TrendLabel) -> LabeledExample {
    LabeledExample {
        tensor: InputTensor {
            stock_id: stock.into(),
            target_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(day),
            values: vec![value; WINDOW * NUM_FEATURES],
            normalization: NormPolicy::Identity,
        },
        label,
    }
}

pub fn accuracy(records: &[metatrend::finetune::PredictionRecord]) -> f64 {
    records.iter().filter(|r| r.predicted == r.actual).count() as f64 / records.len() as f64
}
