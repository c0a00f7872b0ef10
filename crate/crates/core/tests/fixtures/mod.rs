//! Seeded inputs shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use metatrend::backtest::{run_backtest, BacktestConfig, BacktestResult};
use metatrend::finetune::PredictionRecord;
use metatrend::indicators::NUM_FEATURES;
use metatrend::labeling::TrendLabel;
use metatrend::market_data::{build_universe, AlignmentPolicy, Bar, PriceSeries};
use metatrend::nn::graph::{Act, Graph, Mode, Op, Padding};
use metatrend::nn::{
    build_model, graph_for, Arch, Batch, ModelParams, ScaleConfig, Tensor, NUM_CLASSES,
};
use metatrend::rng;
use metatrend::tensor::WINDOW;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{random_label, record};

pub fn random_batch(n: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = (0..n * WINDOW * NUM_FEATURES)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let targets = (0..n).map(|_| rng.random_range(0..NUM_CLASSES)).collect();
    Batch::new(inputs, targets).unwrap()
}

/// Perturbs normalization parameters and buffers away from their identity init.
pub fn jitter_norm(model: &mut ModelParams<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, t) in model.params.iter_mut().chain(model.buffers.iter_mut()) {
        if k.ends_with(".gamma") || k.ends_with(".running_var") {
            t.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if k.ends_with(".beta") || k.ends_with(".running_mean") {
            t.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
}

fn small() -> ScaleConfig {
    ScaleConfig::with_divisor(8)
}

/// Perturbs rows after a random time `t` of a TCN input and counts output
/// positions at or before `t` that moved, over `trials` draws.
pub fn causality_violations(trials: usize, seed: u64) -> usize {
    let model = build_model::<f64>(Arch::Tcn, &small(), 21).unwrap();
    let graph = graph_for(Arch::Tcn, &small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..trials {
        let base = random_batch(2, rng.random());
        let t = rng.random_range(0..WINDOW - 1);
        let mut perturbed = base.clone();
        for e in 0..2 {
            for day in t + 1..WINDOW {
                for f in 0..NUM_FEATURES {
                    perturbed.inputs[(e * WINDOW + day) * NUM_FEATURES + f] +=
                        rng.random_range(-3.0..3.0);
                }
            }
        }
        let a = graph
            .forward(&model, Act::from_batch(&base), Mode::Eval, None, None)
            .unwrap();
        let b = graph
            .forward(&model, Act::from_batch(&perturbed), Mode::Eval, None, None)
            .unwrap();
        let mut changed_future = false;
        for (sa, sb) in a.slots.iter().zip(&b.slots) {
            if sa.len != WINDOW {
                continue;
            }
            for row in 0..sa.batch * sa.channels {
                for step in 0..WINDOW {
                    let i = row * WINDOW + step;
                    if step <= t {
                        violations += usize::from(sa.data[i] != sb.data[i]);
                    } else if sa.data[i] != sb.data[i] {
                        changed_future = true;
                    }
                }
            }
        }
        // a perturbation the network ignores entirely proves nothing
        assert!(changed_future, "perturbing rows after {t} changed nothing");
    }
    violations
}

/// A one-layer-type graph feeding a dense head, with its parameters.
pub fn layer_case(name: &str) -> (Graph, ModelParams<f64>) {
    let c = 3;
    let mut params = std::collections::BTreeMap::new();
    let mut buffers = std::collections::BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let mut rand_t = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
        }
    };
    let conv = |x, y, key: &str, dilation, padding| Op::Conv {
        x,
        y,
        weight: format!("{key}.weight"),
        bias: format!("{key}.bias"),
        dilation,
        padding,
    };
    let mut ops = vec![];
    params.insert("c.weight".to_string(), rand_t(vec![c, NUM_FEATURES, 3]));
    params.insert("c.bias".to_string(), rand_t(vec![c]));
    let (dil, pad) = match name {
        "causal" => (2, Padding::Causal),
        _ => (1, Padding::Same),
    };
    ops.push(conv(0, 1, "c", dil, pad));
    let mut last = 1;
    match name {
        "conv" | "causal" => {}
        "bn" => {
            params.insert("n.gamma".into(), rand_t(vec![c]));
            params.insert("n.beta".into(), rand_t(vec![c]));
            buffers.insert("n.running_mean".into(), Tensor::zeros(&[c]));
            buffers.insert("n.running_var".into(), Tensor::filled(&[c], 1.0));
            ops.push(Op::BatchNorm {
                x: 1,
                y: 2,
                name: "n".into(),
            });
            last = 2;
        }
        "relu" => {
            ops.push(Op::Relu { x: 1, y: 2 });
            last = 2;
        }
        "add" => {
            params.insert("d.weight".into(), rand_t(vec![c, c, 1]));
            params.insert("d.bias".into(), rand_t(vec![c]));
            ops.push(conv(1, 2, "d", 1, Padding::Same));
            ops.push(Op::Add { a: 2, b: 1, y: 3 });
            last = 3;
        }
        other => panic!("unknown case {other}"),
    }
    let pooled = last + 1;
    ops.push(if name == "causal" {
        Op::LastStep { x: last, y: pooled }
    } else {
        Op::GlobalAvgPool { x: last, y: pooled }
    });
    params.insert("h.weight".into(), rand_t(vec![NUM_CLASSES, c]));
    params.insert("h.bias".into(), rand_t(vec![NUM_CLASSES]));
    ops.push(Op::Dense {
        x: pooled,
        y: pooled + 1,
        weight: "h.weight".into(),
        bias: "h.bias".into(),
    });
    let model = ModelParams {
        arch: Arch::Fcn,
        scale: ScaleConfig::default(),
        seed: 0,
        params,
        buffers,
    };
    (
        Graph {
            ops,
            num_slots: pooled + 2,
        },
        model,
    )
}

pub fn random_records(n: usize, seed: u64) -> Vec<PredictionRecord> {
    let mut r = rng::stream(seed, &[rng::tag("records")]);
    let day0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    // skew the predictions toward the truth so every regime shows up
    let skill: f64 = r.random_range(0.0..1.0);
    (0..n)
        .map(|i| {
            let actual = random_label(&mut r);
            let predicted = if r.random_bool(skill) {
                actual
            } else {
                random_label(&mut r)
            };
            record("S", day0 + chrono::Days::new(i as u64), actual, predicted)
        })
        .collect()
}

pub fn days(n: usize) -> Vec<NaiveDate> {
    let d0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    (0..n).map(|i| d0 + chrono::Days::new(i as u64)).collect()
}

pub fn series(id: &str, dates: &[NaiveDate], closes: &[f64]) -> PriceSeries {
    let bars = dates
        .iter()
        .zip(closes)
        .map(|(&date, &c)| Bar {
            date,
            open: c,
            high: c,
            low: c,
            close: c,
            volume: 1.0,
        })
        .collect();
    PriceSeries::new(id, bars).unwrap()
}

pub struct Scenario {
    pub stocks: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub prices: BTreeMap<(String, NaiveDate), f64>,
    pub signals: BTreeMap<(String, NaiveDate), TrendLabel>,
}

pub fn scenario(stocks: usize, n: usize, seed: u64) -> Scenario {
    let mut r = rng::stream(seed, &[rng::tag("scenario")]);
    let dates = days(n);
    let stocks: Vec<String> = (0..stocks).map(|i| format!("S{i}")).collect();
    let mut prices = BTreeMap::new();
    let mut signals = BTreeMap::new();
    for s in &stocks {
        let mut p: f64 = r.random_range(10.0..100.0);
        for d in &dates {
            p *= r.random_range(0.9..1.1);
            prices.insert((s.clone(), *d), p);
            signals.insert((s.clone(), *d), random_label(&mut r));
        }
    }
    Scenario {
        stocks,
        dates,
        prices,
        signals,
    }
}

pub fn run_scenario(sc: &Scenario) -> BacktestResult {
    let series: Vec<_> = sc
        .stocks
        .iter()
        .map(|s| {
            let closes: Vec<f64> = sc
                .dates
                .iter()
                .map(|d| sc.prices[&(s.clone(), *d)])
                .collect();
            series(s, &sc.dates, &closes)
        })
        .collect();
    let u = build_universe(series, AlignmentPolicy::Intersect).unwrap();
    let records: Vec<_> = sc
        .signals
        .iter()
        .map(|((s, d), l)| record(s, *d, *l, *l))
        .collect();
    run_backtest(&records, &u, &BacktestConfig::default()).unwrap()
}
