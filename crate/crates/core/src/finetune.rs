//! Walk-forward evaluation: monthly sliding windows, individual and
//! universal fine-tuning, and prediction records.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::labeling::TrendLabel;
use crate::market_data::write_atomic;
use crate::nn::{forward, softmax, Arch, Batch, Mode, ModelParams, ScaleConfig, NUM_CLASSES};
use crate::par;
use crate::rng;
use crate::tensor::{DateRange, LabeledDataset, LabeledExample};
use crate::train::{fit, FitOptions, LrSchedule};

/// Twelve training months followed by one test month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSplit {
    pub index: usize,
    pub train: DateRange,
    pub test: DateRange,
}

pub const TRAIN_MONTHS: u32 = 12;

fn month_start(d: NaiveDate) -> NaiveDate {
    d.with_day(1).expect("day 1 exists")
}

fn month_end(first: NaiveDate) -> NaiveDate {
    first + Months::new(1) - chrono::Days::new(1)
}

/// One split per month boundary: the test month is every calendar month `t`
/// with at least twelve whole or partial months of the range before it.
/// Ranges are clipped to `[start, end]`.
pub fn sliding_windows(start: NaiveDate, end: NaiveDate) -> Result<Vec<WindowSplit>> {
    if end < start {
        return Err(Error::Invalid(format!("range {start}..{end} is reversed")));
    }
    let first = month_start(start);
    let months = (end.year() - first.year()) * 12 + end.month() as i32 - first.month() as i32 + 1;
    if months < TRAIN_MONTHS as i32 + 1 {
        return Err(Error::Invalid(format!(
            "walk-forward needs at least {} months, range {start}..{end} spans {months}",
            TRAIN_MONTHS + 1
        )));
    }
    Ok((TRAIN_MONTHS..months as u32)
        .enumerate()
        .map(|(index, t)| {
            let test_first = first + Months::new(t);
            let train_first = test_first - Months::new(TRAIN_MONTHS);
            WindowSplit {
                index,
                train: DateRange::new(
                    train_first.max(start),
                    test_first.pred_opt().expect("valid date"),
                ),
                test: DateRange::new(test_first, month_end(test_first).min(end)),
            }
        })
        .collect())
}

/// Training examples whose labels are fully determined before the test month
/// opens: a label at day `d` reads closes through `d + horizon`, so the last
/// `horizon` trading days before the test month are dropped.
pub fn purged_train_range(
    split: &WindowSplit,
    calendar: &[NaiveDate],
    horizon: usize,
) -> Option<DateRange> {
    let first_test = calendar.partition_point(|d| *d < split.test.start);
    let last_ok = first_test.checked_sub(horizon + 1)?;
    let end = calendar[last_ok].min(split.train.end);
    (end >= split.train.start).then(|| DateRange::new(split.train.start, end))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub stock_id: String,
    pub date: NaiveDate,
    pub predicted: TrendLabel,
    pub actual: TrendLabel,
    pub probabilities: [f64; NUM_CLASSES],
}

/// Index of the largest probability; the lowest ordinal wins ties.
pub fn argmax(p: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

impl PredictionRecord {
    pub fn new(
        stock_id: String,
        date: NaiveDate,
        actual: TrendLabel,
        probabilities: [f64; NUM_CLASSES],
    ) -> Self {
        let predicted = TrendLabel::from_ordinal(argmax(&probabilities)).expect("class index");
        Self {
            stock_id,
            date,
            predicted,
            actual,
            probabilities,
        }
    }
}

const PREDICT_CHUNK: usize = 256;

/// Eval-mode class probabilities for every example, in dataset order.
pub fn predict(
    theta: &ModelParams<f32>,
    examples: &[&LabeledExample],
) -> Result<Vec<PredictionRecord>> {
    let chunks: Vec<&[&LabeledExample]> = examples.chunks(PREDICT_CHUNK).collect();
    let per_chunk = par::map(&chunks, |chunk| -> Result<Vec<PredictionRecord>> {
        let batch = Batch::<f32>::from_examples(chunk.iter().copied())?;
        let logits = forward(theta, &batch, Mode::Eval)?.logits;
        let probs = softmax(&logits, NUM_CLASSES);
        Ok(chunk
            .iter()
            .zip(probs.chunks(NUM_CLASSES))
            .map(|(e, p)| {
                PredictionRecord::new(
                    e.tensor.stock_id.clone(),
                    e.tensor.target_date,
                    e.label,
                    [p[0], p[1], p[2], p[3]],
                )
            })
            .collect())
    });
    let mut out = Vec::with_capacity(examples.len());
    for part in per_chunk {
        out.extend(part?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Ind,
    Uni,
    MetaInd,
    MetaUni,
}

impl RunMode {
    pub const ALL: [RunMode; 4] = [
        RunMode::Ind,
        RunMode::Uni,
        RunMode::MetaInd,
        RunMode::MetaUni,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            RunMode::Ind => "ind",
            RunMode::Uni => "uni",
            RunMode::MetaInd => "meta-ind",
            RunMode::MetaUni => "meta-uni",
        }
    }

    pub fn uses_meta(self) -> bool {
        matches!(self, RunMode::MetaInd | RunMode::MetaUni)
    }

    pub fn universal(self) -> bool {
        matches!(self, RunMode::Uni | RunMode::MetaUni)
    }

    /// Display name such as `Meta-Ind-TCN`.
    pub fn run_name(self, arch: Arch) -> String {
        let m = match self {
            RunMode::Ind => "Ind",
            RunMode::Uni => "Uni",
            RunMode::MetaInd => "Meta-Ind",
            RunMode::MetaUni => "Meta-Uni",
        };
        format!("{m}-{arch}")
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.slug() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Invalid(format!("unknown mode {s:?} (ind, uni, meta-ind, meta-uni)"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneOptions {
    /// Re-copy the initialization at every window instead of carrying the
    /// fine-tuned parameters forward.
    pub reset_per_window: bool,
    /// Trading days a label looks ahead; that many days before each test
    /// month are held out of training.
    pub label_horizon: usize,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            reset_per_window: false,
            label_horizon: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: String,
    pub mode: RunMode,
    pub arch: Arch,
    pub scale: ScaleConfig,
    pub windows: Vec<WindowSplit>,
    pub seed: u64,
    pub config_hash: String,
    pub phi_path: Option<String>,
    pub train: TrainConfig,
    pub options: FinetuneOptions,
}

fn fit_options(cfg: &TrainConfig, window: usize) -> FitOptions {
    FitOptions {
        epochs: cfg.finetune_epochs,
        batch_size: cfg.finetune_batch,
        base_lr: cfg.gamma,
        schedule: LrSchedule::Cosine,
        adam: cfg.adam,
        // no stock in the seed: a one-stock universe trains like an individual run
        seed: rng::derive_seed(cfg.seed, &[rng::tag("finetune"), window as u64]),
    }
}

fn window_examples<'a>(
    data: &'a LabeledDataset,
    split: &WindowSplit,
    calendar: &[NaiveDate],
    opts: &FinetuneOptions,
) -> (Vec<&'a LabeledExample>, Vec<&'a LabeledExample>) {
    let train_range = purged_train_range(split, calendar, opts.label_horizon);
    let train = data
        .examples
        .iter()
        .filter(|e| train_range.is_some_and(|r| r.contains(e.tensor.target_date)))
        .collect();
    let test = data
        .examples
        .iter()
        .filter(|e| split.test.contains(e.tensor.target_date))
        .collect();
    (train, test)
}

/// Fine-tunes one task learner across the windows in order and predicts
/// each test month with the parameters trained on the windows before it.
pub fn finetune_individual(
    init: &ModelParams<f32>,
    splits: &[WindowSplit],
    data: &LabeledDataset,
    calendar: &[NaiveDate],
    cfg: &TrainConfig,
    opts: &FinetuneOptions,
) -> Result<Vec<PredictionRecord>> {
    let mut theta = init.clone();
    let mut records = Vec::new();
    for split in splits {
        if opts.reset_per_window {
            theta.assign(init)?;
        }
        let (train, test) = window_examples(data, split, calendar, opts);
        if train.is_empty() {
            log::warn!(
                "window {} ({}): no training examples, skipped",
                split.index,
                split.test.start
            );
            continue;
        }
        fit(&mut theta, &train, &fit_options(cfg, split.index))?;
        if !test.is_empty() {
            records.extend(predict(&theta, &test)?);
        }
    }
    Ok(records)
}

/// One shared task learner trained on the union of every stock's window,
/// concatenated in stock-id order before shuffling.
pub fn finetune_universal(
    init: &ModelParams<f32>,
    splits: &[WindowSplit],
    data: &BTreeMap<String, LabeledDataset>,
    calendar: &[NaiveDate],
    cfg: &TrainConfig,
    opts: &FinetuneOptions,
) -> Result<Vec<PredictionRecord>> {
    let mut theta = init.clone();
    let mut records = Vec::new();
    for split in splits {
        if opts.reset_per_window {
            theta.assign(init)?;
        }
        let mut train = Vec::new();
        let mut tests = Vec::new();
        for ds in data.values() {
            let (tr, te) = window_examples(ds, split, calendar, opts);
            train.extend(tr);
            tests.push(te);
        }
        if train.is_empty() {
            log::warn!(
                "window {} ({}): no training examples, skipped",
                split.index,
                split.test.start
            );
            continue;
        }
        fit(&mut theta, &train, &fit_options(cfg, split.index))?;
        let per_stock = par::map(&tests, |te| {
            if te.is_empty() {
                Ok(Vec::new())
            } else {
                predict(&theta, te)
            }
        });
        for r in per_stock {
            records.extend(r?);
        }
    }
    Ok(records)
}

/// Individual mode over every stock, in parallel; records come back in
/// stock-id order, then date order.
pub fn finetune_all_individual(
    init: &ModelParams<f32>,
    splits: &[WindowSplit],
    data: &BTreeMap<String, LabeledDataset>,
    calendar: &[NaiveDate],
    cfg: &TrainConfig,
    opts: &FinetuneOptions,
) -> Result<Vec<PredictionRecord>> {
    let sets: Vec<&LabeledDataset> = data.values().collect();
    let per_stock = par::map(&sets, |ds| {
        finetune_individual(init, splits, ds, calendar, cfg, opts)
    });
    let mut out = Vec::new();
    for r in per_stock {
        out.extend(r?);
    }
    Ok(out)
}

/// Sorts records by date, then stock id.
pub fn sort_records(records: &mut [PredictionRecord]) {
    records.sort_by(|a, b| {
        a.date
            .cmp(&b.date)
            .then_with(|| a.stock_id.cmp(&b.stock_id))
    });
}

pub const CONFIG_HASH_PREFIX: &str = "# config_hash=";

pub fn write_predictions(
    path: &Path,
    records: &[PredictionRecord],
    config_hash: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "stock_id",
        "date",
        "predicted",
        "actual",
        "p0",
        "p1",
        "p2",
        "p3",
    ])?;
    for r in records {
        let mut row = vec![
            r.stock_id.clone(),
            r.date.to_string(),
            r.predicted.name().to_string(),
            r.actual.name().to_string(),
        ];
        row.extend(r.probabilities.iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    let body = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    let mut bytes = format!("{CONFIG_HASH_PREFIX}{config_hash}\n").into_bytes();
    bytes.extend(body);
    write_atomic(path, &bytes)
}

/// Returns the config hash line (if any) and the records.
pub fn read_predictions(path: &Path) -> Result<(Option<String>, Vec<PredictionRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (hash, body) = match text.strip_prefix(CONFIG_HASH_PREFIX) {
        Some(rest) => {
            let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
            (Some(line.trim().to_string()), body)
        }
        None => (None, text.as_str()),
    };
    let corrupt = |row: usize, message: String| Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        field: "record".into(),
        message,
    };
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2 + usize::from(hash.is_some());
        if rec.len() != 8 {
            return Err(corrupt(
                row,
                format!("expected 8 fields, got {}", rec.len()),
            ));
        }
        let date = rec[1]
            .parse()
            .map_err(|e| corrupt(row, format!("date: {e}")))?;
        let predicted: TrendLabel = rec[2].parse()?;
        let actual: TrendLabel = rec[3].parse()?;
        let mut p = [0.0; NUM_CLASSES];
        for (c, slot) in p.iter_mut().enumerate() {
            *slot = rec[4 + c]
                .parse()
                .map_err(|e| corrupt(row, format!("p{c}: {e}")))?;
        }
        out.push(PredictionRecord {
            stock_id: rec[0].to_string(),
            date,
            predicted,
            actual,
            probabilities: p,
        });
    }
    Ok((hash, out))
}
