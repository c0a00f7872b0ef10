//! Confusion matrices and the classification scores reported per run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::PredictionRecord;
use crate::labeling::TrendLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Four,
    Two,
}

impl Level {
    pub fn classes(self) -> usize {
        match self {
            Level::Four => 4,
            Level::Two => 2,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Level::Four => TrendLabel::ALL
                .iter()
                .map(|l| l.name().to_string())
                .collect(),
            Level::Two => vec!["rise".into(), "fall".into()],
        }
    }

    /// Class index of a label at this level.
    pub fn index(self, label: TrendLabel) -> usize {
        match self {
            Level::Four => label.ordinal(),
            Level::Two => usize::from(!label.is_rise_family()),
        }
    }
}

/// Rows are actual classes, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub level: Level,
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(level: Level) -> Self {
        let c = level.classes();
        Self {
            level,
            class_names: level.class_names(),
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn from_counts(level: Level, counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = level.classes();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Shape(format!("confusion matrix must be {c}x{c}")));
        }
        Ok(Self {
            level,
            class_names: level.class_names(),
            counts,
        })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Collapses a four-level matrix to rise/fall.
    pub fn merge(&self) -> Self {
        if self.level == Level::Two {
            return self.clone();
        }
        let mut out = Self::zeros(Level::Two);
        for (a, row) in self.counts.iter().enumerate() {
            for (p, n) in row.iter().enumerate() {
                let to = |o: usize| {
                    Level::Two.index(TrendLabel::from_ordinal(o).expect("four-level index"))
                };
                out.counts[to(a)][to(p)] += n;
            }
        }
        out
    }
}

pub fn confusion(records: &[PredictionRecord], level: Level) -> Result<ConfusionMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no prediction records".into()));
    }
    let mut cm = ConfusionMatrix::zeros(level);
    for r in records {
        cm.counts[level.index(r.actual)][level.index(r.predicted)] += 1;
    }
    Ok(cm)
}

pub fn regular_accuracy(cm: &ConfusionMatrix) -> f64 {
    match cm.total() {
        0 => 0.0,
        n => cm.correct() as f64 / n as f64,
    }
}

/// Mean recall over classes that occur among the actual labels.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> f64 {
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..cm.classes() {
        match cm.row_sum(c) {
            0 => log::warn!(
                "class {} has no actual examples; left out of balanced accuracy",
                cm.class_names[c]
            ),
            n => {
                sum += cm.counts[c][c] as f64 / n as f64;
                present += 1;
            }
        }
    }
    if present == 0 {
        0.0
    } else {
        sum / present as f64
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Share of predictions of `class` that were right; 0 when never predicted.
pub fn class_precision(cm: &ConfusionMatrix, class: usize) -> f64 {
    let col = cm.col_sum(class);
    if col == 0 {
        log::warn!(
            "class {} was never predicted; precision reported as 0",
            cm.class_names[class]
        );
    }
    ratio(cm.counts[class][class], col)
}

pub fn class_recall(cm: &ConfusionMatrix, class: usize) -> f64 {
    ratio(cm.counts[class][class], cm.row_sum(class))
}

pub fn class_f1(cm: &ConfusionMatrix, class: usize) -> f64 {
    let p = ratio(cm.counts[class][class], cm.col_sum(class));
    let r = class_recall(cm, class);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class F1 weighted by actual support.
pub fn weighted_f1(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    (0..cm.classes())
        .map(|c| cm.row_sum(c) as f64 / total as f64 * class_f1(cm, c))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub records: u64,
    pub regular_accuracy: f64,
    pub balanced_accuracy: f64,
    pub weighted_f1: f64,
    /// Precision of the `rise` class, the one the trading rule acts on.
    pub rise_precision: f64,
    pub class_precision: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

pub fn metric_block(records: &[PredictionRecord], level: Level) -> Result<MetricBlock> {
    let cm = confusion(records, level)?;
    let rise = level.index(TrendLabel::Rise);
    Ok(MetricBlock {
        records: cm.total(),
        regular_accuracy: regular_accuracy(&cm),
        balanced_accuracy: balanced_accuracy(&cm),
        weighted_f1: weighted_f1(&cm),
        rise_precision: class_precision(&cm, rise),
        class_precision: (0..cm.classes()).map(|c| class_precision(&cm, c)).collect(),
        confusion: cm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub four_level: MetricBlock,
    pub two_level: MetricBlock,
}

pub fn run_metrics(records: &[PredictionRecord]) -> Result<RunMetrics> {
    Ok(RunMetrics {
        four_level: metric_block(records, Level::Four)?,
        two_level: metric_block(records, Level::Two)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn rec(actual: TrendLabel, predicted: TrendLabel) -> PredictionRecord {
        PredictionRecord {
            stock_id: "s".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            predicted,
            actual,
            probabilities: [0.25; 4],
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let recs: Vec<_> = TrendLabel::ALL.iter().map(|&l| rec(l, l)).collect();
        let cm = confusion(&recs, Level::Four).unwrap();
        assert_eq!(cm.correct(), 4);
        assert_eq!(regular_accuracy(&cm), 1.0);
        assert_eq!(balanced_accuracy(&cm), 1.0);
        assert_eq!(weighted_f1(&cm), 1.0);
        assert!((0..4).all(|c| class_precision(&cm, c) == 1.0));
    }

    #[test]
    fn merge_semantics() {
        let r = [rec(TrendLabel::Rise, TrendLabel::RisePlus)];
        assert_eq!(regular_accuracy(&confusion(&r, Level::Four).unwrap()), 0.0);
        assert_eq!(regular_accuracy(&confusion(&r, Level::Two).unwrap()), 1.0);
    }

    #[test]
    fn uniform_matrix() {
        let cm = ConfusionMatrix::from_counts(Level::Four, vec![vec![1; 4]; 4]).unwrap();
        assert_eq!(regular_accuracy(&cm), 0.25);
        assert_eq!(balanced_accuracy(&cm), 0.25);
    }

    #[test]
    fn zero_support_class_is_left_out() {
        let cm = ConfusionMatrix::from_counts(Level::Two, vec![vec![90, 10], vec![0, 0]]).unwrap();
        assert_eq!(balanced_accuracy(&cm), 0.9);
        // precision of fall: predicted 10 times, never right
        assert_eq!(class_precision(&cm, 1), 0.0);
        assert_eq!(class_precision(&cm, 0), 1.0);
    }

    #[test]
    fn single_class_weighted_f1_is_that_class() {
        let cm = ConfusionMatrix::from_counts(Level::Two, vec![vec![6, 4], vec![0, 0]]).unwrap();
        assert_eq!(weighted_f1(&cm), class_f1(&cm, 0));
        assert!((class_f1(&cm, 0) - 2.0 * 0.6 / 1.6).abs() < 1e-15);
    }

    #[test]
    fn balanced_accuracy_is_permutation_invariant() {
        let cm = ConfusionMatrix::from_counts(Level::Two, vec![vec![5, 3], vec![2, 7]]).unwrap();
        let swapped =
            ConfusionMatrix::from_counts(Level::Two, vec![vec![7, 2], vec![3, 5]]).unwrap();
        assert_eq!(balanced_accuracy(&cm), balanced_accuracy(&swapped));
    }

    #[test]
    fn empty_records_error() {
        assert!(confusion(&[], Level::Four).is_err());
    }
}
