//! Glue shared by the command line and the end-to-end tests: per-stock
//! datasets over a whole universe, the meta-training period, and the
//! walk-forward windows that follow it.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::finetune::{purged_train_range, sliding_windows, WindowSplit};
use crate::indicators::{feature_matrix, IndicatorConfig};
use crate::labeling::{label_series, LabelingConfig};
use crate::market_data::Universe;
use crate::meta::TaskData;
use crate::par;
use crate::tensor::{build_dataset, DateRange, LabeledDataset, NormPolicy};

/// Every labeled, history-sufficient example of every stock, keyed by id.
pub fn stock_datasets(
    universe: &Universe,
    labeling: &LabelingConfig,
    indicators: &IndicatorConfig,
    norm: NormPolicy,
) -> Result<BTreeMap<String, LabeledDataset>> {
    labeling.validate()?;
    indicators.validate()?;
    let (Some(&first), Some(&last)) = (universe.calendar.first(), universe.calendar.last()) else {
        return Err(Error::EmptyCalendar);
    };
    let range = DateRange::new(first, last);
    let series: Vec<_> = universe.series.values().collect();
    let built = par::map(&series, |s| -> Result<(String, LabeledDataset)> {
        let features = feature_matrix(s, indicators)?;
        let labels = label_series(s, labeling);
        Ok((
            s.stock_id.clone(),
            build_dataset(&features, &labels, range, norm)?,
        ))
    });
    built.into_iter().collect()
}

/// First and last target date over all datasets.
pub fn labeled_span(datasets: &BTreeMap<String, LabeledDataset>) -> Result<DateRange> {
    let dates = datasets
        .values()
        .flat_map(|ds| ds.examples.iter().map(|e| e.tensor.target_date));
    let (mut lo, mut hi) = (NaiveDate::MAX, NaiveDate::MIN);
    for d in dates {
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo > hi {
        return Err(Error::EmptyDataset(
            "no labeled examples in any stock".into(),
        ));
    }
    Ok(DateRange::new(lo, hi))
}

/// The first walk-forward split is spent on meta-training; the remaining
/// splits are the evaluation windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub meta: WindowSplit,
    pub evaluation: Vec<WindowSplit>,
}

pub fn schedule(datasets: &BTreeMap<String, LabeledDataset>) -> Result<Schedule> {
    let span = labeled_span(datasets)?;
    let mut splits = sliding_windows(span.start, span.end)?;
    if splits.len() < 2 {
        return Err(Error::Invalid(format!(
            "labeled data {}..{} leaves no month after the meta-training period",
            span.start, span.end
        )));
    }
    let meta = splits.remove(0);
    for (i, s) in splits.iter_mut().enumerate() {
        s.index = i;
    }
    Ok(Schedule {
        meta,
        evaluation: splits,
    })
}

/// Support pool from the purged training range, query from the test month
/// with its own last `horizon` days dropped, since their labels read prices
/// of the following month.
pub fn meta_tasks(
    datasets: &BTreeMap<String, LabeledDataset>,
    split: &WindowSplit,
    calendar: &[NaiveDate],
    horizon: usize,
) -> Result<Vec<TaskData>> {
    let support = purged_train_range(split, calendar, horizon).ok_or_else(|| {
        Error::EmptyDataset(format!("no support days before {}", split.test.start))
    })?;
    let after = calendar.partition_point(|d| *d <= split.test.end);
    let query_end = after
        .checked_sub(horizon + 1)
        .map(|i| calendar[i].min(split.test.end))
        .filter(|end| *end >= split.test.start);
    let Some(query_end) = query_end else {
        return Err(Error::EmptyDataset(format!(
            "no query days in {}",
            split.test.start
        )));
    };
    let query = DateRange::new(split.test.start, query_end);
    datasets
        .iter()
        .map(|(id, ds)| TaskData::new(id.clone(), ds.filter_range(support), ds.filter_range(query)))
        .collect()
}
