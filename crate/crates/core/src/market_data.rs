//! Daily OHLCV ingestion and calendar alignment.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub const CSV_HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    /// Returns a description of the first violated invariant, if any.
    pub fn violation(&self) -> Option<(&'static str, String)> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Some((name, format!("price must be finite and positive, got {v}")));
            }
        }
        if !(self.volume.is_finite() && self.volume >= 0.0) {
            return Some((
                "volume",
                format!("volume must be non-negative, got {}", self.volume),
            ));
        }
        if self.low > self.high {
            return Some(("high", format!("high {} < low {}", self.high, self.low)));
        }
        if self.low > self.open.min(self.close) {
            return Some(("low", format!("low {} above min(open, close)", self.low)));
        }
        if self.high < self.open.max(self.close) {
            return Some(("high", format!("high {} below max(open, close)", self.high)));
        }
        None
    }

    pub fn is_valid(&self) -> bool {
        self.violation().is_none()
    }
}

/// Validated daily bars of one stock, strictly increasing in date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub stock_id: String,
    bars: Vec<Bar>,
}

impl PriceSeries {
    /// Sorts `bars` by date and validates every invariant.
    pub fn new(stock_id: impl Into<String>, mut bars: Vec<Bar>) -> Result<Self> {
        let stock_id = stock_id.into();
        if bars.is_empty() {
            return Err(Error::Invalid(format!("series {stock_id} has no bars")));
        }
        bars.sort_by_key(|b| b.date);
        for w in bars.windows(2) {
            if w[0].date == w[1].date {
                return Err(Error::Invalid(format!(
                    "series {stock_id} has duplicate date {}",
                    w[0].date
                )));
            }
        }
        if let Some((i, (field, msg))) = bars
            .iter()
            .enumerate()
            .find_map(|(i, b)| b.violation().map(|v| (i, v)))
        {
            return Err(Error::Invalid(format!(
                "series {stock_id}, bar {i} ({}): {field}: {msg}",
                bars[i].date
            )));
        }
        Ok(Self { stock_id, bars })
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.bars.iter().map(|b| b.date)
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.bars.binary_search_by_key(&date, |b| b.date).ok()
    }

    /// Multiplies every price by `factor` (volume unchanged).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let bars = self
            .bars
            .iter()
            .map(|b| Bar {
                open: b.open * factor,
                high: b.high * factor,
                low: b.low * factor,
                close: b.close * factor,
                ..*b
            })
            .collect();
        Self::new(self.stock_id.clone(), bars)
    }

    fn restricted_to(&self, dates: &BTreeSet<NaiveDate>) -> Self {
        Self {
            stock_id: self.stock_id.clone(),
            bars: self
                .bars
                .iter()
                .filter(|b| dates.contains(&b.date))
                .copied()
                .collect(),
        }
    }
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    row: usize,
    field: &str,
    raw: Option<&str>,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = raw.ok_or_else(|| Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        field: field.to_string(),
        message: "missing field".into(),
    })?;
    raw.trim().parse().map_err(|e: T::Err| Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        field: field.to_string(),
        message: format!("cannot parse {raw:?}: {e}"),
    })
}

/// Reads `date,open,high,low,close,volume` rows. The stock id is the file stem.
///
/// Row numbers in errors are 1-based file line numbers (the header is line 1).
pub fn load_csv(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let path = path.as_ref();
    let stock_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Invalid(format!("cannot derive stock id from {}", path.display())))?
        .to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        if headers.is_empty() {
            return Err(Error::EmptyFile(path.to_path_buf()));
        }
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            row: 1,
            field: "header".into(),
            message: format!("expected `{}`", CSV_HEADER.join(",")),
        });
    }

    let mut bars = Vec::new();
    let mut seen: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let date_raw = record.get(0);
        let date: NaiveDate = parse_field(path, row, "date", date_raw)?;
        let bar = Bar {
            date,
            open: parse_field(path, row, "open", record.get(1))?,
            high: parse_field(path, row, "high", record.get(2))?,
            low: parse_field(path, row, "low", record.get(3))?,
            close: parse_field(path, row, "close", record.get(4))?,
            volume: parse_field(path, row, "volume", record.get(5))?,
        };
        if let Some((field, message)) = bar.violation() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                field: field.to_string(),
                message,
            });
        }
        if seen.insert(date, row).is_some() {
            return Err(Error::DuplicateDate {
                path: path.to_path_buf(),
                date,
                row,
            });
        }
        bars.push(bar);
    }
    if bars.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    PriceSeries::new(stock_id, bars)
}

/// Writes a series in the format read by [`load_csv`], prices to 6 decimals.
pub fn write_csv(series: &PriceSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 64);
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for b in series.bars() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            b.date, b.open, b.high, b.low, b.close, b.volume
        ));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Writes via a temporary sibling file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentPolicy {
    /// Calendar is the intersection of every series' dates.
    #[default]
    Intersect,
    /// Calendar is the union of dates; series missing any of it are dropped,
    /// shortest first, until every retained series covers the union.
    DropShortSeries,
}

/// Stocks aligned on one shared trading calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    pub calendar: Vec<NaiveDate>,
    pub series: BTreeMap<String, PriceSeries>,
    pub alignment_policy: AlignmentPolicy,
}

impl Universe {
    pub fn stock_ids(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn close(&self, stock_id: &str, date: NaiveDate) -> Option<f64> {
        let s = self.series.get(stock_id)?;
        s.index_of(date).map(|i| s.bars()[i].close)
    }
}

fn date_set(s: &PriceSeries) -> BTreeSet<NaiveDate> {
    s.dates().collect()
}

pub fn build_universe(series: Vec<PriceSeries>, policy: AlignmentPolicy) -> Result<Universe> {
    if series.is_empty() {
        return Err(Error::Invalid("no series supplied".into()));
    }
    let mut by_id: BTreeMap<String, PriceSeries> = BTreeMap::new();
    for s in series {
        if by_id.contains_key(&s.stock_id) {
            return Err(Error::Invalid(format!("duplicate stock id {}", s.stock_id)));
        }
        by_id.insert(s.stock_id.clone(), s);
    }

    let calendar: BTreeSet<NaiveDate> = match policy {
        AlignmentPolicy::Intersect => {
            let mut sets = by_id.values().map(date_set);
            let first = sets.next().expect("non-empty");
            sets.fold(first, |acc, s| acc.intersection(&s).copied().collect())
        }
        AlignmentPolicy::DropShortSeries => {
            let mut retained: Vec<&PriceSeries> = by_id.values().collect();
            // longest first; ties by id so the drop order is deterministic
            retained.sort_by(|a, b| b.len().cmp(&a.len()).then(a.stock_id.cmp(&b.stock_id)));
            loop {
                let union: BTreeSet<NaiveDate> = retained.iter().flat_map(|s| s.dates()).collect();
                if retained.iter().all(|s| s.len() == union.len()) {
                    let keep: BTreeSet<String> =
                        retained.iter().map(|s| s.stock_id.clone()).collect();
                    for id in by_id.keys().filter(|k| !keep.contains(*k)) {
                        log::warn!("dropping short series {id}");
                    }
                    by_id.retain(|k, _| keep.contains(k));
                    break union;
                }
                retained.pop();
            }
        }
    };
    if calendar.is_empty() {
        return Err(Error::EmptyCalendar);
    }
    let series = by_id
        .into_iter()
        .map(|(id, s)| (id, s.restricted_to(&calendar)))
        .collect();
    Ok(Universe {
        calendar: calendar.into_iter().collect(),
        series,
        alignment_policy: policy,
    })
}

/// `universe.json`: stock id to CSV path (relative to the manifest) plus policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseManifest {
    pub policy: AlignmentPolicy,
    pub stocks: BTreeMap<String, PathBuf>,
}

impl UniverseManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(path.as_ref(), text.as_bytes())
    }

    /// Loads every listed file (in parallel) and aligns them.
    pub fn load(&self, manifest_path: impl AsRef<Path>) -> Result<Universe> {
        let base = manifest_path
            .as_ref()
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let entries: Vec<(&String, &PathBuf)> = self.stocks.iter().collect();
        let loaded = par::map(&entries, |(id, p)| {
            let full = if p.is_absolute() {
                (*p).clone()
            } else {
                base.join(p)
            };
            load_csv(&full).map(|mut s| {
                s.stock_id = (*id).clone();
                s
            })
        });
        let series = loaded.into_iter().collect::<Result<Vec<_>>>()?;
        build_universe(series, self.policy)
    }
}
