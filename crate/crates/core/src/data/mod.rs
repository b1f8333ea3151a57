//! CSV ingestion, chronological splits, standardization and sliding windows.

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::numcore::RealArray;

/// Floor applied to training standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// A regularly sampled multivariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: Vec<String>,
    /// `T × D`.
    pub values: RealArray,
    /// Sampling interval.
    pub frequency_seconds: i64,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.columns.len()
    }

    /// Keeps the first `steps` rows.
    pub fn truncated(&self, steps: usize) -> Self {
        let t = steps.min(self.len());
        let d = self.channels();
        Self {
            name: self.name.clone(),
            timestamps: self.timestamps[..t].to_vec(),
            columns: self.columns.clone(),
            values: RealArray::from_vec(&[t, d], self.values.data()[..t * d].to_vec()).expect("t×d"),
            frequency_seconds: self.frequency_seconds,
        }
    }
}

/// Reads a CSV whose first column holds timestamps and whose remaining columns are numeric.
pub fn load_csv(path: &Path) -> Result<TimeSeriesDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Format {
            row: 0,
            reason: "need a timestamp column and at least one value column".into(),
        });
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let d = columns.len();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != d + 1 {
            return Err(Error::Format {
                row,
                reason: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            row,
            column: 0,
            reason: format!("unrecognized timestamp `{}`", &record[0]),
        })?;
        timestamps.push(ts);
        for (c, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: c,
                reason: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c,
                    reason: format!("missing or non-finite value `{cell}`"),
                });
            }
            values.push(v);
        }
    }
    let t = timestamps.len();
    if t == 0 {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    let frequency_seconds = if t >= 2 {
        let step = (timestamps[1] - timestamps[0]).num_seconds();
        if step <= 0 {
            return Err(Error::Format {
                row: 1,
                reason: "timestamps must be strictly increasing".into(),
            });
        }
        for row in 2..t {
            if (timestamps[row] - timestamps[row - 1]).num_seconds() != step {
                return Err(Error::Format {
                    row,
                    reason: format!(
                        "spacing {} s differs from the inferred interval of {step} s",
                        (timestamps[row] - timestamps[row - 1]).num_seconds()
                    ),
                });
            }
        }
        step
    } else {
        0
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TimeSeriesDataset {
        name,
        timestamps,
        columns,
        values: RealArray::from_vec(&[t, d], values)?,
        frequency_seconds,
    })
}

/// Train/validation/test ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub const ETT: Self = Self {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };
    pub const DEFAULT: Self = Self {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };

    /// 6:2:2 for the ETT family, 7:1:2 otherwise.
    pub fn for_dataset(name: &str) -> Self {
        if name.to_ascii_uppercase().starts_with("ETT") {
            Self::ETT
        } else {
            Self::DEFAULT
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::config("split", "each ratio must lie in (0, 1)"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("split", "ratios must sum to 1"));
        }
        Ok(())
    }
}

/// Index ranges into the series; `val` and `test` include `L` steps of preceding context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn split(len: usize, spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<Splits> {
    spec.validate()?;
    let n_train = (len as f64 * spec.train + 1e-9).floor() as usize;
    let n_val = (len as f64 * spec.val + 1e-9).floor() as usize;
    let val_end = n_train + n_val;
    if n_train < lookback || val_end < lookback {
        return Err(Error::Data(format!(
            "series of {len} steps is too short for a lookback of {lookback}"
        )));
    }
    let splits = Splits {
        train: 0..n_train,
        val: n_train - lookback..val_end,
        test: val_end - lookback..len,
    };
    for (name, r) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        if r.len() < lookback + horizon {
            return Err(Error::Data(format!(
                "{name} split has {} steps, one window needs {}",
                r.len(),
                lookback + horizon
            )));
        }
    }
    Ok(splits)
}

/// Per-channel standardization statistics of the training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population statistics of rows `range` of a `T × D` matrix; std floored at [`STD_FLOOR`].
    pub fn fit(values: &RealArray, range: Range<usize>) -> Result<Self> {
        let d = values.row_len();
        if range.is_empty() || range.end > values.rows() {
            return Err(Error::Data("standardization needs a non-empty training range".into()));
        }
        let n = range.len() as f64;
        let mut mean = vec![0.0; d];
        for t in range.clone() {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += values.at2(t, c);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for t in range {
            for c in 0..d {
                let e = values.at2(t, c) - mean[c];
                var[c] += e * e;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, values: &RealArray) -> RealArray {
        let d = values.row_len();
        let data = values
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        RealArray::from_vec(values.shape(), data).expect("same shape")
    }

    pub fn invert(&self, values: &RealArray) -> RealArray {
        let d = values.row_len();
        let data = values
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % d] + self.mean[i % d])
            .collect();
        RealArray::from_vec(values.shape(), data).expect("same shape")
    }
}

/// Z-scores the whole series with statistics of `train`.
pub fn standardize(values: &RealArray, train: Range<usize>) -> Result<(RealArray, ChannelStats)> {
    let stats = ChannelStats::fit(values, train)?;
    Ok((stats.apply(values), stats))
}

/// How a window's final step is mapped to the clock that drives bank slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotClock {
    /// The global step index.
    #[default]
    Step,
    /// Whole hours elapsed since Monday 1970-01-05 00:00, so `t mod 24` is
    /// the hour of day and `t mod 168` the hour of week.
    Hour,
}

/// Clock value of every step of `dataset`.
pub fn clock_values(dataset: &TimeSeriesDataset, clock: SlotClock) -> Vec<u64> {
    match clock {
        SlotClock::Step => (0..dataset.len() as u64).collect(),
        SlotClock::Hour => {
            let anchor = NaiveDate::from_ymd_opt(1970, 1, 5)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .expect("valid anchor");
            dataset
                .timestamps
                .iter()
                .map(|ts| (*ts - anchor).num_hours().max(0) as u64)
                .collect()
        }
    }
}

/// One lookback/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `L × D`.
    pub x: RealArray,
    /// `H × D`, starting at global step `t_last + 1`.
    pub y: RealArray,
    pub t_last: u64,
}

/// All stride-1 windows of one split.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// Channel-major `D × T` copy of the full series.
    series: Arc<RealArray>,
    clock: Arc<Vec<u64>>,
    range: Range<usize>,
    lookback: usize,
    horizon: usize,
}

impl WindowSet {
    pub fn new(
        series: Arc<RealArray>,
        clock: Arc<Vec<u64>>,
        range: Range<usize>,
        lookback: usize,
        horizon: usize,
    ) -> Result<Self> {
        if range.end > series.row_len() || clock.len() != series.row_len() {
            return Err(Error::dim("window range exceeds the series"));
        }
        if range.len() < lookback + horizon {
            return Err(Error::Data(format!(
                "range of {} steps cannot hold a window of {} + {}",
                range.len(),
                lookback,
                horizon
            )));
        }
        Ok(Self {
            series,
            clock,
            range,
            lookback,
            horizon,
        })
    }

    /// Windows over `range` of a time-major `T × D` matrix, slots driven by the step index.
    pub fn from_matrix(values: &RealArray, range: Range<usize>, lookback: usize, horizon: usize) -> Result<Self> {
        let clock = (0..values.rows() as u64).collect();
        Self::new(Arc::new(values.transpose()), Arc::new(clock), range, lookback, horizon)
    }

    pub fn len(&self) -> usize {
        self.range.len() + 1 - self.lookback - self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.series.rows()
    }

    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    /// Global index of the last lookback step of window `i`.
    pub fn t_last(&self, i: usize) -> usize {
        self.range.start + i + self.lookback - 1
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        let start = self.range.start + i;
        let d = self.channels();
        let t = self.series.row_len();
        let cut = |from: usize, n: usize| {
            let mut out = RealArray::zeros(&[n, d]);
            for c in 0..d {
                for s in 0..n {
                    out.set2(s, c, self.series.data()[c * t + from + s]);
                }
            }
            out
        };
        WindowSample {
            x: cut(start, self.lookback),
            y: cut(start + self.lookback, self.horizon),
            t_last: self.t_last(i) as u64,
        }
    }

    /// Batch of windows `indices`; `t_last` carries the slot clock value.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let d = self.channels();
        let t = self.series.row_len();
        let (l, h) = (self.lookback, self.horizon);
        let mut x = Vec::with_capacity(indices.len() * d * l);
        let mut y = Vec::with_capacity(indices.len() * d * h);
        let mut t_last = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::dim(format!("window {i} out of range for {} windows", self.len())));
            }
            let start = self.range.start + i;
            for c in 0..d {
                let row = &self.series.data()[c * t..(c + 1) * t];
                x.extend_from_slice(&row[start..start + l]);
                y.extend_from_slice(&row[start + l..start + l + h]);
            }
            t_last.push(self.clock[self.t_last(i)]);
        }
        let b = indices.len();
        Batch::new(
            RealArray::from_vec(&[b * d, l], x)?,
            Some(RealArray::from_vec(&[b * d, h], y)?),
            t_last,
            d,
        )
    }

    /// Consecutive batches covering every window once, in order.
    pub fn sequential_batches(&self, batch_size: usize) -> impl Iterator<Item = Result<Batch>> + '_ {
        let n = self.len();
        (0..n)
            .step_by(batch_size.max(1))
            .map(move |s| self.batch(&(s..(s + batch_size.max(1)).min(n)).collect::<Vec<_>>()))
    }
}

/// A dataset split, standardized and windowed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: String,
    pub stats: ChannelStats,
    pub splits: Splits,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

pub fn prepare(
    dataset: &TimeSeriesDataset,
    spec: &SplitSpec,
    lookback: usize,
    horizon: usize,
    clock: SlotClock,
) -> Result<PreparedData> {
    let splits = split(dataset.len(), spec, lookback, horizon)?;
    let (z, stats) = standardize(&dataset.values, splits.train.clone())?;
    let series = Arc::new(z.transpose());
    let clock = Arc::new(clock_values(dataset, clock));
    let set = |r: &Range<usize>| WindowSet::new(series.clone(), clock.clone(), r.clone(), lookback, horizon);
    Ok(PreparedData {
        name: dataset.name.clone(),
        train: set(&splits.train)?,
        val: set(&splits.val)?,
        test: set(&splits.test)?,
        stats,
        splits,
    })
}
