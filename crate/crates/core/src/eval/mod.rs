//! Test metrics, multi-seed aggregation and results tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::{EmbeddingMode, Model};
use crate::numcore::RealArray;
use crate::train::{parallel_map, windows_per_graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub n_windows: usize,
}

/// Running sums for a grand mean over windows × horizon × channels.
#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    sq: f64,
    abs: f64,
    count: usize,
    windows: usize,
}

impl Accum {
    fn add(&mut self, pred: &[f64], target: &[f64]) {
        for (p, t) in pred.iter().zip(target) {
            let e = p - t;
            self.sq += e * e;
            self.abs += e.abs();
        }
        self.count += pred.len();
    }

    fn merge(&mut self, o: Accum) {
        self.sq += o.sq;
        self.abs += o.abs;
        self.count += o.count;
        self.windows += o.windows;
    }

    fn finish(self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::Data("no windows to evaluate".into()));
        }
        Ok(Metrics {
            mse: self.sq / self.count as f64,
            mae: self.abs / self.count as f64,
            n_windows: self.windows,
        })
    }
}

/// Metrics of paired predictions and targets (any equal shapes; each pair is one window).
pub fn metrics(pairs: &[(RealArray, RealArray)]) -> Result<Metrics> {
    let mut acc = Accum::default();
    for (p, t) in pairs {
        if p.shape() != t.shape() {
            return Err(Error::dim(format!("prediction {:?} vs target {:?}", p.shape(), t.shape())));
        }
        acc.add(p.data(), t.data());
        acc.windows += 1;
    }
    acc.finish()
}

fn eval_batches(set: &WindowSet, batch_size: usize, predict: impl Fn(&crate::model::Batch) -> Result<RealArray> + Sync) -> Result<Metrics> {
    let n = set.len();
    if n == 0 {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let bs = windows_per_graph(batch_size.max(1), set.channels());
    let starts: Vec<usize> = (0..n).step_by(bs).collect();
    let parts = parallel_map(&starts, |&s| -> Result<Accum> {
        let idx: Vec<usize> = (s..(s + bs).min(n)).collect();
        let batch = set.batch(&idx)?;
        let pred = predict(&batch)?;
        let target = batch.y.as_ref().expect("window batches carry targets");
        let mut acc = Accum::default();
        acc.add(pred.data(), target.data());
        acc.windows = idx.len();
        Ok(acc)
    });
    let mut total = Accum::default();
    for p in parts {
        total.merge(p?);
    }
    total.finish()
}

/// Test metrics of `model` over every window of `set`.
///
/// A model trained with [`EmbeddingMode::RandomReinit`] has its banks
/// resampled from `reinit_seed` first.
pub fn evaluate(model: &Model, set: &WindowSet, batch_size: usize, reinit_seed: u64) -> Result<Metrics> {
    if model.config.embedding_mode == EmbeddingMode::RandomReinit {
        let m = model.with_reinitialized_banks(reinit_seed);
        return eval_batches(set, batch_size, |b| m.predict(b));
    }
    eval_batches(set, batch_size, |b| model.predict(b))
}

/// Metrics of repeating each window's last observed value over the horizon.
pub fn last_value_metrics(set: &WindowSet, batch_size: usize) -> Result<Metrics> {
    eval_batches(set, batch_size, |b| {
        let (l, h) = (b.x.row_len(), b.y.as_ref().map_or(0, |y| y.row_len()));
        let data = b.x.data().chunks(l).flat_map(|row| std::iter::repeat_n(row[l - 1], h)).collect();
        RealArray::from_vec(&[b.x.rows(), h], data)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub lookback: usize,
    pub horizon: usize,
    pub variant: String,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub n_windows: usize,
    pub params: usize,
    pub seconds: f64,
}

impl RunRecord {
    pub fn key(&self) -> (String, usize, usize, String, u64) {
        (self.dataset.clone(), self.lookback, self.horizon, self.variant.clone(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub lookback: usize,
    pub horizon: usize,
    pub variant: String,
    pub seed_count: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub params: usize,
    pub seconds: f64,
}

/// Mean and unbiased standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One summary per `(dataset, L, H, variant)`, sorted by that key; seeds in ascending order.
pub fn aggregate(records: &[RunRecord]) -> Vec<Summary> {
    let mut groups: BTreeMap<(String, usize, usize, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.dataset.clone(), r.lookback, r.horizon, r.variant.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, lookback, horizon, variant), mut rs)| {
            rs.sort_by_key(|r| r.seed);
            let mse: Vec<f64> = rs.iter().map(|r| r.mse).collect();
            let mae: Vec<f64> = rs.iter().map(|r| r.mae).collect();
            let (mse_mean, mse_std) = mean_std(&mse);
            let (mae_mean, mae_std) = mean_std(&mae);
            Summary {
                dataset,
                lookback,
                horizon,
                variant,
                seed_count: rs.len(),
                mse_mean,
                mse_std,
                mae_mean,
                mae_std,
                params: rs[0].params,
                seconds: rs.iter().map(|r| r.seconds).sum(),
            }
        })
        .collect()
}

pub const TABLE_COLUMNS: [&str; 11] = [
    "dataset", "L", "H", "variant", "seed_count", "mse_mean", "mse_std", "mae_mean", "mae_std", "params", "seconds",
];

fn summary_fields(s: &Summary) -> Vec<String> {
    vec![
        s.dataset.clone(),
        s.lookback.to_string(),
        s.horizon.to_string(),
        s.variant.clone(),
        s.seed_count.to_string(),
        s.mse_mean.to_string(),
        s.mse_std.to_string(),
        s.mae_mean.to_string(),
        s.mae_std.to_string(),
        s.params.to_string(),
        format!("{:.3}", s.seconds),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aligned plain-text rendering of summaries.
pub fn render_text_table(summaries: &[Summary]) -> String {
    let header = ["dataset", "L", "H", "variant", "seeds", "MSE", "MAE", "params", "seconds"];
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.dataset.clone(),
                s.lookback.to_string(),
                s.horizon.to_string(),
                s.variant.clone(),
                s.seed_count.to_string(),
                format!("{:.3}±{:.3}", s.mse_mean, s.mse_std),
                format!("{:.3}±{:.3}", s.mae_mean, s.mae_std),
                s.params.to_string(),
                format!("{:.1}", s.seconds),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for r in &rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

/// Writes `<stem>.csv` (columns [`TABLE_COLUMNS`]) and `<stem>.txt` in `dir`.
pub fn emit_table(records: &[RunRecord], dir: &Path, stem: &str) -> Result<Vec<Summary>> {
    let summaries = aggregate(records);
    write_csv(&dir.join(format!("{stem}.csv")), &TABLE_COLUMNS, summaries.iter().map(summary_fields))?;
    let txt = dir.join(format!("{stem}.txt"));
    std::fs::write(&txt, render_text_table(&summaries)).map_err(|e| Error::io(&txt, e))?;
    Ok(summaries)
}

/// Per-run ledger kept in the results root.
pub const RUNS_FILE: &str = "runs.csv";

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

fn write_runs(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in runs {
        w.serialize(r)?;
    }
    if runs.is_empty() {
        w.write_record([
            "dataset", "lookback", "horizon", "variant", "seed", "mse", "mae", "n_windows", "params", "seconds",
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Adds `new` to the results root (replacing records with the same key) and
/// rewrites `<dataset>_<L>_<H>.csv` for the touched configurations plus the
/// combined `summary.csv`.
///
/// `summary.csv` leaves out wall-clock time so that identical runs produce
/// identical files; the per-configuration tables keep it.
pub fn record_results(root: &Path, new: &[RunRecord]) -> Result<Vec<Summary>> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let runs_path = root.join(RUNS_FILE);
    let mut runs: BTreeMap<_, RunRecord> = read_runs(&runs_path)?.into_iter().map(|r| (r.key(), r)).collect();
    for r in new {
        runs.insert(r.key(), r.clone());
    }
    let runs: Vec<RunRecord> = runs.into_values().collect();
    write_runs(&runs_path, &runs)?;
    let mut configs: Vec<(String, usize, usize)> = new.iter().map(|r| (r.dataset.clone(), r.lookback, r.horizon)).collect();
    configs.sort();
    configs.dedup();
    for (ds, l, h) in configs {
        let subset: Vec<RunRecord> = runs
            .iter()
            .filter(|r| r.dataset == ds && r.lookback == l && r.horizon == h)
            .cloned()
            .collect();
        emit_table(&subset, root, &format!("{ds}_{l}_{h}"))?;
    }
    let summaries = aggregate(&runs);
    write_csv(
        &root.join("summary.csv"),
        &TABLE_COLUMNS[..TABLE_COLUMNS.len() - 1],
        summaries.iter().map(|s| {
            let mut f = summary_fields(s);
            f.pop();
            f
        }),
    )?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(variant: &str, seed: u64, mse: f64) -> RunRecord {
        RunRecord {
            dataset: "toy".into(),
            lookback: 16,
            horizon: 8,
            variant: variant.into(),
            seed,
            mse,
            mae: mse / 2.0,
            n_windows: 10,
            params: 100,
            seconds: 1.5,
        }
    }

    #[test]
    fn metric_examples() {
        let t = RealArray::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(metrics(&[(t.clone(), t.clone())]).unwrap(), Metrics { mse: 0.0, mae: 0.0, n_windows: 1 });
        let p = t.map(|v| v + 1.0);
        let m = metrics(&[(p.clone(), t.clone())]).unwrap();
        assert_eq!((m.mse, m.mae), (1.0, 1.0));
        let back = metrics(&[(t, p)]).unwrap();
        assert_eq!(m, back);
        assert!(metrics(&[]).is_err());
    }

    #[test]
    fn aggregation() {
        let s = aggregate(&[rec("full", 0, 0.36), rec("full", 1, 0.37), rec("full", 2, 0.38)]);
        assert_eq!(s.len(), 1);
        assert!((s[0].mse_mean - 0.37).abs() < 1e-12);
        assert!((s[0].mse_std - 0.01).abs() < 1e-12);
        let one = aggregate(&[rec("full", 0, 0.36)]);
        assert_eq!(one[0].mse_mean, 0.36);
        assert_eq!(one[0].mse_std, 0.0);
        assert_eq!(one[0].mae_mean, 0.18);
    }

    #[test]
    fn tables() {
        let dir = tempfile::tempdir().unwrap();
        emit_table(&[], dir.path(), "empty").unwrap();
        let text = std::fs::read_to_string(dir.path().join("empty.csv")).unwrap();
        assert_eq!(text.trim_end(), TABLE_COLUMNS.join(","));
        let s = emit_table(&[rec("zero", 0, 0.4), rec("full", 0, 0.3)], dir.path(), "two").unwrap();
        assert_eq!(s.iter().map(|x| x.variant.as_str()).collect::<Vec<_>>(), ["full", "zero"]);
        let text = std::fs::read_to_string(dir.path().join("two.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn results_root_upserts_by_key() {
        let dir = tempfile::tempdir().unwrap();
        record_results(dir.path(), &[rec("full", 0, 0.3), rec("full", 1, 0.5)]).unwrap();
        let s = record_results(dir.path(), &[rec("full", 1, 0.4)]).unwrap();
        assert_eq!(s[0].seed_count, 2);
        assert!((s[0].mse_mean - 0.35).abs() < 1e-12);
        assert!(dir.path().join("toy_16_8.csv").exists());
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with("dataset,L,H,variant,seed_count,mse_mean,mse_std,mae_mean,mae_std,params\n"));
    }
}
