//! Dual-domain loss, mini-batch Adam with early stopping.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::numcore::{adam_step, AdamState, Gradients, Graph, NodeId, RealArray};
use crate::spectral::kernels;

/// Windows per gradient shard. Shards are a fixed partition of each batch,
/// so the reduction order never depends on the worker count.
pub const SHARD_WINDOWS: usize = 64;
/// Upper bound on `windows × channels` rows held in one graph.
pub const MAX_GRAPH_ROWS: usize = 4096;

/// Windows per graph for `channels`-wide data: at most `limit`, at least one.
pub fn windows_per_graph(limit: usize, channels: usize) -> usize {
    limit.min(MAX_GRAPH_ROWS / channels.max(1)).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqLoss {
    /// Mean of `|ΔX[k]|`.
    #[default]
    Modulus,
    /// Mean of `|Re ΔX[k]| + |Im ΔX[k]|`.
    Componentwise,
}

fn check_pair(pred: &RealArray, target: &RealArray) -> Result<()> {
    if pred.shape() != target.shape() || pred.shape().len() != 2 {
        return Err(Error::dim(format!(
            "prediction {:?} and target {:?} must be equal H×D arrays",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean over bins and channels of the spectral error of `H × D` arrays.
pub fn frequency_mae_with(pred: &RealArray, target: &RealArray, mode: FreqLoss) -> Result<f64> {
    check_pair(pred, target)?;
    let h = pred.rows();
    if h < 2 {
        return Err(Error::dim("frequency loss needs a horizon of at least 2"));
    }
    let diff: Vec<f64> = pred.transpose().data().iter().zip(target.transpose().data()).map(|(a, b)| a - b).collect();
    let d = pred.row_len();
    let (re, im) = kernels::rfft_rows(&diff, d, h);
    let total: f64 = match mode {
        FreqLoss::Modulus => re.iter().zip(&im).map(|(r, i)| r.hypot(*i)).sum(),
        FreqLoss::Componentwise => re.iter().zip(&im).map(|(r, i)| r.abs() + i.abs()).sum(),
    };
    Ok(total / re.len() as f64)
}

pub fn frequency_mae(pred: &RealArray, target: &RealArray) -> Result<f64> {
    frequency_mae_with(pred, target, FreqLoss::Modulus)
}

pub fn mse(pred: &RealArray, target: &RealArray) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("train.alpha", format!("α = {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `α·frequency_mae + (1 − α)·MSE`.
pub fn combined_loss(pred: &RealArray, target: &RealArray, alpha: f64) -> Result<f64> {
    combined_loss_with(pred, target, alpha, FreqLoss::Modulus)
}

pub fn combined_loss_with(pred: &RealArray, target: &RealArray, alpha: f64, mode: FreqLoss) -> Result<f64> {
    check_alpha(alpha)?;
    let time = mse(pred, target)?;
    let freq = if alpha > 0.0 { frequency_mae_with(pred, target, mode)? } else { 0.0 };
    Ok(alpha * freq + (1.0 - alpha) * time)
}

/// Combined loss on graph rows: `pred` is `(B·D) × H`, `target` the matching array.
pub fn loss_node(g: &mut Graph<'_>, pred: NodeId, target: &RealArray, alpha: f64, mode: FreqLoss) -> Result<NodeId> {
    check_alpha(alpha)?;
    let t = g.input(target.clone())?;
    let diff = g.sub(pred, t)?;
    let time = {
        let sq = g.square(diff)?;
        g.mean(sq)?
    };
    if alpha == 0.0 {
        return Ok(time);
    }
    let z = g.rfft(diff)?;
    let freq = match mode {
        FreqLoss::Modulus => {
            let m = g.cabs(z)?;
            g.mean(m)?
        }
        FreqLoss::Componentwise => {
            let re = g.real_part(z)?;
            let im = g.imag_part(z)?;
            let (re, im) = (g.abs(re)?, g.abs(im)?);
            let s = g.add(re, im)?;
            g.mean(s)?
        }
    };
    if alpha == 1.0 {
        return Ok(freq);
    }
    let a = g.scale(freq, alpha)?;
    let b = g.scale(time, 1.0 - alpha)?;
    g.add(a, b)
}

fn default_freq_loss() -> FreqLoss {
    FreqLoss::Modulus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_freq_loss")]
    pub freq_loss: FreqLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            batch_size: 256,
            max_epochs: 30,
            patience: 5,
            alpha: 0.75,
            seed: 0,
            freq_loss: FreqLoss::Modulus,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs", "must be at least 1"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config("train.patience", "cannot exceed max_epochs"));
        }
        check_alpha(self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// Loop bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val: f64,
    pub since_improvement: usize,
    pub best: Option<(Model, AdamState, usize)>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    pub optimizer: AdamState,
    pub best_epoch: usize,
    pub best_val: f64,
    pub log: Vec<EpochRecord>,
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Maps `f` over `items` on up to [`workers`] threads, preserving order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let n = workers().min(items.len()).max(1);
    if n == 1 {
        return items.iter().map(f).collect();
    }
    let per = items.len().div_ceil(n);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(per).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Loss of one batch and its parameter gradients, reduced over fixed shards.
pub fn batch_gradients(model: &Model, set: &WindowSet, indices: &[usize], cfg: &TrainConfig) -> Result<(f64, Gradients)> {
    let total = indices.len() as f64;
    let shards: Vec<&[usize]> = indices.chunks(windows_per_graph(SHARD_WINDOWS, set.channels())).collect();
    let results = parallel_map(&shards, |shard| -> Result<(f64, Gradients)> {
        let batch = set.batch(shard)?;
        let mut g = Graph::new(&model.params);
        let nodes = model.forward(&mut g, &batch)?;
        let target = batch.y.as_ref().ok_or_else(|| Error::Data("training batch has no targets".into()))?;
        let loss = loss_node(&mut g, nodes.prediction, target, cfg.alpha, cfg.freq_loss)?;
        let weighted = g.scale(loss, shard.len() as f64 / total)?;
        Ok((g.scalar(weighted), g.backward(weighted)?))
    });
    let mut loss = 0.0;
    let mut grads = Gradients::default();
    for r in results {
        let (l, gr) = r?;
        loss += l;
        grads.merge(gr);
    }
    Ok((loss, grads))
}

/// Mean combined loss over all windows of `set`.
pub fn dataset_loss(model: &Model, set: &WindowSet, cfg: &TrainConfig) -> Result<f64> {
    let n = set.len();
    if n == 0 {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let bs = windows_per_graph(cfg.batch_size, set.channels());
    let starts: Vec<usize> = (0..n).step_by(bs).collect();
    let parts = parallel_map(&starts, |&s| -> Result<f64> {
        let idx: Vec<usize> = (s..(s + bs).min(n)).collect();
        let batch: Batch = set.batch(&idx)?;
        let pred = model.predict(&batch)?;
        let target = batch.y.as_ref().expect("window batches carry targets");
        let mut g = Graph::new(&model.params);
        let p = g.input(pred)?;
        let l = loss_node(&mut g, p, target, cfg.alpha, cfg.freq_loss)?;
        Ok(g.scalar(l) * idx.len() as f64)
    });
    let mut sum = 0.0;
    for p in parts {
        sum += p?;
    }
    Ok(sum / n as f64)
}

/// Trains `model` on `train`, selecting the epoch with the lowest loss on `val`.
pub fn fit(mut model: Model, train: &WindowSet, val: &WindowSet, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::Data("empty training split".into()));
    }
    if model.config.embedding_mode.has_fixed_banks() {
        let batches: Vec<Batch> = train.sequential_batches(cfg.batch_size).collect::<Result<_>>()?;
        model.fit_fixed_tables(&batches)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut adam = AdamState::initialized_for(&model.params, cfg.learning_rate);
    let mut state = TrainState {
        epoch: 0,
        best_val: f64::INFINITY,
        since_improvement: 0,
        best: None,
    };
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    while state.epoch < cfg.max_epochs {
        state.epoch += 1;
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradients(&model, train, chunk, cfg)?;
            model.params.accumulate(&grads);
            adam_step(&mut model.params, &mut adam)?;
            train_sum += loss * chunk.len() as f64;
        }
        let val_loss = dataset_loss(&model, val, cfg)?;
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss: train_sum / n as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>2}  train {:.6}  val {:.6}  ({:.1} s)",
            record.epoch,
            record.train_loss,
            record.val_loss,
            record.seconds
        );
        log.push(record);
        if val_loss < state.best_val {
            state.best_val = val_loss;
            state.since_improvement = 0;
            state.best = Some((model.clone(), adam.clone(), state.epoch));
        } else {
            state.since_improvement += 1;
            if state.since_improvement >= cfg.patience {
                break;
            }
        }
    }
    let (best_model, best_adam, best_epoch) = state
        .best
        .ok_or_else(|| Error::Data("validation loss never became finite".into()))?;
    Ok(FitOutcome {
        model: best_model,
        optimizer: best_adam,
        best_epoch,
        best_val: state.best_val,
        log,
    })
}

/// Columns `epoch,train_loss,val_loss,seconds`.
pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["epoch", "train_loss", "val_loss", "seconds"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            format!("{:.3}", r.seconds),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> RealArray {
        let n = shape.iter().product();
        RealArray::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn frequency_mae_of_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let target = random(&mut rng, &[8, 2]);
        let c = [0.5, -1.5];
        let mut pred = target.clone();
        for t in 0..8 {
            for (ch, off) in c.iter().enumerate() {
                pred.set2(t, ch, target.at2(t, ch) + off);
            }
        }
        let f_h = 5.0;
        let want = (0.5 * 8.0 / f_h + 1.5 * 8.0 / f_h) / 2.0;
        assert!((frequency_mae(&pred, &target).unwrap() - want).abs() < 1e-12);
        assert_eq!(frequency_mae(&target, &target).unwrap(), 0.0);
        assert!(frequency_mae(&target, &RealArray::zeros(&[8, 3])).is_err());
    }

    #[test]
    fn loss_degenerate_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, t) = (random(&mut rng, &[12, 3]), random(&mut rng, &[12, 3]));
        assert!((combined_loss(&p, &t, 0.0).unwrap() - mse(&p, &t).unwrap()).abs() < 1e-12);
        assert!((combined_loss(&p, &t, 1.0).unwrap() - frequency_mae(&p, &t).unwrap()).abs() < 1e-12);
        for a in [0.0, 0.3, 1.0] {
            assert_eq!(combined_loss(&p, &p, a).unwrap(), 0.0);
        }
        assert!(matches!(combined_loss(&p, &t, 1.5), Err(Error::Config { .. })));
    }

    #[test]
    fn graph_loss_matches_direct_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, t) = (random(&mut rng, &[10, 2]), random(&mut rng, &[10, 2]));
        for mode in [FreqLoss::Modulus, FreqLoss::Componentwise] {
            for a in [0.0, 0.4, 1.0] {
                let ps = crate::numcore::ParamSet::new();
                let mut g = Graph::new(&ps);
                // graph rows are channel-major
                let pn = g.input(p.transpose()).unwrap();
                let l = loss_node(&mut g, pn, &t.transpose(), a, mode).unwrap();
                let want = combined_loss_with(&p, &t, a, mode).unwrap();
                assert!((g.scalar(l) - want).abs() < 1e-12, "{mode:?} α={a}");
            }
        }
    }

    fn toy_sets() -> (WindowSet, WindowSet) {
        let t = 120;
        let values = RealArray::from_vec(
            &[t, 2],
            (0..t * 2)
                .map(|i| {
                    let (s, c) = ((i / 2) as f64, (i % 2) as f64);
                    (s * 0.5 + c).sin() + 0.1 * (s * 0.05).cos()
                })
                .collect(),
        )
        .unwrap();
        (
            WindowSet::from_matrix(&values, 0..80, 16, 8).unwrap(),
            WindowSet::from_matrix(&values, 64..120, 16, 8).unwrap(),
        )
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.005,
            batch_size: 16,
            max_epochs: 6,
            patience: 2,
            alpha: 0.5,
            seed: 3,
            freq_loss: FreqLoss::Modulus,
        }
    }

    #[test]
    fn fit_is_deterministic_and_returns_best_epoch() {
        let (train, val) = toy_sets();
        let run = || {
            let model = Model::new(ModelConfig::new(16, 8, 2, 4, 8), 1).unwrap();
            fit(model, &train, &val, &toy_cfg()).unwrap()
        };
        let (a, b) = (run(), run());
        let strip = |o: &FitOutcome| o.log.iter().map(|r| (r.train_loss, r.val_loss)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.model.params, b.model.params);
        let min = a.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_val, min);
        assert_eq!(dataset_loss(&a.model, &val, &toy_cfg()).unwrap(), min);
        assert!(a.log[0].train_loss > a.log.last().unwrap().train_loss);
    }

    #[test]
    fn zero_patience_stops_at_first_non_improvement() {
        let (train, val) = toy_sets();
        let mut cfg = toy_cfg();
        cfg.patience = 0;
        cfg.max_epochs = 30;
        cfg.learning_rate = 0.05;
        let out = fit(Model::new(ModelConfig::new(16, 8, 2, 4, 8), 1).unwrap(), &train, &val, &cfg).unwrap();
        let last = out.log.len() - 1;
        for w in out.log[..last].windows(2) {
            assert!(w[1].val_loss < w[0].val_loss);
        }
        if out.log.len() < 30 {
            assert!(out.log[last].val_loss >= out.log[last - 1].val_loss);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.patience = 40;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
