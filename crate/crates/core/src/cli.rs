//! Run manifests, variant tokens and the command implementations behind the binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, PreparedData, SlotClock, SplitSpec, WindowSet};
use crate::disentangle::export;
use crate::error::{Error, Result};
use crate::eval::{self, RunRecord};
use crate::model::{parameter_count, BackboneKind, BankSpec, Batch, Checkpoint, EmbeddingMode, Model, ModelConfig};
use crate::train::{self, FreqLoss, TrainConfig};

pub const RESULTS_ENV: &str = "TIMEEMB_RESULTS";
pub const DATA_ENV: &str = "TIMEEMB_DATA_DIR";

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::Io { .. }
        | Error::Format { .. }
        | Error::Parse { .. }
        | Error::Serde(_)
        | Error::Dimension(_)
        | Error::Data(_) => 2,
        Error::Numeric { .. } | Error::Invariant(_) | Error::Contract(_) => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<[f64; 3]>,
    #[serde(default)]
    pub clock: SlotClock,
}

fn d_hidden() -> usize {
    512
}
fn d_banks() -> Vec<BankSpec> {
    vec![BankSpec::per_step("day", 24)]
}
fn d_backbone() -> BackboneKind {
    BackboneKind::TimeembHead
}
fn d_mode() -> EmbeddingMode {
    EmbeddingMode::Learned
}
fn d_true() -> bool {
    true
}
fn d_eps() -> f64 {
    crate::model::norm::DEFAULT_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lookback: usize,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_backbone")]
    pub backbone: BackboneKind,
    #[serde(default = "d_mode")]
    pub embedding_mode: EmbeddingMode,
    #[serde(default = "d_true")]
    pub filter_enabled: bool,
    #[serde(default = "d_true")]
    pub revin_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowpass: Option<f64>,
    #[serde(default = "d_eps")]
    pub revin_eps: f64,
    #[serde(default = "d_banks")]
    pub banks: Vec<BankSpec>,
}

impl ModelSection {
    pub fn to_config(&self, channels: usize) -> Result<ModelConfig> {
        if let Some(c) = self.channels {
            if c != channels {
                return Err(Error::config(
                    "model.channels",
                    format!("manifest declares {c} channels, the data has {channels}"),
                ));
            }
        }
        Ok(ModelConfig {
            lookback: self.lookback,
            horizon: self.horizon,
            channels,
            hidden: self.hidden,
            banks: self.banks.clone(),
            backbone: self.backbone,
            embedding_mode: self.embedding_mode,
            filter_enabled: self.filter_enabled,
            revin_enabled: self.revin_enabled,
            topk: self.topk,
            lowpass: self.lowpass,
            revin_eps: self.revin_eps,
        })
    }
}

fn d_lr() -> f64 {
    0.0005
}
fn d_batch() -> usize {
    256
}
fn d_epochs() -> usize {
    30
}
fn d_patience() -> usize {
    5
}
fn d_alpha() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub freq_loss: FreqLoss,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: d_lr(),
            batch_size: d_batch(),
            max_epochs: d_epochs(),
            patience: d_patience(),
            alpha: d_alpha(),
            freq_loss: FreqLoss::default(),
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            alpha: self.alpha,
            seed,
            freq_loss: self.freq_loss,
        }
    }
}

fn d_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn d_variant() -> String {
    "full".into()
}
fn d_eval_batch() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_variant")]
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "d_eval_batch")]
    pub eval_batch_size: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: d_seeds(),
            variant: d_variant(),
            output_dir: None,
            eval_batch_size: d_eval_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub run: RunSection,
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value` overrides to a parsed manifest table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::config(o.clone(), "override must look like section.key=value"))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        let mut cur = &mut *table;
        for p in path {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::config(key.trim(), format!("`{p}` is not a section")))?;
        }
        cur.insert(last.to_string(), parse_override_value(raw.trim()));
    }
    Ok(())
}

impl Manifest {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let m: Manifest = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("manifest", e.message().to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("manifest", e.message().to_string()))?;
        apply_overrides(&mut table, overrides)?;
        Self::from_table(table)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds", "at least one seed is required"));
        }
        if self.run.eval_batch_size == 0 {
            return Err(Error::config("run.eval_batch_size", "must be at least 1"));
        }
        self.train.to_config(0).validate()?;
        self.split_spec().validate()?;
        parse_variant(&self.run.variant)?;
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        match self.dataset.split {
            Some([train, val, test]) => SplitSpec { train, val, test },
            None => SplitSpec::for_dataset(&self.dataset.name),
        }
    }

    /// Dataset path, relative paths resolved against `$TIMEEMB_DATA_DIR` when set.
    pub fn data_path(&self) -> PathBuf {
        let p = &self.dataset.path;
        match std::env::var_os(DATA_ENV) {
            Some(dir) if p.is_relative() => Path::new(&dir).join(p),
            _ => p.clone(),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.run.output_dir.clone().unwrap_or_else(|| {
            PathBuf::from("runs").join(format!(
                "{}_{}_{}",
                self.dataset.name, self.model.lookback, self.model.horizon
            ))
        })
    }

    pub fn load_data(&self) -> Result<PreparedData> {
        let path = self.data_path();
        if !path.is_file() {
            return Err(Error::config("dataset.path", format!("{} does not exist", path.display())));
        }
        let mut ds = data::load_csv(&path)?;
        ds.name = self.dataset.name.clone();
        if let Some(t) = self.dataset.truncate {
            ds = ds.truncated(t);
        }
        data::prepare(&ds, &self.split_spec(), self.model.lookback, self.model.horizon, self.dataset.clock)
    }
}

/// Results root: `$TIMEEMB_RESULTS` or `results`.
pub fn results_root() -> PathBuf {
    std::env::var_os(RESULTS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}

#[derive(Debug, Clone, PartialEq)]
enum VariantOp {
    Mode(EmbeddingMode),
    NoFilter,
    NoRevin,
    TopK(usize),
    LowPass(f64),
    Backbone(BackboneKind),
}

/// A parsed ablation token: `full`, `random`, `zero`, `mean`, `mean_global`,
/// `no_embedding`, `no_filter`, `no_revin`, `topk:k`, `lowpass:γ`,
/// `backbone:<kind>`, joined with `+`; or `last_value` for the trivial predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    ops: Vec<VariantOp>,
    pub trivial: bool,
}

pub fn parse_variant(token: &str) -> Result<Variant> {
    let token = token.trim();
    let unknown = || Error::config("variant", format!("unknown variant token `{token}`"));
    if token == "last_value" {
        return Ok(Variant {
            name: token.into(),
            ops: Vec::new(),
            trivial: true,
        });
    }
    let mut ops = Vec::new();
    for part in token.split('+') {
        let op = match part {
            "full" => continue,
            "random" => VariantOp::Mode(EmbeddingMode::RandomReinit),
            "zero" => VariantOp::Mode(EmbeddingMode::ZeroFixed),
            "mean" => VariantOp::Mode(EmbeddingMode::MeanFixed),
            "mean_global" => VariantOp::Mode(EmbeddingMode::MeanGlobal),
            "no_embedding" => VariantOp::Mode(EmbeddingMode::None),
            "no_filter" => VariantOp::NoFilter,
            "no_revin" => VariantOp::NoRevin,
            p => match p.split_once(':') {
                Some(("topk", k)) => VariantOp::TopK(k.parse().map_err(|_| unknown())?),
                Some(("lowpass", g)) => {
                    let g: f64 = g.parse().map_err(|_| unknown())?;
                    if !(0.0..=1.0).contains(&g) {
                        return Err(Error::config("variant", format!("γ = {g} outside [0, 1]")));
                    }
                    VariantOp::LowPass(g)
                }
                Some(("backbone", b)) => VariantOp::Backbone(BackboneKind::parse(b).ok_or_else(unknown)?),
                _ => return Err(unknown()),
            },
        };
        ops.push(op);
    }
    Ok(Variant {
        name: token.into(),
        ops,
        trivial: false,
    })
}

impl Variant {
    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        for op in &self.ops {
            match *op {
                VariantOp::Mode(m) => cfg.embedding_mode = m,
                VariantOp::NoFilter => cfg.filter_enabled = false,
                VariantOp::NoRevin => cfg.revin_enabled = false,
                VariantOp::TopK(k) => cfg.topk = Some(k),
                VariantOp::LowPass(g) => cfg.lowpass = Some(g),
                VariantOp::Backbone(b) => cfg.backbone = b,
            }
        }
        cfg
    }

    pub fn slug(&self) -> String {
        self.name.replace(':', "_").replace('+', "__")
    }
}

/// Trains and tests every `variant × seed` of `manifest`, writing checkpoints
/// and logs under the manifest's output directory and results under `results`.
pub fn run_experiment(manifest: &Manifest, variants: &[String], results: &Path) -> Result<Vec<RunRecord>> {
    let variants: Vec<Variant> = variants.iter().map(|v| parse_variant(v)).collect::<Result<_>>()?;
    let data = manifest.load_data()?;
    let channels = data.train.channels();
    let out = manifest.output_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let echo = out.join("manifest.toml");
    std::fs::write(&echo, manifest.to_toml()?).map_err(|e| Error::io(&echo, e))?;
    let base = manifest.model.to_config(channels)?;
    let eval_bs = manifest.run.eval_batch_size;
    let mut records = Vec::new();
    for variant in &variants {
        let cfg = variant.apply(base.clone());
        cfg.validate()?;
        for &seed in &manifest.run.seeds {
            let start = Instant::now();
            let (metrics, params) = if variant.trivial {
                (eval::last_value_metrics(&data.test, eval_bs)?, 0)
            } else {
                log::info!("{} {} seed {seed}", data.name, variant.name);
                let model = Model::new(cfg.clone(), seed)?;
                let outcome = train::fit(model, &data.train, &data.val, &manifest.train.to_config(seed))?;
                let dir = out.join(variant.slug()).join(format!("seed{seed}"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                train::write_log(&dir.join("train_log.csv"), &outcome.log)?;
                Checkpoint::new(outcome.model.clone(), Some(outcome.optimizer), Some(data.stats.clone()))
                    .save(&dir.join("checkpoint.json"))?;
                (eval::evaluate(&outcome.model, &data.test, eval_bs, seed)?, parameter_count(&cfg))
            };
            log::info!("{} {} seed {seed}: mse {:.4} mae {:.4}", data.name, variant.name, metrics.mse, metrics.mae);
            records.push(RunRecord {
                dataset: data.name.clone(),
                lookback: cfg.lookback,
                horizon: cfg.horizon,
                variant: variant.name.clone(),
                seed,
                mse: metrics.mse,
                mae: metrics.mae,
                n_windows: metrics.n_windows,
                params,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    eval::record_results(results, &records)?;
    Ok(records)
}

fn load_checkpoint_for(manifest: &Manifest, checkpoint: &Path) -> Result<(Checkpoint, PreparedData)> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = manifest.load_data()?;
    let cfg = &ck.model.config;
    if cfg.channels != data.train.channels() || cfg.lookback != manifest.model.lookback || cfg.horizon != manifest.model.horizon {
        return Err(Error::dim(format!(
            "checkpoint expects {}→{} windows with {} channels; the manifest gives {}→{} with {}",
            cfg.lookback,
            cfg.horizon,
            cfg.channels,
            manifest.model.lookback,
            manifest.model.horizon,
            data.train.channels()
        )));
    }
    Ok((ck, data))
}

/// Test metrics of a saved checkpoint.
pub fn evaluate_checkpoint(manifest: &Manifest, checkpoint: &Path, seed: u64) -> Result<eval::Metrics> {
    let (ck, data) = load_checkpoint_for(manifest, checkpoint)?;
    eval::evaluate(&ck.model, &data.test, manifest.run.eval_batch_size, seed)
}

pub fn split_windows<'a>(data: &'a PreparedData, split: &str) -> Result<&'a WindowSet> {
    match split {
        "train" => Ok(&data.train),
        "val" => Ok(&data.val),
        "test" => Ok(&data.test),
        s => Err(Error::config("split", format!("unknown split `{s}` (train, val or test)"))),
    }
}

/// Writes `spectrum.csv`, `invariant.csv`, `residual.csv`, `banks.csv` and `filter.csv` into `out`.
pub fn export_components(manifest: &Manifest, checkpoint: &Path, split: &str, windows: &[usize], out: &Path) -> Result<()> {
    let (ck, data) = load_checkpoint_for(manifest, checkpoint)?;
    let set = split_windows(&data, split)?;
    if let Some(&bad) = windows.iter().find(|&&w| w >= set.len()) {
        return Err(Error::config("windows", format!("window {bad} out of range for {} windows", set.len())));
    }
    let batch: Batch = set.batch(windows)?;
    let comps = ck.model.components(&batch)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pick = |f: fn(&crate::model::WindowComponents) -> &crate::numcore::ComplexArray| {
        windows.iter().zip(&comps).map(|(&w, c)| (w, f(c).clone())).collect::<Vec<_>>()
    };
    export::write_spectra(&out.join("spectrum.csv"), &pick(|c| &c.spectrum))?;
    export::write_spectra(&out.join("invariant.csv"), &pick(|c| &c.invariant))?;
    export::write_spectra(&out.join("residual.csv"), &pick(|c| &c.residual))?;
    if ck.model.config.embedding_mode != EmbeddingMode::None {
        export::write_banks(&out.join("banks.csv"), &ck.model.banks()?)?;
    }
    export::write_filter(&out.join("filter.csv"), &ck.model.filter())
}

/// Parameter breakdown `(banks, filter, backbone, total)`.
pub fn parameter_breakdown(cfg: &ModelConfig) -> (usize, usize, usize, usize) {
    let total = parameter_count(cfg);
    let f = cfg.bins();
    let banks = if cfg.embedding_mode.has_trainable_banks() {
        cfg.banks.iter().map(|b| b.slots * f * cfg.channels).sum()
    } else {
        0
    };
    let filter = if cfg.filter_enabled { 2 * f } else { 0 };
    (banks, filter, total - banks - filter, total)
}
