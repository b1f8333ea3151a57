//! The full forecaster: instance normalization, spectral disentanglement,
//! a time-domain backbone and inverse normalization.

pub mod backbone;
pub mod checkpoint;
pub mod masks;
pub mod norm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

pub use backbone::{head_forward, Backbone, BackboneKind};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use masks::{apply_spectrum_masks, SpectrumMask};
pub use norm::{instance_normalize, inverse_normalize, InstanceNormState};

use crate::disentangle::{spectral_block, BlockNodes, EmbeddingBank, FrequencyFilter, SlotLayout};
use crate::error::{Error, Result};
use crate::numcore::{ComplexArray, Graph, NodeId, ParamId, ParamSet, RealArray};
use crate::spectral::kernels;

/// Standard deviation of bank values drawn by the random re-initialization ablation.
pub const RANDOM_REINIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSpec {
    pub name: String,
    pub slots: usize,
    /// Steps tiled by the slots; defaults to `slots` (plain `t mod M`).
    #[serde(default)]
    pub period: Option<usize>,
}

impl BankSpec {
    pub fn per_step(name: impl Into<String>, slots: usize) -> Self {
        Self {
            name: name.into(),
            slots,
            period: None,
        }
    }

    pub fn layout(&self) -> Result<SlotLayout> {
        SlotLayout::new(self.slots, self.period.unwrap_or(self.slots))
            .map_err(|e| Error::config(format!("model.banks.{}", self.name), e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Learned,
    /// No invariant component at all.
    None,
    /// Banks frozen at zero.
    ZeroFixed,
    /// Banks frozen at the per-slot mean training spectrum.
    MeanFixed,
    /// Banks frozen at the mean training spectrum over all slots.
    MeanGlobal,
    /// Learned, then resampled from `N(0, 0.02²)` before evaluation.
    RandomReinit,
}

impl EmbeddingMode {
    pub fn has_trainable_banks(self) -> bool {
        matches!(self, Self::Learned | Self::RandomReinit)
    }

    pub fn has_fixed_banks(self) -> bool {
        matches!(self, Self::ZeroFixed | Self::MeanFixed | Self::MeanGlobal)
    }
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    norm::DEFAULT_EPS
}

fn default_backbone() -> BackboneKind {
    BackboneKind::TimeembHead
}

fn default_mode() -> EmbeddingMode {
    EmbeddingMode::Learned
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub hidden: usize,
    pub banks: Vec<BankSpec>,
    #[serde(default = "default_backbone")]
    pub backbone: BackboneKind,
    #[serde(default = "default_mode")]
    pub embedding_mode: EmbeddingMode,
    #[serde(default = "default_true")]
    pub filter_enabled: bool,
    #[serde(default = "default_true")]
    pub revin_enabled: bool,
    #[serde(default)]
    pub topk: Option<usize>,
    #[serde(default)]
    pub lowpass: Option<f64>,
    #[serde(default = "default_eps")]
    pub revin_eps: f64,
}

impl ModelConfig {
    /// Full model with one per-step bank of `slots` entries.
    pub fn new(lookback: usize, horizon: usize, channels: usize, slots: usize, hidden: usize) -> Self {
        Self {
            lookback,
            horizon,
            channels,
            hidden,
            banks: vec![BankSpec::per_step("day", slots)],
            backbone: BackboneKind::TimeembHead,
            embedding_mode: EmbeddingMode::Learned,
            filter_enabled: true,
            revin_enabled: true,
            topk: None,
            lowpass: None,
            revin_eps: norm::DEFAULT_EPS,
        }
    }

    pub fn bins(&self) -> usize {
        kernels::bins_for(self.lookback)
    }

    pub fn mask(&self) -> Result<Option<SpectrumMask>> {
        SpectrumMask::from_options(self.topk, self.lowpass)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback < 2 {
            return Err(Error::config("model.lookback", "must be at least 2"));
        }
        if self.horizon < 1 {
            return Err(Error::config("model.horizon", "must be at least 1"));
        }
        if self.channels < 1 {
            return Err(Error::config("model.channels", "must be at least 1"));
        }
        if matches!(self.backbone, BackboneKind::TimeembHead | BackboneKind::PlainMlp) && self.hidden < 1 {
            return Err(Error::config("model.hidden", "must be at least 1"));
        }
        if !(self.revin_eps > 0.0 && self.revin_eps.is_finite()) {
            return Err(Error::config("model.revin_eps", "must be a positive finite number"));
        }
        if self.embedding_mode != EmbeddingMode::None && self.banks.is_empty() {
            return Err(Error::config(
                "model.banks",
                "at least one bank is required unless embedding_mode = none",
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for bank in &self.banks {
            bank.layout()?;
            if !names.insert(bank.name.as_str()) {
                return Err(Error::config("model.banks", format!("duplicate bank `{}`", bank.name)));
            }
        }
        let f = self.bins();
        if let Some(k) = self.topk {
            if k > f {
                return Err(Error::config("model.topk", format!("k = {k} exceeds the {f} bins")));
            }
        }
        if let Some(g) = self.lowpass {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::config("model.lowpass", format!("γ = {g} outside [0, 1]")));
            }
        }
        self.mask()?;
        Ok(())
    }
}

/// Closed-form trainable parameter count.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let (f, d) = (config.bins(), config.channels);
    let banks: usize = if config.embedding_mode.has_trainable_banks() {
        config.banks.iter().map(|b| b.slots * f * d).sum()
    } else {
        0
    };
    let filter = if config.filter_enabled { 2 * f } else { 0 };
    banks + filter + config.backbone.parameter_count(config.lookback, config.horizon, config.hidden)
}

/// A batch of windows laid out one row per (window, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(B·D) × L`, window-major then channel.
    pub x: RealArray,
    /// `(B·D) × H` targets, when known.
    pub y: Option<RealArray>,
    pub t_last: Vec<u64>,
    pub channels: usize,
}

impl Batch {
    pub fn new(x: RealArray, y: Option<RealArray>, t_last: Vec<u64>, channels: usize) -> Result<Self> {
        let rows = t_last.len() * channels;
        if x.shape().len() != 2 || x.rows() != rows {
            return Err(Error::dim(format!(
                "batch inputs must be {rows}×L for {} windows of {channels} channels, got {:?}",
                t_last.len(),
                x.shape()
            )));
        }
        if let Some(y) = &y {
            if y.shape().len() != 2 || y.rows() != rows {
                return Err(Error::dim(format!("batch targets must have {rows} rows, got {:?}", y.shape())));
            }
        }
        Ok(Self {
            x,
            y,
            t_last,
            channels,
        })
    }

    /// One `L × D` window.
    pub fn single(window: &RealArray, t_last: u64) -> Result<Self> {
        let &[_, d] = window.shape() else {
            return Err(Error::dim(format!("window must be L×D, got {:?}", window.shape())));
        };
        Self::new(window.transpose(), None, vec![t_last], d)
    }

    pub fn len(&self) -> usize {
        self.t_last.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_last.is_empty()
    }
}

/// Splits `(B·D) × N` rows back into `B` arrays of shape `N × D`.
pub fn rows_to_windows(rows: &RealArray, channels: usize) -> Vec<RealArray> {
    let n = rows.row_len();
    rows.data()
        .chunks(channels * n)
        .map(|block| {
            RealArray::from_vec(&[channels, n], block.to_vec())
                .expect("block sized D×N")
                .transpose()
        })
        .collect()
}

fn complex_rows_to_windows(z: &ComplexArray, channels: usize) -> Vec<ComplexArray> {
    let f = z.row_len();
    z.re()
        .chunks(channels * f)
        .zip(z.im().chunks(channels * f))
        .map(|(re, im)| {
            let re = RealArray::from_vec(&[channels, f], re.to_vec()).expect("D×F").transpose();
            let im = RealArray::from_vec(&[channels, f], im.to_vec()).expect("D×F").transpose();
            ComplexArray::from_parts(&[f, channels], re.into_vec(), im.into_vec()).expect("F×D")
        })
        .collect()
}

/// Instance-normalizes every row; returns the normalized rows with each row's mean and divisor.
fn normalize_rows(x: &RealArray, eps: f64) -> (RealArray, Vec<f64>, Vec<f64>) {
    let l = x.row_len();
    let mut out = Vec::with_capacity(x.len());
    let mut means = Vec::with_capacity(x.rows());
    let mut stds = Vec::with_capacity(x.rows());
    for row in x.data().chunks(l) {
        let (m, s) = norm::row_stats(row, eps);
        out.extend(row.iter().map(|v| (v - m) / s));
        means.push(m);
        stds.push(s);
    }
    (RealArray::from_vec(x.shape(), out).expect("same shape"), means, stds)
}

fn broadcast_rows(values: &[f64], width: usize) -> RealArray {
    let data = values.iter().flat_map(|&v| std::iter::repeat_n(v, width)).collect();
    RealArray::from_vec(&[values.len(), width], data).expect("rows × width")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    banks: Vec<ParamId>,
    filter: Option<(ParamId, ParamId)>,
    backbone: Backbone,
}

/// Node handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// `(B·D) × H`, in the input's scale.
    pub prediction: NodeId,
    /// Masked `X_s`, real `(B·D) × F`.
    pub invariant: Option<NodeId>,
    pub block: BlockNodes,
}

/// Per-window spectra, each `F × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowComponents {
    pub spectrum: ComplexArray,
    pub invariant: ComplexArray,
    pub residual: ComplexArray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: Layout,
    /// Frozen `M × F × D` tables for the fixed-bank modes, one per bank.
    fixed_tables: Vec<RealArray>,
}

impl Model {
    /// Zero banks, identity filter and a `U(±1/√fan_in)` backbone drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, d) = (config.bins(), config.channels);
        let mut params = ParamSet::new();
        let mut banks = Vec::new();
        if config.embedding_mode.has_trainable_banks() {
            for b in &config.banks {
                banks.push(params.add(format!("bank.{}", b.name), RealArray::zeros(&[b.slots, f, d]))?);
            }
        }
        let filter = if config.filter_enabled {
            let re = params.add("filter.re", RealArray::filled(&[f], 1.0))?;
            let im = params.add("filter.im", RealArray::zeros(&[f]))?;
            Some((re, im))
        } else {
            None
        };
        let backbone = Backbone::init(
            config.backbone,
            &mut params,
            &mut rng,
            config.lookback,
            config.horizon,
            config.hidden,
        )?;
        let fixed_tables = if config.embedding_mode.has_fixed_banks() {
            config.banks.iter().map(|b| RealArray::zeros(&[b.slots, f, d])).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            params,
            layout: Layout {
                banks,
                filter,
                backbone,
            },
            fixed_tables,
        })
    }

    pub fn bank_params(&self) -> &[ParamId] {
        &self.layout.banks
    }

    pub fn filter_params(&self) -> Option<(ParamId, ParamId)> {
        self.layout.filter
    }

    pub fn backbone(&self) -> &Backbone {
        &self.layout.backbone
    }

    /// Current banks (trainable or frozen) as plain values.
    pub fn banks(&self) -> Result<Vec<EmbeddingBank>> {
        let tables: Vec<RealArray> = if self.config.embedding_mode.has_trainable_banks() {
            self.layout.banks.iter().map(|&id| self.params.value(id).clone()).collect()
        } else {
            self.fixed_tables.clone()
        };
        self.config
            .banks
            .iter()
            .zip(tables)
            .map(|(spec, values)| EmbeddingBank::new(spec.name.clone(), spec.layout()?, values))
            .collect()
    }

    /// Current filter; identity when the filter is disabled.
    pub fn filter(&self) -> FrequencyFilter {
        match self.layout.filter {
            Some((re, im)) => FrequencyFilter {
                re: self.params.value(re).data().to_vec(),
                im: self.params.value(im).data().to_vec(),
            },
            None => FrequencyFilter::identity(self.config.bins()),
        }
    }

    pub fn fixed_tables(&self) -> &[RealArray] {
        &self.fixed_tables
    }

    /// Fills the frozen tables of the mean modes from training batches.
    ///
    /// The mean spectrum goes to the first bank; further banks stay zero so
    /// that the additive lookup reproduces the mean exactly.
    pub fn fit_fixed_tables<'a>(&mut self, batches: impl IntoIterator<Item = &'a Batch>) -> Result<()> {
        let mode = self.config.embedding_mode;
        if !matches!(mode, EmbeddingMode::MeanFixed | EmbeddingMode::MeanGlobal) {
            return Ok(());
        }
        let (f, d, l) = (self.config.bins(), self.config.channels, self.config.lookback);
        let layout = self.config.banks[0].layout()?;
        let m = layout.slots;
        let mut sums = vec![0.0; m * f * d];
        let mut counts = vec![0usize; m];
        for batch in batches {
            self.check_batch(batch)?;
            let x = if self.config.revin_enabled {
                normalize_rows(&batch.x, self.config.revin_eps).0
            } else {
                batch.x.clone()
            };
            let (re, _) = kernels::rfft_rows(x.data(), x.rows(), l);
            for (b, &t) in batch.t_last.iter().enumerate() {
                let slot = match mode {
                    EmbeddingMode::MeanFixed => layout.slot_index(t).0,
                    _ => 0,
                };
                counts[slot] += 1;
                for c in 0..d {
                    let row = &re[(b * d + c) * f..(b * d + c + 1) * f];
                    for (k, v) in row.iter().enumerate() {
                        sums[(slot * f + k) * d + c] += v;
                    }
                }
            }
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::Data("no training windows to average".into()));
        }
        let mut table = vec![0.0; m * f * d];
        for s in 0..m {
            let src = if mode == EmbeddingMode::MeanGlobal { 0 } else { s };
            if counts[src] > 0 {
                for i in 0..f * d {
                    table[s * f * d + i] = sums[src * f * d + i] / counts[src] as f64;
                }
            }
        }
        self.fixed_tables[0] = RealArray::from_vec(&[m, f, d], table)?;
        Ok(())
    }

    /// Copy with every trainable bank resampled from `N(0, 0.02²)`.
    pub fn with_reinitialized_banks(&self, seed: u64) -> Self {
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, RANDOM_REINIT_STD).expect("valid std");
        for &id in &self.layout.banks {
            for v in out.params.get_mut(id).value.data_mut() {
                *v = rng.sample(dist);
            }
        }
        out
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.channels != self.config.channels || batch.x.row_len() != self.config.lookback {
            return Err(Error::dim(format!(
                "model expects windows of {}×{}, batch has rows of {} with {} channels",
                self.config.lookback,
                self.config.channels,
                batch.x.row_len(),
                batch.channels
            )));
        }
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        Ok(())
    }

    fn invariant_node(&self, g: &mut Graph<'_>, t_last: &[u64]) -> Result<Option<NodeId>> {
        let mode = self.config.embedding_mode;
        if mode == EmbeddingMode::None {
            return Ok(None);
        }
        let mut acc: Option<NodeId> = None;
        for (i, spec) in self.config.banks.iter().enumerate() {
            let layout = spec.layout()?;
            let slots: Vec<usize> = t_last.iter().map(|&t| layout.slot_index(t).0).collect();
            let table = if mode.has_trainable_banks() {
                g.param(self.layout.banks[i])
            } else {
                g.input(self.fixed_tables[i].clone())?
            };
            let rows = g.gather(table, &slots)?;
            acc = Some(match acc {
                Some(a) => g.add(a, rows)?,
                None => rows,
            });
        }
        let Some(mut xs) = acc else { return Ok(None) };
        if let Some(mask) = self.config.mask()? {
            let m = masks::rows_mask(g.value(xs), mask);
            let m = g.input(m)?;
            xs = g.mul(xs, m)?;
        }
        Ok(Some(xs))
    }

    /// Builds the forward pass of `batch` on `g` (whose parameters must be `self.params` or a perturbation of them).
    pub fn forward(&self, g: &mut Graph<'_>, batch: &Batch) -> Result<ForwardNodes> {
        self.check_batch(batch)?;
        let h = self.config.horizon;
        let (x, stats) = if self.config.revin_enabled {
            let (x, means, stds) = normalize_rows(&batch.x, self.config.revin_eps);
            (x, Some((means, stds)))
        } else {
            (batch.x.clone(), None)
        };
        let x = g.input(x)?;
        let invariant = self.invariant_node(g, &batch.t_last)?;
        let filter = self.layout.filter.map(|(re, im)| (g.param(re), g.param(im)));
        let block = spectral_block(g, x, invariant, filter)?;
        let y = self.layout.backbone.forward(g, block.output)?;
        let prediction = match stats {
            Some((means, stds)) => {
                let s = g.input(broadcast_rows(&stds, h))?;
                let m = g.input(broadcast_rows(&means, h))?;
                let scaled = g.mul(y, s)?;
                g.add(scaled, m)?
            }
            None => y,
        };
        Ok(ForwardNodes {
            prediction,
            invariant,
            block,
        })
    }

    /// `(B·D) × H` predictions.
    pub fn predict(&self, batch: &Batch) -> Result<RealArray> {
        let mut g = Graph::new(&self.params);
        let nodes = self.forward(&mut g, batch)?;
        Ok(g.value(nodes.prediction).clone())
    }

    /// `H × D` forecast of one `L × D` window ending at global step `t_last`.
    pub fn forecast(&self, window: &RealArray, t_last: u64) -> Result<RealArray> {
        let batch = Batch::single(window, t_last)?;
        let rows = self.predict(&batch)?;
        Ok(rows_to_windows(&rows, self.config.channels).remove(0))
    }

    /// `X̄`, `X_s` and `X_d` of each window in `batch`.
    pub fn components(&self, batch: &Batch) -> Result<Vec<WindowComponents>> {
        let mut g = Graph::new(&self.params);
        let nodes = self.forward(&mut g, batch)?;
        let d = self.config.channels;
        let spectrum = complex_rows_to_windows(g.complex_value(nodes.block.spectrum), d);
        let residual = complex_rows_to_windows(g.complex_value(nodes.block.residual), d);
        let f = self.config.bins();
        let invariant: Vec<ComplexArray> = match nodes.invariant {
            Some(xs) => rows_to_windows(g.value(xs), d)
                .into_iter()
                .map(|r| ComplexArray::from_parts(&[f, d], r.into_vec(), vec![0.0; f * d]).expect("F×D"))
                .collect(),
            None => vec![ComplexArray::zeros(&[f, d]); batch.len()],
        };
        Ok(spectrum
            .into_iter()
            .zip(invariant)
            .zip(residual)
            .map(|((spectrum, invariant), residual)| WindowComponents {
                spectrum,
                invariant,
                residual,
            })
            .collect())
    }
}

/// Single-window forward pass.
pub fn timeemb_forward(window: &RealArray, t_last: u64, model: &Model) -> Result<RealArray> {
    model.forecast(window, t_last)
}
