//! Time-invariant / time-varying separation in the frequency domain.
//!
//! A window's spectrum `X̄` is split into a slot-indexed real embedding `X_s`
//! drawn from one or more [`EmbeddingBank`]s and the residual `X_d = X̄ − X_s`
//! (real part only). The residual is reweighted per bin by a complex
//! [`FrequencyFilter`] `ω`, and `X_s` is added back:
//! `Ẋ = X_d ⊙ ω + X_s`.

pub mod export;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ComplexArray, Graph, NodeId, RealArray};
use crate::spectral::Spectrum;

/// How a bank's `M` slots tile a cycle of `P` dataset steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLayout {
    pub slots: usize,
    pub period: usize,
}

impl SlotLayout {
    pub fn new(slots: usize, period: usize) -> Result<Self> {
        let layout = Self { slots, period };
        layout.validate()?;
        Ok(layout)
    }

    /// `P == M`: one slot per step, i.e. `t mod M`.
    pub fn per_step(slots: usize) -> Result<Self> {
        Self::new(slots, slots)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::config("bank.slots", "must be at least 1"));
        }
        if self.period == 0 || self.period % self.slots != 0 {
            return Err(Error::config(
                "bank.period",
                format!(
                    "period {} must be a positive multiple of the slot count {}",
                    self.period, self.slots
                ),
            ));
        }
        Ok(())
    }

    /// Consecutive steps covered by one slot.
    pub fn steps_per_slot(&self) -> usize {
        self.period / self.slots
    }

    pub fn slot_index(&self, t_last: u64) -> SlotIndex {
        let phase = t_last % self.period as u64;
        SlotIndex((phase / self.steps_per_slot() as u64) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotIndex(pub usize);

/// `M × F × D` table of real spectra, one per cyclic time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBank {
    pub name: String,
    pub layout: SlotLayout,
    pub values: RealArray,
}

impl EmbeddingBank {
    pub fn zeros(name: impl Into<String>, layout: SlotLayout, bins: usize, channels: usize) -> Self {
        Self {
            name: name.into(),
            layout,
            values: RealArray::zeros(&[layout.slots, bins, channels]),
        }
    }

    pub fn new(name: impl Into<String>, layout: SlotLayout, values: RealArray) -> Result<Self> {
        layout.validate()?;
        match values.shape() {
            [m, _, _] if *m == layout.slots => Ok(Self {
                name: name.into(),
                layout,
                values,
            }),
            s => Err(Error::dim(format!(
                "bank values must be {}×F×D, got {s:?}",
                layout.slots
            ))),
        }
    }

    pub fn bins(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    /// The `F × D` spectrum stored at `slot`.
    pub fn slot_values(&self, slot: SlotIndex) -> RealArray {
        let (f, d) = (self.bins(), self.channels());
        let start = slot.0 * f * d;
        RealArray::from_vec(&[f, d], self.values.data()[start..start + f * d].to_vec())
            .expect("slot slice sized F×D")
    }
}

/// Complex per-bin modulation vector shared by all channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyFilter {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl FrequencyFilter {
    /// `ω = 1 + 0j` at every bin.
    pub fn identity(bins: usize) -> Self {
        Self {
            re: vec![1.0; bins],
            im: vec![0.0; bins],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

pub fn slot_index(t_last: u64, bank: &EmbeddingBank) -> SlotIndex {
    bank.layout.slot_index(t_last)
}

/// Sum over banks of each bank's slot spectrum for `t_last` (`F × D`).
pub fn lookup_invariant(banks: &[EmbeddingBank], t_last: u64) -> Result<RealArray> {
    let Some(first) = banks.first() else {
        return Err(Error::config("banks", "lookup needs at least one bank"));
    };
    let (f, d) = (first.bins(), first.channels());
    let mut out = RealArray::zeros(&[f, d]);
    for bank in banks {
        if bank.bins() != f || bank.channels() != d {
            return Err(Error::config(
                format!("banks.{}", bank.name),
                format!(
                    "shape {}×{} does not match {f}×{d} of bank `{}`",
                    bank.bins(),
                    bank.channels(),
                    first.name
                ),
            ));
        }
        out.add_assign(&bank.slot_values(slot_index(t_last, bank)));
    }
    Ok(out)
}

/// `X_d = X̄ − X_s` applied to the real part; the imaginary part is untouched.
pub fn subtract_invariant(spectrum: &Spectrum, invariant: &RealArray) -> Result<ComplexArray> {
    let bins = spectrum.bins();
    if bins.shape() != invariant.shape() {
        return Err(Error::dim(format!(
            "spectrum is {:?}, invariant is {:?}",
            bins.shape(),
            invariant.shape()
        )));
    }
    let re = bins.re().iter().zip(invariant.data()).map(|(a, s)| a - s).collect();
    ComplexArray::from_parts(bins.shape(), re, bins.im().to_vec())
}

/// Per-bin complex product with `ω`, broadcast over channels (`F × D` input).
pub fn modulate(residual: &ComplexArray, filter: &FrequencyFilter) -> Result<ComplexArray> {
    let shape = residual.shape();
    if shape.len() != 2 || shape[0] != filter.len() || filter.im.len() != filter.len() {
        return Err(Error::dim(format!(
            "filter of length {} cannot modulate a {shape:?} spectrum",
            filter.len()
        )));
    }
    let d = shape[1];
    let mut re = vec![0.0; residual.len()];
    let mut im = vec![0.0; residual.len()];
    for (i, (zr, zi)) in residual.re().iter().zip(residual.im()).enumerate() {
        let k = i / d;
        let (wr, wi) = (filter.re[k], filter.im[k]);
        re[i] = zr * wr - zi * wi;
        im[i] = zr * wi + zi * wr;
    }
    ComplexArray::from_parts(shape, re, im)
}

/// `Ẋ = filtered + X_s` on the real part, returned as the spectrum of a
/// length-`origin_length` real signal.
///
/// A filter with non-zero imaginary DC/Nyquist entries leaves imaginary
/// residue on those bins; it is projected out here, which is exactly what
/// the inverse transform would discard.
pub fn recombine(filtered: &ComplexArray, invariant: &RealArray, origin_length: usize) -> Result<Spectrum> {
    if filtered.shape() != invariant.shape() {
        return Err(Error::dim(format!(
            "filtered is {:?}, invariant is {:?}",
            filtered.shape(),
            invariant.shape()
        )));
    }
    let shape = filtered.shape().to_vec();
    let re: Vec<f64> = filtered.re().iter().zip(invariant.data()).map(|(a, s)| a + s).collect();
    let mut im = filtered.im().to_vec();
    let (f, d) = (shape[0], shape[1]);
    for c in 0..d {
        im[c] = 0.0;
        if origin_length % 2 == 0 && f >= 1 {
            im[(f - 1) * d + c] = 0.0;
        }
    }
    Spectrum::new(ComplexArray::from_parts(&shape, re, im)?, origin_length)
}

/// Node handles produced by [`spectral_block`].
#[derive(Debug, Clone, Copy)]
pub struct BlockNodes {
    /// `X̄`, complex `(B·D) × F`.
    pub spectrum: NodeId,
    /// `X_d`, complex; equals `spectrum` when no invariant is supplied.
    pub residual: NodeId,
    /// `Ẋ`, complex.
    pub recombined: NodeId,
    /// `IFFT(Ẋ)`, real `(B·D) × L`.
    pub output: NodeId,
}

/// Builds `IFFT(H_ω(X̄ − X_s) + X_s)` on a graph.
///
/// `rows` is real `(B·D) × L` (one row per window channel); `invariant`,
/// when present, is real `(B·D) × F`; `filter` is `(ω_re, ω_im)` of length `F`.
pub fn spectral_block(
    g: &mut Graph<'_>,
    rows: NodeId,
    invariant: Option<NodeId>,
    filter: Option<(NodeId, NodeId)>,
) -> Result<BlockNodes> {
    let len = g.value(rows).row_len();
    let spectrum = g.rfft(rows)?;
    let residual = match invariant {
        Some(xs) => {
            let re = g.real_part(spectrum)?;
            let im = g.imag_part(spectrum)?;
            let d_re = g.sub(re, xs)?;
            g.complex(d_re, im)?
        }
        None => spectrum,
    };
    let filtered = match filter {
        Some((w_re, w_im)) => g.cmul_rows(residual, w_re, w_im)?,
        None => residual,
    };
    let recombined = match invariant {
        Some(xs) => {
            let re = g.real_part(filtered)?;
            let im = g.imag_part(filtered)?;
            let r = g.add(re, xs)?;
            g.complex(r, im)?
        }
        None => filtered,
    };
    let output = g.irfft(recombined, len)?;
    Ok(BlockNodes {
        spectrum,
        residual,
        recombined,
        output,
    })
}
