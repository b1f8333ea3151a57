//! Reversible, non-affine instance normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::RealArray;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel statistics of one window. `std` is the divisor `sqrt(var + eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceNormState {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
}

/// Mean and `sqrt(population variance + eps)` of one series.
pub(crate) fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, (var + eps).sqrt())
}

/// Normalizes an `L × D` window channel by channel.
pub fn instance_normalize(window: &RealArray, eps: f64) -> Result<(RealArray, InstanceNormState)> {
    let &[l, d] = window.shape() else {
        return Err(Error::dim(format!("window must be L×D, got {:?}", window.shape())));
    };
    if l < 2 {
        return Err(Error::dim(format!("window needs at least 2 timesteps, got {l}")));
    }
    let cols = window.transpose();
    let mut out = RealArray::zeros(&[l, d]);
    let mut mean = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for c in 0..d {
        let row = &cols.data()[c * l..(c + 1) * l];
        let (m, s) = row_stats(row, eps);
        for (t, v) in row.iter().enumerate() {
            out.set2(t, c, (v - m) / s);
        }
        mean.push(m);
        std.push(s);
    }
    Ok((out, InstanceNormState { mean, std, eps }))
}

/// `Y = Y_norm · std + mean` per channel of an `H × D` array.
pub fn inverse_normalize(y: &RealArray, state: &InstanceNormState) -> Result<RealArray> {
    let &[h, d] = y.shape() else {
        return Err(Error::dim(format!("prediction must be H×D, got {:?}", y.shape())));
    };
    if d != state.mean.len() {
        return Err(Error::dim(format!(
            "prediction has {d} channels, state has {}",
            state.mean.len()
        )));
    }
    let mut out = y.clone();
    for t in 0..h {
        for c in 0..d {
            out.set2(t, c, y.at2(t, c) * state.std[c] + state.mean[c]);
        }
    }
    Ok(out)
}
