//! Top-k amplitude and low-pass masks on the invariant spectrum.

use crate::error::{Error, Result};
use crate::numcore::RealArray;

/// Which bins of `X_s` survive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumMask {
    /// Keep the `k` largest-magnitude bins per channel.
    TopK(usize),
    /// Keep bins `0..⌈γ·F⌉`.
    LowPass(f64),
}

impl SpectrumMask {
    pub fn from_options(topk: Option<usize>, lowpass: Option<f64>) -> Result<Option<Self>> {
        match (topk, lowpass) {
            (Some(_), Some(_)) => Err(Error::config(
                "model.topk",
                "top-k and low-pass masks cannot both be active",
            )),
            (Some(k), None) => Ok(Some(Self::TopK(k))),
            (None, Some(g)) => Ok(Some(Self::LowPass(g))),
            (None, None) => Ok(None),
        }
    }
}

/// Number of leading bins kept by a low-pass ratio `γ`.
pub fn lowpass_cutoff(gamma: f64, bins: usize) -> usize {
    ((gamma * bins as f64 - 1e-9).ceil().max(0.0) as usize).min(bins)
}

/// 0/1 keep-mask for one channel's bins.
pub(crate) fn row_mask(row: &[f64], mask: SpectrumMask) -> Vec<f64> {
    let f = row.len();
    let mut keep = vec![0.0; f];
    match mask {
        SpectrumMask::TopK(k) => {
            let mut order: Vec<usize> = (0..f).collect();
            // stable sort: equal magnitudes keep ascending bin order
            order.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()));
            for &i in order.iter().take(k) {
                keep[i] = 1.0;
            }
        }
        SpectrumMask::LowPass(g) => {
            for v in keep.iter_mut().take(lowpass_cutoff(g, f)) {
                *v = 1.0;
            }
        }
    }
    keep
}

/// Masks applied to batched `(B·D) × F` rows.
pub(crate) fn rows_mask(rows: &RealArray, mask: SpectrumMask) -> RealArray {
    let f = rows.row_len();
    let data = rows.data().chunks(f).flat_map(|r| row_mask(r, mask)).collect();
    RealArray::from_vec(rows.shape(), data).expect("mask shaped like its rows")
}

/// Applies the configured mask to an `F × D` invariant spectrum.
pub fn apply_spectrum_masks(xs: &RealArray, topk: Option<usize>, lowpass: Option<f64>) -> Result<RealArray> {
    let Some(mask) = SpectrumMask::from_options(topk, lowpass)? else {
        return Ok(xs.clone());
    };
    let &[f, _] = xs.shape() else {
        return Err(Error::dim(format!("X_s must be F×D, got {:?}", xs.shape())));
    };
    match mask {
        SpectrumMask::TopK(k) if k > f => {
            return Err(Error::config("model.topk", format!("k = {k} exceeds {f} bins")))
        }
        SpectrumMask::LowPass(g) if !(0.0..=1.0).contains(&g) => {
            return Err(Error::config("model.lowpass", format!("γ = {g} outside [0, 1]")))
        }
        _ => {}
    }
    let by_channel = xs.transpose();
    let masked = rows_mask(&by_channel, mask);
    let out: Vec<f64> = by_channel
        .data()
        .iter()
        .zip(masked.data())
        .map(|(v, m)| v * m)
        .collect();
    Ok(RealArray::from_vec(by_channel.shape(), out)?.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> RealArray {
        RealArray::from_vec(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn topk_keeps_largest_magnitude() {
        let out = apply_spectrum_masks(&col(&[3.0, -5.0, 1.0]), Some(1), None).unwrap();
        assert_eq!(out.data(), &[0.0, -5.0, 0.0]);
    }

    #[test]
    fn topk_ties_prefer_lower_bin() {
        let out = apply_spectrum_masks(&col(&[2.0, -2.0, 2.0]), Some(2), None).unwrap();
        assert_eq!(out.data(), &[2.0, -2.0, 0.0]);
    }

    #[test]
    fn full_masks_are_identity() {
        let x = RealArray::from_vec(&[4, 2], vec![1.0, -2.0, 0.5, 3.0, -0.1, 0.0, 7.0, 2.0]).unwrap();
        assert_eq!(apply_spectrum_masks(&x, Some(4), None).unwrap(), x);
        assert_eq!(apply_spectrum_masks(&x, None, Some(1.0)).unwrap(), x);
        assert_eq!(apply_spectrum_masks(&x, None, None).unwrap(), x);
    }

    #[test]
    fn lowpass_cutoffs() {
        assert_eq!(lowpass_cutoff(0.0, 49), 0);
        assert_eq!(lowpass_cutoff(0.3, 49), 15);
        assert_eq!(lowpass_cutoff(0.5, 10), 5);
        assert_eq!(lowpass_cutoff(1.0, 49), 49);
        let out = apply_spectrum_masks(&col(&[1.0, 2.0, 3.0, 4.0]), None, Some(0.5)).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn both_masks_is_a_config_error() {
        assert!(matches!(
            apply_spectrum_masks(&col(&[1.0]), Some(1), Some(0.5)),
            Err(Error::Config { .. })
        ));
    }
}
