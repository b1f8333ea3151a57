//! Real-input discrete Fourier transforms and the direct circular convolution.
//!
//! Forward transforms are unnormalized, `X[k] = Σₙ x[n]·e^{−j2πkn/L}`, and
//! inverses carry the `1/L` factor. Only the `F = ⌊L/2⌋ + 1` non-redundant
//! bins of a real signal are stored.

pub mod kernels;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ComplexArray, RealArray};

pub use kernels::bins_for;

/// Per-channel spectrum of one window: `bins` has shape `F × D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    bins: ComplexArray,
    origin_length: usize,
}

/// Largest imaginary magnitude tolerated on the DC/Nyquist bins when
/// validating a spectrum that came from outside this module.
const REALITY_TOLERANCE: f64 = 1e-9;

impl Spectrum {
    /// Wraps `bins` (`F × D`) after checking it is the spectrum of a real signal of `origin_length` samples.
    pub fn new(bins: ComplexArray, origin_length: usize) -> Result<Self> {
        let spectrum = Self {
            bins,
            origin_length,
        };
        spectrum.validate()?;
        Ok(spectrum)
    }

    pub(crate) fn new_unchecked(bins: ComplexArray, origin_length: usize) -> Self {
        Self {
            bins,
            origin_length,
        }
    }

    pub fn bins(&self) -> &ComplexArray {
        &self.bins
    }

    pub fn into_bins(self) -> ComplexArray {
        self.bins
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn num_bins(&self) -> usize {
        self.bins.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.bins.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.bins.shape();
        if shape.len() != 2 {
            return Err(Error::dim(format!("spectrum must be F×D, got {shape:?}")));
        }
        let f = bins_for(self.origin_length);
        if shape[0] != f {
            return Err(Error::Invariant(format!(
                "spectrum of a length-{} signal needs {f} bins, has {}",
                self.origin_length, shape[0]
            )));
        }
        let d = shape[1];
        let im = self.bins.im();
        for c in 0..d {
            if im[c].abs() > REALITY_TOLERANCE {
                return Err(Error::Invariant(format!(
                    "DC bin of channel {c} has imaginary part {}",
                    im[c]
                )));
            }
            if self.origin_length % 2 == 0 && im[(f - 1) * d + c].abs() > REALITY_TOLERANCE {
                return Err(Error::Invariant(format!(
                    "Nyquist bin of channel {c} has imaginary part {}",
                    im[(f - 1) * d + c]
                )));
            }
        }
        Ok(())
    }
}

fn check_window(window: &RealArray) -> Result<(usize, usize)> {
    match *window.shape() {
        [l, d] if l >= 2 => Ok((l, d)),
        [l, _] => Err(Error::dim(format!("window needs at least 2 timesteps, got {l}"))),
        ref s => Err(Error::dim(format!("window must be L×D, got {s:?}"))),
    }
}

/// Channel-major copy (`D × L`) of a time-major `L × D` matrix.
pub(crate) fn to_channel_rows(window: &RealArray) -> Vec<f64> {
    window.transpose().into_vec()
}

/// Transforms every channel of an `L × D` window.
pub fn forward_rfft(window: &RealArray) -> Result<Spectrum> {
    let (l, d) = check_window(window)?;
    let rows = to_channel_rows(window);
    let (re, im) = kernels::rfft_rows(&rows, d, l);
    let f = bins_for(l);
    // kernels return D × F; spectra are stored F × D.
    let re = RealArray::from_vec(&[d, f], re)?.transpose().into_vec();
    let im = RealArray::from_vec(&[d, f], im)?.transpose().into_vec();
    Ok(Spectrum::new_unchecked(
        ComplexArray::from_parts(&[f, d], re, im)?,
        l,
    ))
}

/// Reconstructs the `L × D` real signal whose forward transform is `spectrum`.
pub fn inverse_rfft(spectrum: &Spectrum) -> Result<RealArray> {
    spectrum.validate()?;
    Ok(inverse_rfft_projected(spectrum))
}

/// Inverse transform that discards any imaginary part on the DC/Nyquist bins
/// instead of rejecting it (projection onto spectra of real signals).
pub fn inverse_rfft_projected(spectrum: &Spectrum) -> RealArray {
    let (f, d) = (spectrum.num_bins(), spectrum.channels());
    let l = spectrum.origin_length;
    let re = spectrum.bins.real_part().transpose().into_vec();
    let im = spectrum.bins.imag_part().transpose().into_vec();
    debug_assert_eq!(re.len(), d * f);
    let rows = kernels::irfft_rows(&re, &im, d, l);
    RealArray::from_vec(&[d, l], rows)
        .expect("irfft output sized D×L")
        .transpose()
}

/// Direct `O(L²)` circular convolution `y[n] = Σₘ x[m]·h[(n−m) mod L]`.
pub fn circular_convolve(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.len() != h.len() {
        return Err(Error::dim(format!(
            "circular convolution needs equal lengths, got {} and {}",
            x.len(),
            h.len()
        )));
    }
    let l = x.len();
    Ok((0..l)
        .map(|n| {
            (0..l)
                .map(|m| x[m] * h[(n + l - m) % l])
                .sum::<f64>()
        })
        .collect())
}

/// 1-D convenience: forward transform of a single real signal, `(re, im)` of length `F`.
pub fn rfft_1d(x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() < 2 {
        return Err(Error::dim(format!(
            "signal needs at least 2 samples, got {}",
            x.len()
        )));
    }
    Ok(kernels::rfft_rows(x, 1, x.len()))
}

/// 1-D convenience inverse with DC/Nyquist projection.
pub fn irfft_1d(re: &[f64], im: &[f64], len: usize) -> Result<Vec<f64>> {
    let f = bins_for(len);
    if re.len() != f || im.len() != f {
        return Err(Error::dim(format!(
            "length-{len} inverse needs {f} bins, got re={} im={}",
            re.len(),
            im.len()
        )));
    }
    Ok(kernels::irfft_rows(re, im, 1, len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let l = x.len();
        let f = l / 2 + 1;
        let mut re = vec![0.0; f];
        let mut im = vec![0.0; f];
        for k in 0..f {
            for (n, &v) in x.iter().enumerate() {
                let theta = -2.0 * std::f64::consts::PI * (k * n) as f64 / l as f64;
                re[k] += v * theta.cos();
                im[k] += v * theta.sin();
            }
        }
        (re, im)
    }

    fn random_window(rng: &mut ChaCha8Rng, l: usize, d: usize) -> RealArray {
        RealArray::from_vec(&[l, d], (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn constant_window_is_dc_only() {
        let c = 1.75;
        let s = forward_rfft(&RealArray::filled(&[8, 1], c)).unwrap();
        assert_eq!(s.num_bins(), 5);
        assert!((s.bins().re()[0] - 8.0 * c).abs() < 1e-12);
        assert_eq!(s.bins().im()[0], 0.0);
        for k in 1..5 {
            assert!(s.bins().re()[k].abs() < 1e-12);
            assert!(s.bins().im()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn single_tone_has_amplitude_half_length() {
        let x: Vec<f64> = (0..8)
            .map(|n| (2.0 * std::f64::consts::PI * n as f64 / 8.0).cos())
            .collect();
        let s = forward_rfft(&RealArray::from_vec(&[8, 1], x).unwrap()).unwrap();
        for k in 0..5 {
            let want = if k == 1 { 4.0 } else { 0.0 };
            assert!((s.bins().re()[k] - want).abs() < 1e-12, "bin {k}");
            assert!(s.bins().im()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_dft_for_length_12() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random_window(&mut rng, 12, 3);
        let s = forward_rfft(&w).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = (0..12).map(|n| w.at2(n, c)).collect();
            let (re, im) = naive_dft(&col);
            for k in 0..7 {
                assert!((s.bins().re()[k * 3 + c] - re[k]).abs() < 1e-10);
                assert!((s.bins().im()[k * 3 + c] - im[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn roundtrip_length_96() {
        let mut rng = ChaCha8Rng::seed_from_u64(96);
        let w = random_window(&mut rng, 96, 4);
        let back = inverse_rfft(&forward_rfft(&w).unwrap()).unwrap();
        assert!(back.max_abs_diff(&w) < 1e-9);
    }

    #[test]
    fn dc_only_spectrum_inverts_to_ones() {
        let mut bins = ComplexArray::zeros(&[5, 1]);
        bins.re_mut()[0] = 8.0;
        let x = inverse_rfft(&Spectrum::new(bins, 8).unwrap()).unwrap();
        assert!(x.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_tone_inverse_is_cosine() {
        let mut bins = ComplexArray::zeros(&[5, 1]);
        bins.re_mut()[1] = 4.0;
        let x = inverse_rfft(&Spectrum::new(bins, 8).unwrap()).unwrap();
        for n in 0..8 {
            let want = (2.0 * std::f64::consts::PI * n as f64 / 8.0).cos();
            assert!((x.data()[n] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_imaginary_dc_and_nyquist() {
        let mut bins = ComplexArray::zeros(&[5, 1]);
        bins.im_mut()[0] = 0.5;
        assert!(matches!(
            Spectrum::new(bins.clone(), 8),
            Err(Error::Invariant(_))
        ));
        let mut bins = ComplexArray::zeros(&[5, 1]);
        bins.im_mut()[4] = 0.5;
        assert!(matches!(Spectrum::new(bins, 8), Err(Error::Invariant(_))));
        // odd length has no Nyquist bin
        let mut bins = ComplexArray::zeros(&[4, 1]);
        bins.im_mut()[3] = 0.5;
        assert!(Spectrum::new(bins, 7).is_ok());
    }

    #[test]
    fn short_window_is_rejected() {
        assert!(matches!(
            forward_rfft(&RealArray::zeros(&[1, 3])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn circular_convolution_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(circular_convolve(&x, &[1.0, 0.0, 0.0, 0.0]).unwrap(), x.to_vec());
        assert_eq!(
            circular_convolve(&x, &[0.0, 1.0, 0.0, 0.0]).unwrap(),
            vec![4.0, 1.0, 2.0, 3.0]
        );
        assert!(circular_convolve(&x, &[1.0]).is_err());
    }
}
