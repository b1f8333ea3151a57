//! Row-batched real transforms on contiguous buffers.
//!
//! Every routine treats its input as `rows` consecutive signals of length
//! `len` and works on the `⌊len/2⌋ + 1` non-redundant bins.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

pub fn bins_for(len: usize) -> usize {
    len / 2 + 1
}

/// Forward transform of each row, unnormalized. Returns `(re, im)` with `rows × F` layout.
pub fn rfft_rows(input: &[f64], rows: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(input.len(), rows * len);
    let f = bins_for(len);
    let mut re = vec![0.0; rows * f];
    let mut im = vec![0.0; rows * f];
    if rows == 0 {
        return (re, im);
    }
    let fft = plan(len, false);
    let mut buf: Vec<Complex<f64>> = input.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    for r in 0..rows {
        let row = &buf[r * len..r * len + f];
        for (k, c) in row.iter().enumerate() {
            re[r * f + k] = c.re;
            im[r * f + k] = c.im;
        }
        // DC (and Nyquist for even len) of a real signal are real; clear rounding residue.
        im[r * f] = 0.0;
        if len % 2 == 0 {
            im[r * f + f - 1] = 0.0;
        }
    }
    (re, im)
}

/// Unnormalized complex-to-real synthesis
/// `x[n] = Re Z₀ + 2·Σ_mid Re(Z_k e^{j2πkn/L}) + Re Z_{L/2}·(−1)ⁿ`.
///
/// Imaginary parts of the DC bin and (for even `len`) the Nyquist bin are ignored.
pub fn c2r_rows_unnormalized(re: &[f64], im: &[f64], rows: usize, len: usize) -> Vec<f64> {
    let f = bins_for(len);
    debug_assert_eq!(re.len(), rows * f);
    debug_assert_eq!(im.len(), rows * f);
    let mut out = vec![0.0; rows * len];
    if rows == 0 {
        return out;
    }
    let fft = plan(len, true);
    let mut buf = vec![Complex::new(0.0, 0.0); rows * len];
    for r in 0..rows {
        let row = &mut buf[r * len..(r + 1) * len];
        row[0] = Complex::new(re[r * f], 0.0);
        for k in 1..f {
            let is_nyquist = len % 2 == 0 && k == f - 1;
            let z = if is_nyquist {
                Complex::new(re[r * f + k], 0.0)
            } else {
                Complex::new(re[r * f + k], im[r * f + k])
            };
            row[k] = z;
            if !is_nyquist {
                row[len - k] = z.conj();
            }
        }
    }
    fft.process(&mut buf);
    for (o, c) in out.iter_mut().zip(&buf) {
        *o = c.re;
    }
    out
}

/// Inverse transform of each row with `1/len` normalization.
pub fn irfft_rows(re: &[f64], im: &[f64], rows: usize, len: usize) -> Vec<f64> {
    let scale = 1.0 / len as f64;
    let mut out = c2r_rows_unnormalized(re, im, rows, len);
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Multiplicity of bin `k` in the full length-`len` spectrum: 1 for DC and
/// an even-length Nyquist bin, 2 for every bin paired with its mirror.
pub fn bin_weight(k: usize, len: usize) -> f64 {
    if k == 0 || (len % 2 == 0 && k == len / 2) {
        1.0
    } else {
        2.0
    }
}
