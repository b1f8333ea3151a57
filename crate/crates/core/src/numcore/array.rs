//! Dense row-major real and complex arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealArray {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows when viewed as a matrix whose last axis is the row length.
    pub fn rows(&self) -> usize {
        match self.shape.last() {
            Some(&0) | None => 1,
            Some(&n) => self.data.len() / n,
        }
    }

    pub fn row_len(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        self.data[i * cols + j] = v;
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Transpose of a 2-D array.
    pub fn transpose(&self) -> Self {
        assert_eq!(self.shape.len(), 2, "transpose needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &RealArray) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &RealArray) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Complex tensor stored as split real/imaginary planes of a common shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexArray {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexArray {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn from_parts(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if re.len() != len || im.len() != len {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {len} values, got re={} im={}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            re,
            im,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.re, self.im)
    }

    pub fn rows(&self) -> usize {
        match self.shape.last() {
            Some(&0) | None => 1,
            Some(&n) => self.re.len() / n,
        }
    }

    pub fn row_len(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn real_part(&self) -> RealArray {
        RealArray {
            shape: self.shape.clone(),
            data: self.re.clone(),
        }
    }

    pub fn imag_part(&self) -> RealArray {
        RealArray {
            shape: self.shape.clone(),
            data: self.im.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ComplexArray) -> f64 {
        let re = self.re.iter().zip(&other.re).map(|(a, b)| (a - b).abs());
        let im = self.im.iter().zip(&other.im).map(|(a, b)| (a - b).abs());
        re.chain(im).fold(0.0, f64::max)
    }
}

/// `out[n×m] = a[n×k] · b[m×k]ᵀ`
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(out.len(), n * m);
    // SAFETY: slices are sized for the stated strides (checked above in debug builds
    // and by every caller through shape validation).
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `out[n×k] += g[n×m] · b[m×k]`
pub(crate) fn matmul_nn_acc(g: &[f64], b: &[f64], n: usize, m: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(g.len(), n * m);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(out.len(), n * k);
    // SAFETY: see `matmul_nt`.
    unsafe {
        matrixmultiply::dgemm(
            n,
            m,
            k,
            1.0,
            g.as_ptr(),
            m as isize,
            1,
            b.as_ptr(),
            k as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `out[m×k] += g[n×m]ᵀ · a[n×k]`
pub(crate) fn matmul_tn_acc(g: &[f64], a: &[f64], n: usize, m: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(g.len(), n * m);
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(out.len(), m * k);
    // SAFETY: see `matmul_nt`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            g.as_ptr(),
            1,
            m as isize,
            a.as_ptr(),
            k as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(RealArray::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(RealArray::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_helpers_agree_with_loops() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 + 0.5).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.25 - 1.0).collect(); // 4x3
        let mut out = vec![0.0; 8];
        matmul_nt(&a, &b, 2, 3, 4, &mut out);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|t| a[i * 3 + t] * b[j * 3 + t]).sum();
                assert!((out[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        // g (2x4) · b (4x3)
        let mut back = vec![0.0; 6];
        matmul_nn_acc(&out, &b, 2, 4, 3, &mut back);
        for i in 0..2 {
            for t in 0..3 {
                let want: f64 = (0..4).map(|j| out[i * 4 + j] * b[j * 3 + t]).sum();
                assert!((back[i * 3 + t] - want).abs() < 1e-12);
            }
        }
        // gᵀ (4x2) · a (2x3)
        let mut wg = vec![0.0; 12];
        matmul_tn_acc(&out, &a, 2, 4, 3, &mut wg);
        for j in 0..4 {
            for t in 0..3 {
                let want: f64 = (0..2).map(|i| out[i * 4 + j] * a[i * 3 + t]).sum();
                assert!((wg[j * 3 + t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a = RealArray::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(a.transpose().shape(), &[3, 2]);
        assert_eq!(a.transpose().transpose(), a);
    }
}
