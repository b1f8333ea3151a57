//! Reverse-mode differentiation over a closed set of array primitives.
//!
//! A [`Graph`] records the primitives applied while a forward computation is
//! built, evaluating each one eagerly. [`Graph::backward`] then walks the
//! record in reverse and returns parameter gradients in a private
//! [`Gradients`] buffer, leaving the [`ParamSet`] untouched until the caller
//! folds the buffer in.

use super::array::{matmul_nn_acc, matmul_nt, matmul_tn_acc};
use super::{ComplexArray, Gradients, ParamId, ParamSet, RealArray};
use crate::error::{Error, Result};
use crate::spectral::kernels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Mean(NodeId),
    Rfft(NodeId),
    Irfft(NodeId),
    Complex(NodeId, NodeId),
    RealPart(NodeId),
    ImagPart(NodeId),
    CMulRow {
        z: NodeId,
        w_re: NodeId,
        w_im: NodeId,
    },
    CAbs(NodeId),
    Gather {
        table: NodeId,
        slots: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Mean(_) => "mean",
            Op::Rfft(_) => "rfft",
            Op::Irfft(_) => "irfft",
            Op::Complex(..) => "complex",
            Op::RealPart(_) => "real_part",
            Op::ImagPart(_) => "imag_part",
            Op::CMulRow { .. } => "complex_mul",
            Op::CAbs(_) => "complex_abs",
            Op::Gather { .. } => "gather",
        }
    }
}

#[derive(Debug, Clone)]
enum Value {
    Real(RealArray),
    Complex(ComplexArray),
    /// Values of `Op::Param` nodes live in the borrowed parameter set.
    Borrowed,
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
    /// For `Irfft`: the output signal length.
    len: usize,
}

/// Forward record of one differentiable computation.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

enum Grad {
    Real(Vec<f64>),
    Complex(Vec<f64>, Vec<f64>),
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, op: Op, value: Value) -> Result<NodeId> {
        let finite = match &value {
            Value::Real(a) => a.is_finite(),
            Value::Complex(z) => z.is_finite(),
            Value::Borrowed => true,
        };
        if !finite {
            return Err(Error::Numeric {
                primitive: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            value,
            len: 0,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Real value of a node; panics when the node is complex.
    pub fn value(&self, id: NodeId) -> &RealArray {
        match &self.nodes[id.0] {
            Node {
                value: Value::Real(a),
                ..
            } => a,
            Node {
                op: Op::Param(p),
                value: Value::Borrowed,
                ..
            } => self.params.value(*p),
            _ => panic!("node {} is not real-valued", id.0),
        }
    }

    /// Complex value of a node; panics when the node is real.
    pub fn complex_value(&self, id: NodeId) -> &ComplexArray {
        match &self.nodes[id.0].value {
            Value::Complex(z) => z,
            _ => panic!("node {} is not complex-valued", id.0),
        }
    }

    fn is_complex(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].value, Value::Complex(_))
    }

    fn expect_real(&self, id: NodeId, what: &str) -> Result<&RealArray> {
        if self.is_complex(id) {
            return Err(Error::Contract(format!("{what} expects a real operand")));
        }
        Ok(self.value(id))
    }

    fn expect_complex(&self, id: NodeId, what: &str) -> Result<&ComplexArray> {
        if !self.is_complex(id) {
            return Err(Error::Contract(format!("{what} expects a complex operand")));
        }
        Ok(self.complex_value(id))
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    pub fn input(&mut self, value: RealArray) -> Result<NodeId> {
        self.push(Op::Input, Value::Real(value))
    }

    pub fn input_complex(&mut self, value: ComplexArray) -> Result<NodeId> {
        self.push(Op::Input, Value::Complex(value))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Borrowed,
            len: 0,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// `x[N×K] · w[M×K]ᵀ + b[M]` (row-wise affine map).
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xv = self.expect_real(x, "affine")?;
        let wv = self.expect_real(w, "affine")?;
        if wv.shape().len() != 2 {
            return Err(Error::dim(format!("affine weight must be 2-D, got {:?}", wv.shape())));
        }
        let (m, k) = (wv.shape()[0], wv.shape()[1]);
        if xv.row_len() != k {
            return Err(Error::dim(format!(
                "affine input rows have length {}, weight expects {k}",
                xv.row_len()
            )));
        }
        let n = xv.rows();
        let mut out = vec![0.0; n * m];
        matmul_nt(xv.data(), wv.data(), n, k, m, &mut out);
        if let Some(b) = b {
            let bv = self.expect_real(b, "affine")?;
            if bv.len() != m {
                return Err(Error::dim(format!("affine bias has {} entries, need {m}", bv.len())));
            }
            for row in out.chunks_mut(m) {
                for (o, bias) in row.iter_mut().zip(bv.data()) {
                    *o += bias;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        if shape.is_empty() {
            shape.push(m);
        } else {
            *shape.last_mut().unwrap() = m;
        }
        let value = RealArray::from_vec(&shape, out)?;
        self.push(Op::Affine { x, w, b }, Value::Real(value))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<RealArray> {
        let av = self.expect_real(a, name)?;
        let bv = self.expect_real(b, name)?;
        if av.shape() != bv.shape() {
            return Err(Error::dim(format!(
                "{name}: shapes {:?} and {:?} differ",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        RealArray::from_vec(av.shape(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), Value::Real(v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), Value::Real(v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), Value::Real(v))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.expect_real(a, "scale")?.map(|x| x * factor);
        self.push(Op::Scale(a, factor), Value::Real(v))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.expect_real(a, "relu")?.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), Value::Real(v))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.expect_real(a, "square")?.map(|x| x * x);
        self.push(Op::Square(a), Value::Real(v))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.expect_real(a, "abs")?.map(f64::abs);
        self.push(Op::Abs(a), Value::Real(v))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.expect_real(a, "mean")?;
        if av.is_empty() {
            return Err(Error::Contract("mean of an empty array".into()));
        }
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Op::Mean(a), Value::Real(RealArray::scalar(m)))
    }

    /// Forward real transform along the last axis.
    pub fn rfft(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.expect_real(a, "rfft")?;
        let len = av.row_len();
        if len < 2 {
            return Err(Error::dim(format!("rfft needs rows of length ≥ 2, got {len}")));
        }
        let rows = av.rows();
        let (re, im) = kernels::rfft_rows(av.data(), rows, len);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = kernels::bins_for(len);
        let z = ComplexArray::from_parts(&shape, re, im)?;
        let id = self.push(Op::Rfft(a), Value::Complex(z))?;
        self.nodes[id.0].len = len;
        Ok(id)
    }

    /// Inverse real transform along the last axis, producing rows of `len` samples.
    ///
    /// Imaginary parts on the DC/Nyquist bins do not contribute (projection onto real signals).
    pub fn irfft(&mut self, z: NodeId, len: usize) -> Result<NodeId> {
        let zv = self.expect_complex(z, "irfft")?;
        if len < 2 || zv.row_len() != kernels::bins_for(len) {
            return Err(Error::dim(format!(
                "irfft to length {len} needs {} bins, got {}",
                kernels::bins_for(len),
                zv.row_len()
            )));
        }
        let rows = zv.rows();
        let out = kernels::irfft_rows(zv.re(), zv.im(), rows, len);
        let mut shape = zv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let id = self.push(Op::Irfft(z), Value::Real(RealArray::from_vec(&shape, out)?))?;
        self.nodes[id.0].len = len;
        Ok(id)
    }

    pub fn complex(&mut self, re: NodeId, im: NodeId) -> Result<NodeId> {
        let rv = self.expect_real(re, "complex")?;
        let iv = self.expect_real(im, "complex")?;
        if rv.shape() != iv.shape() {
            return Err(Error::dim(format!(
                "complex: parts have shapes {:?} and {:?}",
                rv.shape(),
                iv.shape()
            )));
        }
        let z = ComplexArray::from_parts(rv.shape(), rv.data().to_vec(), iv.data().to_vec())?;
        self.push(Op::Complex(re, im), Value::Complex(z))
    }

    pub fn real_part(&mut self, z: NodeId) -> Result<NodeId> {
        let v = self.expect_complex(z, "real_part")?.real_part();
        self.push(Op::RealPart(z), Value::Real(v))
    }

    pub fn imag_part(&mut self, z: NodeId) -> Result<NodeId> {
        let v = self.expect_complex(z, "imag_part")?.imag_part();
        self.push(Op::ImagPart(z), Value::Real(v))
    }

    /// Multiplies every row of complex `z` (`… × F`) by the complex vector `w_re + j·w_im` (length `F`).
    pub fn cmul_rows(&mut self, z: NodeId, w_re: NodeId, w_im: NodeId) -> Result<NodeId> {
        let zv = self.expect_complex(z, "complex_mul")?;
        let wr = self.expect_real(w_re, "complex_mul")?;
        let wi = self.expect_real(w_im, "complex_mul")?;
        let f = zv.row_len();
        if wr.len() != f || wi.len() != f {
            return Err(Error::dim(format!(
                "complex_mul: filter has {}/{} entries, rows have {f}",
                wr.len(),
                wi.len()
            )));
        }
        let mut re = vec![0.0; zv.len()];
        let mut im = vec![0.0; zv.len()];
        for (i, (zr, zi)) in zv.re().iter().zip(zv.im()).enumerate() {
            let k = i % f;
            let (a, b) = (wr.data()[k], wi.data()[k]);
            re[i] = zr * a - zi * b;
            im[i] = zr * b + zi * a;
        }
        let out = ComplexArray::from_parts(zv.shape(), re, im)?;
        self.push(Op::CMulRow { z, w_re, w_im }, Value::Complex(out))
    }

    /// Elementwise modulus of a complex array.
    pub fn cabs(&mut self, z: NodeId) -> Result<NodeId> {
        let zv = self.expect_complex(z, "complex_abs")?;
        let data = zv.re().iter().zip(zv.im()).map(|(r, i)| r.hypot(*i)).collect();
        let v = RealArray::from_vec(zv.shape(), data)?;
        self.push(Op::CAbs(z), Value::Real(v))
    }

    /// Looks up rows of a slot table.
    ///
    /// `table` has shape `M × F × D`; for each entry `slots[b]` the output
    /// holds `D` rows of length `F` (channel-major), giving `(B·D) × F`.
    pub fn gather(&mut self, table: NodeId, slots: &[usize]) -> Result<NodeId> {
        let tv = self.expect_real(table, "gather")?;
        let &[m, f, d] = tv.shape() else {
            return Err(Error::dim(format!("gather table must be M×F×D, got {:?}", tv.shape())));
        };
        let mut out = vec![0.0; slots.len() * d * f];
        for (b, &s) in slots.iter().enumerate() {
            if s >= m {
                return Err(Error::dim(format!("slot {s} out of range for {m} slots")));
            }
            for c in 0..d {
                let row = &mut out[(b * d + c) * f..(b * d + c + 1) * f];
                for (k, o) in row.iter_mut().enumerate() {
                    *o = tv.data()[(s * f + k) * d + c];
                }
            }
        }
        let v = RealArray::from_vec(&[slots.len() * d, f], out)?;
        self.push(
            Op::Gather {
                table,
                slots: slots.to_vec(),
            },
            Value::Real(v),
        )
    }

    /// Propagates `∂loss/∂·` from the scalar node `loss` back to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.expect_real(loss, "backward")?;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar terminal node, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Grad>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Grad::Real(vec![1.0]));
        let mut out = Gradients(vec![None; self.params.len()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match (&node.op, g) {
                (Op::Input, _) => {}
                (Op::Param(p), Grad::Real(g)) => {
                    let slot = &mut out.0[p.0];
                    match slot {
                        Some(acc) => acc
                            .data_mut()
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(a, b)| *a += b),
                        None => *slot = Some(RealArray::from_vec(self.value(NodeId(idx)).shape(), g)?),
                    }
                }
                (Op::Affine { x, w, b }, Grad::Real(g)) => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (m, k) = (wv.shape()[0], wv.shape()[1]);
                    let n = xv.rows();
                    let mut gx = vec![0.0; n * k];
                    matmul_nn_acc(&g, wv.data(), n, m, k, &mut gx);
                    let mut gw = vec![0.0; m * k];
                    matmul_tn_acc(&g, xv.data(), n, m, k, &mut gw);
                    accumulate_real(&mut grads, *x, gx);
                    accumulate_real(&mut grads, *w, gw);
                    if let Some(b) = b {
                        let mut gb = vec![0.0; m];
                        for row in g.chunks(m) {
                            for (a, v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        accumulate_real(&mut grads, *b, gb);
                    }
                }
                (Op::Add(a, b), Grad::Real(g)) => {
                    accumulate_real(&mut grads, *b, g.clone());
                    accumulate_real(&mut grads, *a, g);
                }
                (Op::Sub(a, b), Grad::Real(g)) => {
                    accumulate_real(&mut grads, *b, g.iter().map(|v| -v).collect());
                    accumulate_real(&mut grads, *a, g);
                }
                (Op::Mul(a, b), Grad::Real(g)) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let ga = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(av).map(|(g, x)| g * x).collect();
                    accumulate_real(&mut grads, *a, ga);
                    accumulate_real(&mut grads, *b, gb);
                }
                (Op::Scale(a, c), Grad::Real(g)) => {
                    accumulate_real(&mut grads, *a, g.iter().map(|v| v * c).collect());
                }
                (Op::Relu(a), Grad::Real(g)) => {
                    let av = self.value(*a).data();
                    let ga = g
                        .iter()
                        .zip(av)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate_real(&mut grads, *a, ga);
                }
                (Op::Square(a), Grad::Real(g)) => {
                    let av = self.value(*a).data();
                    let ga = g.iter().zip(av).map(|(g, x)| 2.0 * x * g).collect();
                    accumulate_real(&mut grads, *a, ga);
                }
                (Op::Abs(a), Grad::Real(g)) => {
                    let av = self.value(*a).data();
                    let ga = g.iter().zip(av).map(|(g, x)| sign(*x) * g).collect();
                    accumulate_real(&mut grads, *a, ga);
                }
                (Op::Mean(a), Grad::Real(g)) => {
                    let n = self.value(*a).len();
                    accumulate_real(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                (Op::Rfft(a), Grad::Complex(gr, gi)) => {
                    // x ↦ X is linear; its adjoint is Re Σ_k G_k e^{+j2πkn/L},
                    // i.e. the unnormalized synthesis of G with paired bins halved.
                    let len = node.len;
                    let f = kernels::bins_for(len);
                    let rows = gr.len() / f;
                    let (mut zr, mut zi) = (gr, gi);
                    for r in 0..rows {
                        for k in 0..f {
                            let w = kernels::bin_weight(k, len);
                            zr[r * f + k] /= w;
                            zi[r * f + k] /= w;
                        }
                    }
                    let gx = kernels::c2r_rows_unnormalized(&zr, &zi, rows, len);
                    accumulate_real(&mut grads, *a, gx);
                }
                (Op::Irfft(z), Grad::Real(g)) => {
                    let len = node.len;
                    let f = kernels::bins_for(len);
                    let rows = g.len() / len;
                    let (mut gr, mut gi) = kernels::rfft_rows(&g, rows, len);
                    for r in 0..rows {
                        for k in 0..f {
                            let w = kernels::bin_weight(k, len) / len as f64;
                            gr[r * f + k] *= w;
                            gi[r * f + k] *= w;
                        }
                    }
                    accumulate_complex(&mut grads, *z, gr, gi);
                }
                (Op::Complex(re, im), Grad::Complex(gr, gi)) => {
                    accumulate_real(&mut grads, *re, gr);
                    accumulate_real(&mut grads, *im, gi);
                }
                (Op::RealPart(z), Grad::Real(g)) => {
                    let n = g.len();
                    accumulate_complex(&mut grads, *z, g, vec![0.0; n]);
                }
                (Op::ImagPart(z), Grad::Real(g)) => {
                    let n = g.len();
                    accumulate_complex(&mut grads, *z, vec![0.0; n], g);
                }
                (Op::CMulRow { z, w_re, w_im }, Grad::Complex(gr, gi)) => {
                    let zv = self.complex_value(*z);
                    let wr = self.value(*w_re).data();
                    let wi = self.value(*w_im).data();
                    let f = wr.len();
                    let n = gr.len();
                    let mut dzr = vec![0.0; n];
                    let mut dzi = vec![0.0; n];
                    let mut dwr = vec![0.0; f];
                    let mut dwi = vec![0.0; f];
                    for i in 0..n {
                        let k = i % f;
                        let (zr, zi) = (zv.re()[i], zv.im()[i]);
                        dzr[i] = gr[i] * wr[k] + gi[i] * wi[k];
                        dzi[i] = -gr[i] * wi[k] + gi[i] * wr[k];
                        dwr[k] += gr[i] * zr + gi[i] * zi;
                        dwi[k] += -gr[i] * zi + gi[i] * zr;
                    }
                    accumulate_complex(&mut grads, *z, dzr, dzi);
                    accumulate_real(&mut grads, *w_re, dwr);
                    accumulate_real(&mut grads, *w_im, dwi);
                }
                (Op::CAbs(z), Grad::Real(g)) => {
                    let zv = self.complex_value(*z);
                    let mut dzr = vec![0.0; g.len()];
                    let mut dzi = vec![0.0; g.len()];
                    for i in 0..g.len() {
                        let (r, im) = (zv.re()[i], zv.im()[i]);
                        let m = r.hypot(im);
                        if m > 0.0 {
                            dzr[i] = g[i] * r / m;
                            dzi[i] = g[i] * im / m;
                        }
                    }
                    accumulate_complex(&mut grads, *z, dzr, dzi);
                }
                (Op::Gather { table, slots }, Grad::Real(g)) => {
                    let tv = self.value(*table);
                    let (f, d) = (tv.shape()[1], tv.shape()[2]);
                    let mut gt = vec![0.0; tv.len()];
                    for (b, &s) in slots.iter().enumerate() {
                        for c in 0..d {
                            for k in 0..f {
                                gt[(s * f + k) * d + c] += g[(b * d + c) * f + k];
                            }
                        }
                    }
                    accumulate_real(&mut grads, *table, gt);
                }
                (op, _) => {
                    return Err(Error::Contract(format!(
                        "gradient kind mismatch at `{}`",
                        op.name()
                    )))
                }
            }
        }
        for g in out.0.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::Numeric { primitive: "backward" });
            }
        }
        Ok(out)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate_real(grads: &mut [Option<Grad>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(Grad::Real(acc)) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(Grad::Real(g)),
        Some(Grad::Complex(..)) => unreachable!("real gradient into complex node"),
    }
}

fn accumulate_complex(grads: &mut [Option<Grad>], id: NodeId, gr: Vec<f64>, gi: Vec<f64>) {
    match &mut grads[id.0] {
        Some(Grad::Complex(ar, ai)) => {
            ar.iter_mut().zip(&gr).for_each(|(a, b)| *a += b);
            ai.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
        }
        slot @ None => *slot = Some(Grad::Complex(gr, gi)),
        Some(Grad::Real(_)) => unreachable!("complex gradient into real node"),
    }
}

/// Runs `forward` on a fresh graph over `params`, backpropagates from the
/// scalar it returns and adds the result into each parameter's `grad`.
///
/// Returns the scalar value of the terminal node.
pub fn evaluate_with_gradients<F>(params: &mut ParamSet, forward: F) -> Result<f64>
where
    F: FnOnce(&mut Graph<'_>) -> Result<NodeId>,
{
    let (value, grads) = {
        let mut graph = Graph::new(params);
        let loss = forward(&mut graph)?;
        let grads = graph.backward(loss)?;
        (graph.scalar(loss), grads)
    };
    params.accumulate(&grads);
    Ok(value)
}

/// Forward-only evaluation of a scalar-valued computation.
pub fn evaluate<F>(params: &ParamSet, forward: F) -> Result<f64>
where
    F: FnOnce(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut graph = Graph::new(params);
    let out = forward(&mut graph)?;
    let v = graph.value(out);
    if v.len() != 1 {
        return Err(Error::Contract(format!(
            "expected a scalar result, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}
