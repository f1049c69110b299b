//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every parameter node into the [`ParamStore`] it was loaded from.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Var {
        Var(i)
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Sum(Var),
    SumCols(Var),
    RowNormalize(Var),
    LogSoftmaxRows(Var),
    Gelu(Var),
    Attention(AttentionTape),
    BceWithLogits(Var, Tensor),
}

#[derive(Debug)]
struct AttentionTape {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    batch: usize,
    len_q: usize,
    len_k: usize,
    probs: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Shape of one batched attention call: `batch` independent sequences with
/// `len_q` query tokens and `len_k` key/value tokens each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnLayout {
    pub heads: usize,
    pub batch: usize,
    pub len_q: usize,
    pub len_k: usize,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, producer: &str) -> Result<Var> {
        value.check_finite(producer)?;
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Transpose(a)
            | Op::Affine(a, _)
            | Op::Sum(a)
            | Op::SumCols(a)
            | Op::RowNormalize(a)
            | Op::LogSoftmaxRows(a)
            | Op::Gelu(a)
            | Op::BceWithLogits(a, _) => self.needs(*a),
            Op::Attention(t) => self.needs(t.q) || self.needs(t.k) || self.needs(t.v),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Constant, "constant")
    }

    /// Loads a trainable parameter. Loading the same name twice returns the
    /// same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = self.push(t, Op::Param(name.to_string()), name)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// `a[m×n] + bias[1×n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).expect_matrix("add_row")?;
        let (br, bc) = self.value(bias).expect_matrix("add_row bias")?;
        if br != 1 || bc != n {
            return Err(Error::Dimension(format!(
                "bias {br}x{bc} cannot broadcast over {m}x{n}"
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, bias), "add_row")
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale), "affine")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    /// Sum across columns: `m×n → m×1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).expect_matrix("sum_cols")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .chunks(n)
            .map(|r| r.iter().sum())
            .collect();
        self.push(Tensor::matrix(m, 1, data)?, Op::SumCols(a), "sum_cols")
    }

    /// Divides each row by its L2 norm. Zero rows are rejected.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.value(a).expect_matrix("row_normalize")?;
        let mut out = self.value(a).clone();
        for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!("zero-norm row {i}")));
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        self.push(out, Op::RowNormalize(a), "row_normalize")
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = tensor::log_softmax_rows(self.value(a))?;
        self.push(out, Op::LogSoftmaxRows(a), "log_softmax_rows")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a), "gelu")
    }

    /// Row-wise dot product `m×n, m×n → m×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum_cols(p)
    }

    /// Row-wise cosine similarity `m×n, m×n → m×1`.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.row_normalize(a)?;
        let bn = self.row_normalize(b)?;
        self.row_dot(an, bn)
    }

    /// Scaled dot-product attention over already-projected inputs.
    ///
    /// `q` is `(batch·len_q)×dim`, `k` and `v` are `(batch·len_k)×dim`. Each
    /// of the `heads` slices of width `dim / heads` attends independently
    /// within its own sequence; sequences never attend across the batch.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttnLayout) -> Result<Var> {
        let AttnLayout {
            heads,
            batch,
            len_q,
            len_k,
        } = layout;
        let (qr, dim) = self.value(q).expect_matrix("attention q")?;
        let (kr, kd) = self.value(k).expect_matrix("attention k")?;
        let (vr, vd) = self.value(v).expect_matrix("attention v")?;
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible by {heads} heads"
            )));
        }
        if kd != dim || vd != dim {
            return Err(Error::Dimension(format!(
                "attention q/k/v dims differ: {dim}, {kd}, {vd}"
            )));
        }
        if qr != batch * len_q || kr != batch * len_k || vr != batch * len_k {
            return Err(Error::Dimension(format!(
                "attention rows ({qr}, {kr}, {vr}) do not match batch {batch} with lengths ({len_q}, {len_k})"
            )));
        }
        if len_k == 0 {
            return Err(Error::Argument("attention over an empty key set".into()));
        }
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kdat, vdat) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![0.0; batch * heads * len_q * len_k];
        let mut out = vec![0.0; qr * dim];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * hd;
                for i in 0..len_q {
                    let qi = &qd[(b * len_q + i) * dim + off..][..hd];
                    let p = &mut probs[((b * heads + h) * len_q + i) * len_k..][..len_k];
                    for (j, pj) in p.iter_mut().enumerate() {
                        let kj = &kdat[(b * len_k + j) * dim + off..][..hd];
                        *pj = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    }
                    tensor::softmax_in_place(p);
                    let o = &mut out[(b * len_q + i) * dim + off..][..hd];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vdat[(b * len_k + j) * dim + off..][..hd];
                        for (od, vv) in o.iter_mut().zip(vj) {
                            *od += pj * vv;
                        }
                    }
                }
            }
        }
        let out = Tensor::matrix(qr, dim, out)?;
        self.push(
            out,
            Op::Attention(AttentionTape {
                q,
                k,
                v,
                heads,
                batch,
                len_q,
                len_k,
                probs,
            }),
            "attention",
        )
    }

    /// Attention probabilities recorded by an attention node, laid out as
    /// `[batch][head][len_q][len_k]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(t) => Some(&t.probs),
            _ => None,
        }
    }

    /// Mean over rows of the per-row summed binary cross-entropy between
    /// `sigmoid(logits)` and `targets ∈ [0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let x = self.value(logits);
        if !x.same_shape(&targets) {
            return Err(Error::Dimension(format!(
                "logits {:?} vs targets {:?}",
                x.shape(),
                targets.shape()
            )));
        }
        let rows = x.rows() as f64;
        let total: f64 = x
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        self.push(
            Tensor::scalar(total / rows),
            Op::BceWithLogits(logits, targets),
            "bce_with_logits",
        )
    }

    /// Reverse pass from a scalar `loss`; parameter gradients are added to
    /// whatever `store` already holds.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => store.accumulate_grad(name, &g)?,
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = tensor::matmul_nt(&g, self.value(*b))?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = tensor::matmul_tn(self.value(*a), &g)?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()?),
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.map(|x| -x));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.needs(*bias) {
                        let n = g.cols();
                        let mut gb = vec![0.0; n];
                        for row in g.data().chunks(n) {
                            for (acc, x) in gb.iter_mut().zip(row) {
                                *acc += x;
                            }
                        }
                        accumulate(&mut grads, *bias, Tensor::row(gb)?);
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Affine(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::Sum(a) => {
                    let gv = g.item();
                    let shape = self.value(*a).shape().to_vec();
                    let n = self.value(*a).numel();
                    accumulate(&mut grads, *a, Tensor::new(shape, vec![gv; n])?);
                }
                Op::SumCols(a) => {
                    let src = self.value(*a);
                    let n = src.cols();
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .flat_map(|&gi| std::iter::repeat_n(gi, n))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(src.shape().to_vec(), data)?);
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let n = x.cols();
                    let mut out = vec![0.0; x.numel()];
                    for i in 0..x.rows() {
                        let xr = x.row_slice(i);
                        let yr = y.row_slice(i);
                        let gr = g.row_slice(i);
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            out[i * n + j] = (gr[j] - yr[j] * gy) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), out)?);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut out = vec![0.0; y.numel()];
                    for i in 0..y.rows() {
                        let yr = y.row_slice(i);
                        let gr = g.row_slice(i);
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..n {
                            out[i * n + j] = gr[j] - yr[j].exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |gi, x| gi * gelu_grad(x))?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Attention(t) => self.attention_backward(t, &g, &mut grads)?,
                Op::BceWithLogits(a, targets) => {
                    let x = self.value(*a);
                    let rows = x.rows() as f64;
                    let gv = g.item() / rows;
                    let ga = x.zip_map(targets, |z, y| gv * (sigmoid(z) - y))?;
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(())
    }

    fn attention_backward(
        &self,
        t: &AttentionTape,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let AttentionTape {
            q,
            k,
            v,
            heads,
            batch,
            len_q,
            len_k,
            ref probs,
        } = *t;
        let dim = self.value(q).cols();
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd, gd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            g.data(),
        );
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; len_k];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * hd;
                for i in 0..len_q {
                    let qrow = (b * len_q + i) * dim + off;
                    let p = &probs[((b * heads + h) * len_q + i) * len_k..][..len_k];
                    let go = &gd[qrow..qrow + hd];
                    for j in 0..len_k {
                        let vrow = (b * len_k + j) * dim + off;
                        dp[j] = go.iter().zip(&vd[vrow..vrow + hd]).map(|(x, y)| x * y).sum();
                        for d in 0..hd {
                            dv[vrow + d] += p[j] * go[d];
                        }
                    }
                    let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for j in 0..len_k {
                        let ds = p[j] * (dp[j] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = (b * len_k + j) * dim + off;
                        for d in 0..hd {
                            dq[qrow + d] += ds * kd[krow + d];
                            dk[krow + d] += ds * qd[qrow + d];
                        }
                    }
                }
            }
        }
        if self.needs(q) {
            accumulate(grads, q, Tensor::new(self.value(q).shape().to_vec(), dq)?);
        }
        if self.needs(k) {
            accumulate(grads, k, Tensor::new(self.value(k).shape().to_vec(), dk)?);
        }
        if self.needs(v) {
            accumulate(grads, v, Tensor::new(self.value(v).shape().to_vec(), dv)?);
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
