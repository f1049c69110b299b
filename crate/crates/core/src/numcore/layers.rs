//! Parameterized building blocks: affine maps and multi-head attention.

use rand::Rng;

use super::graph::{AttnLayout, Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// How a weight matrix is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// U(-1/√fan_in, 1/√fan_in).
    Uniform,
    Zeros,
    /// Identity weight; square maps only.
    Identity,
}

/// `y = x·W + b`, `W: fan_in×fan_out`, `b: 1×fan_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: String,
    bias: String,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            fan_in,
            fan_out,
        }
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn bias_name(&self) -> &str {
        &self.bias
    }

    pub fn init(&self, store: &mut ParamStore, init: Init, rng: &mut impl Rng) -> Result<()> {
        match init {
            Init::Uniform => store.register_uniform(&self.weight, self.fan_in, self.fan_out, rng)?,
            Init::Zeros => store.register_zeros(&self.weight, &[self.fan_in, self.fan_out])?,
            Init::Identity => {
                if self.fan_in != self.fan_out {
                    return Err(Error::Config(format!(
                        "identity init needs a square map, {} is {}x{}",
                        self.weight, self.fan_in, self.fan_out
                    )));
                }
                store.register(&self.weight, Tensor::identity(self.fan_in))?
            }
        }
        store.register_zeros(&self.bias, &[1, self.fan_out])
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, &self.weight)?;
        let b = g.param(store, &self.bias)?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Multi-head scaled dot-product attention with input and output
/// projections. No positional encodings: key/value tokens form a set.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    dim: usize,
    heads: usize,
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            dim,
            heads,
            query: Linear::new(&format!("{prefix}.q"), dim, dim),
            key: Linear::new(&format!("{prefix}.k"), dim, dim),
            value: Linear::new(&format!("{prefix}.v"), dim, dim),
            output: Linear::new(&format!("{prefix}.o"), dim, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn output_projection(&self) -> &Linear {
        &self.output
    }

    pub fn value_projection(&self) -> &Linear {
        &self.value
    }

    pub fn query_projection(&self) -> &Linear {
        &self.query
    }

    pub fn key_projection(&self) -> &Linear {
        &self.key
    }

    pub fn init(&self, store: &mut ParamStore, output: Init, rng: &mut impl Rng) -> Result<()> {
        self.init_with(store, Init::Uniform, output, rng)
    }

    /// Query and key projections are always uniform.
    pub fn init_with(
        &self,
        store: &mut ParamStore,
        value: Init,
        output: Init,
        rng: &mut impl Rng,
    ) -> Result<()> {
        self.query.init(store, Init::Uniform, rng)?;
        self.key.init(store, Init::Uniform, rng)?;
        self.value.init(store, value, rng)?;
        self.output.init(store, output, rng)
    }

    /// `q` holds `batch·len_q` rows, `k`/`v` hold `batch·len_k` rows.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        len_q: usize,
        len_k: usize,
    ) -> Result<Var> {
        for (what, x) in [("query", q), ("key", k), ("value", v)] {
            let cols = g.value(x).cols();
            if cols != self.dim {
                return Err(Error::Dimension(format!(
                    "attention {what} has dim {cols}, expected {}",
                    self.dim
                )));
            }
        }
        let qp = self.query.forward(g, store, q)?;
        let kp = self.key.forward(g, store, k)?;
        let vp = self.value.forward(g, store, v)?;
        let ctx = g.attention(
            qp,
            kp,
            vp,
            AttnLayout {
                heads: self.heads,
                batch,
                len_q,
                len_k,
            },
        )?;
        self.output.forward(g, store, ctx)
    }
}

/// One-shot attention over a single sequence: `q: n_q×D`, `k, v: n_k×D`,
/// with projections named under `prefix` in `store`.
pub fn multihead_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    store: &ParamStore,
    prefix: &str,
    heads: usize,
) -> Result<Tensor> {
    let (nq, dim) = q.expect_matrix("attention query")?;
    let (nk, _) = k.expect_matrix("attention key")?;
    let mha = MultiHeadAttention::new(prefix, dim, heads)?;
    let mut g = Graph::new();
    let (qv, kv, vv) = (
        g.constant(q.clone())?,
        g.constant(k.clone())?,
        g.constant(v.clone())?,
    );
    let out = mha.forward(&mut g, store, qv, kv, vv, 1, nq, nk)?;
    Ok(g.value(out).clone())
}
