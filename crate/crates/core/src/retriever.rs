//! Tactile-guided retrieval query network and its training objective.
//!
//! Per sample: `V′ = V + SA(V)`, `T′ = T + SA(T)`, `q = CA(T′ → V′)`,
//! `Q = q + Linear(q)`. Each modality is a single token, so every attention
//! softmax is over one logit.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureVec, TriModalSample};
use crate::hash::derive_seed;
use crate::index::{RetrievalResult, VectorIndex};
use crate::numcore::{checkpoint, AdamW, Decay, Graph, Init, Linear, MultiHeadAttention, OptimConfig, ParamStore, Tensor, Var};

pub const CHECKPOINT_NAME: &str = "retriever.rtck";

/// Largest of 8, 4, 2, 1 heads that divides `dim`.
pub fn default_heads(dim: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|h| dim % h == 0).unwrap_or(1)
}

/// Parameter layout of the query network. Holds names and shapes only; the
/// values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct RetrieverNet {
    dim: usize,
    sa_visual: MultiHeadAttention,
    sa_tactile: MultiHeadAttention,
    cross: MultiHeadAttention,
    residual: Linear,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct QueryTrace {
    pub visual: Var,
    pub tactile: Var,
    pub cross: Var,
    pub query: Var,
}

impl RetrieverNet {
    pub fn new(dim: usize, heads: usize) -> Result<Self> {
        Ok(RetrieverNet {
            dim,
            sa_visual: MultiHeadAttention::new("retriever.sa_visual", dim, heads)?,
            sa_tactile: MultiHeadAttention::new("retriever.sa_tactile", dim, heads)?,
            cross: MultiHeadAttention::new("retriever.cross", dim, heads)?,
            residual: Linear::new("retriever.residual", dim, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.cross.heads()
    }

    pub fn sa_visual(&self) -> &MultiHeadAttention {
        &self.sa_visual
    }

    pub fn sa_tactile(&self) -> &MultiHeadAttention {
        &self.sa_tactile
    }

    pub fn cross(&self) -> &MultiHeadAttention {
        &self.cross
    }

    pub fn residual(&self) -> &Linear {
        &self.residual
    }

    /// Self-attention output projections and the residual map start at
    /// zero. The cross-attention value and output projections start as the
    /// identity, so at init `Q = V`.
    pub fn init(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("retriever-init", &[seed]));
        self.sa_visual.init(store, Init::Zeros, &mut rng)?;
        self.sa_tactile.init(store, Init::Zeros, &mut rng)?;
        self.cross.init_with(store, Init::Identity, Init::Identity, &mut rng)?;
        self.residual.init(store, Init::Zeros, &mut rng)
    }

    /// Batched forward: `v` and `t` are `B×D`, one token per sample.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, v: Var, t: Var) -> Result<QueryTrace> {
        let (b, d) = (g.value(v).rows(), g.value(v).cols());
        if d != self.dim || g.value(t).cols() != self.dim || g.value(t).rows() != b {
            return Err(Error::Dimension(format!(
                "query inputs {}x{} and {}x{} do not match model dim {}",
                b,
                d,
                g.value(t).rows(),
                g.value(t).cols(),
                self.dim
            )));
        }
        let sv = self.sa_visual.forward(g, store, v, v, v, b, 1, 1)?;
        let visual = g.add(v, sv)?;
        let st = self.sa_tactile.forward(g, store, t, t, t, b, 1, 1)?;
        let tactile = g.add(t, st)?;
        let cross = self.cross.forward(g, store, tactile, visual, visual, b, 1, 1)?;
        let r = self.residual.forward(g, store, cross)?;
        let query = g.add(cross, r)?;
        Ok(QueryTrace {
            visual,
            tactile,
            cross,
            query,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RetrieverParams {
    pub net: RetrieverNet,
    pub store: ParamStore,
}

impl RetrieverParams {
    pub fn new(dim: usize, heads: usize, seed: u64) -> Result<Self> {
        let net = RetrieverNet::new(dim, heads)?;
        let mut store = ParamStore::new();
        net.init(&mut store, seed)?;
        Ok(RetrieverParams { net, store })
    }

    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    /// Loads a checkpoint; the model dim is read from the residual weight.
    pub fn load(path: &Path, heads: Option<usize>) -> Result<Self> {
        let loaded = checkpoint::load(path)?;
        let dim = loaded.get("retriever.residual.weight")?.rows();
        let mut p = Self::new(dim, heads.unwrap_or_else(|| default_heads(dim)), 0)?;
        checkpoint::load_into(&mut p.store, path)?;
        Ok(p)
    }

    /// `Q` for a batch: rows of `v` and `t` are samples.
    pub fn query_batch(&self, v: &Tensor, t: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (vv, tv) = (g.constant(v.clone())?, g.constant(t.clone())?);
        let tr = self.net.forward(&mut g, &self.store, vv, tv)?;
        Ok(g.value(tr.query).clone())
    }

    pub fn query_forward(&self, v: &FeatureVec, t: &FeatureVec) -> Result<FeatureVec> {
        let q = self.query_batch(&v.to_row(), &t.to_row())?;
        FeatureVec::from_f64(q.data())
    }

    pub fn retrieve(
        &self,
        v: &FeatureVec,
        t: &FeatureVec,
        index: &VectorIndex,
        k: usize,
    ) -> Result<RetrievalResult> {
        index.topk(&self.query_forward(v, t)?, k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrieverLossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau: f64,
}

impl Default for RetrieverLossWeights {
    fn default() -> Self {
        RetrieverLossWeights {
            lambda1: 0.2,
            lambda2: 10.0,
            lambda3: 0.1,
            tau: 0.07,
        }
    }
}

impl RetrieverLossWeights {
    /// Only the alignment term.
    pub fn alignment_only(self) -> Self {
        RetrieverLossWeights {
            lambda2: 0.0,
            lambda3: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {x}")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// `mean_i [(1 − cos(Qᵢ, Lᵢ)) + λ1·(1 − cos(Qᵢ, Tᵢ))]`.
pub fn align_loss(g: &mut Graph, q: Var, l: Var, t: Var, w: &RetrieverLossWeights) -> Result<Var> {
    let b = g.value(q).rows() as f64;
    let cl = g.row_cosine(q, l)?;
    let ct = g.row_cosine(q, t)?;
    let cl = g.sum(cl)?;
    let ct = g.sum(ct)?;
    let a = g.affine(cl, -1.0 / b, 1.0)?;
    let c = g.affine(ct, -w.lambda1 / b, w.lambda1)?;
    g.add(a, c)
}

#[derive(Clone, Copy, Debug)]
pub struct StabilityVars {
    pub mse: Var,
    pub div: Var,
    pub nce: Var,
    pub total: Var,
}

fn off_diagonal_mask(b: usize) -> Tensor {
    Tensor::from_fn(b, b, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// `λ2·Σ‖Qᵢ−Lᵢ‖² + λ3·(L_div + L_nce)` with `L_div` the summed
/// off-diagonal of `Q̂Q̂ᵀ` and `L_nce` the summed InfoNCE of `Q` against `T`.
pub fn stability_loss(
    g: &mut Graph,
    q: Var,
    l: Var,
    t: Var,
    w: &RetrieverLossWeights,
) -> Result<StabilityVars> {
    let b = g.value(q).rows();
    if b < 2 {
        return Err(Error::Argument(format!("stability terms need a batch of at least 2, got {b}")));
    }
    let diff = g.sub(q, l)?;
    let sq = g.mul(diff, diff)?;
    let mse = g.sum(sq)?;

    let qn = g.row_normalize(q)?;
    let qt = g.transpose(qn)?;
    let sim = g.matmul(qn, qt)?;
    let mask = g.constant(off_diagonal_mask(b))?;
    let off = g.mul(sim, mask)?;
    let div = g.sum(off)?;

    let tn = g.row_normalize(t)?;
    let tt = g.transpose(tn)?;
    let logits = g.matmul(qn, tt)?;
    let logits = g.scale(logits, 1.0 / w.tau)?;
    let logp = g.log_softmax_rows(logits)?;
    let eye = g.constant(Tensor::identity(b))?;
    let diag = g.mul(logp, eye)?;
    let diag = g.sum(diag)?;
    let nce = g.scale(diag, -1.0)?;

    let reg = g.add(div, nce)?;
    let reg = g.scale(reg, w.lambda3)?;
    let m = g.scale(mse, w.lambda2)?;
    let total = g.add(m, reg)?;
    Ok(StabilityVars { mse, div, nce, total })
}

/// Loss components in plain numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub align: f64,
    pub mse: f64,
    pub div: f64,
    pub nce: f64,
    pub total: f64,
}

pub fn loss_align(q: &FeatureVec, l: &FeatureVec, t: &FeatureVec, w: &RetrieverLossWeights) -> Result<f64> {
    let mut g = Graph::new();
    let (qv, lv, tv) = (g.constant(q.to_row())?, g.constant(l.to_row())?, g.constant(t.to_row())?);
    let a = align_loss(&mut g, qv, lv, tv, w)?;
    Ok(g.value(a).item())
}

pub fn loss_stability(q: &Tensor, l: &Tensor, t: &Tensor, w: &RetrieverLossWeights) -> Result<LossParts> {
    let mut g = Graph::new();
    let (qv, lv, tv) = (g.constant(q.clone())?, g.constant(l.clone())?, g.constant(t.clone())?);
    let s = stability_loss(&mut g, qv, lv, tv, w)?;
    let val = |v: Var| g.value(v).item();
    Ok(LossParts {
        align: 0.0,
        mse: val(s.mse),
        div: val(s.div),
        nce: val(s.nce),
        total: val(s.total),
    })
}

/// Stacks sample fields into `B×D` tensors `(V, T, L)`.
pub fn stack_batch(batch: &[&TriModalSample]) -> Result<(Tensor, Tensor, Tensor)> {
    let d = batch
        .first()
        .map(|s| s.dim())
        .ok_or_else(|| Error::Argument("empty batch".into()))?;
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for s in batch {
        if s.dim() != d {
            return Err(Error::Dimension(format!("sample {} has dim {}, batch dim is {d}", s.id, s.dim())));
        }
        out[0].extend(s.visual.to_f64());
        out[1].extend(s.tactile.to_f64());
        out[2].extend(s.text.to_f64());
    }
    let [v, t, l] = out;
    let b = batch.len();
    Ok((Tensor::matrix(b, d, v)?, Tensor::matrix(b, d, t)?, Tensor::matrix(b, d, l)?))
}

/// Graph of the full objective for one batch.
pub struct LossGraph {
    pub graph: Graph,
    pub trace: QueryTrace,
    pub align: Var,
    pub stability: StabilityVars,
    pub total: Var,
    /// `B×1` cosines of `Q` with `L` and with `T`.
    pub cos_ql: Var,
    pub cos_qt: Var,
}

impl LossGraph {
    pub fn parts(&self) -> LossParts {
        let val = |v: Var| self.graph.value(v).item();
        LossParts {
            align: val(self.align),
            mse: val(self.stability.mse),
            div: val(self.stability.div),
            nce: val(self.stability.nce),
            total: val(self.total),
        }
    }
}

pub fn build_loss_graph(
    net: &RetrieverNet,
    store: &ParamStore,
    batch: &[&TriModalSample],
    w: &RetrieverLossWeights,
) -> Result<LossGraph> {
    let (v, t, l) = stack_batch(batch)?;
    let mut g = Graph::new();
    let (vv, tv, lv) = (g.constant(v)?, g.constant(t)?, g.constant(l)?);
    let trace = net.forward(&mut g, store, vv, tv)?;
    let q = trace.query;
    let align = align_loss(&mut g, q, lv, tv, w)?;
    let stability = stability_loss(&mut g, q, lv, tv, w)?;
    let total = g.add(align, stability.total)?;
    let cos_ql = g.row_cosine(q, lv)?;
    let cos_qt = g.row_cosine(q, tv)?;
    Ok(LossGraph {
        graph: g,
        trace,
        align,
        stability,
        total,
        cos_ql,
        cos_qt,
    })
}

pub fn total_loss(params: &RetrieverParams, batch: &[&TriModalSample], w: &RetrieverLossWeights) -> Result<LossParts> {
    Ok(build_loss_graph(&params.net, &params.store, batch, w)?.parts())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub heads: Option<usize>,
    /// Directory to write a checkpoint into after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RetrieverTrainConfig {
    fn default() -> Self {
        RetrieverTrainConfig {
            epochs: 60,
            batch_size: 256,
            learning_rate: 3e-4,
            weight_decay: 0.02,
            warmup_epochs: 10,
            seed: 0,
            heads: None,
            checkpoint_dir: None,
        }
    }
}

impl RetrieverTrainConfig {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs,
            decay: Decay::Cosine,
            ..OptimConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub mean_cos_ql: f64,
    pub mean_cos_qt: f64,
}

impl EpochMetrics {
    pub const HEADER: &'static str = "epoch\tlr\tloss\tmean_cos_QL\tmean_cos_QT";
}

impl std::fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.lr, self.loss, self.mean_cos_ql, self.mean_cos_qt
        )
    }
}

/// Splits `n` shuffled positions into batches; a trailing batch of one is
/// folded into the one before it so every batch has at least two samples.
fn batch_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s < 2) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

/// Continues training `params` in place and returns the per-epoch trace.
pub fn fit_retriever(
    params: &mut RetrieverParams,
    data: &[TriModalSample],
    cfg: &RetrieverTrainConfig,
    w: &RetrieverLossWeights,
) -> Result<Vec<EpochMetrics>> {
    if data.len() < 2 {
        return Err(Error::Argument(format!(
            "retriever training needs at least 2 samples, got {}",
            data.len()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("retriever batch size must be at least 2".into()));
    }
    w.validate()?;
    let mut opt = AdamW::new(cfg.optim())?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("retriever-shuffle", &[cfg.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut loss, mut cql, mut cqt) = (0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for (s, e) in batch_bounds(order.len(), cfg.batch_size) {
            let batch: Vec<&TriModalSample> = order[s..e].iter().map(|&i| &data[i]).collect();
            let lg = build_loss_graph(&params.net, &params.store, &batch, w)?;
            let b = batch.len() as f64;
            loss += lg.graph.value(lg.total).item() * b;
            cql += lg.graph.value(lg.cos_ql).sum();
            cqt += lg.graph.value(lg.cos_qt).sum();
            params.store.zero_grad();
            lg.graph.backward(lg.total, &mut params.store)?;
            lr = opt.step(&mut params.store, epoch)?;
        }
        let n = data.len() as f64;
        trace.push(EpochMetrics {
            epoch,
            lr,
            loss: loss / n,
            mean_cos_ql: cql / n,
            mean_cos_qt: cqt / n,
        });
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            params.save(&dir.join(CHECKPOINT_NAME))?;
        }
    }
    Ok(trace)
}

/// Fresh parameters for the dataset's dim, trained with `cfg`.
pub fn train_retriever(
    data: &[TriModalSample],
    cfg: &RetrieverTrainConfig,
    w: &RetrieverLossWeights,
) -> Result<(RetrieverParams, Vec<EpochMetrics>)> {
    let dim = data
        .first()
        .map(|s| s.dim())
        .ok_or_else(|| Error::Argument("retriever training set is empty".into()))?;
    let mut params = RetrieverParams::new(dim, cfg.heads.unwrap_or_else(|| default_heads(dim)), cfg.seed)?;
    let trace = fit_retriever(&mut params, data, cfg, w)?;
    Ok((params, trace))
}

/// Mean over distinct pairs of the cosine between query rows.
pub fn mean_pairwise_cosine(q: &Tensor) -> Result<f64> {
    let (b, d) = (q.rows(), q.cols());
    if b < 2 {
        return Err(Error::Argument("pairwise cosine needs at least 2 rows".into()));
    }
    let rows: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            let r = q.row_slice(i);
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                Err(Error::Degenerate(format!("query row {i} is zero")))
            } else {
                Ok(r.iter().map(|x| x / n).collect())
            }
        })
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    for i in 0..b {
        for j in i + 1..b {
            sum += (0..d).map(|k| rows[i][k] * rows[j][k]).sum::<f64>();
        }
    }
    Ok(sum / (b * (b - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::aligned_samples;
    use crate::numcore::gradcheck::{check_gradients, GradCheck};

    fn fv(v: &[f32]) -> FeatureVec {
        FeatureVec::new(v.to_vec()).unwrap()
    }

    fn w1() -> RetrieverLossWeights {
        RetrieverLossWeights {
            tau: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn align_closed_forms() {
        let w = RetrieverLossWeights::default();
        let e1 = fv(&[1.0, 0.0, 0.0]);
        let e2 = fv(&[0.0, 1.0, 0.0]);
        let e3 = fv(&[0.0, 0.0, 1.0]);
        assert!(loss_align(&e1, &e1, &e1, &w).unwrap().abs() < 1e-12);
        assert!((loss_align(&e1, &e1, &e2, &w).unwrap() - 0.2).abs() < 1e-9);
        assert!((loss_align(&e1, &e2, &e3, &w).unwrap() - 1.2).abs() < 1e-9);
        let z = fv(&[0.0, 0.0, 0.0]);
        assert!(matches!(loss_align(&z, &e1, &e1, &w), Err(Error::Degenerate(_))));
        assert!(matches!(loss_align(&e1, &z, &e1, &w), Err(Error::Degenerate(_))));
    }

    #[test]
    fn stability_closed_forms() {
        let eye = Tensor::identity(2);
        let p = loss_stability(&eye, &eye, &eye, &w1()).unwrap();
        let e = std::f64::consts::E;
        assert!((p.nce - (-2.0 * (e / (e + 1.0)).ln())).abs() < 1e-9);
        assert!((p.nce - 0.62652).abs() < 1e-5);
        assert_eq!(p.mse, 0.0);
        assert!(p.div.abs() < 1e-12);
        let one = Tensor::row(vec![1.0, 0.0]).unwrap();
        assert!(matches!(loss_stability(&one, &one, &one, &w1()), Err(Error::Argument(_))));
    }

    #[test]
    fn div_is_permutation_symmetric_and_mse_scales() {
        let q = Tensor::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin() + 0.1);
        let l = Tensor::from_fn(4, 3, |i, j| ((i + j) as f64).cos());
        let perm = [2, 0, 3, 1];
        let qp = Tensor::from_fn(4, 3, |i, j| q.get(perm[i], j));
        let lp = Tensor::from_fn(4, 3, |i, j| l.get(perm[i], j));
        let a = loss_stability(&q, &l, &l, &w1()).unwrap();
        let b = loss_stability(&qp, &lp, &lp, &w1()).unwrap();
        assert!((a.div - b.div).abs() < 1e-12);
        let w2 = RetrieverLossWeights {
            lambda2: 2.0 * w1().lambda2,
            ..w1()
        };
        let c = loss_stability(&q, &l, &l, &w2).unwrap();
        assert!(((c.total - a.total) - w1().lambda2 * a.mse).abs() < 1e-9);
    }

    #[test]
    fn nce_respects_logit_bound() {
        let q = Tensor::from_fn(5, 4, |i, j| ((i * 4 + j) as f64).sin());
        let t = Tensor::from_fn(5, 4, |i, j| ((i * 7 + j) as f64 * 0.3).cos());
        let w = RetrieverLossWeights::default();
        let p = loss_stability(&q, &t, &t, &w).unwrap();
        // logits lie in [-1/τ, 1/τ], so each term is at most 2/τ + ln B
        assert!(p.nce <= 5.0 * (2.0 / w.tau + 5f64.ln()));
        assert!(p.nce >= 0.0);
    }

    #[test]
    fn residual_identity_at_init() {
        let p = RetrieverParams::new(8, 2, 1).unwrap();
        let v = Tensor::from_fn(3, 8, |i, j| (i as f64 + 1.0) * (j as f64 - 3.5));
        let t = Tensor::from_fn(3, 8, |i, j| ((i * 8 + j) as f64).cos());
        let mut g = Graph::new();
        let (vv, tv) = (g.constant(v.clone()).unwrap(), g.constant(t.clone()).unwrap());
        let tr = p.net.forward(&mut g, &p.store, vv, tv).unwrap();
        assert_eq!(g.value(tr.visual), &v);
        assert_eq!(g.value(tr.tactile), &t);
        assert_eq!(g.value(tr.query), g.value(tr.cross));
        assert_eq!(g.value(tr.query), &v);
    }

    #[test]
    fn zeroed_cross_output_gives_zero_query() {
        let mut p = RetrieverParams::new(8, 2, 1).unwrap();
        let o = p.net.cross().output_projection().clone();
        p.store.set(o.weight_name(), Tensor::zeros(&[8, 8])).unwrap();
        let q = p
            .query_forward(&fv(&[1.0; 8]), &fv(&[0.5; 8]))
            .unwrap();
        assert!(q.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn query_ignores_tactile_with_single_tokens() {
        // one key token: the cross-attention weight is exactly 1 whatever
        // the tactile query is
        let p = RetrieverParams::new(8, 2, 4).unwrap();
        let v = fv(&[0.3, -0.1, 0.7, 0.2, 0.0, 0.5, -0.4, 0.9]);
        let a = p.query_forward(&v, &fv(&[1.0; 8])).unwrap();
        let b = p.query_forward(&v, &fv(&[-2.0, 0.1, 3.0, 0.0, 1.0, 1.0, -1.0, 0.2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manual_forward_oracle() {
        use crate::numcore::matmul;
        let mut p = RetrieverParams::new(8, 2, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let names: Vec<String> = p.store.names().map(String::from).collect();
        for n in &names {
            let shape = p.store.get(n).unwrap().shape().to_vec();
            let t = Tensor::from_fn(shape[0], shape[1], |_, _| rand::Rng::random_range(&mut rng, -0.5..0.5));
            p.store.set(n, t).unwrap();
        }
        let v = Tensor::from_fn(1, 8, |_, j| (j as f64 * 0.37).sin());
        let t = Tensor::from_fn(1, 8, |_, j| (j as f64 * 0.11).cos());
        let lin = |x: &Tensor, pre: &str| {
            let w = p.store.get(&format!("{pre}.weight")).unwrap();
            let b = p.store.get(&format!("{pre}.bias")).unwrap();
            matmul(x, w).unwrap().zip_map(b, |a, c| a + c).unwrap()
        };
        // single token: attention output is the projected value
        let sa = |x: &Tensor, pre: &str| lin(&lin(x, &format!("{pre}.v")), &format!("{pre}.o"));
        let v1 = v.zip_map(&sa(&v, "retriever.sa_visual"), |a, b| a + b).unwrap();
        let _t1 = t.zip_map(&sa(&t, "retriever.sa_tactile"), |a, b| a + b).unwrap();
        let q = sa(&v1, "retriever.cross");
        let want = q.zip_map(&lin(&q, "retriever.residual"), |a, b| a + b).unwrap();
        let got = p.query_batch(&v, &t).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        let data = aligned_samples(4, 16, 0.3, 6, 2).unwrap();
        let batch: Vec<&TriModalSample> = data.iter().collect();
        let mut p = RetrieverParams::new(16, 2, 3).unwrap();
        // move off the zero init so every path carries gradient
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let names: Vec<String> = p.store.names().map(String::from).collect();
        for n in &names {
            let shape = p.store.get(n).unwrap().shape().to_vec();
            let t = Tensor::from_fn(shape[0], shape[1], |_, _| rand::Rng::random_range(&mut rng, -0.3..0.3));
            p.store.set(n, t).unwrap();
        }
        let w = RetrieverLossWeights::default();
        let net = p.net.clone();
        let rep = check_gradients(
            &mut p.store,
            |s| {
                let lg = build_loss_graph(&net, s, &batch, &w)?;
                Ok((lg.graph, lg.total))
            },
            GradCheck::default(),
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let data = aligned_samples(20, 8, 0.3, 4, 1).unwrap();
        let cfg = RetrieverTrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.0,
            weight_decay: 0.0,
            warmup_epochs: 0,
            ..Default::default()
        };
        let before = RetrieverParams::new(8, 2, 0).unwrap();
        let (after, trace) = train_retriever(&data, &cfg, &RetrieverLossWeights::default()).unwrap();
        assert_eq!(before.store.checksum(), after.store.checksum());
        assert_eq!(trace.len(), 3);
    }

    #[test]
    fn traces_are_deterministic_and_checkpointed() {
        let data = aligned_samples(33, 8, 0.3, 4, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = RetrieverTrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-2,
            warmup_epochs: 1,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let w = RetrieverLossWeights::default();
        let (a, ta) = train_retriever(&data, &cfg, &w).unwrap();
        let (_, tb) = train_retriever(&data, &cfg, &w).unwrap();
        assert_eq!(ta, tb);
        let back = RetrieverParams::load(&dir.path().join(CHECKPOINT_NAME), Some(2)).unwrap();
        let q1 = a.query_forward(&data[0].visual, &data[0].tactile).unwrap();
        let q2 = back.query_forward(&data[0].visual, &data[0].tactile).unwrap();
        assert!(q1.cosine(&q2).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn batch_bounds_fold_singletons() {
        assert_eq!(batch_bounds(9, 4), [(0, 4), (4, 9)]);
        assert_eq!(batch_bounds(8, 4), [(0, 4), (4, 8)]);
        assert_eq!(batch_bounds(3, 8), [(0, 3)]);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train_retriever(&[], &RetrieverTrainConfig::default(), &RetrieverLossWeights::default()).is_err());
    }

    #[test]
    fn pairwise_cosine_of_orthonormal_rows_is_zero() {
        assert_eq!(mean_pairwise_cosine(&Tensor::identity(4)).unwrap(), 0.0);
        let same = Tensor::from_fn(3, 2, |_, j| j as f64 + 1.0);
        assert!((mean_pairwise_cosine(&same).unwrap() - 1.0).abs() < 1e-12);
    }
}
