//! Texture-aware integration of retrieved pairs into the visual prompt, and
//! a multi-label adjective head standing in for the language model.
//!
//! `a^V = CA(T → R_v)`, `a^L = CA(T → R_l)`,
//! `p′ = p + FFN(Linear(a^V + a^L))` with `FFN(x) = x + W₂·gelu(W₁x)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{validate_caption, TactileCaption};
use crate::corpus::caption::CAPTION_ARITY;
use crate::error::{Error, Result};
use crate::features::{FeatureVec, TriModalSample};
use crate::hash::derive_seed;
use crate::index::{RetrievalResult, VectorIndex};
use crate::numcore::{checkpoint, AdamW, Decay, Graph, Init, Linear, MultiHeadAttention, OptimConfig, ParamStore, Tensor, Var};
use crate::retriever::{default_heads, RetrieverParams};

pub const CHECKPOINT_NAME: &str = "integrator.rtck";
pub const VOCAB_NAME: &str = "vocab.txt";
pub const DEFAULT_K: usize = 5;
pub const BEST_K: usize = 7;

/// Which retrieved modalities feed the fusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModalityMask {
    Image,
    Text,
    #[default]
    Both,
}

impl ModalityMask {
    pub const ALL: [ModalityMask; 3] = [ModalityMask::Image, ModalityMask::Text, ModalityMask::Both];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(ModalityMask::Image),
            "text" => Ok(ModalityMask::Text),
            "both" => Ok(ModalityMask::Both),
            _ => Err(Error::Argument(format!("modality mask must be image, text or both, got {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityMask::Image => "image",
            ModalityMask::Text => "text",
            ModalityMask::Both => "both",
        }
    }

    fn image(self) -> bool {
        self != ModalityMask::Text
    }

    fn text(self) -> bool {
        self != ModalityMask::Image
    }
}

/// Sorted, duplicate-free adjective list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdjectiveVocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl AdjectiveVocab {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let set: std::collections::BTreeSet<String> =
            words.into_iter().map(|w| w.as_ref().to_string()).collect();
        let words: Vec<String> = set.into_iter().collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        AdjectiveVocab { words, index }
    }

    pub fn from_captions<'a>(captions: impl IntoIterator<Item = &'a TactileCaption>) -> Self {
        Self::new(captions.into_iter().flat_map(|c| c.adjectives().iter()))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Multi-hot row over the vocabulary; unknown words are skipped.
    pub fn targets(&self, caption: &TactileCaption) -> Vec<f64> {
        let mut y = vec![0.0; self.len()];
        for w in caption.adjectives() {
            if let Some(i) = self.index_of(w) {
                y[i] = 1.0;
            }
        }
        y
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty())))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegratorConfig {
    pub dim: usize,
    pub prompt_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mask: ModalityMask,
}

impl IntegratorConfig {
    /// Hidden width equal to the prompt width.
    pub fn new(dim: usize, prompt_dim: usize) -> Self {
        IntegratorConfig {
            dim,
            prompt_dim,
            hidden: prompt_dim,
            heads: default_heads(dim),
            mask: ModalityMask::Both,
        }
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::new(768, 4096)
    }
}

#[derive(Clone, Debug)]
pub struct IntegratorNet {
    cfg: IntegratorConfig,
    vocab_len: usize,
    prompt: Linear,
    ca_visual: MultiHeadAttention,
    ca_text: MultiHeadAttention,
    fusion: Linear,
    ffn_in: Linear,
    ffn_out: Linear,
    head: Linear,
}

impl IntegratorNet {
    pub fn new(cfg: IntegratorConfig, vocab_len: usize) -> Result<Self> {
        if vocab_len == 0 {
            return Err(Error::Config("caption head needs a non-empty vocabulary".into()));
        }
        let (d, dp, h) = (cfg.dim, cfg.prompt_dim, cfg.hidden);
        if d == 0 || dp == 0 || h == 0 {
            return Err(Error::Config(format!("integrator dims must be positive: {d}, {dp}, {h}")));
        }
        Ok(IntegratorNet {
            prompt: Linear::new("integrator.prompt", d, dp),
            ca_visual: MultiHeadAttention::new("integrator.ca_visual", d, cfg.heads)?,
            ca_text: MultiHeadAttention::new("integrator.ca_text", d, cfg.heads)?,
            fusion: Linear::new("integrator.fusion", d, dp),
            ffn_in: Linear::new("integrator.ffn_in", dp, h),
            ffn_out: Linear::new("integrator.ffn_out", h, dp),
            head: Linear::new("integrator.head", dp, vocab_len),
            cfg,
            vocab_len,
        })
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    pub fn prompt_projection(&self) -> &Linear {
        &self.prompt
    }

    pub fn fusion(&self) -> &Linear {
        &self.fusion
    }

    pub fn ffn_out(&self) -> &Linear {
        &self.ffn_out
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Fusion and the FFN's last layer start at zero, so `p′ = p` at init.
    pub fn init(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("integrator-init", &[seed]));
        self.prompt.init(store, Init::Uniform, &mut rng)?;
        self.ca_visual.init(store, Init::Uniform, &mut rng)?;
        self.ca_text.init(store, Init::Uniform, &mut rng)?;
        self.fusion.init(store, Init::Zeros, &mut rng)?;
        self.ffn_in.init(store, Init::Uniform, &mut rng)?;
        self.ffn_out.init(store, Init::Zeros, &mut rng)?;
        self.head.init(store, Init::Uniform, &mut rng)
    }

    /// `p = Prompt(V + T)` for `B×D` inputs.
    pub fn prompt_graph(&self, g: &mut Graph, store: &ParamStore, v: Var, t: Var) -> Result<Var> {
        let s = g.add(v, t)?;
        self.prompt.forward(g, store, s)
    }

    /// `p′` for `B` samples with `k` retrieved rows each: `t` is `B×D`,
    /// `rv`/`rl` are `(B·k)×D`, `p` is `B×D′`.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        t: Var,
        rv: Var,
        rl: Var,
        p: Var,
        k: usize,
    ) -> Result<Var> {
        if k == 0 {
            return Ok(p);
        }
        let b = g.value(t).rows();
        let mut fused = None;
        if self.cfg.mask.image() {
            fused = Some(self.ca_visual.forward(g, store, t, rv, rv, b, 1, k)?);
        }
        if self.cfg.mask.text() {
            let al = self.ca_text.forward(g, store, t, rl, rl, b, 1, k)?;
            fused = Some(match fused {
                Some(av) => g.add(av, al)?,
                None => al,
            });
        }
        let x = self.fusion.forward(g, store, fused.expect("mask selects a modality"))?;
        let h = self.ffn_in.forward(g, store, x)?;
        let h = g.gelu(h)?;
        let h = self.ffn_out.forward(g, store, h)?;
        let ffn = g.add(x, h)?;
        g.add(p, ffn)
    }

    pub fn head_graph(&self, g: &mut Graph, store: &ParamStore, p: Var) -> Result<Var> {
        self.head.forward(g, store, p)
    }
}

/// Retrieved features of one sample as `K×D` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub r_v: Tensor,
    pub r_l: Tensor,
}

impl Retrieved {
    pub fn from_result(res: &RetrievalResult, dim: usize) -> Result<Self> {
        let k = res.len();
        let mut v = Vec::with_capacity(k * dim);
        let mut l = Vec::with_capacity(k * dim);
        for h in &res.hits {
            v.extend(h.r_v.to_f64());
            l.extend(h.r_l.to_f64());
        }
        if k == 0 {
            return Ok(Self::empty(dim));
        }
        Ok(Retrieved {
            r_v: Tensor::matrix(k, dim, v)?,
            r_l: Tensor::matrix(k, dim, l)?,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Retrieved {
            r_v: Tensor::zeros(&[0, dim]),
            r_l: Tensor::zeros(&[0, dim]),
        }
    }

    pub fn k(&self) -> usize {
        self.r_v.rows()
    }
}

#[derive(Clone, Debug)]
pub struct IntegratorParams {
    pub net: IntegratorNet,
    pub store: ParamStore,
    pub vocab: AdjectiveVocab,
}

impl IntegratorParams {
    pub fn new(cfg: IntegratorConfig, vocab: AdjectiveVocab, seed: u64) -> Result<Self> {
        let net = IntegratorNet::new(cfg, vocab.len())?;
        let mut store = ParamStore::new();
        net.init(&mut store, seed)?;
        Ok(IntegratorParams { net, store, vocab })
    }

    pub fn dim(&self) -> usize {
        self.net.cfg.dim
    }

    /// Writes the weights and the vocabulary into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&self.store, &dir.join(CHECKPOINT_NAME))?;
        self.vocab.save(&dir.join(VOCAB_NAME))
    }

    /// Reads weights and vocabulary from `dir`; dims come from the weights.
    pub fn load(dir: &Path, heads: Option<usize>, mask: ModalityMask) -> Result<Self> {
        let vocab = AdjectiveVocab::load(&dir.join(VOCAB_NAME))?;
        let path = dir.join(CHECKPOINT_NAME);
        let loaded = checkpoint::load(&path)?;
        let w = loaded.get("integrator.prompt.weight")?;
        let (dim, prompt_dim) = (w.rows(), w.cols());
        let hidden = loaded.get("integrator.ffn_in.weight")?.cols();
        let cfg = IntegratorConfig {
            dim,
            prompt_dim,
            hidden,
            heads: heads.unwrap_or_else(|| default_heads(dim)),
            mask,
        };
        let mut p = Self::new(cfg, vocab, 0)?;
        checkpoint::load_into(&mut p.store, &path)?;
        Ok(p)
    }

    fn check_dim(&self, what: &str, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::Dimension(format!("{what} dim {d} does not match integrator dim {}", self.dim())));
        }
        Ok(())
    }

    /// `1×D′` visual prompt.
    pub fn make_visual_prompt(&self, v: &FeatureVec, t: &FeatureVec) -> Result<Tensor> {
        self.check_dim("visual", v.dim())?;
        self.check_dim("tactile", t.dim())?;
        let mut g = Graph::new();
        let (vv, tv) = (g.constant(v.to_row())?, g.constant(t.to_row())?);
        let p = self.net.prompt_graph(&mut g, &self.store, vv, tv)?;
        Ok(g.value(p).clone())
    }

    /// `1×D′` integrated prompt; an empty retrieval returns `p` unchanged.
    pub fn integrate(&self, t: &FeatureVec, r: &Retrieved, p: &Tensor) -> Result<Tensor> {
        self.check_dim("tactile", t.dim())?;
        if r.k() > 0 {
            self.check_dim("retrieved", r.r_v.cols())?;
        }
        let mut g = Graph::new();
        let (tv, rv, rl, pv) = (
            g.constant(t.to_row())?,
            g.constant(r.r_v.clone())?,
            g.constant(r.r_l.clone())?,
            g.constant(p.clone())?,
        );
        let out = self.net.integrate_graph(&mut g, &self.store, tv, rv, rl, pv, r.k())?;
        Ok(g.value(out).clone())
    }

    pub fn logits(&self, p_prime: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let pv = g.constant(p_prime.clone())?;
        let out = self.net.head_graph(&mut g, &self.store, pv)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Predicted adjectives for one observation and its retrievals.
    pub fn describe(&self, v: &FeatureVec, t: &FeatureVec, r: &Retrieved) -> Result<Vec<String>> {
        let p = self.make_visual_prompt(v, t)?;
        let pp = self.integrate(t, r, &p)?;
        caption_head(&self.logits(&pp)?, &self.vocab)
    }
}

/// Top adjectives by logit (five, or the whole vocab if smaller); ties keep
/// vocabulary order.
pub fn caption_head(logits: &[f64], vocab: &AdjectiveVocab) -> Result<Vec<String>> {
    if vocab.is_empty() {
        return Err(Error::Argument("caption head needs a non-empty vocabulary".into()));
    }
    if logits.len() != vocab.len() {
        return Err(Error::Dimension(format!(
            "{} logits for a vocabulary of {}",
            logits.len(),
            vocab.len()
        )));
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(CAPTION_ARITY)
        .map(|i| vocab.words()[i].clone())
        .collect())
}

/// Joins predicted adjectives into a caption when there are five of them.
pub fn as_caption(words: &[String]) -> Result<TactileCaption> {
    validate_caption(&words.join(", "))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for IntegratorTrainConfig {
    fn default() -> Self {
        IntegratorTrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 1e-3,
            weight_decay: 0.02,
            k: DEFAULT_K,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

impl std::fmt::Display for IntegratorEpoch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{:.6e}\t{:.6}", self.epoch, self.lr, self.loss)
    }
}

/// Retrievals for every sample under a frozen retriever.
pub fn retrieve_all(
    data: &[TriModalSample],
    retriever: &RetrieverParams,
    index: &VectorIndex,
    k: usize,
) -> Result<Vec<Retrieved>> {
    data.iter()
        .map(|s| {
            if k == 0 {
                return Ok(Retrieved::empty(s.dim()));
            }
            let res = retriever.retrieve(&s.visual, &s.tactile, index, k)?;
            Retrieved::from_result(&res, s.dim())
        })
        .collect()
}

fn stack_rows<'a>(rows: impl Iterator<Item = &'a Tensor>, dim: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        n += r.rows();
        data.extend_from_slice(r.data());
    }
    Tensor::matrix(n, dim, data)
}

/// Builds the training graph for one batch; returns the graph and the
/// summed-BCE loss node.
pub fn integrator_loss_graph(
    net: &IntegratorNet,
    store: &ParamStore,
    vocab: &AdjectiveVocab,
    batch: &[(&TriModalSample, &Retrieved)],
) -> Result<(Graph, Var)> {
    let d = net.cfg.dim;
    let k = batch.first().map_or(0, |(_, r)| r.k());
    if batch.iter().any(|(_, r)| r.k() != k) {
        return Err(Error::Argument("every sample in a batch needs the same number of retrievals".into()));
    }
    let mut targets = Vec::new();
    for (s, _) in batch {
        targets.extend(vocab.targets(&validate_caption(&s.caption)?));
    }
    let b = batch.len();
    let mut g = Graph::new();
    let v = g.constant(Tensor::matrix(b, d, batch.iter().flat_map(|(s, _)| s.visual.to_f64()).collect())?)?;
    let t = g.constant(Tensor::matrix(b, d, batch.iter().flat_map(|(s, _)| s.tactile.to_f64()).collect())?)?;
    // With no retrievals the integrator returns p and never reads rv/rl.
    let (rv, rl) = if k == 0 {
        (t, t)
    } else {
        (
            g.constant(stack_rows(batch.iter().map(|(_, r)| &r.r_v), d)?)?,
            g.constant(stack_rows(batch.iter().map(|(_, r)| &r.r_l), d)?)?,
        )
    };
    let p = net.prompt_graph(&mut g, store, v, t)?;
    let pp = net.integrate_graph(&mut g, store, t, rv, rl, p, k)?;
    let logits = net.head_graph(&mut g, store, pp)?;
    let loss = g.bce_with_logits(logits, Tensor::matrix(b, vocab.len(), targets)?)?;
    Ok((g, loss))
}

/// Trains the integrator with the retriever frozen. The vocabulary is
/// harvested from the dataset and corpus captions.
pub fn train_integrator(
    data: &[TriModalSample],
    retriever: &RetrieverParams,
    index: &VectorIndex,
    net_cfg: IntegratorConfig,
    cfg: &IntegratorTrainConfig,
) -> Result<(IntegratorParams, Vec<IntegratorEpoch>)> {
    if data.is_empty() {
        return Err(Error::Argument("integrator training set is empty".into()));
    }
    let captions: Vec<TactileCaption> = data.iter().map(|s| validate_caption(&s.caption)).collect::<Result<_>>()?;
    let vocab = AdjectiveVocab::from_captions(captions.iter().chain(index.captions()));
    let mut params = IntegratorParams::new(net_cfg, vocab, cfg.seed)?;
    let trace = fit_integrator(&mut params, data, retriever, index, cfg)?;
    Ok((params, trace))
}

/// Continues training `params` in place.
pub fn fit_integrator(
    params: &mut IntegratorParams,
    data: &[TriModalSample],
    retriever: &RetrieverParams,
    index: &VectorIndex,
    cfg: &IntegratorTrainConfig,
) -> Result<Vec<IntegratorEpoch>> {
    if data.is_empty() {
        return Err(Error::Argument("integrator training set is empty".into()));
    }
    let frozen = retriever.store.checksum();
    let retrieved = retrieve_all(data, retriever, index, cfg.k)?;
    let trace = fit_on_retrievals(params, data, &retrieved, cfg)?;
    if retriever.store.checksum() != frozen {
        return Err(Error::State("retriever parameters changed during integrator training".into()));
    }
    Ok(trace)
}

/// Trains on precomputed retrievals, one per sample. `cfg.k` is ignored.
pub fn fit_on_retrievals(
    params: &mut IntegratorParams,
    data: &[TriModalSample],
    retrieved: &[Retrieved],
    cfg: &IntegratorTrainConfig,
) -> Result<Vec<IntegratorEpoch>> {
    if data.is_empty() {
        return Err(Error::Argument("integrator training set is empty".into()));
    }
    if retrieved.len() != data.len() {
        return Err(Error::Argument(format!(
            "{} retrievals for {} samples",
            retrieved.len(),
            data.len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("integrator batch size must be positive".into()));
    }
    let mut opt = AdamW::new(OptimConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        total_epochs: cfg.epochs.max(1),
        decay: Decay::Constant,
        ..OptimConfig::default()
    })?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("integrator-shuffle", &[cfg.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut total, mut lr) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&TriModalSample, &Retrieved)> =
                chunk.iter().map(|&i| (&data[i], &retrieved[i])).collect();
            let (g, loss) = integrator_loss_graph(&params.net, &params.store, &params.vocab, &batch)?;
            total += g.value(loss).item() * batch.len() as f64;
            params.store.zero_grad();
            g.backward(loss, &mut params.store)?;
            lr = opt.step(&mut params.store, epoch)?;
        }
        trace.push(IntegratorEpoch {
            epoch,
            lr,
            loss: total / data.len() as f64,
        });
    }
    Ok(trace)
}
