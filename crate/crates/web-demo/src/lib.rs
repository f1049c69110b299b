//! Browser bindings. Each export wraps a plain Rust function so the same
//! logic runs in native tests.

use wasm_bindgen::prelude::*;

use tactile_rag::corpus::synthetic::{SynthWorld, CLASS_NAMES};
use tactile_rag::corpus::CorpusEntry;
use tactile_rag::features::{FeatureVec, TriModalSample};
use tactile_rag::harness::{run_query_ablation, ExperimentConfig, Pipeline, QueryMode, RunInputs};
use tactile_rag::index::KeyMode;
use tactile_rag::numcore::{Decay, OptimConfig, Tensor};
use tactile_rag::retriever::{
    mean_pairwise_cosine, train_retriever, EpochMetrics, RetrieverLossWeights, RetrieverParams,
    RetrieverTrainConfig,
};
use tactile_rag::Result;

fn js(e: tactile_rag::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Per-epoch learning rate of the warmup schedule.
pub fn schedule(base: f64, epochs: usize, warmup: usize, cosine: bool) -> Result<Vec<f64>> {
    let cfg = OptimConfig {
        learning_rate: base,
        total_epochs: epochs,
        warmup_epochs: warmup,
        decay: if cosine { Decay::Cosine } else { Decay::Constant },
        ..OptimConfig::default()
    };
    cfg.validate()?;
    Ok((0..epochs).map(|e| cfg.lr_at(e)).collect())
}

#[wasm_bindgen]
pub fn lr_schedule(base: f64, epochs: usize, warmup: usize, cosine: bool) -> Result<Vec<f64>, JsError> {
    schedule(base, epochs, warmup, cosine).map_err(js)
}

fn demo_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        dim: 32,
        classes: 48,
        per_class: 10,
        holdout_classes: 12,
        subset_size: 240,
        train_samples: 256,
        eval_samples: 48,
        retriever_epochs: 80,
        retriever_batch: 64,
        retriever_warmup: 2,
        ..ExperimentConfig::default()
    }
}

/// A small synthetic corpus with a trained retriever, queried from the page.
#[wasm_bindgen]
pub struct RetrievalDemo {
    pipe: Pipeline,
    entries: Vec<CorpusEntry>,
    retriever: RetrieverParams,
    train: Vec<TriModalSample>,
    eval: Vec<TriModalSample>,
}

impl RetrievalDemo {
    pub fn build(seed: u64) -> Result<Self> {
        let pipe = Pipeline::new(demo_config(seed))?;
        let train = pipe.train_split()?;
        let (retriever, _) = pipe.train_retriever(&train)?;
        Ok(RetrievalDemo {
            entries: pipe.corpus_entries()?,
            eval: pipe.eval_split()?,
            pipe,
            retriever,
            train,
        })
    }

    fn inputs(&self) -> RunInputs<'_> {
        RunInputs {
            entries: &self.entries,
            retriever: Some(&self.retriever),
            train: &self.train,
            eval: &self.eval,
        }
    }

    /// One line per hit: `id, score, class, same-material flag, caption`,
    /// tab-separated, after a header line describing the query sample.
    pub fn lines(&self, sample: usize, query: &str, key: &str, k: usize) -> Result<String> {
        let (query, key) = (QueryMode::parse(query)?, KeyMode::parse(key)?);
        let s = self.eval.get(sample % self.eval.len().max(1)).ok_or_else(|| {
            tactile_rag::Error::Argument("the evaluation split is empty".into())
        })?;
        let index = self.pipe.index(&self.entries, key)?;
        let res = self.pipe.search(query, std::slice::from_ref(s), Some(&self.retriever), &index, k)?;
        let m = s.material.unwrap_or(u64::MAX);
        let mut out = format!("sample {} material {} caption {}\n", s.id, m, s.caption);
        for h in &res[0].hits {
            let same = SynthWorld::material_of(&h.class_name) == m;
            out.push_str(&format!(
                "{}\t{:.4}\t{}\t{}\t{}\n",
                h.id,
                h.score,
                h.class_name,
                u8::from(same),
                h.caption
            ));
        }
        Ok(out)
    }

    /// Precision@k by material for the five query/key combinations, in grid order.
    pub fn precisions(&self, k: usize) -> Result<Vec<f64>> {
        let pipe = Pipeline::new(ExperimentConfig { k, ..self.pipe.cfg.clone() })?;
        let (_, rows) = run_query_ablation(&pipe, self.inputs(), &tactile_rag::harness::QUERY_ABLATION_GRID)?;
        Ok(rows.iter().map(|r| r.precision).collect())
    }
}

#[wasm_bindgen]
impl RetrievalDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<RetrievalDemo, JsError> {
        Self::build(seed).map_err(js)
    }

    pub fn query(&self, sample: usize, query: &str, key: &str, k: usize) -> Result<String, JsError> {
        self.lines(sample, query, key, k).map_err(js)
    }

    pub fn precision_grid(&self, k: usize) -> Result<Vec<f64>, JsError> {
        self.precisions(k).map_err(js)
    }

    pub fn eval_len(&self) -> usize {
        self.eval.len()
    }
}

/// Losses and final query spread of a full-loss and an alignment-only run.
#[wasm_bindgen]
pub struct CollapseTrace {
    full_loss: Vec<f64>,
    align_loss: Vec<f64>,
    full_spread: f64,
    align_spread: f64,
}

#[wasm_bindgen]
impl CollapseTrace {
    pub fn full_loss(&self) -> Vec<f64> {
        self.full_loss.clone()
    }

    pub fn align_loss(&self) -> Vec<f64> {
        self.align_loss.clone()
    }

    /// Mean pairwise cosine between queries after full-loss training.
    pub fn full_spread(&self) -> f64 {
        self.full_spread
    }

    pub fn align_spread(&self) -> f64 {
        self.align_spread
    }
}

fn spread(p: &RetrieverParams, data: &[TriModalSample]) -> Result<f64> {
    let d = p.dim();
    let stack = |f: fn(&TriModalSample) -> &FeatureVec| {
        Tensor::matrix(data.len(), d, data.iter().flat_map(|s| f(s).to_f64()).collect())
    };
    mean_pairwise_cosine(&p.query_batch(&stack(|s| &s.visual)?, &stack(|s| &s.tactile)?)?)
}

pub fn collapse(epochs: usize, samples: usize, seed: u64) -> Result<CollapseTrace> {
    let data = SynthWorld::new(32, 0.3, seed).samples(samples, CLASS_NAMES.len(), 0)?;
    let cfg = RetrieverTrainConfig {
        epochs,
        batch_size: 64,
        warmup_epochs: (epochs / 6).max(1).min(epochs),
        seed,
        ..RetrieverTrainConfig::default()
    };
    let w = RetrieverLossWeights::default();
    let (full, ft) = train_retriever(&data, &cfg, &w)?;
    let (align, at) = train_retriever(&data, &cfg, &w.alignment_only())?;
    let losses = |t: &[EpochMetrics]| t.iter().map(|m| m.loss).collect();
    Ok(CollapseTrace {
        full_loss: losses(&ft),
        align_loss: losses(&at),
        full_spread: spread(&full, &data)?,
        align_spread: spread(&align, &data)?,
    })
}

#[wasm_bindgen]
pub fn anti_collapse(epochs: usize, samples: usize, seed: u64) -> Result<CollapseTrace, JsError> {
    collapse(epochs, samples, seed).map_err(js)
}
