use std::path::PathBuf;

use super::{score_description, EvalReport, ExperimentConfig, QueryMode};
use crate::corpus::synthetic::{synthetic_manifest, SynthWorld};
use crate::corpus::{
    build_shards, load_corpus, recaption, stratified_sample, CorpusEntry, ManifestRecord, ShardSet,
    StubCaptioner, TactileCaption, validate_caption,
};
use crate::error::{Error, Result};
use crate::features::{CaptionEmbedder, FeatureVec, TriModalSample};
use crate::index::{KeyMode, RetrievalResult, VectorIndex};
use crate::integrator::{
    as_caption, fit_on_retrievals, AdjectiveVocab, IntegratorConfig, IntegratorEpoch, IntegratorParams,
    IntegratorTrainConfig, ModalityMask, Retrieved,
};
use crate::numcore::Tensor;
use crate::retriever::{
    default_heads, fit_retriever, EpochMetrics, RetrieverLossWeights, RetrieverParams, RetrieverTrainConfig,
};

/// First sample id of the training split.
pub const TRAIN_ID_BASE: u64 = 1_000_000;
/// First sample id of the evaluation split.
pub const EVAL_ID_BASE: u64 = 2_000_000;

const CAPTION_RETRIES: usize = 2;

/// Aggregate of one evaluation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    /// Fraction of predictions whose adjective set equals the ground truth.
    pub exact: f64,
    pub n: usize,
}

/// Builds every artifact of a run from an [`ExperimentConfig`].
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    world: SynthWorld,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let world = SynthWorld {
            look_weight: cfg.look_weight,
            ..SynthWorld::new(cfg.dim, cfg.noise, cfg.seed)
        };
        Ok(Pipeline { cfg, world })
    }

    pub fn world(&self) -> &SynthWorld {
        &self.world
    }

    pub fn manifest(&self) -> Vec<ManifestRecord> {
        synthetic_manifest(self.cfg.classes, self.cfg.per_class)
    }

    /// Stratified subset of the manifest, recaptioned and embedded.
    pub fn corpus_entries(&self) -> Result<Vec<CorpusEntry>> {
        let subset = stratified_sample(&self.manifest(), self.cfg.subset_size, self.cfg.seed)?;
        let mut captioner = StubCaptioner;
        subset
            .iter()
            .map(|r| {
                let caption = recaption(r, &mut captioner, CAPTION_RETRIES)?;
                self.world.corpus_entry(r, caption)
            })
            .collect()
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.cfg.corpus_dir()
    }

    pub fn retriever_dir(&self) -> PathBuf {
        self.cfg.out.join("retriever")
    }

    pub fn integrator_dir(&self) -> PathBuf {
        self.cfg.out.join("integrator")
    }

    pub fn write_corpus(&self, entries: &[CorpusEntry]) -> Result<ShardSet> {
        build_shards(entries, self.cfg.shard_capacity, &self.corpus_dir())
    }

    pub fn load_entries(&self) -> Result<Vec<CorpusEntry>> {
        let shards = load_corpus(&self.corpus_dir())?;
        Ok(shards.into_iter().flat_map(|s| s.entries).collect())
    }

    pub fn index(&self, entries: &[CorpusEntry], key: KeyMode) -> Result<VectorIndex> {
        VectorIndex::from_entries(entries, key)
    }

    /// Class ids kept for training; the last `holdout_classes` are held out.
    pub fn train_class_ids(&self) -> Vec<usize> {
        (0..self.cfg.classes - self.cfg.holdout_classes).collect()
    }

    pub fn holdout_class_ids(&self) -> Vec<usize> {
        (self.cfg.classes - self.cfg.holdout_classes..self.cfg.classes).collect()
    }

    pub fn train_split(&self) -> Result<Vec<TriModalSample>> {
        self.world
            .samples_from(self.cfg.train_samples, &self.train_class_ids(), TRAIN_ID_BASE)
    }

    pub fn eval_split(&self) -> Result<Vec<TriModalSample>> {
        self.world
            .samples_from(self.cfg.eval_samples, &self.holdout_class_ids(), EVAL_ID_BASE)
    }

    pub fn loss_weights(&self) -> RetrieverLossWeights {
        RetrieverLossWeights {
            lambda1: self.cfg.lambda1,
            lambda2: self.cfg.lambda2,
            lambda3: self.cfg.lambda3,
            tau: self.cfg.tau,
        }
    }

    pub fn retriever_config(&self) -> RetrieverTrainConfig {
        RetrieverTrainConfig {
            epochs: self.cfg.retriever_epochs,
            batch_size: self.cfg.retriever_batch,
            learning_rate: self.cfg.retriever_lr,
            weight_decay: self.cfg.retriever_wd,
            warmup_epochs: self.cfg.retriever_warmup,
            seed: self.cfg.seed,
            heads: None,
            checkpoint_dir: None,
        }
    }

    pub fn train_retriever(&self, train: &[TriModalSample]) -> Result<(RetrieverParams, Vec<EpochMetrics>)> {
        let cfg = self.retriever_config();
        let mut params = RetrieverParams::new(self.cfg.dim, default_heads(self.cfg.dim), self.cfg.seed)?;
        let trace = fit_retriever(&mut params, train, &cfg, &self.loss_weights())?;
        Ok((params, trace))
    }

    /// Query vectors for `mode`. The fused mode runs the retriever.
    pub fn queries(
        &self,
        mode: QueryMode,
        samples: &[TriModalSample],
        retriever: Option<&RetrieverParams>,
    ) -> Result<Vec<FeatureVec>> {
        match mode {
            QueryMode::Image => Ok(samples.iter().map(|s| s.visual.clone()).collect()),
            QueryMode::Tactile => Ok(samples.iter().map(|s| s.tactile.clone()).collect()),
            QueryMode::Fused => {
                let r = retriever.ok_or_else(|| {
                    Error::State("fused query mode needs trained retriever parameters".into())
                })?;
                if samples.is_empty() {
                    return Ok(Vec::new());
                }
                let d = r.dim();
                let stack = |f: fn(&TriModalSample) -> &FeatureVec| {
                    Tensor::matrix(samples.len(), d, samples.iter().flat_map(|s| f(s).to_f64()).collect())
                };
                let q = r.query_batch(&stack(|s| &s.visual)?, &stack(|s| &s.tactile)?)?;
                (0..samples.len())
                    .map(|i| FeatureVec::from_f64(&q.data()[i * d..(i + 1) * d]))
                    .collect()
            }
        }
    }

    /// Top-`k` hits for every sample; `k = 0` yields empty results.
    pub fn search(
        &self,
        mode: QueryMode,
        samples: &[TriModalSample],
        retriever: Option<&RetrieverParams>,
        index: &VectorIndex,
        k: usize,
    ) -> Result<Vec<RetrievalResult>> {
        if k == 0 {
            return Ok(vec![RetrievalResult::default(); samples.len()]);
        }
        self.queries(mode, samples, retriever)?
            .iter()
            .map(|q| index.topk(q, k))
            .collect()
    }

    pub fn retrievals(
        &self,
        mode: QueryMode,
        samples: &[TriModalSample],
        retriever: Option<&RetrieverParams>,
        index: &VectorIndex,
        k: usize,
    ) -> Result<Vec<Retrieved>> {
        self.search(mode, samples, retriever, index, k)?
            .iter()
            .map(|r| Retrieved::from_result(r, self.cfg.dim))
            .collect()
    }

    pub fn integrator_config(&self, mask: ModalityMask) -> IntegratorConfig {
        IntegratorConfig {
            mask,
            ..IntegratorConfig::new(self.cfg.dim, self.cfg.prompt_dim)
        }
    }

    pub fn integrator_train_config(&self, k: usize) -> IntegratorTrainConfig {
        IntegratorTrainConfig {
            epochs: self.cfg.integrator_epochs,
            batch_size: self.cfg.integrator_batch,
            learning_rate: self.cfg.integrator_lr,
            weight_decay: self.cfg.integrator_wd,
            k,
            seed: self.cfg.seed,
        }
    }

    /// Trains an integrator on precomputed retrievals. The vocabulary comes
    /// from the training captions and the corpus captions.
    pub fn train_integrator(
        &self,
        train: &[TriModalSample],
        retrieved: &[Retrieved],
        corpus_captions: &[TactileCaption],
        mask: ModalityMask,
    ) -> Result<(IntegratorParams, Vec<IntegratorEpoch>)> {
        let captions: Vec<TactileCaption> =
            train.iter().map(|s| validate_caption(&s.caption)).collect::<Result<_>>()?;
        let vocab = AdjectiveVocab::from_captions(captions.iter().chain(corpus_captions));
        let mut params = IntegratorParams::new(self.integrator_config(mask), vocab, self.cfg.seed)?;
        let k = retrieved.first().map_or(0, Retrieved::k);
        let trace = fit_on_retrievals(&mut params, train, retrieved, &self.integrator_train_config(k))?;
        Ok((params, trace))
    }

    /// Describes every evaluation sample and scores it against its
    /// ground-truth caption.
    pub fn evaluate(
        &self,
        integrator: &IntegratorParams,
        eval: &[TriModalSample],
        retrieved: &[Retrieved],
    ) -> Result<EvalReport> {
        if retrieved.len() != eval.len() {
            return Err(Error::Argument(format!(
                "{} retrievals for {} evaluation samples",
                retrieved.len(),
                eval.len()
            )));
        }
        let embedder = CaptionEmbedder::new(self.cfg.dim)?;
        let mut report = EvalReport::new(
            "caption-embedding cosine (not a judge score)",
            &self.cfg,
            &["id", "material", "ground_truth", "prediction", "score", "exact"],
        );
        report.notes.push(format!(
            "evaluation on {} held-out classes; queries are L2-normalized for every query mode",
            self.cfg.holdout_classes
        ));
        for (s, r) in eval.iter().zip(retrieved) {
            let gt = validate_caption(&s.caption)?;
            let words = integrator.describe(&s.visual, &s.tactile, r)?;
            let pred = as_caption(&words)?;
            let score = score_description(&pred, &gt, &embedder)?;
            let exact = pred.canonical() == gt.canonical();
            report.scores.push(score);
            report.push_row(vec![
                s.id.to_string(),
                s.material.map_or_else(String::new, |m| m.to_string()),
                gt.to_string(),
                pred.to_string(),
                format!("{score:.6}"),
                u8::from(exact).to_string(),
            ]);
        }
        Ok(report)
    }
}

/// Everything a downstream integrator run needs besides its own settings.
#[derive(Clone, Copy, Debug)]
pub struct RunInputs<'a> {
    pub entries: &'a [CorpusEntry],
    pub retriever: Option<&'a RetrieverParams>,
    pub train: &'a [TriModalSample],
    pub eval: &'a [TriModalSample],
}

impl Pipeline {
    /// One integrator run: retrieve for both splits under the configured
    /// query and key modes, train with `mask` at `k`, and evaluate.
    pub fn run_integrator(&self, inputs: RunInputs<'_>, mask: ModalityMask, k: usize) -> Result<EvalReport> {
        let index = self.index(inputs.entries, self.cfg.key_mode)?;
        let mode = self.cfg.query_mode;
        let train_r = self.retrievals(mode, inputs.train, inputs.retriever, &index, k)?;
        let eval_r = self.retrievals(mode, inputs.eval, inputs.retriever, &index, k)?;
        let captions: Vec<TactileCaption> = inputs.entries.iter().map(|e| e.caption.clone()).collect();
        let (params, _) = self.train_integrator(inputs.train, &train_r, &captions, mask)?;
        self.evaluate(&params, inputs.eval, &eval_r)
    }
}

/// Mean, spread and exact-match rate of a per-sample report.
pub fn summarize(report: &EvalReport) -> Result<EvalSummary> {
    let exact = report.column("exact")?;
    let n = exact.len();
    Ok(EvalSummary {
        mean: report.mean(),
        std: report.std_dev(),
        exact: if n == 0 { 0.0 } else { exact.iter().sum::<f64>() / n as f64 },
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            classes: 8,
            per_class: 10,
            holdout_classes: 2,
            subset_size: 40,
            train_samples: 32,
            eval_samples: 8,
            dim: 16,
            prompt_dim: 16,
            retriever_epochs: 2,
            retriever_batch: 16,
            retriever_warmup: 1,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn splits_use_disjoint_classes() {
        let p = Pipeline::new(small()).unwrap();
        let train = p.train_split().unwrap();
        let eval = p.eval_split().unwrap();
        let held: Vec<u64> = p
            .holdout_class_ids()
            .iter()
            .map(|&c| SynthWorld::material_of(&crate::corpus::synthetic::class_name(c)))
            .collect();
        assert_eq!(train.len(), 32);
        assert!(eval.iter().all(|s| held.contains(&s.material.unwrap())));
        assert!(train.iter().all(|s| s.id >= TRAIN_ID_BASE && s.id < EVAL_ID_BASE));
    }

    #[test]
    fn corpus_is_stratified_and_valid() {
        let p = Pipeline::new(small()).unwrap();
        let entries = p.corpus_entries().unwrap();
        assert_eq!(entries.len(), 40);
        for c in 0..8 {
            let name = crate::corpus::synthetic::class_name(c);
            assert_eq!(entries.iter().filter(|e| e.class_name == name).count(), 5);
        }
    }

    #[test]
    fn fused_mode_requires_retriever() {
        let p = Pipeline::new(small()).unwrap();
        let eval = p.eval_split().unwrap();
        assert!(matches!(p.queries(QueryMode::Fused, &eval, None), Err(Error::State(_))));
        assert_eq!(p.queries(QueryMode::Image, &eval, None).unwrap()[0], eval[0].visual);
    }

    #[test]
    fn batched_fused_queries_match_single() {
        let p = Pipeline::new(small()).unwrap();
        let train = p.train_split().unwrap();
        let (r, _) = p.train_retriever(&train).unwrap();
        let q = p.queries(QueryMode::Fused, &train[..4], Some(&r)).unwrap();
        for (s, qi) in train.iter().zip(&q) {
            let single = r.query_forward(&s.visual, &s.tactile).unwrap();
            for (a, b) in single.values().iter().zip(qi.values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
