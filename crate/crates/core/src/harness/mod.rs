//! Experiment configuration, reports, and the end-to-end runner.

pub mod cli;
mod experiments;
mod pipeline;

pub use experiments::{
    run_k_sweep, run_mask_ablation, run_query_ablation, run_subset_sweep, AblationRow,
    QUERY_ABLATION_GRID,
};
pub use pipeline::{summarize, EvalSummary, Pipeline, RunInputs, EVAL_ID_BASE, TRAIN_ID_BASE};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::TactileCaption;
use crate::error::{Error, Result};
use crate::features::CaptionEmbedder;
use crate::index::KeyMode;
use crate::integrator::ModalityMask;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// What the retrieval query is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QueryMode {
    Image,
    Tactile,
    /// The trained retriever's query `Q`.
    #[default]
    Fused,
}

impl QueryMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(QueryMode::Image),
            "tactile" => Ok(QueryMode::Tactile),
            "fused" | "query" => Ok(QueryMode::Fused),
            _ => Err(Error::Argument(format!(
                "query mode must be image, tactile or fused, got {s:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::Image => "image",
            QueryMode::Tactile => "tactile",
            QueryMode::Fused => "fused",
        }
    }
}

/// Every knob of a run. Serialized as `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    /// Corpus directory; defaults to `<out>/corpus`.
    pub corpus: Option<PathBuf>,
    pub seed: u64,
    pub dim: usize,
    pub prompt_dim: usize,
    pub noise: f64,
    /// Extra appearance weight in synthetic images; raises the confound.
    pub look_weight: f64,
    pub classes: usize,
    pub per_class: usize,
    pub holdout_classes: usize,
    pub subset_size: usize,
    pub shard_capacity: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub query_mode: QueryMode,
    pub key_mode: KeyMode,
    pub k: usize,
    pub mask: ModalityMask,
    pub retriever_epochs: usize,
    pub retriever_batch: usize,
    pub retriever_lr: f64,
    pub retriever_wd: f64,
    pub retriever_warmup: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau: f64,
    pub integrator_epochs: usize,
    pub integrator_batch: usize,
    pub integrator_lr: f64,
    pub integrator_wd: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out: PathBuf::from("runs"),
            corpus: None,
            seed: 0,
            dim: 64,
            prompt_dim: 128,
            noise: 0.3,
            look_weight: crate::corpus::synthetic::LOOK_WEIGHT,
            classes: 192,
            per_class: 25,
            holdout_classes: 48,
            subset_size: 1000,
            shard_capacity: 10_000,
            train_samples: 1024,
            eval_samples: 256,
            query_mode: QueryMode::Fused,
            key_mode: KeyMode::Text,
            k: 5,
            mask: ModalityMask::Both,
            retriever_epochs: 60,
            retriever_batch: 256,
            retriever_lr: 3e-4,
            retriever_wd: 0.02,
            retriever_warmup: 10,
            lambda1: 0.2,
            lambda2: 10.0,
            lambda3: 0.1,
            tau: 0.07,
            integrator_epochs: 30,
            integrator_batch: 8,
            integrator_lr: 3e-3,
            integrator_wd: 0.02,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl ExperimentConfig {
    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "out" => self.out = PathBuf::from(v),
            "corpus" => self.corpus = (!v.is_empty()).then(|| PathBuf::from(v)),
            "seed" => self.seed = num(key, v)?,
            "dim" => self.dim = num(key, v)?,
            "prompt_dim" => self.prompt_dim = num(key, v)?,
            "noise" => self.noise = num(key, v)?,
            "look_weight" => self.look_weight = num(key, v)?,
            "classes" => self.classes = num(key, v)?,
            "per_class" => self.per_class = num(key, v)?,
            "holdout_classes" => self.holdout_classes = num(key, v)?,
            "subset_size" => self.subset_size = num(key, v)?,
            "shard_capacity" => self.shard_capacity = num(key, v)?,
            "train_samples" => self.train_samples = num(key, v)?,
            "eval_samples" => self.eval_samples = num(key, v)?,
            "query_mode" => self.query_mode = QueryMode::parse(v)?,
            "key_mode" => self.key_mode = KeyMode::parse(v)?,
            "k" => self.k = num(key, v)?,
            "mask" => self.mask = ModalityMask::parse(v)?,
            "retriever_epochs" => self.retriever_epochs = num(key, v)?,
            "retriever_batch" => self.retriever_batch = num(key, v)?,
            "retriever_lr" => self.retriever_lr = num(key, v)?,
            "retriever_wd" => self.retriever_wd = num(key, v)?,
            "retriever_warmup" => self.retriever_warmup = num(key, v)?,
            "lambda1" => self.lambda1 = num(key, v)?,
            "lambda2" => self.lambda2 = num(key, v)?,
            "lambda3" => self.lambda3 = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "integrator_epochs" => self.integrator_epochs = num(key, v)?,
            "integrator_batch" => self.integrator_batch = num(key, v)?,
            "integrator_lr" => self.integrator_lr = num(key, v)?,
            "integrator_wd" => self.integrator_wd = num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("out", self.out.display().to_string()),
            ("corpus", self.corpus.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("seed", self.seed.to_string()),
            ("dim", self.dim.to_string()),
            ("prompt_dim", self.prompt_dim.to_string()),
            ("noise", self.noise.to_string()),
            ("look_weight", self.look_weight.to_string()),
            ("classes", self.classes.to_string()),
            ("per_class", self.per_class.to_string()),
            ("holdout_classes", self.holdout_classes.to_string()),
            ("subset_size", self.subset_size.to_string()),
            ("shard_capacity", self.shard_capacity.to_string()),
            ("train_samples", self.train_samples.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("query_mode", self.query_mode.as_str().to_string()),
            ("key_mode", self.key_mode.as_str().to_string()),
            ("k", self.k.to_string()),
            ("mask", self.mask.as_str().to_string()),
            ("retriever_epochs", self.retriever_epochs.to_string()),
            ("retriever_batch", self.retriever_batch.to_string()),
            ("retriever_lr", self.retriever_lr.to_string()),
            ("retriever_wd", self.retriever_wd.to_string()),
            ("retriever_warmup", self.retriever_warmup.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("lambda3", self.lambda3.to_string()),
            ("tau", self.tau.to_string()),
            ("integrator_epochs", self.integrator_epochs.to_string()),
            ("integrator_batch", self.integrator_batch.to_string()),
            ("integrator_lr", self.integrator_lr.to_string()),
            ("integrator_wd", self.integrator_wd.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// The config embedded in a serialized report's `# config:` lines.
    pub fn from_report(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            if let Some(pair) = line.strip_prefix("# config: ") {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad config line {line:?}")))?;
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.classes == 0 || self.per_class == 0 {
            return Err(Error::Config("classes and per_class must be positive".into()));
        }
        if self.holdout_classes >= self.classes {
            return Err(Error::Config(format!(
                "holdout_classes {} leaves no training classes out of {}",
                self.holdout_classes, self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise must lie in [0, 1), got {}", self.noise)));
        }
        if self.train_samples < 2 || self.eval_samples == 0 {
            return Err(Error::Config("need at least 2 training and 1 evaluation sample".into()));
        }
        Ok(())
    }
}

/// A tab-separated result table with a `#` header block.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub notes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Per-sample scores in `[-1, 1]`, when the table is per sample.
    pub scores: Vec<f64>,
    /// Wall time; kept out of the serialized table so reruns compare equal.
    pub runtime_secs: f64,
}

impl EvalReport {
    pub fn new(metric: &str, cfg: &ExperimentConfig, columns: &[&str]) -> Self {
        EvalReport {
            metric: metric.to_string(),
            seed: cfg.seed,
            config: cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            notes: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            scores: Vec::new(),
            runtime_secs: 0.0,
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    /// Population standard deviation of the scores.
    pub fn std_dev(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        (self.scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / self.scores.len() as f64).sqrt()
    }

    /// Column values of every row as numbers.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Argument(format!("report has no column {name:?}")))?;
        self.rows.iter().map(|r| num(name, &r[i])).collect()
    }

    /// The config this report was produced with.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# metric: {}", self.metric);
        let _ = writeln!(s, "# tool: {TOOL_VERSION}");
        let _ = writeln!(s, "# seed: {}", self.seed);
        for (k, v) in &self.config {
            let _ = writeln!(s, "# config: {k}={v}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "# note: {n}");
        }
        if !self.scores.is_empty() {
            let _ = writeln!(
                s,
                "# summary: mean={:.6} std={:.6} n={}",
                self.mean(),
                self.std_dev(),
                self.scores.len()
            );
        }
        let _ = writeln!(s, "{}", self.columns.join("\t"));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join("\t"));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Similarity of a predicted and a reference caption: cosine of their
/// order-insensitive embeddings.
pub fn score_description(
    predicted: &TactileCaption,
    ground_truth: &TactileCaption,
    embedder: &CaptionEmbedder,
) -> Result<f64> {
    let a = embedder.embed(predicted)?;
    let b = embedder.embed(ground_truth)?;
    Ok(a.cosine(&b)?.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::captioner::MATERIAL_LEXICON;
    use crate::corpus::validate_caption;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_round_trips_through_text() {
        let mut c = ExperimentConfig::default();
        c.set("noise", "0.125").unwrap();
        c.set("query_mode", "tactile").unwrap();
        c.set("corpus", "/tmp/x").unwrap();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn config_errors_name_the_line() {
        let e = ExperimentConfig::parse("# c\nseed=1\nbogus=2\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(ExperimentConfig::parse("k=abc").is_err());
        assert!(ExperimentConfig::parse("just words").is_err());
    }

    #[test]
    fn report_header_and_rows() {
        let cfg = ExperimentConfig::default();
        let mut r = EvalReport::new("m", &cfg, &["a", "b"]);
        r.push_row(vec!["1".into(), "x".into()]);
        r.scores = vec![0.5, 1.0];
        let t = r.to_tsv();
        assert!(t.starts_with("# metric: m\n"));
        assert!(t.contains("# config: seed=0\n"));
        assert!(t.contains("# summary: mean=0.750000 std=0.250000 n=2\n"));
        assert!(t.ends_with("a\tb\n1\tx\n"));
        assert_eq!(r.config().unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_report(&t).unwrap(), cfg);
        assert_eq!(r.column("a").unwrap(), [1.0]);
    }

    #[test]
    fn identical_and_reordered_captions_score_one() {
        let e = CaptionEmbedder::new(64).unwrap();
        let a = validate_caption("soft, rough, cold, dense, light").unwrap();
        let b = validate_caption("dense, light, soft, cold, rough").unwrap();
        assert!((score_description(&a, &a, &e).unwrap() - 1.0).abs() < 1e-6);
        assert!((score_description(&a, &b, &e).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_material_pairs_score_below_same_material() {
        let e = CaptionEmbedder::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = |m: usize, rng: &mut ChaCha8Rng| {
            let mut w = MATERIAL_LEXICON[m].1.to_vec();
            w.shuffle(rng);
            TactileCaption::new(&w[..5]).unwrap()
        };
        let (mut same, mut cross, mut n_cross) = (0.0, 0.0, 0);
        for i in 0..500 {
            let m = i % MATERIAL_LEXICON.len();
            let a = draw(m, &mut rng);
            same += score_description(&a, &draw(m, &mut rng), &e).unwrap();
            let other = (m + 1 + i % 11) % MATERIAL_LEXICON.len();
            let b = draw(other, &mut rng);
            let disjoint = a.adjectives().iter().all(|w| !b.adjectives().contains(w));
            if disjoint {
                cross += score_description(&a, &b, &e).unwrap();
                n_cross += 1;
            }
        }
        assert!(n_cross > 100);
        assert!(cross / (n_cross as f64) < same / 500.0);
    }
}
