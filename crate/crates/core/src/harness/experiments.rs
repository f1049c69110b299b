use super::pipeline::{summarize, Pipeline, RunInputs};
use super::{EvalReport, ExperimentConfig, QueryMode};
use crate::corpus::synthetic::SynthWorld;
use crate::corpus::vocab_stats;
use crate::error::{Error, Result};
use crate::features::TriModalSample;
use crate::index::{KeyMode, RetrievalResult};
use crate::integrator::ModalityMask;
use crate::retriever::RetrieverParams;

/// The five (query, key) combinations of the retrieval ablation.
pub const QUERY_ABLATION_GRID: [(QueryMode, KeyMode); 5] = [
    (QueryMode::Image, KeyMode::Image),
    (QueryMode::Image, KeyMode::Text),
    (QueryMode::Tactile, KeyMode::Image),
    (QueryMode::Tactile, KeyMode::Text),
    (QueryMode::Fused, KeyMode::Text),
];

/// Retrieval quality of one (query, key) combination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationRow {
    pub query: QueryMode,
    pub key: KeyMode,
    /// Share of hits whose material equals the sample's.
    pub precision: f64,
    /// Share of hits with the sample's appearance but another material.
    pub look_confusion: f64,
}

fn retrieval_quality(
    world: &SynthWorld,
    samples: &[TriModalSample],
    results: &[RetrievalResult],
) -> Result<(f64, f64)> {
    let (mut relevant, mut confused, mut total) = (0usize, 0usize, 0usize);
    for (s, res) in samples.iter().zip(results) {
        let m = s
            .material
            .ok_or_else(|| Error::Argument(format!("sample {} has no material label", s.id)))?;
        let look = world.sample_appearance(s.id);
        for h in &res.hits {
            let same = SynthWorld::material_of(&h.class_name) == m;
            relevant += usize::from(same);
            confused += usize::from(!same && world.corpus_appearance(h.id) == look);
            total += 1;
        }
    }
    if total == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((relevant as f64 / total as f64, confused as f64 / total as f64))
}

/// Precision@K by material for each (query, key) pair in `grid`, on the
/// evaluation split. Rows are computed independently of each other.
pub fn run_query_ablation(
    pipe: &Pipeline,
    inputs: RunInputs<'_>,
    grid: &[(QueryMode, KeyMode)],
) -> Result<(EvalReport, Vec<AblationRow>)> {
    let k = pipe.cfg.k;
    let mut report = EvalReport::new(
        &format!("precision@{k} by material label"),
        &pipe.cfg,
        &["query", "key", "precision_at_k", "look_confusion", "hits"],
    );
    report.notes.push("queries are L2-normalized for every query mode".into());
    report
        .notes
        .push("look_confusion: hits sharing the query image's appearance but not its material".into());
    let mut rows = Vec::with_capacity(grid.len());
    for &(query, key) in grid {
        let index = pipe.index(inputs.entries, key)?;
        let results = pipe.search(query, inputs.eval, inputs.retriever, &index, k)?;
        let (precision, look_confusion) = retrieval_quality(pipe.world(), inputs.eval, &results)?;
        report.push_row(vec![
            query.as_str().to_string(),
            key.as_str().to_string(),
            format!("{precision:.6}"),
            format!("{look_confusion:.6}"),
            results.iter().map(RetrievalResult::len).sum::<usize>().to_string(),
        ]);
        rows.push(AblationRow {
            query,
            key,
            precision,
            look_confusion,
        });
    }
    Ok((report, rows))
}

fn summary_cells(report: &EvalReport) -> Result<Vec<String>> {
    let s = summarize(report)?;
    Ok(vec![
        format!("{:.6}", s.mean),
        format!("{:.6}", s.std),
        format!("{:.6}", s.exact),
    ])
}

/// Trains and evaluates one integrator per modality mask.
pub fn run_mask_ablation(
    pipe: &Pipeline,
    inputs: RunInputs<'_>,
    masks: &[ModalityMask],
) -> Result<EvalReport> {
    let mut report = EvalReport::new(
        "caption-embedding cosine (not a judge score)",
        &pipe.cfg,
        &["mask", "mean_score", "std_score", "exact_rate"],
    );
    for &mask in masks {
        let run = pipe.run_integrator(inputs, mask, pipe.cfg.k)?;
        let mut row = vec![mask.as_str().to_string()];
        row.extend(summary_cells(&run)?);
        report.push_row(row);
    }
    Ok(report)
}

/// Score against retrieval size. Each row is a full single-K run, so it
/// matches a separate run with the same config and that K.
pub fn run_k_sweep(pipe: &Pipeline, inputs: RunInputs<'_>, ks: &[usize]) -> Result<EvalReport> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut report = EvalReport::new(
        "caption-embedding cosine (not a judge score)",
        &pipe.cfg,
        &["k", "mean_score", "std_score", "exact_rate"],
    );
    for k in ks {
        let run = pipe.run_integrator(inputs, pipe.cfg.mask, k)?;
        let mut row = vec![k.to_string()];
        row.extend(summary_cells(&run)?);
        report.push_row(row);
    }
    Ok(report)
}

/// Score against corpus size. Every size draws its own stratified subset
/// with the shared seed; the retriever and the splits stay fixed.
pub fn run_subset_sweep(
    cfg: &ExperimentConfig,
    retriever: Option<&RetrieverParams>,
    train: &[TriModalSample],
    eval: &[TriModalSample],
    sizes: &[usize],
) -> Result<EvalReport> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut report = EvalReport::new(
        "caption-embedding cosine (not a judge score)",
        cfg,
        &[
            "size",
            "unique_words",
            "unique_captions",
            "top_words",
            "mean_score",
            "std_score",
            "exact_rate",
        ],
    );
    for size in sizes {
        let pipe = Pipeline::new(ExperimentConfig {
            subset_size: size,
            ..cfg.clone()
        })?;
        let entries = pipe.corpus_entries()?;
        let stats = vocab_stats(entries.iter().map(|e| &e.caption), 3);
        let inputs = RunInputs {
            entries: &entries,
            retriever,
            train,
            eval,
        };
        let run = pipe.run_integrator(inputs, cfg.mask, cfg.k)?;
        let top: Vec<String> = stats.top_words.iter().map(|(w, n)| format!("{w}:{n}")).collect();
        let mut row = vec![
            size.to_string(),
            stats.unique_word_count.to_string(),
            stats.unique_caption_count.to_string(),
            top.join(","),
        ];
        row.extend(summary_cells(&run)?);
        report.push_row(row);
    }
    Ok(report)
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
            train_samples: 24,
            eval_samples: 6,
            dim: 16,
            prompt_dim: 16,
            retriever_epochs: 2,
            retriever_batch: 12,
            retriever_warmup: 1,
            k: 3,
            ..ExperimentConfig::default()
        }
    }

    struct Fixture {
        pipe: Pipeline,
        entries: Vec<crate::corpus::CorpusEntry>,
        retriever: RetrieverParams,
        train: Vec<TriModalSample>,
        eval: Vec<TriModalSample>,
    }

    impl Fixture {
        fn new(cfg: ExperimentConfig) -> Self {
            let pipe = Pipeline::new(cfg).unwrap();
            let train = pipe.train_split().unwrap();
            let (retriever, _) = pipe.train_retriever(&train).unwrap();
            Fixture {
                entries: pipe.corpus_entries().unwrap(),
                eval: pipe.eval_split().unwrap(),
                pipe,
                retriever,
                train,
            }
        }

        fn inputs(&self) -> RunInputs<'_> {
            RunInputs {
                entries: &self.entries,
                retriever: Some(&self.retriever),
                train: &self.train,
                eval: &self.eval,
            }
        }
    }

    #[test]
    fn five_configs_give_five_rows_and_rows_are_independent() {
        let f = Fixture::new(small());
        let (full, rows) = run_query_ablation(&f.pipe, f.inputs(), &QUERY_ABLATION_GRID).unwrap();
        assert_eq!(full.rows.len(), 5);
        assert_eq!(rows.len(), 5);
        let (part, _) = run_query_ablation(&f.pipe, f.inputs(), &QUERY_ABLATION_GRID[2..4]).unwrap();
        assert_eq!(part.rows, full.rows[2..4]);
    }

    #[test]
    fn k_sweep_sorts_and_matches_single_runs() {
        let f = Fixture::new(small());
        let sweep = run_k_sweep(&f.pipe, f.inputs(), &[4, 1, 4]).unwrap();
        let ks: Vec<f64> = sweep.column("k").unwrap();
        assert_eq!(ks, [1.0, 4.0]);
        let single = run_k_sweep(&f.pipe, f.inputs(), &[4]).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0], sweep.rows[1]);
        let direct = f.pipe.run_integrator(f.inputs(), f.pipe.cfg.mask, 4).unwrap();
        assert_eq!(sweep.column("mean_score").unwrap()[1], format!("{:.6}", direct.mean()).parse::<f64>().unwrap());
    }

    #[test]
    fn subset_sweep_echoes_vocab_stats() {
        let f = Fixture::new(small());
        let r = run_subset_sweep(&f.pipe.cfg, Some(&f.retriever), &f.train, &f.eval, &[16, 8]).unwrap();
        assert_eq!(r.column("size").unwrap(), [8.0, 16.0]);
        assert!(r.column("unique_words").unwrap().iter().all(|&w| w > 0.0));
        let err = run_subset_sweep(&f.pipe.cfg, Some(&f.retriever), &f.train, &f.eval, &[81]);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn mask_rows_follow_the_request() {
        let f = Fixture::new(small());
        let r = run_mask_ablation(&f.pipe, f.inputs(), &ModalityMask::ALL).unwrap();
        let names: Vec<&str> = r.rows.iter().map(|row| row[0].as_str()).collect();
        assert_eq!(names, ["image", "text", "both"]);
    }
}
