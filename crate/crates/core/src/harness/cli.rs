//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use super::experiments::{run_k_sweep, run_mask_ablation, run_query_ablation, run_subset_sweep};
use super::pipeline::{summarize, Pipeline, RunInputs};
use super::{ExperimentConfig, QueryMode, QUERY_ABLATION_GRID};
use crate::corpus::{vocab_stats, CorpusEntry, TactileCaption};
use crate::error::{Error, Result};
use crate::integrator::{IntegratorParams, ModalityMask};
use crate::retriever::{EpochMetrics, RetrieverParams, CHECKPOINT_NAME};

#[derive(Debug, Parser)]
#[command(name = "tactile-rag", version, about = "Visuo-tactile retrieval, fusion and evaluation")]
struct Cli {
    /// Line-oriented key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long = "prompt-dim", global = true)]
    prompt_dim: Option<usize>,
    /// Output directory for every artifact and report.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of retrieved entries.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Recaption a stratified synthetic subset and write shards.
    BuildCorpus,
    /// Build the exact index over the corpus and record its size.
    BuildIndex,
    /// Train the tactile-aware retriever.
    TrainRetriever,
    /// Train the integrator with the retriever frozen.
    TrainIntegrator,
    /// Print the top-K entries for one held-out sample.
    Retrieve {
        /// Position of the sample in the evaluation split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Describe the evaluation split and score the descriptions.
    Eval,
    /// Query-mode and modality-mask ablations.
    Ablate,
    /// Score against K.
    SweepK {
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5, 6, 7, 8, 9, 10])]
        ks: Vec<usize>,
    },
    /// Score against corpus subset size.
    SweepSubset {
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 2000, 4000])]
        sizes: Vec<usize>,
    },
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for pair in &cli.sets {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.dim {
        cfg.dim = d;
    }
    if let Some(d) = cli.prompt_dim {
        cfg.prompt_dim = d;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let started = Instant::now();
    let result = resolve(&cli).and_then(|cfg| dispatch(&cli.command, cfg, out));
    match result {
        Ok(()) => {
            let _ = writeln!(err, "done in {:.2}s", started.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_retriever(pipe: &Pipeline) -> Result<RetrieverParams> {
    RetrieverParams::load(&pipe.retriever_dir().join(CHECKPOINT_NAME), None)
}

/// The retriever when the configured query mode needs one.
fn maybe_retriever(pipe: &Pipeline) -> Result<Option<RetrieverParams>> {
    match pipe.cfg.query_mode {
        QueryMode::Fused => load_retriever(pipe).map(Some),
        _ => Ok(None),
    }
}

fn captions(entries: &[CorpusEntry]) -> Vec<TactileCaption> {
    entries.iter().map(|e| e.caption.clone()).collect()
}

fn dispatch(cmd: &Command, cfg: ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let pipe = Pipeline::new(cfg)?;
    match cmd {
        Command::BuildCorpus => {
            let entries = pipe.corpus_entries()?;
            let set = pipe.write_corpus(&entries)?;
            let stats = vocab_stats(entries.iter().map(|e| &e.caption), 5);
            write_text(&pipe.cfg.out.join("config.txt"), &pipe.cfg.to_text())?;
            writeln!(
                out,
                "wrote {} entries in {} shard(s) to {}",
                entries.len(),
                set.shard_paths.len(),
                pipe.corpus_dir().display()
            )
            .map_err(io_out)?;
            writeln!(
                out,
                "unique words {}, unique captions {}",
                stats.unique_word_count, stats.unique_caption_count
            )
            .map_err(io_out)?;
        }
        Command::BuildIndex => {
            let entries = pipe.load_entries()?;
            let index = pipe.index(&entries, pipe.cfg.key_mode)?;
            let meta = format!(
                "key_mode={}\nentries={}\ndim={}\npayload_bytes={}\n",
                index.key_mode().as_str(),
                index.len(),
                index.dim(),
                index.payload_bytes()
            );
            write_text(&pipe.cfg.out.join("index.txt"), &meta)?;
            write!(out, "{meta}").map_err(io_out)?;
        }
        Command::TrainRetriever => {
            let train = pipe.train_split()?;
            let (params, trace) = pipe.train_retriever(&train)?;
            let dir = pipe.retriever_dir();
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            params.save(&dir.join(CHECKPOINT_NAME))?;
            let mut text = format!("{}\n", EpochMetrics::HEADER);
            for m in &trace {
                text.push_str(&format!("{m}\n"));
            }
            write_text(&dir.join("trace.tsv"), &text)?;
            if let Some(last) = trace.last() {
                writeln!(out, "{}\n{last}", EpochMetrics::HEADER).map_err(io_out)?;
            }
        }
        Command::TrainIntegrator => {
            let entries = pipe.load_entries()?;
            let retriever = maybe_retriever(&pipe)?;
            let index = pipe.index(&entries, pipe.cfg.key_mode)?;
            let train = pipe.train_split()?;
            let retrieved = pipe.retrievals(pipe.cfg.query_mode, &train, retriever.as_ref(), &index, pipe.cfg.k)?;
            let (params, trace) = pipe.train_integrator(&train, &retrieved, &captions(&entries), pipe.cfg.mask)?;
            let dir = pipe.integrator_dir();
            params.save(&dir)?;
            let mut text = String::from("epoch\tlr\tloss\n");
            for e in &trace {
                text.push_str(&format!("{e}\n"));
            }
            write_text(&dir.join("trace.tsv"), &text)?;
            if let Some(last) = trace.last() {
                writeln!(out, "epoch\tlr\tloss\n{last}").map_err(io_out)?;
            }
        }
        Command::Retrieve { sample } => {
            let entries = pipe.load_entries()?;
            let retriever = maybe_retriever(&pipe)?;
            let index = pipe.index(&entries, pipe.cfg.key_mode)?;
            let eval = pipe.eval_split()?;
            let s = eval.get(*sample).ok_or_else(|| {
                Error::Argument(format!("sample {sample} is outside the {}-sample evaluation split", eval.len()))
            })?;
            let res = pipe.search(pipe.cfg.query_mode, std::slice::from_ref(s), retriever.as_ref(), &index, pipe.cfg.k)?;
            for h in &res[0].hits {
                writeln!(out, "{}\t{:.6}\t{}", h.id, h.score, h.caption).map_err(io_out)?;
            }
        }
        Command::Eval => {
            let started = Instant::now();
            let entries = pipe.load_entries()?;
            let retriever = maybe_retriever(&pipe)?;
            let index = pipe.index(&entries, pipe.cfg.key_mode)?;
            let integrator = IntegratorParams::load(&pipe.integrator_dir(), None, pipe.cfg.mask)?;
            let eval = pipe.eval_split()?;
            let retrieved = pipe.retrievals(pipe.cfg.query_mode, &eval, retriever.as_ref(), &index, pipe.cfg.k)?;
            let mut report = pipe.evaluate(&integrator, &eval, &retrieved)?;
            report.runtime_secs = started.elapsed().as_secs_f64();
            report.write(&pipe.cfg.out.join("eval.tsv"))?;
            let s = summarize(&report)?;
            writeln!(
                out,
                "mean {:.6} ± {:.6} over {} samples, exact {:.4}",
                s.mean, s.std, s.n, s.exact
            )
            .map_err(io_out)?;
        }
        Command::Ablate => {
            let entries = pipe.load_entries()?;
            let retriever = load_retriever(&pipe)?;
            let train = pipe.train_split()?;
            let eval = pipe.eval_split()?;
            let inputs = RunInputs {
                entries: &entries,
                retriever: Some(&retriever),
                train: &train,
                eval: &eval,
            };
            let (query, _) = run_query_ablation(&pipe, inputs, &QUERY_ABLATION_GRID)?;
            query.write(&pipe.cfg.out.join("ablation_query.tsv"))?;
            let mask = run_mask_ablation(&pipe, inputs, &ModalityMask::ALL)?;
            mask.write(&pipe.cfg.out.join("ablation_mask.tsv"))?;
            print_table(&query, out)?;
            print_table(&mask, out)?;
        }
        Command::SweepK { ks } => {
            let entries = pipe.load_entries()?;
            let retriever = maybe_retriever(&pipe)?;
            let train = pipe.train_split()?;
            let eval = pipe.eval_split()?;
            let inputs = RunInputs {
                entries: &entries,
                retriever: retriever.as_ref(),
                train: &train,
                eval: &eval,
            };
            let report = run_k_sweep(&pipe, inputs, ks)?;
            report.write(&pipe.cfg.out.join("sweep_k.tsv"))?;
            print_table(&report, out)?;
        }
        Command::SweepSubset { sizes } => {
            let retriever = maybe_retriever(&pipe)?;
            let train = pipe.train_split()?;
            let eval = pipe.eval_split()?;
            let report = run_subset_sweep(&pipe.cfg, retriever.as_ref(), &train, &eval, sizes)?;
            report.write(&pipe.cfg.out.join("sweep_subset.tsv"))?;
            print_table(&report, out)?;
        }
    }
    Ok(())
}

fn print_table(report: &super::EvalReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{}", report.columns.join("\t")).map_err(io_out)?;
    for row in &report.rows {
        writeln!(out, "{}", row.join("\t")).map_err(io_out)?;
    }
    Ok(())
}

