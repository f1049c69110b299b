use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactile-rag")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small(out: &Path) -> Vec<String> {
    let sets = [
        "classes=12",
        "per_class=10",
        "holdout_classes=4",
        "subset_size=60",
        "train_samples=48",
        "eval_samples=8",
        "dim=16",
        "prompt_dim=16",
        "retriever_epochs=2",
        "retriever_warmup=1",
        "retriever_batch=16",
        "integrator_epochs=1",
    ];
    let mut v = vec!["--out".to_string(), out.display().to_string()];
    for s in sets {
        v.push("--set".into());
        v.push(s.into());
    }
    v
}

fn step(cmd: &str, extra: &[&str], base: &[String]) -> Output {
    let mut args: Vec<&str> = vec![cmd];
    args.extend(extra);
    args.extend(base.iter().map(String::as_str));
    run(&args)
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_1() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_2_with_path() {
    let o = run(&["eval", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/run.cfg"));
}

#[test]
fn invalid_config_value_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "# comment\nk=0\n").unwrap();
    let o = run(&["build-corpus", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["build-corpus", "--set", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("sweep-subset"));
}

#[test]
fn retrieve_prints_k_lines() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    assert_eq!(step("build-corpus", &[], &base).status.code(), Some(0));
    // image queries need no retriever checkpoint
    let o = step("retrieve", &["--k", "5", "--set", "query_mode=image"], &base);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    for l in lines {
        let cols: Vec<&str> = l.split('\t').collect();
        assert_eq!(cols.len(), 3);
        cols[0].parse::<u64>().unwrap();
        cols[1].parse::<f64>().unwrap();
        assert_eq!(cols[2].split(", ").count(), 5);
    }
    // the fused mode without a trained retriever is an I/O error naming the file
    let o = step("retrieve", &[], &base);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("retriever.rtck"));
}

#[test]
fn full_pipeline_and_grids() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    for cmd in ["build-corpus", "build-index", "train-retriever", "train-integrator", "eval"] {
        let o = step(cmd, &[], &base);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    let report = std::fs::read_to_string(dir.path().join("eval.tsv")).unwrap();
    assert!(report.starts_with("# metric: "));
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 1 + 8);

    let o = step("ablate", &[], &base);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let q = std::fs::read_to_string(dir.path().join("ablation_query.tsv")).unwrap();
    assert_eq!(q.lines().filter(|l| !l.starts_with('#')).count(), 1 + 5);

    let o = step("sweep-k", &["--ks", "3,1"], &base);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let k = std::fs::read_to_string(dir.path().join("sweep_k.tsv")).unwrap();
    let ks: Vec<&str> = k.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ks, ["1", "3"]);

    let o = step("sweep-subset", &["--sizes", "30,60"], &base);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = step("sweep-subset", &["--sizes", "500"], &base);
    assert_eq!(o.status.code(), Some(1));
}
