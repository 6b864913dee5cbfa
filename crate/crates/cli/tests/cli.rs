use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sciline_core::synth::{generate, SynthConfig};

fn sciline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sciline")).args(args).output().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let cfg = SynthConfig {
            years: 6,
            fields: 2,
            papers_per_year: 50,
            growth_rate: 1.0,
            twin_count: 5,
            calibration_replicates: 1,
            ..SynthConfig::with_seed(5)
        };
        generate(&cfg).unwrap().write_to(&root.join("data")).unwrap();
        Self { _dir: dir, root }
    }

    fn data(&self, name: &str) -> String {
        self.root.join("data").join(name).display().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn manifest(out: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(out.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn full_run_writes_eight_manifest_lines() {
    let f = Fixture::new();
    let out = f.out("out");
    let o = sciline(&[
        "run",
        "--corpus",
        &f.data("corpus.ndjson"),
        "--embeddings",
        &f.data("embeddings.bin"),
        "--contexts",
        &f.data("contexts.ndjson"),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "17",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let stages: Vec<&str> = m.iter().map(|l| l["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["ingest", "stylize", "disrupt", "recombine", "reception", "twins", "regress", "report"]);
    assert!(m.iter().all(|l| l["status"] == "ok" && l["seed"] == 17));
    assert_eq!(m[0]["inputs"].as_object().unwrap().len(), 2);
    let csv = fs::read_to_string(out.join("stylize/scores_knn5.csv")).unwrap();
    assert!(csv.starts_with("# seed=17\n"));
    let svg = fs::read_to_string(out.join("report/stylization_trend.svg")).unwrap();
    assert!(svg.contains("<!-- seed=17 -->"));
}

#[test]
fn missing_embedding_file_exits_2_naming_it() {
    let f = Fixture::new();
    let missing = f.root.join("nope.bin");
    let o = sciline(&[
        "stylize",
        "--corpus",
        &f.data("corpus.ndjson"),
        "--embeddings",
        missing.to_str().unwrap(),
        "--out",
        f.out("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(missing.to_str().unwrap()));
    assert!(!f.out("out").exists());
}

#[test]
fn single_stage_gives_single_manifest_line() {
    let f = Fixture::new();
    let out = f.out("out");
    let o = sciline(&[
        "run",
        "--stages",
        "stylize",
        "--corpus",
        &f.data("corpus.ndjson"),
        "--embeddings",
        &f.data("embeddings.bin"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let m = manifest(&out);
    assert_eq!(m.len(), 1);
    assert_eq!(m[0]["stage"], "stylize");
}

#[test]
fn failed_stage_exits_1_with_partial_manifest() {
    let f = Fixture::new();
    let out = f.out("out");
    // twins needs stylization scores, which this output directory lacks
    let o = sciline(&[
        "run",
        "--stages",
        "ingest,twins,regress",
        "--corpus",
        &f.data("corpus.ndjson"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(&out);
    assert_eq!(m.len(), 2);
    assert_eq!(m[0]["status"], "ok");
    assert_eq!(m[1]["stage"], "twins");
    assert_eq!(m[1]["status"], "failed");
}

#[test]
fn later_stage_reuses_earlier_scores() {
    let f = Fixture::new();
    let out = f.out("out");
    let common = [
        "--corpus",
        &f.data("corpus.ndjson"),
        "--embeddings",
        &f.data("embeddings.bin"),
        "--out",
        out.to_str().unwrap(),
    ];
    assert!(sciline(&[&["stylize"], &common[..]].concat()).status.success());
    let o = sciline(&[&["regress", "--response", "c5", "--model", "ols"], &common[..]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m.len(), 1);
    assert!(m[0]["inputs"].as_object().unwrap().contains_key("stylize/scores_knn5.csv"));
    assert!(out.join("regress/c5_table.md").is_file());
    assert!(!out.join("regress/c10_table.md").exists());
}

#[test]
fn config_file_paths_are_relative_to_it() {
    let f = Fixture::new();
    let cfg = f.root.join("run.toml");
    fs::write(
        &cfg,
        "seed = 3\nout_dir = \"res\"\nstages = [\"ingest\"]\n[input]\ncorpus = [\"data/corpus.ndjson\"]\n",
    )
    .unwrap();
    let o = sciline(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(f.root.join("res/ingest/summary.csv")).unwrap();
    assert!(summary.starts_with("# seed=3\n"));
    assert!(summary.contains("papers,600"));
}

#[test]
fn bad_config_exits_2() {
    let f = Fixture::new();
    let cfg = f.root.join("bad.toml");
    fs::write(&cfg, "sed = 3\n").unwrap();
    let o = sciline(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml"));
    let o = sciline(&["run", "--corpus", &f.data("corpus.ndjson"), "--variant", "knn7"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_subcommand_is_deterministic_and_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    fs::write(&cfg, "years = 3\nfields = 2\npapers_per_year = 10\ngrowth_rate = 1.0\n").unwrap();
    let o = sciline(&["synth", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    for name in ["a", "b"] {
        let o = sciline(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["corpus.ndjson", "embeddings.bin", "citations.csv", "contexts.ndjson", "truth.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(file)).unwrap(), fs::read(dir.path().join("b").join(file)).unwrap());
    }
    let corpus = fs::read_to_string(dir.path().join("a/corpus.ndjson")).unwrap();
    assert_eq!(corpus.lines().count(), 60);
}
