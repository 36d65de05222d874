//! Helpers shared by the CLI integration tests: a config generator pointing
//! at the bundled synthetic corpus, and wrappers around the built binary.

// Each test target compiles its own copy; not every target uses every helper.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trialmatch"))
}

/// Absolute path to the bundled synthetic corpus.
pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/synthetic")
        .canonicalize()
        .expect("synthetic corpus directory")
}

/// Writes a config into `dir` that reads the bundled corpus and keeps all
/// run artifacts under `dir`/runs.
pub fn write_corpus_config(dir: &Path) -> PathBuf {
    write_config_with(dir, &corpus_dir(), None)
}

/// Like `write_corpus_config`, but individual input paths can be redirected
/// (e.g. at a deliberately broken copy) via `overrides` of `(key, path)`.
pub fn write_config_with(dir: &Path, corpus: &Path, overrides: Option<&[(&str, &Path)]>) -> PathBuf {
    let pick = |key: &str, default: PathBuf| -> PathBuf {
        overrides
            .and_then(|list| list.iter().find(|(k, _)| *k == key))
            .map(|(_, p)| p.to_path_buf())
            .unwrap_or(default)
    };
    let trials = pick("trials", corpus.join("trials.jsonl"));
    let notes = pick("notes", corpus.join("notes.jsonl"));
    let patients = pick("patients", corpus.join("patients.jsonl"));
    let ground_truth = pick("ground_truth", corpus.join("ground_truth.json"));
    let generator_fixtures = pick("generator_fixtures", corpus.join("generator_fixtures.json"));
    let qa_fixtures = pick("qa_fixtures", corpus.join("qa_fixtures.json"));
    let runs = dir.join("runs");
    let config = format!(
        r#"[paths]
trials = "{trials}"
notes = "{notes}"
patients = "{patients}"
ground_truth = "{ground_truth}"
runs_dir = "{runs}"

[backend]
mode = "scripted"
generator_fixtures = "{generator_fixtures}"
qa_fixtures = "{qa_fixtures}"

[retrieval]
k = 5

[cost.self_hosted]
input_speed = 1000.0
output_speed = 100.0
hourly_rate = 10.0

[cost.api]
price_per_1k_in = 0.01
price_per_1k_out = 0.03
"#,
        trials = trials.display(),
        notes = notes.display(),
        patients = patients.display(),
        ground_truth = ground_truth.display(),
        runs = runs.display(),
        generator_fixtures = generator_fixtures.display(),
        qa_fixtures = qa_fixtures.display(),
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).expect("write test config");
    path
}

pub fn run(config: &Path, run_id: &str, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(config)
        .arg("--run-id")
        .arg(run_id)
        .args(args)
        .output()
        .expect("spawn trialmatch")
}

pub fn run_ok(config: &Path, run_id: &str, args: &[&str]) -> Output {
    let out = run(config, run_id, args);
    assert!(
        out.status.success(),
        "trialmatch {args:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Runs compose → ingest → index → match for one run id.
pub fn run_through_match(config: &Path, run_id: &str) {
    run_ok(config, run_id, &["compose"]);
    run_ok(config, run_id, &["ingest"]);
    run_ok(config, run_id, &["index"]);
    run_ok(config, run_id, &["match"]);
}
