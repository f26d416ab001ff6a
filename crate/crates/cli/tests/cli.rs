use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn memlab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_memlab"));
    // Keep the caller's environment from leaking config into the tests.
    for (k, _) in std::env::vars() {
        if k.starts_with("MEMLAB_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failed(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(!out.status.success(), "expected failure");
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_corpus(dir: &Path, entries: usize) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    ok(memlab()
        .args(["gen-synthetic", "--entries", &entries.to_string(), "--seed", "3", "-o"])
        .arg(&path));
    path
}

#[test]
fn gen_synthetic_writes_seeded_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_corpus(dir.path(), 5);
    let first = fs::read_to_string(&a).unwrap();
    assert_eq!(first.lines().count(), 5);
    let b = dir.path().join("again.jsonl");
    ok(memlab().args(["gen-synthetic", "--entries", "5", "--seed", "3", "-o"]).arg(&b));
    assert_eq!(first, fs::read_to_string(&b).unwrap());
    let row: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(row["actual_sentences"].is_array() && row["hal_sentences"].is_array());
}

#[test]
fn synth_writes_artifacts_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 4);
    let out = dir.path().join("run");
    let dump = dir.path().join("lat.jsonl");
    let stdout = ok(memlab()
        .args(["synth", "--mode", "scaled", "3", "--corpus"])
        .arg(&corpus)
        .arg("--out")
        .arg(&out)
        .arg("--dump-latents")
        .arg(&dump));
    assert!(stdout.contains("scaled"), "{stdout}");
    for name in ["manifest.json", "texts.jsonl", "scores.jsonl", "summary.json", "timing.json", "summary.txt"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["entries"], 4);
    assert_eq!(summary["mode"]["variant"], "scaled");
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["seeds"]["run"], 0);
    let records = fs::read_to_string(&dump).unwrap();
    assert!(records.lines().count() >= 4);

    let report = ok(memlab().arg("report").arg(&out));
    assert!(report.contains("RougeL") && report.contains("Jaccard"), "{report}");

    let geo_json = dir.path().join("geo.json");
    let geo = ok(memlab()
        .args(["geometry", "--stage", "write-readout", "--bins", "5", "--latents"])
        .arg(&dump)
        .arg("--out")
        .arg(&geo_json));
    assert!(geo.contains("mean angle"), "{geo}");
    assert_eq!(json(&geo_json)["histograms"]["distance"]["bins"].as_array().unwrap().len(), 5);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 6);
    let run = |name: &str, parallelism: &str| {
        let out = dir.path().join(name);
        ok(memlab()
            .args(["synth", "--mode", "base", "--parallelism", parallelism, "--corpus"])
            .arg(&corpus)
            .arg("--out")
            .arg(&out));
        (
            fs::read_to_string(out.join("texts.jsonl")).unwrap(),
            fs::read_to_string(out.join("scores.jsonl")).unwrap(),
        )
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "4"));
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 4);
    let out = dir.path().join("sweep");
    let table = ok(memlab().args(["sweep", "--s", "1..3", "--corpus"]).arg(&corpus).arg("--out").arg(&out));
    assert!(table.contains("| ×1 ") && table.contains("| ×3 "), "{table}");
    let rows = fs::read_to_string(out.join("sweep.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 3);

    let table = ok(memlab().args(["sweep", "--f", "0,1", "--corpus"]).arg(&corpus).arg("--out").arg(&out));
    assert!(table.contains("Jaccard"), "{table}");
    assert_eq!(fs::read_to_string(out.join("partial.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn config_file_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 3);
    let config = dir.path().join("lab.toml");
    fs::write(
        &config,
        format!(
            "seed = 9\ncorpus = {:?}\n\n[memory]\nslots = 32\n\n[mode]\nvariant = \"ideal\"\n",
            corpus.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    ok(memlab()
        .arg("--config")
        .arg(&config)
        .args(["synth", "--out"])
        .arg(&out)
        .env("MEMLAB_MEMORY__SLOTS", "48"));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["seeds"]["run"], 9);
    assert_eq!(manifest["config"]["memory"]["slots"], 48);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["mode"]["variant"], "ideal");
    assert_eq!(summary["exact_recall"], 1.0);

    // Flags beat both.
    let out2 = dir.path().join("run2");
    ok(memlab()
        .arg("--config")
        .arg(&config)
        .args(["synth", "--slots", "16", "--mode", "base", "--out"])
        .arg(&out2)
        .env("MEMLAB_MEMORY__SLOTS", "48"));
    assert_eq!(json(&out2.join("manifest.json"))["config"]["memory"]["slots"], 16);
}

#[test]
fn subprocess_codec_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 4);
    let local = dir.path().join("local");
    ok(memlab().args(["synth", "--corpus"]).arg(&corpus).arg("--out").arg(&local));
    let remote = dir.path().join("remote");
    let command = format!("{} serve-codec", env!("CARGO_BIN_EXE_memlab"));
    ok(memlab()
        .args(["synth", "--decoding", "greedy", "--codec-command", &command, "--corpus"])
        .arg(&corpus)
        .arg("--out")
        .arg(&remote));
    for name in ["texts.jsonl", "scores.jsonl"] {
        assert_eq!(
            fs::read_to_string(local.join(name)).unwrap(),
            fs::read_to_string(remote.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn external_codec_without_decoding_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 2);
    let out = failed(memlab().args(["synth", "--codec-address", "127.0.0.1:9", "--corpus"]).arg(&corpus));
    assert!(String::from_utf8_lossy(&out.stderr).contains("decoding"));
}

#[test]
fn ingest_normalizes_aliases() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    fs::write(
        raw.join("page.json"),
        r#"{"rows":[{"row":{"wiki_bio_test_idx":7,"gpt3_sentences":["A b.","C d."],"wiki_bio_sentences":["A b.","C e."],"annotation":["accurate","minor_inaccurate"]}}]}"#,
    )
    .unwrap();
    let out = dir.path().join("corpus.jsonl");
    let stdout = ok(memlab().arg("ingest").arg(&raw).arg("-o").arg(&out));
    assert!(stdout.contains("1 entries"), "{stdout}");
    let row: Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(row["actual_sentences"][1], "C e.");
    assert_eq!(row["hal_sentences"][0], "A b.");
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 2);
    failed(memlab().args(["synth", "--mode", "partial", "1.5", "--corpus"]).arg(&corpus));
    failed(memlab().args(["synth", "--mode", "warp", "--corpus"]).arg(&corpus));
    failed(memlab().args(["sweep", "--s", "5..1", "--corpus"]).arg(&corpus));
    failed(memlab().args(["synth", "--corpus"]).arg(dir.path().join("missing.jsonl")));
    let out = failed(memlab().args(["synth"]).arg("--corpus").arg(&corpus).env("MEMLAB_MEMORY__BOGUS", "1"));
    assert!(!out.stderr.is_empty());
}
