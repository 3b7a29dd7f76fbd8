use std::path::Path;
use std::process::{Command, Output};

use translationese::synth::bundled_path;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_translationese"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn mini() -> String {
    bundled_path("mini.jsonl").display().to_string()
}

fn vec_path() -> String {
    bundled_path("mini.vec").display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_reports_paragraph_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["validate", "--corpus", &mini()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "2000 paragraphs OK");
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["validate"], dir.path()).status.code(), Some(2));
    // --seed is required wherever randomness is consumed
    let o = bin(
        &["assemble", "--corpus", &mini(), "--dataset", "trg-src:de:en", "--out", "a"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"));
    assert_eq!(bin(&["no-such-command"], dir.path()).status.code(), Some(2));
}

#[test]
fn operational_errors_exit_one_with_a_coded_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\": 1}\n").unwrap();
    let o = bin(&["validate", "--corpus", "bad.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: code=malformed msg="), "{}", stderr(&o));

    let o = bin(&["validate", "--corpus", "missing.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: code=io msg="));

    let o = bin(
        &["assemble", "--corpus", &mini(), "--dataset", "trg-src:xx:en", "--seed", "1", "--out", "a"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: code="));

    // a model that needs vectors, without them
    let o = bin(
        &["train", "--corpus", &mini(), "--dataset", "trg-src:de:en", "--model", "mean-embedding", "--seed", "1", "--out", "r"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: code=invalid-argument"), "{}", stderr(&o));
}

fn manifest(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("manifest.txt")).unwrap()
}

#[test]
fn identical_runs_write_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut manifests = Vec::new();
    for out in ["one", "two"] {
        let train = [
            "train", "--corpus", &mini(), "--dataset", "trg-src:de:en", "--model", "mean-embedding",
            "--vectors", &vec_path(), "--seed", "1,2", "--out", out,
        ];
        let o = bin(&train, d);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        manifests.push(manifest(&d.join(out)));
    }
    assert_eq!(manifests[0], manifests[1]);
    let m = &manifests[0];
    assert!(m.contains("arg seed 1,2"));
    assert!(m.contains("output runs.csv "));
    assert!(m.contains("output runs/mean-embedding/DE-EN/seed-2/model/pipeline.txt "));
    assert!(!m.contains("arg out"));

    let other = [
        "train", "--corpus", &mini(), "--dataset", "trg-src:de:en", "--model", "mean-embedding",
        "--vectors", &vec_path(), "--seed", "3", "--out", "three",
    ];
    assert_eq!(bin(&other, d).status.code(), Some(0));
    let c = |m: &str| m.lines().find(|l| l.starts_with("config-sha256")).unwrap().to_string();
    assert_ne!(c(&manifests[0]), c(&manifest(&d.join("three"))));
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        format!(
            "corpus = \"{}\"\nseed = 7\n\n[assemble]\ndataset = \"trg-src:de:en\"\nfractions = [0.5, 0.25, 0.25]\n",
            mini()
        ),
    )
    .unwrap();
    let o = bin(&["assemble", "--config", "run.toml", "--seed", "2", "--out", "a"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&d.join("a"));
    assert!(m.contains("arg seed 2\n"), "{m}");
    assert!(m.contains("arg fractions 0.5,0.25,0.25\n"), "{m}");
    assert!(m.contains("arg dataset trg-src:de:en\n"));

    // the same flags given directly produce the same artifacts
    let o = bin(
        &["assemble", "--corpus", &mini(), "--dataset", "trg-src:de:en", "--fractions", "0.5,0.25,0.25", "--seed", "2", "--out", "b"],
        d,
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(manifest(&d.join("a")), manifest(&d.join("b")));

    std::fs::write(d.join("bad.toml"), "[assemble]\nnot_a_flag = 1\n").unwrap();
    assert_eq!(bin(&["assemble", "--config", "bad.toml", "--seed", "1", "--out", "c"], d).status.code(), Some(2));
}

#[test]
fn fit_extract_evaluate_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let o = bin(args, d);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    ok(&["assemble", "--corpus", &mini(), "--dataset", "trg-src:de:en", "--seed", "1", "--out", "bundle"]);
    ok(&["fit-features", "--bundle", "bundle", "--out", "ff"]);
    ok(&["extract", "--bundle", "bundle", "--features", "ff", "--split", "dev", "--out", "ex"]);
    let csv = std::fs::read_to_string(d.join("ex/features.csv")).unwrap();
    let dev = std::fs::read_to_string(d.join("bundle/dev.jsonl")).unwrap().lines().count();
    assert_eq!(csv.lines().count(), dev + 1);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 2 + 108);

    ok(&["fit-features", "--bundle", "bundle", "--kind", "char-trigram", "--out", "ct"]);
    // a char-trigram vocabulary cannot be used as pos-trigram features
    let o = bin(&["extract", "--bundle", "bundle", "--kind", "pos-trigram", "--features", "ct", "--out", "x"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("code=pipeline-mismatch"));

    ok(&["train", "--corpus", &mini(), "--dataset", "trg-src:de:en", "--model", "fasttext", "--seed", "1", "--out", "runs"]);
    let out = ok(&["evaluate", "--model-dir", "runs/runs/fasttext/DE-EN/seed-1/model", "--bundle", "bundle", "--out", "ev"]);
    assert!(out.starts_with("accuracy "));
    let preds = std::fs::read_to_string(d.join("ev/predictions.csv")).unwrap();
    assert_eq!(preds.lines().next().unwrap(), "id,label,predicted,p_translated");

    ok(&["cross-eval", "--runs", "runs", "--corpus", &mini(), "--test-set", "trg-src:de:en", "--test-set", "X=trg-src:es:en", "--out", "ce"]);
    let matrix = std::fs::read_to_string(d.join("ce/matrix.csv")).unwrap();
    assert!(matrix.contains("fasttext,DE-EN,DE-EN,1,"));
    assert!(matrix.contains("fasttext,DE-EN,X,1,"));
    let rep = ok(&["report", "--runs", "runs"]);
    assert!(rep.contains("fasttext DE-EN -> DE-EN"));
}
