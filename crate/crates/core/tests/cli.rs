use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn defminer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defminer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&defminer(&["--help"])), 0);
    assert_eq!(code(&defminer(&["--version"])), 0);
    assert_eq!(code(&defminer(&["run", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&defminer(&[])), 1);
    assert_eq!(code(&defminer(&["run", "--no-such-flag"])), 1);
    assert_eq!(code(&defminer(&["cluster", "--vectors", "v.jsonl", "--ks", "ten", "--out-dir", "x"])), 1);
    // a run without a corpus is a configuration error
    assert_eq!(code(&defminer(&["run"])), 1);
}

#[test]
fn bad_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("broken.jsonl");
    std::fs::write(&corpus, "{\"id\": \"a\", \"source\": \"article\", \"text\": \"ok\"}\nnot json\n").unwrap();
    let out = defminer(&["run", "--corpus", p(&corpus), "--out", p(&dir.path().join("out"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let out = defminer(&["report", "--dir", p(&dir.path().join("nothing"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn nonexistent_corpus_path_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = defminer(&["run", "--corpus", p(&dir.path().join("absent.jsonl")), "--out", p(dir.path())]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreachable_classifier_without_fallback_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/classify");
    let out = defminer(&[
        "run",
        "--corpus",
        p(&fixture("fixture_corpus.jsonl")),
        "--out",
        p(&dir.path().join("out")),
        "--endpoint",
        &url,
        "--no-fallback",
        "--timeout-ms",
        "300",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("out/run_manifest.json")).unwrap();
    assert!(manifest.contains("\"failed_stage\": \"filter\""), "{manifest}");
}

#[test]
fn full_run_prints_funnel_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = defminer(&["run", "--corpus", p(&fixture("fixture_corpus.jsonl")), "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let counts: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(counts["documents"], 30);
    assert!(dir.path().join("09_report/digest.txt").is_file());
    let report = defminer(&["report", "--dir", p(dir.path())]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("Chi-square test"));
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus.jsonl");
    let cands = d.join("candidates.jsonl");
    let vectors = d.join("vectors.jsonl");
    let steps: Vec<Vec<String>> = vec![
        vec!["ingest".into(), "--input".into(), p(&fixture("fixture_corpus.jsonl")).into(), "--out".into(), p(&corpus).into()],
        vec!["extract".into(), "--corpus".into(), p(&corpus).into(), "--out".into(), p(&cands).into()],
        vec!["filter".into(), "--candidates".into(), p(&cands).into(), "--out-dir".into(), p(&d.join("filtered")).into()],
        vec!["embed".into(), "--candidates".into(), p(&d.join("filtered/kept.jsonl")).into(), "--out".into(), p(&vectors).into()],
        vec!["cluster".into(), "--vectors".into(), p(&vectors).into(), "--ks".into(), "8,3".into(), "--no-scale".into(), "--out-dir".into(), p(&d.join("clusters")).into()],
        vec![
            "dedup".into(),
            "--candidates".into(),
            p(&d.join("filtered/kept.jsonl")).into(),
            "--assignment".into(),
            p(&d.join("clusters/assignments.jsonl")).into(),
            "--out-dir".into(),
            p(&d.join("definitions")).into(),
        ],
        vec![
            "components".into(),
            "--definitions".into(),
            p(&d.join("definitions/definitions.jsonl")).into(),
            "--survey-corpus".into(),
            p(&corpus).into(),
            "--out-dir".into(),
            p(&d.join("components")).into(),
        ],
        vec![
            "stats".into(),
            "--contingency".into(),
            p(&d.join("components/contingency.csv")).into(),
            "--out-dir".into(),
            p(&d.join("stats")).into(),
        ],
    ];
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let out = defminer(&args);
        assert_eq!(code(&out), 0, "{}: {}", step[0], String::from_utf8_lossy(&out.stderr));
        let summary: Result<serde_json::Value, _> = serde_json::from_slice(&out.stdout);
        assert!(summary.is_ok(), "{} printed {:?}", step[0], String::from_utf8_lossy(&out.stdout));
    }
    assert!(d.join("stats/chisq.json").is_file());
    assert!(d.join("stats/groups.json").is_file());
}
