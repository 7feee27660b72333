use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cocolex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cocolex"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, n: usize) -> PathBuf {
    let out = dir.join("corpus.jsonl");
    let o = cocolex(&[
        "generate",
        "--seed",
        "1",
        "--instances",
        &n.to_string(),
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(cocolex(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cocolex(&["run", "--alpha"]).status.code(), Some(1));
    assert_eq!(cocolex(&["run"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 1);
    let bad_value = cocolex(&["run", "--dataset", path(&data), "--alpha", "lots"]);
    assert_eq!(bad_value.status.code(), Some(1));
    let bad_strategy = cocolex(&["run", "--dataset", path(&data), "--strategy", "beam"]);
    assert_eq!(bad_strategy.status.code(), Some(1));
    assert_eq!(cocolex(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    assert_eq!(
        cocolex(&["run", "--dataset", path(&missing)]).status.code(),
        Some(2)
    );

    let broken = dir.path().join("broken.jsonl");
    std::fs::write(&broken, "{\"id\": \"a\", \"query\": \"q\"}\n").unwrap();
    let o = cocolex(&["run", "--dataset", path(&broken)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let not_a_report = dir.path().join("r.json");
    std::fs::write(&not_a_report, "[]").unwrap();
    assert_eq!(
        cocolex(&["report", path(&not_a_report)]).status.code(),
        Some(2)
    );
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 2);
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "# small run\ndataset = {}\nstrategy = regular, cad\nmax-new-tokens = 4\nalpha = 0.9\n",
            path(&data)
        ),
    )
    .unwrap();
    let out = dir.path().join("report.json");
    let o = cocolex(&[
        "run",
        "--config",
        path(&config),
        "--alpha",
        "0.1",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["config"]["decoding"]["alpha"], 0.1);
    assert_eq!(report["config"]["decoding"]["max_new_tokens"], 4);
    assert_eq!(report["per_instance"].as_array().unwrap().len(), 4);

    let shown = cocolex(&["report", path(&out), path(&out)]);
    assert!(shown.status.success());
    let text = String::from_utf8_lossy(&shown.stdout);
    assert!(
        text.contains("regular") && text.matches("== ").count() == 2,
        "{text}"
    );
}

#[test]
fn index_writes_a_loadable_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("doc.txt");
    std::fs::write(&doc, "The lessee shall pay rent monthly. ".repeat(30)).unwrap();
    let snap = dir.path().join("doc.idx");
    let o = cocolex(&[
        "index",
        "--input",
        path(&doc),
        "--out",
        path(&snap),
        "--chunk-size",
        "128",
        "--chunk-stride",
        "64",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&snap).unwrap();
    assert_eq!(&bytes[..8], b"COCOIDX1");
    let index =
        cocolex::index::ContextIndex::load(&snap, cocolex::index::Metric::Euclidean).unwrap();
    assert_eq!(index.len(), 35 * 30 - 1);

    let o = cocolex(&[
        "index",
        "--input",
        path(&doc),
        "--out",
        path(&snap),
        "--chunk-stride",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
