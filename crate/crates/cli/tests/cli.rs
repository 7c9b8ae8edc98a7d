use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").canonicalize().unwrap()
}

fn ctxprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxprobe")).args(args).output().expect("spawn ctxprobe")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A small synthetic experiment over both relations, written into `dir`.
fn write_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let c = configs();
    let mut cfg = serde_json::json!({
        "provider": {"kind": "synthetic"},
        "relations": [
            {"spec": c.join("relations/capital.json"), "entities": c.join("entities/capital.json")},
            {"spec": c.join("relations/official_language.json"), "entities": c.join("entities/official_language.json")},
        ],
        "seeds": [0, 1],
        "per_entity": 3,
        "forms": ["open_qa", "closed_1"],
        "permutations": 199,
        "out_dir": dir.join("out"),
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn missing_or_malformed_config_is_a_config_error() {
    assert_eq!(code(&ctxprobe(&["score"])), 2);
    assert_eq!(code(&ctxprobe(&["score", "--config", "/nonexistent/config.json"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&ctxprobe(&["build-dataset", "--config", bad.to_str().unwrap()])), 2);
    let cfg = write_config(dir.path(), serde_json::json!({"seeds": []}));
    assert_eq!(code(&ctxprobe(&["score", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn unreachable_sidecar_is_a_provider_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({}));
    let out = ctxprobe(&["score", "--config", cfg.to_str().unwrap(), "--endpoint", &url]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn infeasible_sampling_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"per_entity": 2}));
    let out = ctxprobe(&["build-dataset", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn score_test_reliability_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({}));
    let cfg = cfg.to_str().unwrap();
    let out_dir = dir.path().join("run");
    let out = out_dir.to_str().unwrap();
    for cmd in ["build-dataset", "score", "test", "reliability", "report"] {
        let o = ctxprobe(&[cmd, "--config", cfg, "--out", out, "--seed", "7", "--prior", "no-context"]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["scores.csv", "tests.csv", "variance.csv", "run_meta.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seeds"], serde_json::json!([7]));
    assert_eq!(meta["prior_mode"], "no-context");
    assert_eq!(meta["complete"], true);
}

#[test]
fn corpus_graph_and_join() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("pairs.csv"), "entity,answer\nSlovenia,Ljubljana\nFrance,Paris\n").unwrap();
    std::fs::write(d.join("a.txt"), "Ljubljana is the capital of Slovenia.\nParis is far from here.\n").unwrap();
    std::fs::write(d.join("b.jsonl"), "{\"text\": \"France and its capital Paris\"}\n").unwrap();
    let o = ctxprobe(&[
        "scan-corpus",
        "--pairs",
        d.join("pairs.csv").to_str().unwrap(),
        "--corpus",
        d.join("a.txt").to_str().unwrap(),
        d.join("b.jsonl").to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let counts = std::fs::read_to_string(d.join("cooc_counts.csv")).unwrap();
    assert!(counts.lines().any(|l| l.starts_with("Slovenia,Ljubljana,50,1,")), "{counts}");
    assert!(counts.lines().any(|l| l.starts_with("France,Paris,50,1,1,2")), "{counts}");

    std::fs::write(d.join("kg.tsv"), "slovenia\tborders\titaly\nitaly\tborders\tslovenia\nslovenia\tborders\taustria\n").unwrap();
    std::fs::write(d.join("ids.txt"), "slovenia\nitaly\natlantis\n").unwrap();
    let o = ctxprobe(&[
        "kg-degree",
        "--triples",
        d.join("kg.tsv").to_str().unwrap(),
        "--relation",
        "borders",
        "--entities",
        d.join("ids.txt").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("slovenia,borders,2"), "{stdout}");
    assert!(stdout.contains("atlantis,borders,0"), "{stdout}");

    let cfg = write_config(d, serde_json::json!({"seeds": [0]}));
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&ctxprobe(&["score", "--config", cfg])), 0);
    let o = ctxprobe(&["join", "--config", cfg, "--cooc", d.join("cooc_counts.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("out/joined.csv").exists());
    assert!(d.join("out/join_summary.json").exists());
}

#[test]
fn application_configs_run() {
    for name in ["friend_enemy", "gender_bias"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = configs().join(format!("applications/{name}.json"));
        let o = ctxprobe(&["apply", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join("app_scores.csv").exists());
    }
}
