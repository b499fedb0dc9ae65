use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn gpiot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpiot"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn gpiot")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_flag() {
    let out = gpiot(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--seed", "--rank", "--lambda", "--gamma", "--p-ff", "--mode", "--corpus", "--k", "--run-cmd"] {
        assert!(help.contains(flag), "{flag} missing");
    }
    for cmd in ["forge", "augment", "cotune", "merge", "pipeline", "eval", "params"] {
        assert!(help.contains(cmd), "{cmd} missing");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(gpiot(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gpiot(&["params", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(gpiot(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_json() {
    let out = gpiot(&["pipeline"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"pect": {"rnak": 2}}"#).unwrap();
    let out = gpiot(&["params", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn params_prints_table() {
    let cfg = fixtures().join("toy.json");
    let out = gpiot(&["params", "--config", s(&cfg)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("d_model 32"), "{text}");
    for row in ["base", "deployed per path", "total trainable"] {
        assert!(text.lines().any(|l| l.starts_with(row)), "{row} missing:\n{text}");
    }
}

#[test]
fn forge_matches_golden_and_is_reproducible() {
    let f = fixtures();
    let cfg = f.join("toy.json");
    let corpus = f.join("corpus");
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = gpiot(&["forge", "--config", s(&cfg), "--corpus", s(&corpus), "--datasets", s(&data)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for file in ["tdd.jsonl", "cgd.jsonl", "review_queue.jsonl"] {
            let got = std::fs::read_to_string(data.join(file)).unwrap();
            let want = std::fs::read_to_string(f.join("golden/forge").join(file)).unwrap();
            assert_eq!(got, want, "{file} differs from golden");
        }
    }
}

#[test]
fn augment_is_idempotent() {
    let f = fixtures();
    let cfg = f.join("toy.json");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    for file in ["tdd.jsonl", "cgd.jsonl", "review_queue.jsonl"] {
        std::fs::copy(f.join("golden/forge").join(file), data.join(file)).unwrap();
    }
    let first = gpiot(&["augment", "--config", s(&cfg), "--datasets", s(&data)]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let after_first = std::fs::read(data.join("tdd.jsonl")).unwrap();
    let second = gpiot(&["augment", "--config", s(&cfg), "--datasets", s(&data)]);
    assert!(second.status.success());
    assert!(String::from_utf8(second.stdout).unwrap().starts_with("added 0"));
    assert_eq!(std::fs::read(data.join("tdd.jsonl")).unwrap(), after_first);
}

#[test]
fn eval_of_reference_answers_is_perfect() {
    let f = fixtures();
    let cfg = f.join("toy.json");
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("eval");
    let out = gpiot(&[
        "eval",
        "--config",
        s(&cfg),
        "--bench",
        s(&f.join("bench")),
        "--eval-model",
        "reference",
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let agg = &report["aggregates"];
    assert_eq!(agg["mean_bleu"], 1.0);
    assert_eq!(agg["fcr"], 1.0);
    assert_eq!(agg["pass_at_k"]["pass@1"], 1.0);
    assert_eq!(agg["pass_at_k"]["pass@2"], 1.0);
    assert_eq!(agg["pass_rate"], 1.0);
    assert_eq!(report["errata"][0]["case"], "code-untested");
    let csv = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(csv.starts_with("case,kind,bleu,fcr,pass_rate,pass@1,pass@2,similarity\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn chain_writes_all_artifacts() {
    let f = fixtures();
    let cfg = f.join("toy.json");
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt, bundle) = (dir.path().join("data"), dir.path().join("ckpt"), dir.path().join("bundle"));
    let cfg = s(&cfg);
    assert!(gpiot(&["forge", "--config", cfg, "--corpus", s(&f.join("corpus")), "--datasets", s(&data)])
        .status
        .success());
    let out = gpiot(&["cotune", "--config", cfg, "--datasets", s(&data), "--checkpoints", s(&ckpt), "--max-steps", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["base.json", "adapters.json", "loss.csv", "train_manifest.json"] {
        assert!(ckpt.join(file).exists(), "{file}");
    }
    assert_eq!(std::fs::read_to_string(ckpt.join("loss.csv")).unwrap().lines().count(), 6);
    assert!(gpiot(&["merge", "--config", cfg, "--checkpoints", s(&ckpt)]).status.success());
    assert!(ckpt.join("merged_tdp.json").exists() && ckpt.join("merged_cgp.json").exists());
    let out = gpiot(&[
        "pipeline",
        "--config",
        cfg,
        "--problem",
        s(&f.join("problem.txt")),
        "--checkpoints",
        s(&ckpt),
        "--corpus",
        s(&f.join("corpus")),
        "--out",
        s(&bundle),
    ]);
    // An undertrained model usually fails a stage; the partial bundle must still exist.
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 1, "{code}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failure"].is_null(), code == 0);
}
