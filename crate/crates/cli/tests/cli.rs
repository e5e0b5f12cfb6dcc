use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sar2opt_core::synthetic::{write_dataset, SyntheticLayout};

fn sar2opt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sar2opt")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&sar2opt(&[])), 1);
    assert_eq!(code(&sar2opt(&["frobnicate"])), 1);
    assert_eq!(code(&sar2opt(&["train", "--epochs", "three"])), 1);
}

#[test]
fn help_lists_subcommands_and_flags() {
    let o = sar2opt(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["curate", "preprocess", "train", "infer", "evaluate", "demo"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let o = sar2opt(&["train", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--manifest", "--resume", "--cadence", "--lambda-mae"] {
        assert!(text.contains(flag), "{flag} missing from train help");
    }
}

#[test]
fn unknown_config_key_exits_with_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let o = sar2opt(&["train", "--manifest", "nowhere.jsonl", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.epochz"));
}

#[test]
fn missing_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let out = dir.path().join("out.jsonl");
    assert_eq!(code(&sar2opt(&["curate", "--manifest", p(&missing), "--out", p(&out)])), 2);
}

#[test]
fn train_infer_evaluate_flow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let layout = SyntheticLayout {
        pairs: 4,
        size: 32,
        cloudy: &[1],
        test: &[3],
    };
    write_dataset(&data, 2, &layout).unwrap();
    let manifest = data.join("manifest.jsonl");

    let curated = dir.path().join("curated.jsonl");
    let rejects = dir.path().join("rejects.jsonl");
    let o = sar2opt(&["curate", "--manifest", p(&manifest), "--out", p(&curated), "--rejects", p(&rejects)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kept = fs::read_to_string(&curated).unwrap();
    assert_eq!(kept.lines().count(), 3);
    assert!(!kept.contains("pair_01"));

    let ck = dir.path().join("ck");
    let o = sar2opt(&[
        "train",
        "--manifest",
        p(&curated),
        "--out",
        p(&ck),
        "--epochs",
        "2",
        "--base-width",
        "4",
        "--depth",
        "3",
        "--disc-widths",
        "4,8",
        "--checkpoint-every",
        "1",
        "--seed",
        "5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["gen", "disc", "optimizer.bin", "state.json", "history.csv", "train_spec.json"] {
        assert!(ck.join("final").join(f).exists(), "final/{f}");
    }
    assert!(ck.join("epoch_1").is_dir());

    let preds = dir.path().join("preds");
    let truths = dir.path().join("truths");
    let o = sar2opt(&[
        "infer",
        "--checkpoint",
        p(&ck.join("final")),
        "--manifest",
        p(&curated),
        "--n",
        "3",
        "--out",
        p(&preds),
        "--truth-out",
        p(&truths),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..3 {
        assert!(preds.join(format!("pair_03_cand{i}.png")).is_file());
    }

    let report = dir.path().join("report.json");
    let o = sar2opt(&[
        "evaluate",
        "--pred",
        p(&preds),
        "--truth",
        p(&truths),
        "--report",
        p(&report),
        "--strict",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["pairs"].as_array().unwrap().len(), 1);
    let score = r["aggregate"]["error_score_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));

    // Ensemble mode takes one candidate per checkpoint.
    let both = format!("{},{}", p(&ck.join("epoch_1")), p(&ck.join("final")));
    let o = sar2opt(&[
        "infer",
        "--checkpoints",
        &both,
        "--manifest",
        p(&curated),
        "--n",
        "3",
        "--out",
        p(&preds),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn demo_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        // Too few epochs to meet the demo's error bound, but enough to compare outputs.
        let o = sar2opt(&["demo", "--out", p(&out), "--seed", "3", "--epochs", "3"]);
        assert!(matches!(code(&o), 0 | 1), "{}", String::from_utf8_lossy(&o.stderr));
        (
            fs::read(out.join("checkpoints/final/history.csv")).unwrap(),
            fs::read_dir(out.join("predictions")).unwrap().count(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    for f in ["pair_07_cand0.png", "pair_07_cand1.png", "pair_07_cand2.png"] {
        assert_eq!(
            fs::read(dir.path().join("a/predictions").join(f)).unwrap(),
            fs::read(dir.path().join("b/predictions").join(f)).unwrap()
        );
    }
}
