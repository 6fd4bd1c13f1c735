use std::path::Path;
use std::process::{Command, Output};

use protext_cli::manifest::RunManifest;
use serde_json::Value;

fn protext(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protext"))
        .current_dir(dir)
        .args(args)
        .args(["--log-level", "warn"])
        .env_remove("PROTEXT_LLM_URL")
        .env_remove("PROTEXT_LLM_KEY")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = protext(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    protext(dir, args).status.code().expect("exit code")
}

const SMALL: [&str; 8] = ["--classes", "4", "--descriptions", "4", "--images-per-class", "5", "--epochs", "2"];

/// Exports a small synthetic world into `dir/w/world`.
fn small_world(dir: &Path) {
    let mut args = vec!["synthetic", "--out", "w", "--export-world"];
    args.extend(SMALL);
    ok(dir, &args);
}

const ENC: [&str; 4] = ["--vocab", "w/world/vocab.json", "--weights", "w/world/weights.json"];

fn with_enc<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(ENC);
    v.extend(rest);
    v
}

fn manifest(path: &Path) -> RunManifest {
    RunManifest::load(path).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn usage_errors_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["--help"]), 0);
    assert_eq!(code(dir.path(), &["frobnicate"]), 1);
    assert_eq!(code(dir.path(), &["train", "--no-such-flag"]), 1);
    assert_eq!(code(dir.path(), &["train", "--loss", "hinge"]), 1);

    let missing = protext(dir.path(), &["train"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--vocab"));
    assert_eq!(code(dir.path(), &["train", "--vocab", "nope.json", "--weights", "nope.json"]), 1);
    assert_eq!(code(dir.path(), &["ablate"]), 1);
    assert_eq!(code(dir.path(), &["synthetic", "--classes", "1"]), 1);
}

#[test]
fn io_and_numeric_failures_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());

    // A zero image feature is bad input; an exploding update is a numeric failure.
    let names = vec!["class00".to_string(), "class01".to_string()];
    let features = protext::numerics::Tensor::new(vec![2, 8], [vec![0.0; 8], vec![1.0; 8]].concat()).unwrap();
    let images = protext::zeroshot_eval::ImageFeatureSet::new(features, vec![0, 1], names, false).unwrap();
    images.save_jsonl(&dir.path().join("zero.jsonl")).unwrap();
    let invalid = with_enc("eval", &["--head", "plain", "--features", "zero.jsonl", "--out", "e"]);
    assert_eq!(code(dir.path(), &invalid), 1);
    let exploding =
        with_enc("train", &["--dataset", "w/world/dataset.jsonl", "--lr", "1e300", "--warmup-epochs", "0", "--out", "x"]);
    let out = protext(dir.path(), &exploding);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numeric failure"));

    std::fs::remove_file(dir.path().join("w/world/weights.bin")).unwrap();
    let io = with_enc("eval", &["--head", "plain", "--features", "w/world/images.json", "--out", "e"]);
    assert_eq!(code(dir.path(), &io), 3);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let config = r#"{
        "paths": {"vocab": "w/world/vocab.json", "weights": "w/world/weights.json", "dataset": "w/world/dataset.jsonl"},
        "train": {"epochs": 3, "batch_size": 16},
        "seed": 5,
        "out": "from-file"
    }"#;
    std::fs::write(dir.path().join("run.json"), config).unwrap();

    ok(dir.path(), &["train", "--config", "run.json"]);
    let m = manifest(&dir.path().join("from-file/train.manifest.json"));
    let tc = m.config.train.unwrap();
    assert_eq!((tc.epochs, tc.batch_size, tc.seed, m.seed), (3, 16, 5, 5));

    ok(dir.path(), &["train", "--config", "run.json", "--epochs", "1", "--seed", "9", "--out", "from-flags"]);
    let m = manifest(&dir.path().join("from-flags/train.manifest.json"));
    let tc = m.config.train.unwrap();
    assert_eq!((tc.epochs, tc.batch_size, tc.seed, m.seed), (1, 16, 9, 9));
    assert!(m.inputs.keys().any(|k| k.ends_with("dataset.jsonl")));
    assert!(m.outputs.contains_key("prompts.json") && m.outputs.contains_key("prompts.bin"));

    std::fs::write(dir.path().join("bad.json"), r#"{"train": {"epochz": 3}}"#).unwrap();
    assert_eq!(code(dir.path(), &["train", "--config", "bad.json"]), 1);
    assert_eq!(code(dir.path(), &["eval", "--config", "from-flags/train.manifest.json"]), 1);
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    for out in ["a", "b"] {
        ok(dir.path(), &with_enc("train", &["--dataset", "w/world/dataset.jsonl", "--epochs", "2", "--out", out]));
    }
    let (a, b) = (manifest(&dir.path().join("a/train.manifest.json")), manifest(&dir.path().join("b/train.manifest.json")));
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.run_id, b.run_id);

    ok(dir.path(), &with_enc("train", &["--dataset", "w/world/dataset.jsonl", "--epochs", "2", "--out", "c", "--seed", "1"]));
    let c = manifest(&dir.path().join("c/train.manifest.json"));
    assert_ne!(a.outputs["prompts.bin"], c.outputs["prompts.bin"]);
}

#[test]
fn empty_prompts_evaluate_like_the_plain_template() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    ok(
        dir.path(),
        &with_enc("train", &["--dataset", "w/world/dataset.jsonl", "--prompt-length", "0", "--epochs", "1", "--out", "t0"]),
    );
    let feats = ["--features", "w/world/images.json"];
    let mut prompted = with_enc("eval", &["--checkpoint", "t0/prompts.json", "--out", "p"]);
    prompted.extend(feats);
    let mut plain = with_enc("eval", &["--head", "plain", "--out", "q"]);
    plain.extend(feats);
    ok(dir.path(), &prompted);
    ok(dir.path(), &plain);

    let strip = |p: &str| {
        let mut v: Value = serde_json::from_slice(&read(&dir.path().join(p))).unwrap();
        v.as_object_mut().unwrap().remove("tag");
        v
    };
    assert_eq!(strip("p/report.json"), strip("q/report.json"));
}

#[test]
fn inspecting_initial_prompts_recovers_the_init_words() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    ok(dir.path(), &with_enc("train", &["--dataset", "w/world/dataset.jsonl", "--epochs", "0", "--out", "t"]));
    ok(dir.path(), &with_enc("inspect", &["--checkpoint", "t/prompts.json", "-k", "2", "--out", "i"]));
    let nearest: Value = serde_json::from_slice(&read(&dir.path().join("i/nearest.json"))).unwrap();
    let top: Vec<&str> = nearest[0].as_array().unwrap().iter().map(|row| row[0]["word"].as_str().unwrap()).collect();
    assert_eq!(top, ["a", "photo", "of", "a"]);
    assert!(nearest[0][0][0]["distance"].as_f64().unwrap() < 1e-12);
}

#[test]
fn every_head_kind_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    ok(dir.path(), &with_enc("train", &["--dataset", "w/world/dataset.jsonl", "--adapter", "mlp", "--adapter-reduction", "2", "--epochs", "1", "--out", "ad"]));
    let base = ["--features", "w/world/images.json", "--dataset", "w/world/dataset.jsonl"];
    for (head, extra) in [
        ("prompted", vec!["--checkpoint", "w/prompts.json"]),
        ("plain", vec![]),
        ("ensembled", vec![]),
        ("adapter", vec!["--adapter", "ad/adapter.json"]),
    ] {
        let out = format!("e-{head}");
        let mut args = with_enc("eval", &["--head", head, "--out", &out, "--temperature", "50"]);
        args.extend(base);
        args.extend(extra);
        let text = ok(dir.path(), &args);
        assert!(text.starts_with(head), "{text}");
        let report: Value = serde_json::from_slice(&read(&dir.path().join(&out).join("report.json"))).unwrap();
        assert_eq!(report["n"], 20);
    }
    // The ensembled head needs descriptions.
    let args = with_enc("eval", &["--head", "ensembled", "--features", "w/world/images.json", "--out", "x"]);
    assert_eq!(code(dir.path(), &args), 1);
}

#[test]
fn curation_sources() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("classes.txt"), "tench\ngoldfish\n").unwrap();
    let text = ok(dir.path(), &["curate", "--classes", "classes.txt", "--handcrafted", "clip80", "--out", "h"]);
    assert!(text.starts_with("160 pairs for 2 classes"), "{text}");

    // Without fixtures, templates or an endpoint there is nothing to ask.
    assert_eq!(code(dir.path(), &["curate", "--classes", "classes.txt", "--out", "n"]), 1);
    // A missing fixture file surfaces as an I/O failure.
    std::fs::create_dir_all(dir.path().join("fx/0")).unwrap();
    std::fs::write(dir.path().join("fx/0/0.txt"), "one\ntwo\n").unwrap();
    let args = ["curate", "--classes", "classes.txt", "--fixtures", "fx", "--per-query", "2", "--num-queries", "1", "--out", "f"];
    assert_eq!(code(dir.path(), &args), 3);
}

#[test]
fn synthetic_runs_and_sweeps_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["s1", "s2"] {
        let mut args = vec!["synthetic", "--out", out, "--seed", "3"];
        args.extend(SMALL);
        ok(dir.path(), &args);
    }
    assert_eq!(read(&dir.path().join("s1/report.json")), read(&dir.path().join("s2/report.json")));

    let mut args = vec!["ablate", "--axis", "T=0,2", "--out", "ab"];
    args.extend(SMALL);
    let text = ok(dir.path(), &args);
    assert!(text.contains("baseline"), "{text}");
    let csv = String::from_utf8(read(&dir.path().join("ab/sweep.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}
