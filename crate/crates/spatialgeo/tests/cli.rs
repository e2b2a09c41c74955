mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{s, sg, tiny_config};
use spatialgeo::checkpoint_io::load_checkpoint;
use spatialgeo::ExitCode;

fn make_data(dir: &Path, cfg: &Path, count: usize) -> std::path::PathBuf {
    let out = dir.join("data");
    let r = sg(&["--config", s(cfg), "make-data", "--count", &count.to_string(), "--out", s(&out)]);
    assert_eq!(r.code, ExitCode::Success, "{}", r.stderr);
    out.join("dataset.jsonl")
}

fn train(cfg: &Path, stage: &str, from: Option<&Path>, data: &Path, out: &Path, extra: &[&str]) -> common::Run {
    let mut args = vec!["--config", s(cfg), "train", "--stage", stage, "--data", s(data), "--out", s(out)];
    if let Some(f) = from {
        args.extend(["--from", s(f)]);
    }
    args.extend(extra);
    sg(&args)
}

#[test]
fn make_data_counts_lines_and_is_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let a = make_data(&t.path().join("a"), &cfg, 100);
    let b = make_data(&t.path().join("b"), &cfg, 100);
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 100);
}

#[test]
fn zero_count_is_an_empty_valid_file() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let p = make_data(t.path(), &cfg, 0);
    assert!(fs::read(&p).unwrap().is_empty());
    assert_eq!(sg(&["--config", s(&cfg), "validate", s(&p)]).code, ExitCode::Success);
}

#[test]
fn stage_two_without_from_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 8);
    let out = Command::new(env!("CARGO_BIN_EXE_spatialgeo"))
        .args(["--config", s(&cfg), "train", "--stage", "2", "--data", s(&data), "--out", s(&t.path().join("r"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--from"));
}

#[test]
fn stage_two_from_a_base_checkpoint_is_a_state_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 8);
    let r = t.path().join("r");
    assert_eq!(train(&cfg, "0", None, &data, &r, &[]).code, ExitCode::Success);
    let res = train(&cfg, "2", Some(&r.join("stage0.ckpt")), &data, &r, &[]);
    assert_eq!(res.code, ExitCode::Usage, "{}", res.stderr);
}

#[test]
fn stage_one_changes_only_the_hierarchical_adapter() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 8);
    let r = t.path().join("r");
    assert_eq!(train(&cfg, "0", None, &data, &r, &[]).code, ExitCode::Success);
    assert_eq!(train(&cfg, "1", Some(&r.join("stage0.ckpt")), &data, &r, &[]).code, ExitCode::Success);
    let (before, _) = load_checkpoint(&r.join("stage0.ckpt")).unwrap();
    let (after, state) = load_checkpoint(&r.join("stage1.ckpt")).unwrap();
    let changed = after.params.changed_names(&before.params);
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|n| n.starts_with("hier_adapter.")), "{changed:?}");
    assert_eq!(before.encoders.checksum(), after.encoders.checksum());
    assert_eq!(state.unwrap().epoch, 2);
    let log = fs::read_to_string(r.join("loss_stage1.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,stage,loss,drop_rate"));
    assert!(log.lines().skip(1).all(|l| l.ends_with(",0.0")), "stage 1 never drops");
}

#[test]
fn ablation_switches_reach_the_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 8);
    let r = t.path().join("r");
    let res = train(&cfg, "1", None, &data, &r, &["--variant", "sa", "--clip", "off"]);
    assert_eq!(res.code, ExitCode::Success, "{}", res.stderr);
    let (m, _) = load_checkpoint(&r.join("stage1.ckpt")).unwrap();
    assert_eq!(m.config.variant.name(), "sa");
    assert!(!m.config.fusion.clip_branch_enabled);

    // Stage 2 turns the semantic branch back on, with dropping off.
    let res = train(&cfg, "2", Some(&r.join("stage1.ckpt")), &data, &r, &["--clip", "on", "--drop", "off"]);
    assert_eq!(res.code, ExitCode::Success, "{}", res.stderr);
    let (m, _) = load_checkpoint(&r.join("stage2.ckpt")).unwrap();
    assert!(m.config.fusion.clip_branch_enabled);
    let log = fs::read_to_string(r.join("loss_stage2.csv")).unwrap();
    assert!(log.lines().skip(1).all(|l| l.ends_with(",0.0")));

    assert_eq!(train(&cfg, "1", None, &data, &r, &["--drop", "maybe"]).code, ExitCode::Usage);
    assert_eq!(train(&cfg, "1", None, &data, &r, &["--clip", "off", "--geometry", "off"]).code, ExitCode::Usage);
    assert_eq!(train(&cfg, "7", None, &data, &r, &[]).code, ExitCode::Usage);
}

#[test]
fn resuming_from_an_epoch_checkpoint_matches_the_full_run() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 12);
    let full = t.path().join("full");
    assert_eq!(train(&cfg, "1", None, &data, &full, &[]).code, ExitCode::Success);

    let split = t.path().join("split");
    assert_eq!(train(&cfg, "1", None, &data, &split, &["--set", "train.epochs=1"]).code, ExitCode::Success);
    let res = train(&cfg, "1", Some(&split.join("stage1-epoch001.ckpt")), &data, &split, &[]);
    assert_eq!(res.code, ExitCode::Success, "{}", res.stderr);
    assert!(res.stdout.contains("resumed stage 1 after epoch 1"), "{}", res.stdout);

    for f in ["stage1.ckpt", "loss_stage1.csv", "stage1-epoch002.ckpt"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_is_independent_of_worker_count_and_rescoring_agrees() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 10);
    let r = t.path().join("r");
    assert_eq!(train(&cfg, "1", None, &data, &r, &[]).code, ExitCode::Success);
    let ck = r.join("stage1.ckpt");
    for (w, dir) in [("1", "e1"), ("4", "e4")] {
        let res = sg(&["eval", "--from", s(&ck), "--data", s(&data), "--workers", w, "--out", s(&t.path().join(dir))]);
        assert_eq!(res.code, ExitCode::Success, "{}", res.stderr);
    }
    for f in ["answers.jsonl", "scored.jsonl", "report.json", "report.csv", "accuracy_plot.csv"] {
        assert_eq!(fs::read(t.path().join("e1").join(f)).unwrap(), fs::read(t.path().join("e4").join(f)).unwrap(), "{f}");
    }
    let sc = t.path().join("sc");
    let res = sg(&["score", s(&t.path().join("e1/answers.jsonl")), "--data", s(&data), "--out", s(&sc)]);
    assert_eq!(res.code, ExitCode::Success, "{}", res.stderr);
    assert_eq!(fs::read(sc.join("report.json")).unwrap(), fs::read(t.path().join("e1/report.json")).unwrap());
}

#[test]
fn perfect_answers_score_one_hundred_everywhere() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 200);
    let answers: String = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            format!("{}\n", serde_json::json!({ "id": v["id"], "answer": v["answer"] }))
        })
        .collect();
    let ans = t.path().join("answers.jsonl");
    fs::write(&ans, answers).unwrap();
    let out = t.path().join("s");
    assert_eq!(sg(&["score", s(&ans), "--data", s(&data), "--out", s(&out)]).code, ExitCode::Success);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    for line in report.lines().skip(1) {
        assert!(line.ends_with(",100.00"), "{line}");
    }
    assert_eq!(report.lines().count(), 7);
}

#[test]
fn eval_rejects_bad_and_empty_datasets() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 6);
    let r = t.path().join("r");
    assert_eq!(train(&cfg, "1", None, &data, &r, &[]).code, ExitCode::Success);
    let ck = r.join("stage1.ckpt");

    let text = fs::read_to_string(&data).unwrap();
    let bad = t.path().join("bad.jsonl");
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[2] = lines[2].replace("\"category\":\"", "\"category\":\"depth-");
    lines[4] = lines[4].replace("\"answer\":\"", "\"answer\":\"about ").replace(" m\"", "\"").replace(" cm\"", "\"");
    fs::write(&bad, lines.join("\n")).unwrap();
    let res = sg(&["eval", "--from", s(&ck), "--data", s(&bad), "--out", s(&t.path().join("e"))]);
    assert_eq!(res.code, ExitCode::Data);
    assert!(res.stderr.contains("syn-5-00002") && res.stderr.contains("syn-5-00004"), "{}", res.stderr);

    let empty = t.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let res = sg(&["eval", "--from", s(&ck), "--data", s(&empty), "--out", s(&t.path().join("e"))]);
    assert_eq!(res.code, ExitCode::Data);

    let junk = t.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(sg(&["eval", "--from", s(&junk), "--data", s(&data), "--out", s(&t.path().join("e"))]).code, ExitCode::Data);
}

#[test]
fn image_files_round_trip_through_training_and_eval() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let out = t.path().join("data");
    assert_eq!(sg(&["--config", s(&cfg), "make-data", "--count", "6", "--images", "--out", s(&out)]).code, ExitCode::Success);
    let data = out.join("dataset.jsonl");
    assert!(fs::read_to_string(&data).unwrap().contains("\"file\":\"images/syn-5-00000.ppm\""));
    let r = t.path().join("r");
    assert_eq!(train(&cfg, "1", None, &data, &r, &[]).code, ExitCode::Success);
    let res = sg(&["eval", "--from", s(&r.join("stage1.ckpt")), "--data", s(&data), "--out", s(&t.path().join("e"))]);
    assert_eq!(res.code, ExitCode::Success, "{}", res.stderr);
}

#[test]
fn validate_reports_a_planted_defect_by_field() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let data = make_data(t.path(), &cfg, 3);
    let text = fs::read_to_string(&data).unwrap().replacen("{\"x\":0.25,", "{\"x\":0.95,", 1);
    assert!(text.contains("0.95"), "fixture box moved");
    fs::write(&data, text).unwrap();
    let res = sg(&["--config", s(&cfg), "validate", s(&data)]);
    assert_eq!(res.code, ExitCode::Data);
    assert!(res.stdout.contains("field boxes[0].x"), "{}", res.stdout);
    assert!(res.stdout.contains("3 records, 1 violations"), "{}", res.stdout);
}

#[test]
fn help_version_and_bad_flags() {
    assert_eq!(sg(&["--help"]).code, ExitCode::Success);
    assert_eq!(sg(&["--version"]).code, ExitCode::Success);
    assert_eq!(sg(&["train"]).code, ExitCode::Usage);
    assert_eq!(sg(&["frobnicate"]).code, ExitCode::Usage);
    assert_eq!(sg(&["--set", "model.variant=ha9", "diagnose"]).code, ExitCode::Usage);
}

#[test]
fn output_root_comes_from_the_environment() {
    let t = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spatialgeo"))
        .args(["make-data", "--count", "2"])
        .env(spatialgeo::cli::OUT_ENV, t.path().join("env-out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(t.path().join("env-out/dataset.jsonl").exists());
}

#[test]
fn diagnose_writes_similarity_tables() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let out = t.path().join("g");
    assert_eq!(sg(&["--config", s(&cfg), "diagnose", "--pairs", "5", "--out", s(&out)]).code, ExitCode::Success);
    let sim = fs::read_to_string(out.join("similarity.csv")).unwrap();
    // 10 pairs, 1 semantic tap and 4 geometry blocks each.
    assert_eq!(sim.lines().count(), 1 + 10 * 5);
    let contrast = fs::read_to_string(out.join("contrast.csv")).unwrap();
    assert!(contrast.starts_with("kind,encoder_tap,mean_similarity\nmatched,semantic,1.000000\n"), "{contrast}");
    assert_eq!(sg(&["--config", s(&cfg), "diagnose", "--pairs", "0", "--out", s(&out)]).code, ExitCode::Usage);
}
