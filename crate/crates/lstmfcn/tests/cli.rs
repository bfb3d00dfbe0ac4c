//! End-to-end behaviour of the `lstmfcn` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lstmfcn::checkpoint::Checkpoint;
use lstmfcn::history::read_history;
use lstmfcn::manifest::read_manifest;
use lstmfcn_core::model::{ModelConfig, ModelParams, Variant};
use lstmfcn_core::optim::FineTuneSchedule;
use tempfile::TempDir;

const LEN: usize = 24;

fn lstmfcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lstmfcn")).args(args).env_remove("LSTMFCN_OUT_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small generated CBF pair in `dir/data`.
fn data(dir: &TempDir) -> (PathBuf, PathBuf) {
    let out = dir.path().join("data");
    let len = LEN.to_string();
    let o = lstmfcn(&["generate-cbf", "--train-per-class", "4", "--test-per-class", "3", "--length", &len, "--seed", "5", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (out.join("CBF_TRAIN.tsv"), out.join("CBF_TEST.tsv"))
}

fn train(train: &Path, test: &Path, variant: &str, epochs: &str, out: &Path) -> Output {
    lstmfcn(&[
        "train", "--data-train", s(train), "--data-test", s(test), "--variant", variant, "--cells", "8", "--epochs", epochs,
        "--batch", "6", "--seed", "3", "--quiet", "--out-dir", s(out),
    ])
}

fn trained(dir: &TempDir, variant: &str) -> (PathBuf, PathBuf, PathBuf) {
    let (tr, te) = data(dir);
    let out = dir.path().join(variant);
    let o = train(&tr, &te, variant, "3", &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (tr, te, out.join("model.ckpt"))
}

#[test]
fn train_writes_checkpoint_history_and_manifest() {
    let dir = TempDir::new().unwrap();
    let (tr, te) = data(&dir);
    let out = dir.path().join("run");
    let o = train(&tr, &te, "lstm-fcn", "4", &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_history(&out.join("history.csv")).unwrap().len(), 4);
    let ckpt = Checkpoint::load(&out.join("model.ckpt")).unwrap();
    assert_eq!(ckpt.config().series_length, LEN);
    assert_eq!(ckpt.header.label_values, vec![1.0, 2.0, 3.0]);
    let m = read_manifest(&out.join("train_manifest.json")).unwrap();
    assert_eq!((m.command.as_str(), m.seed), ("train", Some(3)));
    assert_eq!(m.inputs, vec![tr, te]);
    assert_eq!(m.outputs.len(), 2);
    assert_eq!(m.config["epochs"], 4);
    let manifests = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with("manifest.json")).count();
    assert_eq!(manifests, 1);
}

#[test]
fn identical_train_invocations_write_identical_checkpoints() {
    let dir = TempDir::new().unwrap();
    let (tr, te) = data(&dir);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(code(&train(&tr, &te, "alstm-fcn", "3", out)), 0);
    }
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
}

#[test]
fn missing_flag_is_a_usage_error_naming_it() {
    let o = lstmfcn(&["train", "--data-test", "x.tsv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--data-train"), "{}", stderr(&o));
    assert_eq!(code(&lstmfcn(&["train", "--data-train", "a", "--data-test", "b", "--variant", "gru"])), 2);
}

#[test]
fn unreadable_or_malformed_data_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let (tr, _) = data(&dir);
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "1\t0.5\t0.25\n2\t0.5\toops\n").unwrap();
    let o = train(&tr, &bad, "lstm-fcn", "1", &dir.path().join("x"));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.tsv:2:3"), "{}", stderr(&o));
    assert_eq!(code(&train(&tr, &dir.path().join("missing.tsv"), "lstm-fcn", "1", &dir.path().join("x"))), 2);
}

#[test]
fn diverging_training_exits_with_3_and_the_epoch() {
    let dir = TempDir::new().unwrap();
    let (tr, te) = data(&dir);
    let text = fs::read_to_string(&tr).unwrap();
    let poisoned = dir.path().join("nan_TRAIN.tsv");
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<&str> = lines[0].split('\t').collect();
    cells[1] = "NaN";
    lines[0] = cells.join("\t");
    fs::write(&poisoned, lines.join("\n") + "\n").unwrap();
    let o = train(&poisoned, &te, "lstm-fcn", "2", &dir.path().join("x"));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch 1"), "{}", stderr(&o));
}

#[test]
fn out_dir_defaults_to_the_environment_variable() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_lstmfcn"))
        .args(["generate-cbf", "--train-per-class", "1", "--test-per-class", "1", "--length", "16"])
        .env("LSTMFCN_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(target.join("CBF_TRAIN.tsv").exists() && target.join("generate-cbf_manifest.json").exists());
}

fn finetune(ckpt: &Path, tr: &Path, te: &Path, k: Option<&str>, out: &Path) -> Output {
    let mut args = vec![
        "finetune", "--from", s(ckpt), "--data-train", s(tr), "--data-test", s(te), "--finetune-epochs", "1", "--quiet",
        "--out-dir", s(out),
    ];
    if let Some(k) = k {
        args.extend(["--k", k]);
    }
    lstmfcn(&args)
}

#[test]
fn finetune_logs_the_schedule_and_leaves_a_resume_point() {
    let dir = TempDir::new().unwrap();
    let (tr, te, ckpt) = trained(&dir, "lstm-fcn");
    let out = dir.path().join("ft");
    let o = finetune(&ckpt, &tr, &te, Some("5"), &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let logged: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("iteration")).map(String::from).collect();
    assert_eq!(
        logged,
        ["iteration 0 lr 1e-3 batch 128", "iteration 1 lr 5e-4 batch 128", "iteration 2 lr 2.5e-4 batch 64", "iteration 3 lr 1.25e-4 batch 64", "iteration 4 lr 1e-4 batch 32"]
    );
    assert_eq!(read_history(&out.join("finetune_history.csv")).unwrap().len(), 5);
    let resume = Checkpoint::load(&out.join("finetune_resume.ckpt")).unwrap();
    assert!(resume.header.schedule.is_none(), "a completed run leaves no schedule to resume");
    assert!(Checkpoint::load(&out.join("finetuned.ckpt")).unwrap().header.schedule.is_none());
    assert!(out.join("finetune_manifest.json").exists());
}

#[test]
fn finetune_resumes_a_stored_schedule() {
    let dir = TempDir::new().unwrap();
    let (tr, te, ckpt) = trained(&dir, "lstm-fcn");
    let mut c = Checkpoint::load(&ckpt).unwrap();
    let mut schedule = FineTuneSchedule::new(4, 1e-3, 128);
    schedule.advance().unwrap();
    schedule.advance().unwrap();
    c.header.schedule = Some(schedule);
    let interrupted = dir.path().join("interrupted.ckpt");
    c.save(&interrupted).unwrap();
    let o = finetune(&interrupted, &tr, &te, None, &dir.path().join("ft"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let logged: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("iteration")).map(String::from).collect();
    assert_eq!(logged, ["iteration 2 lr 2.5e-4 batch 64", "iteration 3 lr 1.25e-4 batch 64"]);
}

#[test]
fn finetune_with_k_0_copies_the_checkpoint() {
    let dir = TempDir::new().unwrap();
    let (tr, te, ckpt) = trained(&dir, "alstm-fcn");
    let out = dir.path().join("ft");
    let o = finetune(&ckpt, &tr, &te, Some("0"), &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(out.join("finetuned.ckpt")).unwrap(), fs::read(&ckpt).unwrap());
}

#[test]
fn damaged_checkpoints_exit_with_4() {
    let dir = TempDir::new().unwrap();
    let (tr, te, ckpt) = trained(&dir, "lstm-fcn");
    let bytes = fs::read(&ckpt).unwrap();
    let truncated = dir.path().join("truncated.ckpt");
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let o = finetune(&truncated, &tr, &te, Some("1"), &dir.path().join("ft"));
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("truncated.ckpt: invalid checkpoint: truncated at byte"), "{}", stderr(&o));
    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, "not a model").unwrap();
    let o = lstmfcn(&["evaluate", "--model", s(&garbage), "--data", s(&te), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));
}

#[test]
fn evaluate_prints_four_decimals_and_is_repeatable() {
    let dir = TempDir::new().unwrap();
    let (_, te, ckpt) = trained(&dir, "lstm-fcn");
    let run = |out: &Path| {
        let o = lstmfcn(&["evaluate", "--model", s(&ckpt), "--data", s(&te), "--out-dir", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (stdout(&o), fs::read_to_string(out.join("predictions.csv")).unwrap())
    };
    let (a, b) = (run(&dir.path().join("e1")), run(&dir.path().join("e2")));
    assert_eq!(a, b);
    let line = a.0.trim();
    let value = line.strip_prefix("accuracy ").unwrap();
    assert_eq!(value.len(), 6, "{line}");
    let rows: Vec<&str> = a.1.lines().collect();
    assert_eq!(rows[0], "index,true,predicted");
    assert_eq!(rows.len(), 10);
    let correct = rows[1..].iter().filter(|r| {
        let c: Vec<&str> = r.split(',').collect();
        c[1] == c[2]
    });
    assert_eq!(format!("{:.4}", correct.count() as f64 / 9.0), value);
}

#[test]
fn zero_model_accuracy_is_the_frequency_of_class_0() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("skewed_TEST.tsv");
    let mut text = String::new();
    for (label, count) in [(3, 2), (5, 5), (9, 3)] {
        for i in 0..count {
            let values: Vec<String> = (0..LEN).map(|t| ((t * (i + 2)) as f64).sin().to_string()).collect();
            text.push_str(&format!("{label},{}\n", values.join(",")));
        }
    }
    fs::write(&data, text).unwrap();
    let config = ModelConfig::new(Variant::AlstmFcn, LEN, 3, 8);
    let model = dir.path().join("zero.ckpt");
    Checkpoint::new(config.clone(), vec![3.0, 5.0, 9.0], ModelParams::zeros(&config)).save(&model).unwrap();
    let o = lstmfcn(&["evaluate", "--model", s(&model), "--data", s(&data), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "accuracy 0.2000");
}

#[test]
fn evaluate_rejects_data_that_does_not_fit_the_model() {
    let dir = TempDir::new().unwrap();
    let (_, _, ckpt) = trained(&dir, "lstm-fcn");
    let other = dir.path().join("other");
    assert_eq!(code(&lstmfcn(&["generate-cbf", "--train-per-class", "1", "--test-per-class", "1", "--length", "32", "--out-dir", s(&other)])), 0);
    let o = lstmfcn(&["evaluate", "--model", s(&ckpt), "--data", s(&other.join("CBF_TEST.tsv")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("length 32"), "{}", stderr(&o));
    let unseen = dir.path().join("unseen.tsv");
    fs::write(&unseen, format!("7,{}\n", vec!["0.5"; LEN].join(","))).unwrap();
    assert_eq!(code(&lstmfcn(&["evaluate", "--model", s(&ckpt), "--data", s(&unseen), "--out-dir", s(dir.path())])), 4);
}

#[test]
fn attention_rows_are_distributions_over_the_series() {
    let dir = TempDir::new().unwrap();
    let (_, te, ckpt) = trained(&dir, "alstm-fcn");
    let out = dir.path().join("att");
    let o = lstmfcn(&["attention", "--model", s(&ckpt), "--data", s(&te), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("attention.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), LEN + 2);
        let sum: f64 = cells[2..].iter().map(|c| c.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() <= 1e-9, "{sum}");
    }
    assert!(out.join("attention_manifest.json").exists());
}

#[test]
fn attention_needs_the_attention_variant() {
    let dir = TempDir::new().unwrap();
    let (_, te, ckpt) = trained(&dir, "lstm-fcn");
    let o = lstmfcn(&["attention", "--model", s(&ckpt), "--data", s(&te), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("no attention weights in this variant"), "{}", stderr(&o));
}

#[test]
fn compare_reports_ranks_tests_and_counts() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("results.csv");
    fs::write(&path, "dataset,classes,best,twin1,twin2\na,2,0.99,0.9,0.9\nb,3,0.95,0.8,0.8\nc,4,0.97,0.7,0.7\n").unwrap();
    let o = lstmfcn(&["compare", "--results", s(&path), "--baseline", "twin1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let line = |prefix: &str| text.lines().find(|l| l.starts_with(prefix)).unwrap().split_whitespace().map(String::from).collect::<Vec<_>>();
    assert_eq!(line("best ")[1..4], ["0.0097", "1.0000", "1.0000"]);
    assert_eq!(line("twin1 ")[1..4], ["0.0639", "2.5000", "2.5000"]);
    let twins = line("twin1  twin2");
    assert_eq!(twins[4..], ["1.000000", "exact", "no"]);
    assert!(text.contains("count versus baseline twin1"));
    let counts = text.split("count versus baseline").nth(1).unwrap();
    assert!(counts.lines().any(|l| l.split_whitespace().eq(["best", "3", "0"])), "{counts}");
    assert_eq!(stdout(&lstmfcn(&["compare", "--results", s(&path), "--baseline", "twin1"])), text);
}

#[test]
fn compare_rejects_ragged_and_empty_matrices() {
    let dir = TempDir::new().unwrap();
    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "dataset,classes,a,b\nx,2,0.9,0.8\ny,3,0.7\n").unwrap();
    let o = lstmfcn(&["compare", "--results", s(&ragged)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("ragged.csv:3:4"), "{}", stderr(&o));
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&lstmfcn(&["compare", "--results", s(&empty)])), 2);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    for variant in ["lstm-fcn", "alstm-fcn"] {
        let o = lstmfcn(&["gradcheck", "--variant", variant, "--cells", "8", "--length", "16", "--classes", "3", "--seed", "1"]);
        assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
        let last = stdout(&o).lines().last().unwrap().to_string();
        assert!(last.starts_with("max relative error ") && last.contains('e') && last.ends_with("PASS"), "{last}");
    }
    let o = lstmfcn(&["gradcheck", "--variant", "alstm-fcn", "--seed", "1", "--corrupt"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).trim_end().ends_with("FAIL"));
}
