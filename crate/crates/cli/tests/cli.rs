//! End-to-end command tests against the built binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mscan(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscan"))
        .args(args)
        .arg("--out")
        .arg(out_root)
        .output()
        .expect("binary runs")
}

fn run_dir(output: &Output) -> PathBuf {
    assert!(
        output.status.success(),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    PathBuf::from(String::from_utf8(output.stdout.clone()).unwrap().trim())
}

fn tmp_root(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mscan-cli-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small synthetic world shared by the smoke tests.
const TINY: &[&str] = &[
    "--set",
    "synthetic.num_users=80",
    "--set",
    "synthetic.num_items=50",
    "--set",
    "synthetic.events_per_user=25",
    "--set",
    "model.interest_ffn=16,8,1",
    "--set",
    "train.epochs=1",
];

fn with_tiny<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut args: Vec<&str> = Vec::new();
    args.extend_from_slice(extra);
    args.extend_from_slice(TINY);
    args
}

#[test]
fn pipeline_smoke_gen_train_eval() {
    let root = tmp_root("pipeline");
    let gen = run_dir(&mscan(&with_tiny(&["gen-data"]), &root));
    let events = gen.join("events.csv");
    assert!(events.exists());

    let events_arg = format!("io.events={}", events.display());
    let mut train_args = with_tiny(&["train"]);
    train_args.push("--set");
    train_args.push(&events_arg);
    let train_dir = run_dir(&mscan(&train_args, &root));
    assert!(train_dir.join("checkpoint.json").exists());
    assert!(train_dir.join("train_report.json").exists());
    assert!(train_dir.join("users.csv").exists());

    let ckpt_arg = format!("io.checkpoint={}", train_dir.join("checkpoint.json").display());
    let mut eval_args = with_tiny(&["eval"]);
    eval_args.push("--set");
    eval_args.push(&events_arg);
    eval_args.push("--set");
    eval_args.push(&ckpt_arg);
    let eval_dir = run_dir(&mscan(&eval_args, &root));
    let metrics = eval_dir.join("metrics.json");
    assert!(metrics.exists());

    // The hyperparameter portion of the config echo matches between
    // train and eval (they differ only in io.* inputs).
    let strip_io = |text: &str| -> String {
        text.lines().filter(|l| !l.starts_with("io.")).collect::<Vec<_>>().join("\n")
    };
    let train_echo = fs::read_to_string(train_dir.join("resolved.ini")).unwrap();
    let eval_echo = fs::read_to_string(eval_dir.join("resolved.ini")).unwrap();
    assert_eq!(strip_io(&train_echo), strip_io(&eval_echo));

    // The metrics parse as JSON with the expected shape.
    let parsed: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(parsed["overall"]["auc"].is_number());
    fs::remove_dir_all(root).ok();
}

#[test]
fn grad_check_exits_zero_and_passes() {
    let root = tmp_root("gradcheck");
    let out = mscan(&["grad-check"], &root);
    let dir = run_dir(&out);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    fs::remove_dir_all(root).ok();
}

#[test]
fn eval_without_checkpoint_is_a_missing_input_error() {
    let root = tmp_root("missing");
    let out = mscan(&["eval"], &root);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[missing-input]:"), "{stderr}");
    assert_eq!(stderr.lines().count(), 1);
    fs::remove_dir_all(root).ok();
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let root = tmp_root("unknown");
    let out = mscan(&["gen-data", "--set", "train.alfa=1"], &root);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[config]:"), "{stderr}");
    assert!(stderr.contains("train.alfa"));
    fs::remove_dir_all(root).ok();
}

#[test]
fn malformed_click_is_a_data_error() {
    let root = tmp_root("badclick");
    let events = root.join("bad.csv");
    fs::write(
        &events,
        "user_id,item_id,scenario_id,timestamp,click\n1,1,1,1,1\n1,2,1,2,2\n",
    )
    .unwrap();
    let events_arg = format!("io.events={}", events.display());
    let out = mscan(&["train", "--set", &events_arg], &root);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
    fs::remove_dir_all(root).ok();
}

#[test]
fn rerunning_a_report_emits_identical_bytes() {
    let root = tmp_root("stable");
    let gen = run_dir(&mscan(&with_tiny(&["gen-data"]), &root));
    let events_arg = format!("io.events={}", gen.join("events.csv").display());

    let mut args = with_tiny(&["ablate", "--seed", "1"]);
    args.push("--set");
    args.push(&events_arg);
    args.extend_from_slice(&["--set", "train.epochs=1", "--set", "model.interest_ffn=8,1"]);
    let first = run_dir(&mscan(&args, &root));
    let bytes_a = fs::read(first.join("ablation.json")).unwrap();
    let second = run_dir(&mscan(&args, &root));
    let bytes_b = fs::read(second.join("ablation.json")).unwrap();
    assert_eq!(first, second, "same config hashes to the same run dir");
    assert_eq!(bytes_a, bytes_b);
    fs::remove_dir_all(root).ok();
}

#[test]
fn sweep_csv_has_header_plus_grid_rows() {
    let root = tmp_root("sweepcsv");
    let gen = run_dir(&mscan(&with_tiny(&["gen-data"]), &root));
    let events_arg = format!("io.events={}", gen.join("events.csv").display());
    let mut args = with_tiny(&["sweep", "--seed", "1"]);
    args.push("--set");
    args.push(&events_arg);
    args.extend_from_slice(&[
        "--set",
        "sweep.hyper=c",
        "--set",
        "sweep.c_grid=0,0.5,1.0",
        "--set",
        "model.interest_ffn=8,1",
    ]);
    let dir = run_dir(&mscan(&args, &root));
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "value,mean_auc");
    fs::remove_dir_all(root).ok();
}

#[test]
fn baseline_single_covers_each_scenario_without_overall() {
    let root = tmp_root("baseline");
    let gen = run_dir(&mscan(&with_tiny(&["gen-data"]), &root));
    let events_arg = format!("io.events={}", gen.join("events.csv").display());
    let mut args = with_tiny(&["baseline"]);
    args.push("--set");
    args.push(&events_arg);
    args.extend_from_slice(&[
        "--set",
        "baseline.kind=single",
        "--set",
        "baseline.layers=8,4,2,1",
    ]);
    let dir = run_dir(&mscan(&args, &root));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("baseline_metrics.json")).unwrap())
            .unwrap();
    assert!(report["overall"].is_null());
    assert_eq!(report["per_scenario"].as_object().unwrap().len(), 3);
    fs::remove_dir_all(root).ok();
}
