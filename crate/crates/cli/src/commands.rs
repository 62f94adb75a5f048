//! Command implementations: each resolves its inputs, runs, and leaves
//! artifacts plus the resolved config echo in its run directory.

use std::fs;
use std::path::{Path, PathBuf};

use mscan_core::checkpoint::{load_model, save_model};
use mscan_core::data::{
    build_sequences, filter_multi_scenario_users, generate_synthetic_records, read_events_csv,
    split_examples, write_events_csv, write_vocab_csv, CsvSchema, DataError, Example,
};
use mscan_core::eval::{
    evaluate, run_ablation, run_baseline, sweep, BaselineKind, MetricsReport, SweepHyper,
};
use mscan_core::model::{MScanModel, VocabSizes};
use mscan_core::train::{gradcheck_fixture, check_model_gradients, train, TrainConfig};

use crate::config::{BaselineTarget, RunConfig};

/// Failure classes mapped to distinct exit codes.
#[derive(Debug)]
pub enum CmdError {
    Config(String),
    MissingInput(String),
    Data(DataError),
    Runtime(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::MissingInput(_) => 3,
            CmdError::Data(_) => 4,
            CmdError::Runtime(_) => 5,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CmdError::Config(_) => "config",
            CmdError::MissingInput(_) => "missing-input",
            CmdError::Data(_) => "data",
            CmdError::Runtime(_) => "runtime",
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(m) | CmdError::MissingInput(m) | CmdError::Runtime(m) => write!(f, "{m}"),
            CmdError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<DataError> for CmdError {
    fn from(e: DataError) -> Self {
        CmdError::Data(e)
    }
}

fn runtime(e: impl std::fmt::Display) -> CmdError {
    CmdError::Runtime(e.to_string())
}

/// Creates `<out_root>/<command>-<confighash>/` and echoes the
/// resolved config into it.
pub fn prepare_run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf, CmdError> {
    let dir = cfg.out_root.join(format!("{command}-{}", cfg.hash()));
    fs::create_dir_all(&dir).map_err(runtime)?;
    fs::write(dir.join("resolved.ini"), cfg.echo()).map_err(runtime)?;
    Ok(dir)
}

/// Serializes a report with deterministic key order and a trailing
/// newline; identical reports yield identical bytes.
pub fn emit_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CmdError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(runtime)?;
    Ok(())
}

struct Dataset {
    train: Vec<Example>,
    test: Vec<Example>,
    vocab: VocabSizes,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CmdError> {
    let path = cfg
        .events
        .as_ref()
        .ok_or_else(|| CmdError::MissingInput("io.events is required for this command".into()))?;
    if !path.exists() {
        return Err(CmdError::MissingInput(format!(
            "events file not found: {}",
            path.display()
        )));
    }
    let (records, vocabs) = read_events_csv(path, &CsvSchema::default())?;
    let records = if cfg.filter_multi_scenario {
        filter_multi_scenario_users(&records)?
    } else {
        records
    };
    let examples = build_sequences(&records, cfg.model.caps);
    let (train, test) = split_examples(examples, cfg.test_fraction)?;
    Ok(Dataset {
        train,
        test,
        vocab: VocabSizes {
            users: vocabs.users.len(),
            items: vocabs.items.len(),
            scenarios: vocabs.scenarios.len(),
        },
    })
}

pub fn gen_data(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let dir = prepare_run_dir(cfg, "gen-data")?;
    let (records, _) = generate_synthetic_records(&cfg.synthetic)?;
    write_events_csv(&dir.join("events.csv"), &records)?;
    Ok(dir)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let dir = prepare_run_dir(cfg, "train")?;
    let data = load_dataset(cfg)?;
    let mut model = MScanModel::new(cfg.model.clone(), data.vocab).map_err(runtime)?;
    let report = train(&mut model, &data.train, &cfg.train).map_err(runtime)?;
    save_model(&model, &dir.join("checkpoint.json")).map_err(runtime)?;
    emit_json(&dir.join("train_report.json"), &report)?;

    // Persist the id mappings next to the checkpoint.
    let path = cfg.events.as_ref().unwrap();
    let (_, vocabs) = read_events_csv(path, &CsvSchema::default())?;
    write_vocab_csv(&dir.join("users.csv"), &vocabs.users)?;
    write_vocab_csv(&dir.join("items.csv"), &vocabs.items)?;
    write_vocab_csv(&dir.join("scenarios.csv"), &vocabs.scenarios)?;
    Ok(dir)
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let ckpt = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CmdError::MissingInput("io.checkpoint is required for eval".into()))?;
    if !ckpt.exists() {
        return Err(CmdError::MissingInput(format!(
            "checkpoint not found: {}",
            ckpt.display()
        )));
    }
    let dir = prepare_run_dir(cfg, "eval")?;
    let model = load_model(ckpt).map_err(runtime)?;
    let data = load_dataset(cfg)?;
    let mut report =
        evaluate(&model, &cfg.infer, &data.test, cfg.group_by_scenario).map_err(runtime)?;
    if let Some(base_path) = &cfg.baseline_report {
        if !base_path.exists() {
            return Err(CmdError::MissingInput(format!(
                "baseline report not found: {}",
                base_path.display()
            )));
        }
        let text = fs::read_to_string(base_path).map_err(runtime)?;
        let base: MetricsReport = serde_json::from_str(&text).map_err(runtime)?;
        report.attach_rel_impr("baseline", &base);
    }
    emit_json(&dir.join("metrics.json"), &report)?;
    Ok(dir)
}

pub fn ablate_cmd(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let dir = prepare_run_dir(cfg, "ablate")?;
    let data = load_dataset(cfg)?;
    let cells = run_ablation(
        &data.train,
        &data.test,
        &cfg.model,
        data.vocab,
        &cfg.train,
        &cfg.infer,
        &cfg.seeds,
    );
    emit_json(&dir.join("ablation.json"), &cells)?;
    Ok(dir)
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let dir = prepare_run_dir(cfg, "sweep")?;
    let data = load_dataset(cfg)?;
    let (hyper, grid) = match cfg.sweep_hyper.as_str() {
        "c" => (SweepHyper::C, cfg.c_grid.clone()),
        _ => (SweepHyper::Alpha, cfg.alpha_grid.clone()),
    };
    let curve = sweep(
        hyper,
        &grid,
        &data.train,
        &data.test,
        &cfg.model,
        data.vocab,
        &cfg.train,
        &cfg.infer,
        &cfg.seeds,
    )
    .map_err(runtime)?;
    emit_json(&dir.join("sweep.json"), &curve)?;
    fs::write(dir.join("sweep.csv"), curve.to_csv()).map_err(runtime)?;
    Ok(dir)
}

pub fn grad_check_cmd(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let dir = prepare_run_dir(cfg, "grad-check")?;
    let seed = cfg.seeds.first().copied().unwrap_or(3);
    let (mut model, batch) = gradcheck_fixture(seed);
    let report =
        check_model_gradients(&mut model, &batch, cfg.train.alpha, 1e-5, 1e-4).map_err(runtime)?;
    emit_json(&dir.join("gradcheck.json"), &report)?;
    if !report.pass {
        return Err(CmdError::Runtime(format!(
            "gradient check failed: max rel err {}",
            report.max_rel_err
        )));
    }
    Ok(dir)
}

pub fn baseline_cmd(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let dir = prepare_run_dir(cfg, "baseline")?;
    let data = load_dataset(cfg)?;
    let tc = TrainConfig { ..cfg.train.clone() };

    let report = match (cfg.baseline_kind, &cfg.baseline_target) {
        (BaselineKind::Mix, _) => run_baseline(
            BaselineKind::Mix,
            None,
            &data.train,
            &data.test,
            &cfg.baseline_net,
            data.vocab,
            &tc,
        )
        .map_err(runtime)?,
        (kind, BaselineTarget::Scenario(s)) => run_baseline(
            kind,
            Some(*s),
            &data.train,
            &data.test,
            &cfg.baseline_net,
            data.vocab,
            &tc,
        )
        .map_err(runtime)?,
        (kind, BaselineTarget::All) => {
            // One model per scenario; their rows merge into one report
            // with no pooled row.
            let mut scenarios: Vec<u32> = data.train.iter().map(|e| e.scenario_id).collect();
            scenarios.sort_unstable();
            scenarios.dedup();
            let mut merged: Option<MetricsReport> = None;
            for s in scenarios {
                let rep = run_baseline(
                    kind,
                    Some(s),
                    &data.train,
                    &data.test,
                    &cfg.baseline_net,
                    data.vocab,
                    &tc,
                )
                .map_err(runtime)?;
                match &mut merged {
                    None => merged = Some(rep),
                    Some(m) => m.per_scenario.extend(rep.per_scenario),
                }
            }
            merged.ok_or_else(|| CmdError::Runtime("no scenarios in training data".into()))?
        }
    };
    emit_json(&dir.join("baseline_metrics.json"), &report)?;
    Ok(dir)
}
