//! Run configuration: defaults, INI-style files, and `--set` overrides.
//!
//! Precedence is defaults < file < command line. Every key is known and
//! typed; anything else is rejected. The fully resolved configuration
//! echoes into the run directory, and that echo re-parses to the same
//! configuration, so a run is reproducible from its artifacts alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mscan_core::data::SyntheticConfig;
use mscan_core::eval::{BaselineKind, BaselineNetConfig};
use mscan_core::model::{InferenceConfig, ModelConfig};
use mscan_core::train::{OptimizerKind, TrainConfig, YsLabel};

#[derive(Debug)]
pub enum ConfigError {
    UnknownKey(String),
    BadValue { key: String, expected: &'static str, got: String },
    Io(String),
    BadLine { line: usize, text: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "unknown config key `{k}`"),
            ConfigError::BadValue { key, expected, got } => {
                write!(f, "config key `{key}` expects {expected}, got `{got}`")
            }
            ConfigError::Io(e) => write!(f, "cannot read config file: {e}"),
            ConfigError::BadLine { line, text } => {
                write!(f, "config line {line} is not `key = value`: `{text}`")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// Which scenarios a baseline run targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineTarget {
    All,
    Scenario(u32),
}

/// Everything a run needs, fully resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub synthetic: SyntheticConfig,
    pub events: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub baseline_report: Option<PathBuf>,
    pub test_fraction: f64,
    pub filter_multi_scenario: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferenceConfig,
    pub group_by_scenario: bool,
    pub baseline_kind: BaselineKind,
    pub baseline_target: BaselineTarget,
    pub baseline_net: BaselineNetConfig,
    pub sweep_hyper: String,
    pub c_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out_root: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let out_root = std::env::var_os("MSCAN_OUT_ROOT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        RunConfig {
            synthetic: SyntheticConfig::default(),
            events: None,
            checkpoint: None,
            baseline_report: None,
            test_fraction: 0.4,
            filter_multi_scenario: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            infer: InferenceConfig::default(),
            group_by_scenario: true,
            baseline_kind: BaselineKind::Mix,
            baseline_target: BaselineTarget::All,
            baseline_net: BaselineNetConfig::default(),
            sweep_hyper: "c".to_string(),
            c_grid: vec![0.0, 0.1, 0.25, 0.5, 1.0, 2.0],
            alpha_grid: vec![0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0],
            seeds: vec![1],
            out_root,
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.trim().parse::<T>().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        expected,
        got: value.trim().to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::BadValue {
            key: key.to_string(),
            expected: "boolean (true/false)",
            got: other.to_string(),
        }),
    }
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_as::<f64>(key, s, "comma-separated reals"))
        .collect()
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_as::<usize>(key, s, "comma-separated positive integers"))
        .collect()
}

fn parse_u64_list(key: &str, value: &str) -> Result<Vec<u64>, ConfigError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_as::<u64>(key, s, "comma-separated seeds"))
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "synthetic.num_users" => self.synthetic.num_users = parse_as(key, v, "positive integer")?,
            "synthetic.num_items" => self.synthetic.num_items = parse_as(key, v, "positive integer")?,
            "synthetic.num_scenarios" => self.synthetic.num_scenarios = parse_as(key, v, "positive integer")?,
            "synthetic.latent_dim" => self.synthetic.latent_dim = parse_as(key, v, "positive integer")?,
            "synthetic.bias_strength" => self.synthetic.bias_strength = parse_as(key, v, "nonnegative real")?,
            "synthetic.scenario_interest_shift" => {
                self.synthetic.scenario_interest_shift = parse_as(key, v, "nonnegative real")?
            }
            "synthetic.events_per_user" => self.synthetic.events_per_user = parse_as(key, v, "positive integer")?,
            "synthetic.seed" => self.synthetic.seed = parse_as(key, v, "unsigned integer")?,
            "io.events" => self.events = Some(PathBuf::from(v)),
            "io.checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "io.baseline_report" => self.baseline_report = Some(PathBuf::from(v)),
            "data.test_fraction" => self.test_fraction = parse_as(key, v, "real in (0,1)")?,
            "data.filter_multi_scenario" => self.filter_multi_scenario = parse_bool(key, v)?,
            "data.cap_mixed" => self.model.caps.0 = parse_as(key, v, "positive integer")?,
            "data.cap_current" => self.model.caps.1 = parse_as(key, v, "positive integer")?,
            "model.embed_dim" => self.model.embed_dim = parse_as(key, v, "positive integer")?,
            "model.gru_hidden" => self.model.gru_hidden = parse_as(key, v, "positive integer")?,
            "model.attn_ffn" => self.model.attn_ffn_layers = parse_usize_list(key, v)?,
            "model.interest_ffn" => self.model.interest_ffn_layers = parse_usize_list(key, v)?,
            "model.scenario_ffn" => self.model.scenario_ffn_layers = parse_usize_list(key, v)?,
            "model.init_seed" => self.model.init_seed = parse_as(key, v, "unsigned integer")?,
            "model.init_scale" => self.model.init_scale = parse_as(key, v, "nonnegative real")?,
            "model.saca" => self.model.saca = parse_bool(key, v)?,
            "model.sbe" => self.model.sbe = parse_bool(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse_as(key, v, "positive real")?,
            "train.batch_size" => self.train.batch_size = parse_as(key, v, "positive integer")?,
            "train.epochs" => self.train.epochs = parse_as(key, v, "positive integer")?,
            "train.alpha" => self.train.alpha = parse_as(key, v, "nonnegative real")?,
            "train.seed" => self.train.seed = parse_as(key, v, "unsigned integer")?,
            "train.optimizer" => {
                self.train.optimizer = match v {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::default(),
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            expected: "one of sgd|adam",
                            got: other.to_string(),
                        })
                    }
                }
            }
            "train.adam_beta1" | "train.adam_beta2" | "train.adam_eps" => {
                let val: f64 = parse_as(key, v, "real")?;
                let (mut b1, mut b2, mut e) = match self.train.optimizer {
                    OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
                    OptimizerKind::Sgd => (0.9, 0.999, 1e-8),
                };
                match key {
                    "train.adam_beta1" => b1 = val,
                    "train.adam_beta2" => b2 = val,
                    _ => e = val,
                }
                self.train.optimizer = OptimizerKind::Adam { beta1: b1, beta2: b2, eps: e };
            }
            "train.clip_norm" => {
                self.train.clip_norm = if v == "none" {
                    None
                } else {
                    Some(parse_as(key, v, "positive real or `none`")?)
                }
            }
            "train.ys_label" => {
                self.train.ys_label = match v {
                    "click" => YsLabel::Click,
                    "scenario_ctr" => YsLabel::ScenarioCtr,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            expected: "one of click|scenario_ctr",
                            got: other.to_string(),
                        })
                    }
                }
            }
            "train.parallel" => self.train.parallel = parse_bool(key, v)?,
            "infer.c" => self.infer.c = parse_as(key, v, "real")?,
            "eval.group_by_scenario" => self.group_by_scenario = parse_bool(key, v)?,
            "baseline.kind" => {
                self.baseline_kind = match v {
                    "single" => BaselineKind::Single,
                    "mix" => BaselineKind::Mix,
                    "finetune" => BaselineKind::Finetune,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            expected: "one of single|mix|finetune",
                            got: other.to_string(),
                        })
                    }
                }
            }
            "baseline.target" => {
                self.baseline_target = if v == "all" {
                    BaselineTarget::All
                } else {
                    BaselineTarget::Scenario(parse_as(key, v, "scenario id or `all`")?)
                }
            }
            "baseline.embed_dim" => self.baseline_net.embed_dim = parse_as(key, v, "positive integer")?,
            "baseline.layers" => self.baseline_net.layers = parse_usize_list(key, v)?,
            "baseline.init_seed" => self.baseline_net.init_seed = parse_as(key, v, "unsigned integer")?,
            "baseline.init_scale" => self.baseline_net.init_scale = parse_as(key, v, "nonnegative real")?,
            "baseline.finetune_lr_scale" => {
                self.baseline_net.finetune_lr_scale = parse_as(key, v, "positive real")?
            }
            "baseline.finetune_epochs" => {
                self.baseline_net.finetune_epochs = parse_as(key, v, "nonnegative integer")?
            }
            "sweep.hyper" => {
                if v != "c" && v != "alpha" {
                    return Err(ConfigError::BadValue {
                        key: key.to_string(),
                        expected: "one of c|alpha",
                        got: v.to_string(),
                    });
                }
                self.sweep_hyper = v.to_string();
            }
            "sweep.c_grid" => self.c_grid = parse_f64_list(key, v)?,
            "sweep.alpha_grid" => self.alpha_grid = parse_f64_list(key, v)?,
            "run.seeds" => self.seeds = parse_u64_list(key, v)?,
            "run.out_root" => self.out_root = PathBuf::from(v),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses an INI-style file over the defaults, then applies
    /// `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text =
                std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
            let mut section = String::new();
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                    continue;
                }
                if line.starts_with('[') && line.ends_with(']') {
                    section = line[1..line.len() - 1].trim().to_string();
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(ConfigError::BadLine { line: lineno + 1, text: line.to_string() });
                };
                let key = key.trim();
                let full = if key.contains('.') || section.is_empty() {
                    key.to_string()
                } else {
                    format!("{section}.{key}")
                };
                cfg.set(&full, value)?;
            }
        }
        for pair in overrides {
            let Some((key, value)) = pair.split_once('=') else {
                return Err(ConfigError::BadLine { line: 0, text: pair.clone() });
            };
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    /// Canonical echo of every key, sorted, suitable for re-parsing.
    pub fn echo(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut kv = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let flist = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");

        kv("synthetic.num_users", self.synthetic.num_users.to_string());
        kv("synthetic.num_items", self.synthetic.num_items.to_string());
        kv("synthetic.num_scenarios", self.synthetic.num_scenarios.to_string());
        kv("synthetic.latent_dim", self.synthetic.latent_dim.to_string());
        kv("synthetic.bias_strength", self.synthetic.bias_strength.to_string());
        kv(
            "synthetic.scenario_interest_shift",
            self.synthetic.scenario_interest_shift.to_string(),
        );
        kv("synthetic.events_per_user", self.synthetic.events_per_user.to_string());
        kv("synthetic.seed", self.synthetic.seed.to_string());
        if let Some(p) = &self.events {
            kv("io.events", p.display().to_string());
        }
        if let Some(p) = &self.checkpoint {
            kv("io.checkpoint", p.display().to_string());
        }
        if let Some(p) = &self.baseline_report {
            kv("io.baseline_report", p.display().to_string());
        }
        kv("data.test_fraction", self.test_fraction.to_string());
        kv("data.filter_multi_scenario", self.filter_multi_scenario.to_string());
        kv("data.cap_mixed", self.model.caps.0.to_string());
        kv("data.cap_current", self.model.caps.1.to_string());
        kv("model.embed_dim", self.model.embed_dim.to_string());
        kv("model.gru_hidden", self.model.gru_hidden.to_string());
        kv("model.attn_ffn", list(&self.model.attn_ffn_layers));
        kv("model.interest_ffn", list(&self.model.interest_ffn_layers));
        kv("model.scenario_ffn", list(&self.model.scenario_ffn_layers));
        kv("model.init_seed", self.model.init_seed.to_string());
        kv("model.init_scale", self.model.init_scale.to_string());
        kv("model.saca", self.model.saca.to_string());
        kv("model.sbe", self.model.sbe.to_string());
        kv("train.learning_rate", self.train.learning_rate.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.alpha", self.train.alpha.to_string());
        kv("train.seed", self.train.seed.to_string());
        match self.train.optimizer {
            OptimizerKind::Sgd => kv("train.optimizer", "sgd".into()),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                kv("train.optimizer", "adam".into());
                kv("train.adam_beta1", beta1.to_string());
                kv("train.adam_beta2", beta2.to_string());
                kv("train.adam_eps", eps.to_string());
            }
        }
        kv(
            "train.clip_norm",
            self.train.clip_norm.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
        );
        kv(
            "train.ys_label",
            match self.train.ys_label {
                YsLabel::Click => "click".into(),
                YsLabel::ScenarioCtr => "scenario_ctr".into(),
            },
        );
        kv("train.parallel", self.train.parallel.to_string());
        kv("infer.c", self.infer.c.to_string());
        kv("eval.group_by_scenario", self.group_by_scenario.to_string());
        kv(
            "baseline.kind",
            match self.baseline_kind {
                BaselineKind::Single => "single".into(),
                BaselineKind::Mix => "mix".into(),
                BaselineKind::Finetune => "finetune".into(),
            },
        );
        kv(
            "baseline.target",
            match &self.baseline_target {
                BaselineTarget::All => "all".into(),
                BaselineTarget::Scenario(s) => s.to_string(),
            },
        );
        kv("baseline.embed_dim", self.baseline_net.embed_dim.to_string());
        kv("baseline.layers", list(&self.baseline_net.layers));
        kv("baseline.init_seed", self.baseline_net.init_seed.to_string());
        kv("baseline.init_scale", self.baseline_net.init_scale.to_string());
        kv("baseline.finetune_lr_scale", self.baseline_net.finetune_lr_scale.to_string());
        kv("baseline.finetune_epochs", self.baseline_net.finetune_epochs.to_string());
        kv("sweep.hyper", self.sweep_hyper.clone());
        kv("sweep.c_grid", flist(&self.c_grid));
        kv("sweep.alpha_grid", flist(&self.alpha_grid));
        kv(
            "run.seeds",
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("run.out_root", self.out_root.display().to_string());

        lines.sort();
        let mut out = String::new();
        for line in lines {
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// FNV-1a of the canonical echo; names the run directory.
    pub fn hash(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.echo().as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}
