//! Hyperparameter sweeps over the reference constant `c` and the loss
//! balance `alpha`.
//!
//! `c` only rescores a trained model, so its sweep trains once per seed
//! and re-ranks; `alpha` changes the objective, so its sweep retrains
//! at every grid point. Per-point failures leave gaps rather than
//! aborting the curve.

use serde::Serialize;

use super::evaluate::{report_from_scores, score_examples};
use super::EvalError;
use crate::data::Example;
use crate::model::{InferenceConfig, ModelConfig, MScanModel, VocabSizes};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepHyper {
    C,
    Alpha,
}

impl SweepHyper {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepHyper::C => "c",
            SweepHyper::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub auc: Vec<Option<f64>>,
    /// Model checksum backing each point. A `c` sweep reuses one
    /// trained model, so these are all equal within a seed.
    pub checksums: Vec<Option<String>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCurve {
    pub hyper: String,
    pub grid: Vec<f64>,
    /// Mean pooled AUC per grid value over the seeds with results.
    pub mean_auc: Vec<Option<f64>>,
    pub seeds: Vec<SeedCurve>,
}

impl SweepCurve {
    /// Two-column CSV for external plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,mean_auc\n");
        for (v, auc) in self.grid.iter().zip(&self.mean_auc) {
            match auc {
                Some(a) => out.push_str(&format!("{v},{a}\n")),
                None => out.push_str(&format!("{v},nan\n")),
            }
        }
        out
    }
}

pub fn sweep(
    hyper: SweepHyper,
    grid: &[f64],
    train_set: &[Example],
    test_set: &[Example],
    model_cfg: &ModelConfig,
    vocab: VocabSizes,
    train_cfg: &TrainConfig,
    infer_cfg: &InferenceConfig,
    seeds: &[u64],
) -> Result<SweepCurve, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::BadGrid("empty grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EvalError::BadGrid("grid must be strictly increasing".into()));
    }
    if seeds.is_empty() {
        return Err(EvalError::BadGrid("at least one seed required".into()));
    }

    let mut seed_curves = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut auc = Vec::with_capacity(grid.len());
        let mut checksums = Vec::with_capacity(grid.len());
        let mut errors = Vec::new();
        match hyper {
            SweepHyper::C => {
                // One checkpoint per seed; every grid point rescoring it.
                let built = (|| -> Result<(MScanModel, Vec<_>), EvalError> {
                    let cfg = ModelConfig { init_seed: seed, ..model_cfg.clone() };
                    let mut model = MScanModel::new(cfg, vocab)?;
                    let tc = TrainConfig { seed, ..train_cfg.clone() };
                    train(&mut model, train_set, &tc)?;
                    let scored = score_examples(&model, test_set)?;
                    Ok((model, scored))
                })();
                match built {
                    Err(e) => {
                        errors.push(format!("seed {seed}: {e}"));
                        auc.resize(grid.len(), None);
                        checksums.resize(grid.len(), None);
                    }
                    Ok((model, scored)) => {
                        for &c in grid {
                            match report_from_scores(&scored, c, false) {
                                Ok(report) => {
                                    auc.push(report.overall_auc());
                                    checksums.push(Some(model.params.checksum()));
                                }
                                Err(e) => {
                                    errors.push(format!("seed {seed} c={c}: {e}"));
                                    auc.push(None);
                                    checksums.push(None);
                                }
                            }
                        }
                    }
                }
            }
            SweepHyper::Alpha => {
                for &alpha in grid {
                    let point = (|| -> Result<(String, Option<f64>), EvalError> {
                        let cfg = ModelConfig { init_seed: seed, ..model_cfg.clone() };
                        let mut model = MScanModel::new(cfg, vocab)?;
                        let tc = TrainConfig { seed, alpha, ..train_cfg.clone() };
                        train(&mut model, train_set, &tc)?;
                        let scored = score_examples(&model, test_set)?;
                        let report = report_from_scores(&scored, infer_cfg.c, false)?;
                        Ok((model.params.checksum(), report.overall_auc()))
                    })();
                    match point {
                        Ok((checksum, a)) => {
                            auc.push(a);
                            checksums.push(Some(checksum));
                        }
                        Err(e) => {
                            errors.push(format!("seed {seed} alpha={alpha}: {e}"));
                            auc.push(None);
                            checksums.push(None);
                        }
                    }
                }
            }
        }
        seed_curves.push(SeedCurve { seed, auc, checksums, errors });
    }

    let mean_auc = (0..grid.len())
        .map(|i| {
            let vals: Vec<f64> = seed_curves.iter().filter_map(|s| s.auc[i]).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect();

    Ok(SweepCurve {
        hyper: hyper.as_str().to_string(),
        grid: grid.to_vec(),
        mean_auc,
        seeds: seed_curves,
    })
}
