//! The 2x2 component-ablation grid.
//!
//! Four variants per seed: both components, co-attention only, bias
//! branch only, neither. Disabling the co-attention path removes the
//! aggregated cross-scenario history from the interest head (history
//! evidence reduces to the current scenario's GRU state); disabling the
//! bias branch trains the interest logit directly on clicks and ranks
//! with it at inference.

use serde::Serialize;

use super::evaluate::evaluate;
use super::EvalError;
use crate::data::Example;
use crate::model::{InferenceConfig, ModelConfig, MScanModel, VocabSizes};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub saca: bool,
    pub sbe: bool,
    pub seed: u64,
    pub overall_auc: Option<f64>,
    pub per_scenario: std::collections::BTreeMap<u32, Option<f64>>,
    pub overall_interest_auc: Option<f64>,
    /// Populated when this cell's training or evaluation failed; the
    /// rest of the grid is unaffected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Trains and evaluates one variant.
pub fn run_variant(
    saca: bool,
    sbe: bool,
    seed: u64,
    train_set: &[Example],
    test_set: &[Example],
    model_cfg: &ModelConfig,
    vocab: VocabSizes,
    train_cfg: &TrainConfig,
    infer_cfg: &InferenceConfig,
) -> Result<(MScanModel, super::evaluate::MetricsReport), EvalError> {
    let cfg = ModelConfig {
        saca,
        sbe,
        init_seed: seed,
        ..model_cfg.clone()
    };
    let mut model = MScanModel::new(cfg, vocab)?;
    let tc = TrainConfig { seed, ..train_cfg.clone() };
    train(&mut model, train_set, &tc)?;
    let report = evaluate(&model, infer_cfg, test_set, true)?;
    Ok((model, report))
}

/// Runs the full grid; per-cell failures become error cells rather
/// than aborting the remaining combinations.
pub fn run_ablation(
    train_set: &[Example],
    test_set: &[Example],
    model_cfg: &ModelConfig,
    vocab: VocabSizes,
    train_cfg: &TrainConfig,
    infer_cfg: &InferenceConfig,
    seeds: &[u64],
) -> Vec<AblationCell> {
    let mut cells = Vec::with_capacity(4 * seeds.len());
    for &seed in seeds {
        for (saca, sbe) in [(true, true), (true, false), (false, true), (false, false)] {
            let cell = match run_variant(
                saca, sbe, seed, train_set, test_set, model_cfg, vocab, train_cfg, infer_cfg,
            ) {
                Ok((_, report)) => AblationCell {
                    saca,
                    sbe,
                    seed,
                    overall_auc: report.overall_auc(),
                    per_scenario: report
                        .per_scenario
                        .iter()
                        .map(|(s, m)| (*s, m.auc))
                        .collect(),
                    overall_interest_auc: report.overall_interest_auc(),
                    error: None,
                },
                Err(e) => AblationCell {
                    saca,
                    sbe,
                    seed,
                    overall_auc: None,
                    per_scenario: Default::default(),
                    overall_interest_auc: None,
                    error: Some(e.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    cells
}
