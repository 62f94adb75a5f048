//! The joint training objective and the optimization loop.
//!
//! Per example the fused logit is supervised against the click label
//! and, when the bias branch exists, the scenario logit against its own
//! target; the batch objective is `mean(L_uis) + alpha * mean(L_s)`.
//! Shuffling is a pure function of (seed, epoch), batch gradients fold
//! in example order, and parallel evaluation reduces in that same fixed
//! order, so a run is bit-reproducible with any worker count.

mod loss;
mod optimizer;

pub use loss::{loss_s, loss_total, loss_uis};
pub use optimizer::{OptimizerKind, OptimizerState};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    check_gradients, DifferentiableLoss, GradCheckError, GradCheckReport, GradientMap, Parameter,
    Primitive, Tape, Tensor, VarId,
};
use crate::data::Example;
use crate::model::{checksum_parameters, ModelError, MScanModel};
use crate::rng::Prng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    GradCheck(#[from] GradCheckError),
}

/// Supervision target for the scenario-bias branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YsLabel {
    /// The click label itself (default).
    Click,
    /// The scenario's training click-through rate, as a soft target.
    ScenarioCtr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Balance coefficient on the scenario loss.
    pub alpha: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f64>,
    pub ys_label: YsLabel,
    /// Fan batch evaluation across threads (reduction order is fixed
    /// either way, so results are identical).
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 256,
            epochs: 3,
            alpha: 1.0,
            seed: 1,
            optimizer: OptimizerKind::default(),
            clip_norm: None,
            ys_label: YsLabel::Click,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLosses {
    pub l_uis: f64,
    pub l_s: f64,
    pub l_final: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLosses>,
    pub seed: u64,
    pub checksum: String,
    pub wall_time_s: f64,
}

/// Per-example loss components as plain values.
#[derive(Debug, Clone, Copy)]
pub struct ExampleLosses {
    pub l_uis: f64,
    pub l_s: f64,
}

/// Extra context the loss construction needs beyond the example.
pub struct LossCtx {
    pub alpha: f64,
    /// Per-scenario soft targets; `None` means supervise with clicks.
    pub ys_targets: Option<Vec<f64>>,
}

impl LossCtx {
    pub fn new(cfg: &TrainConfig, data: &[Example]) -> Self {
        let ys_targets = match cfg.ys_label {
            YsLabel::Click => None,
            YsLabel::ScenarioCtr => Some(scenario_ctr(data)),
        };
        LossCtx {
            alpha: cfg.alpha,
            ys_targets,
        }
    }
}

fn scenario_ctr(data: &[Example]) -> Vec<f64> {
    let max_s = data.iter().map(|e| e.scenario_id).max().unwrap_or(0) as usize;
    let mut clicks = vec![0.0; max_s + 1];
    let mut counts = vec![0.0; max_s + 1];
    for e in data {
        clicks[e.scenario_id as usize] += e.label as u8 as f64;
        counts[e.scenario_id as usize] += 1.0;
    }
    let global = clicks.iter().sum::<f64>() / counts.iter().sum::<f64>().max(1.0);
    clicks
        .iter()
        .zip(&counts)
        .map(|(c, n)| if *n > 0.0 { c / n } else { global })
        .collect()
}

/// Anything the shared loop can optimize: builds one example's scalar
/// loss on a tape and exposes its parameters.
pub trait TrainableModel: Sync {
    fn build_example_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        ex: &Example,
        ctx: &LossCtx,
    ) -> Result<(VarId, ExampleLosses), ModelError>;

    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;
}

impl TrainableModel for MScanModel {
    fn build_example_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        ex: &Example,
        ctx: &LossCtx,
    ) -> Result<(VarId, ExampleLosses), ModelError> {
        let nodes = self.forward_on_tape(tape, ex)?;
        let y = ex.label as u8 as f64;
        match (nodes.y_uis, nodes.y_s) {
            (Some(y_uis), Some(y_s)) => {
                let l_uis = tape.apply(Primitive::BceWithLogits { target: y }, &[y_uis])?;
                let ys_target = ctx
                    .ys_targets
                    .as_ref()
                    .map(|t| t[ex.scenario_id as usize])
                    .unwrap_or(y);
                let l_s = tape.apply(Primitive::BceWithLogits { target: ys_target }, &[y_s])?;
                let weighted = tape.apply(Primitive::Scale(ctx.alpha), &[l_s])?;
                let total = tape.apply(Primitive::Add, &[l_uis, weighted])?;
                Ok((
                    total,
                    ExampleLosses {
                        l_uis: tape.value(l_uis).item(),
                        l_s: tape.value(l_s).item(),
                    },
                ))
            }
            _ => {
                // No bias branch: supervise the interest logit directly.
                let l = tape.apply(Primitive::BceWithLogits { target: y }, &[nodes.y_m])?;
                Ok((
                    l,
                    ExampleLosses {
                        l_uis: tape.value(l).item(),
                        l_s: 0.0,
                    },
                ))
            }
        }
    }

    fn parameters(&self) -> Vec<&Parameter> {
        self.params.iter()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.params.iter_mut()
    }
}

fn example_grads<M: TrainableModel>(
    model: &M,
    ex: &Example,
    ctx: &LossCtx,
) -> Result<(ExampleLosses, GradientMap), ModelError> {
    let mut tape = Tape::new();
    let (loss, losses) = model.build_example_loss(&mut tape, ex, ctx)?;
    let grads = tape.backward(loss)?;
    Ok((losses, grads))
}

/// The deterministic mini-batch loop shared by the main model and the
/// baselines.
pub fn train<M: TrainableModel>(
    model: &mut M,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(TrainError::BadConfig("learning_rate must be positive".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(TrainError::BadConfig("batch_size and epochs must be positive".into()));
    }
    if cfg.alpha < 0.0 {
        return Err(TrainError::BadConfig("alpha must be nonnegative".into()));
    }

    let started = Instant::now();
    let ctx = LossCtx::new(cfg, data);
    let mut opt = OptimizerState::new(cfg.optimizer, &model.parameters());
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        epoch_permutation(cfg.seed, epoch).shuffle(&mut order);

        let mut sum_uis = 0.0;
        let mut sum_s = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(ExampleLosses, GradientMap), ModelError>> = if cfg.parallel {
                chunk
                    .par_iter()
                    .map(|&i| example_grads(model, &data[i], &ctx))
                    .collect()
            } else {
                chunk
                    .iter()
                    .map(|&i| example_grads(model, &data[i], &ctx))
                    .collect()
            };

            let mut folded = GradientMap::new();
            for res in results {
                let (losses, grads) = res?;
                if !losses.l_uis.is_finite() || !losses.l_s.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
                }
                sum_uis += losses.l_uis;
                sum_s += losses.l_s;
                folded.add_assign(grads);
            }
            folded.scale(1.0 / chunk.len() as f64);
            if let Some(max_norm) = cfg.clip_norm {
                let norm = folded.global_norm();
                if norm > max_norm {
                    folded.scale(max_norm / norm);
                }
            }

            for p in model.parameters_mut() {
                p.zero_grad();
            }
            folded.accumulate_into(model.parameters_mut());
            opt.step(model.parameters_mut(), cfg.learning_rate);
        }

        let n = data.len() as f64;
        let l_uis = sum_uis / n;
        let l_s = sum_s / n;
        epochs.push(EpochLosses {
            l_uis,
            l_s,
            l_final: loss_total(l_uis, l_s, cfg.alpha),
        });
    }

    Ok(TrainReport {
        epochs,
        seed: cfg.seed,
        checksum: checksum_parameters(model.parameters().into_iter()),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// The epoch's shuffle stream: a pure function of (seed, epoch).
pub fn epoch_permutation(seed: u64, epoch: usize) -> Prng {
    Prng::derive(seed, epoch as u64 + 1)
}

// ---------------------------------------------------------------------------
// Gradient checking against the training objective

/// Batch-mean training loss of an M-scan model, wired up for
/// finite-difference verification.
pub struct ModelBatchLoss<'a> {
    model: &'a mut MScanModel,
    batch: &'a [Example],
    ctx: LossCtx,
}

impl<'a> ModelBatchLoss<'a> {
    pub fn new(model: &'a mut MScanModel, batch: &'a [Example], alpha: f64) -> Self {
        ModelBatchLoss {
            model,
            batch,
            ctx: LossCtx {
                alpha,
                ys_targets: None,
            },
        }
    }

    fn mean_loss(&self) -> Result<f64, String> {
        let mut total = 0.0;
        for ex in self.batch {
            let mut tape = Tape::new();
            let (loss, _) = self
                .model
                .build_example_loss(&mut tape, ex, &self.ctx)
                .map_err(|e| e.to_string())?;
            total += tape.value(loss).item();
        }
        Ok(total / self.batch.len() as f64)
    }
}

impl DifferentiableLoss for ModelBatchLoss<'_> {
    fn parameter_names(&self) -> Vec<String> {
        self.model.parameters().iter().map(|p| p.name.clone()).collect()
    }

    fn parameter_shape(&self, name: &str) -> Vec<usize> {
        self.model
            .parameters()
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.value.shape().to_vec())
            .expect("known parameter")
    }

    fn parameter_value_mut(&mut self, name: &str) -> &mut Tensor {
        self.model
            .parameters_mut()
            .into_iter()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
            .expect("known parameter")
    }

    fn loss(&self) -> Result<f64, String> {
        self.mean_loss()
    }

    fn loss_and_gradients(&mut self) -> Result<(f64, GradientMap), String> {
        let mut total = 0.0;
        let mut folded = GradientMap::new();
        for ex in self.batch {
            let mut tape = Tape::new();
            let (loss, _) = self
                .model
                .build_example_loss(&mut tape, ex, &self.ctx)
                .map_err(|e| e.to_string())?;
            total += tape.value(loss).item();
            folded.add_assign(tape.backward(loss).map_err(|e| e.to_string())?);
        }
        folded.scale(1.0 / self.batch.len() as f64);
        Ok((total / self.batch.len() as f64, folded))
    }
}

/// Verifies every parameter of `model` against central differences of
/// the batch-mean training loss.
pub fn check_model_gradients(
    model: &mut MScanModel,
    batch: &[Example],
    alpha: f64,
    eps: f64,
    tau: f64,
) -> Result<GradCheckReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut target = ModelBatchLoss::new(model, batch, alpha);
    Ok(check_gradients(&mut target, eps, tau)?)
}

/// The standard gradient-check setup: a tiny model (4-dim embeddings,
/// 4-unit GRU, history caps (5, 3), vocabularies 10/10/3) at a generic
/// parameter point, plus a batch of four examples whose histories run
/// several GRU steps. Every weight then carries a gradient comfortably
/// above the difference-quotient noise floor.
pub fn gradcheck_fixture(seed: u64) -> (MScanModel, Vec<Example>) {
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::model::{ModelConfig, VocabSizes};

    let cfg = SyntheticConfig {
        num_users: 10,
        num_items: 10,
        num_scenarios: 3,
        latent_dim: 4,
        bias_strength: 2.0,
        scenario_interest_shift: 1.0,
        events_per_user: 16,
        seed,
    };
    let (data, _) = generate_synthetic(&cfg, (5, 3)).expect("fixture generation");
    let batch: Vec<Example> = data
        .iter()
        .rev()
        .filter(|e| e.sequences.current.len() >= 2 && e.sequences.mixed.len() >= 3)
        .take(4)
        .cloned()
        .collect();
    assert_eq!(batch.len(), 4, "fixture batch needs four multi-step examples");

    let model_cfg = ModelConfig {
        embed_dim: 4,
        gru_hidden: 4,
        attn_ffn_layers: vec![4, 1],
        interest_ffn_layers: vec![8, 1],
        scenario_ffn_layers: vec![4, 1],
        caps: (5, 3),
        init_seed: seed * 7 + 1,
        init_scale: 0.5,
        saca: true,
        sbe: true,
    };
    let mut model = MScanModel::new(model_cfg, VocabSizes { users: 10, items: 10, scenarios: 3 })
        .expect("fixture model");
    // Move off the zero-bias init point so no path is degenerate.
    let mut rng = Prng::new(seed * 13 + 5);
    for p in model.params.iter_mut() {
        if p.value.data().iter().all(|&v| v == 0.0) {
            for v in p.value.data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
    (model, batch)
}
