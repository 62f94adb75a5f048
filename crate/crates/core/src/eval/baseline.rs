//! Single / Mix / Finetune reference models.
//!
//! All three share one architecture: embeddings for user, item, and
//! scenario feeding a three-hidden-layer fully connected network with a
//! scalar logit. They differ only in what they train on: the target
//! scenario's samples, all samples, or all samples followed by a
//! reduced-rate pass over the target scenario.

use serde::{Deserialize, Serialize};

use super::evaluate::{report_from_scores, ExampleScore, MetricsReport};
use super::EvalError;
use crate::autodiff::{Parameter, Primitive, Tape, Tensor, VarId};
use crate::data::Example;
use crate::model::{Ffn, FfnLayer, ModelError, VocabSizes};
use crate::rng::Prng;
use crate::train::{train, ExampleLosses, LossCtx, TrainConfig, TrainableModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Single,
    Mix,
    Finetune,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineNetConfig {
    pub embed_dim: usize,
    /// Layer widths including the final scalar.
    pub layers: Vec<usize>,
    pub init_seed: u64,
    pub init_scale: f64,
    /// Second-stage learning-rate multiplier for finetune.
    pub finetune_lr_scale: f64,
    pub finetune_epochs: usize,
}

impl Default for BaselineNetConfig {
    fn default() -> Self {
        BaselineNetConfig {
            embed_dim: 8,
            layers: vec![64, 32, 16, 1],
            init_seed: 42,
            init_scale: 0.1,
            finetune_lr_scale: 0.1,
            finetune_epochs: 1,
        }
    }
}

pub struct BaselineModel {
    pub vocab: VocabSizes,
    pub user_table: Parameter,
    pub item_table: Parameter,
    pub scenario_table: Parameter,
    pub ffn: Ffn,
}

impl BaselineModel {
    pub fn new(cfg: &BaselineNetConfig, vocab: VocabSizes) -> Result<Self, EvalError> {
        if cfg.layers.is_empty() || cfg.layers.last() != Some(&1) {
            return Err(EvalError::BadConfig(
                "baseline layers must end in a scalar output".into(),
            ));
        }
        let mut rng = Prng::new(cfg.init_seed);
        let d = cfg.embed_dim;
        let scale = cfg.init_scale;
        let table = |rng: &mut Prng, name: &str, rows: usize| {
            let data: Vec<f64> = (0..rows * d).map(|_| rng.uniform(-scale, scale)).collect();
            Parameter::new(name, Tensor::matrix(rows, d, data).unwrap())
        };
        let user_table = table(&mut rng, "embed.user", vocab.users);
        let item_table = table(&mut rng, "embed.item", vocab.items);
        let scenario_table = table(&mut rng, "embed.scenario", vocab.scenarios);

        let mut layers = Vec::new();
        let mut fan_in = 3 * d;
        for (li, &out) in cfg.layers.iter().enumerate() {
            let data: Vec<f64> = (0..fan_in * out).map(|_| rng.uniform(-scale, scale)).collect();
            layers.push(FfnLayer {
                w: Parameter::new(format!("ffn.{li}.w"), Tensor::matrix(fan_in, out, data).unwrap()),
                b: Parameter::new(format!("ffn.{li}.b"), Tensor::zeros(vec![out])),
            });
            fan_in = out;
        }
        Ok(BaselineModel {
            vocab,
            user_table,
            item_table,
            scenario_table,
            ffn: Ffn { layers },
        })
    }

    fn logit<'a>(&'a self, tape: &mut Tape<'a>, ex: &Example) -> Result<VarId, ModelError> {
        let check = |kind: &'static str, id: u32, size: usize| {
            if (id as usize) < size {
                Ok(())
            } else {
                Err(ModelError::VocabOutOfRange { kind, id, size })
            }
        };
        check("user", ex.user_id, self.vocab.users)?;
        check("item", ex.item_id, self.vocab.items)?;
        check("scenario", ex.scenario_id, self.vocab.scenarios)?;

        let ut = tape.param(&self.user_table);
        let it = tape.param(&self.item_table);
        let st = tape.param(&self.scenario_table);
        let u = tape.apply(Primitive::Lookup { row: ex.user_id as usize }, &[ut])?;
        let i = tape.apply(Primitive::Lookup { row: ex.item_id as usize }, &[it])?;
        let s = tape.apply(Primitive::Lookup { row: ex.scenario_id as usize }, &[st])?;
        let mut cur = tape.apply(Primitive::Concat, &[u, i, s])?;
        let last = self.ffn.layers.len() - 1;
        for (li, layer) in self.ffn.layers.iter().enumerate() {
            let w = tape.param(&layer.w);
            let b = tape.param(&layer.b);
            cur = tape.apply(Primitive::MatMul, &[cur, w])?;
            cur = tape.apply(Primitive::Add, &[cur, b])?;
            if li < last {
                cur = tape.apply(Primitive::Relu, &[cur])?;
            }
        }
        Ok(cur)
    }

    pub fn score(&self, ex: &Example) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let logit = self.logit(&mut tape, ex)?;
        Ok(tape.value(logit).item())
    }
}

impl TrainableModel for BaselineModel {
    fn build_example_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        ex: &Example,
        _ctx: &LossCtx,
    ) -> Result<(VarId, ExampleLosses), ModelError> {
        let logit = self.logit(tape, ex)?;
        let y = ex.label as u8 as f64;
        let l = tape.apply(Primitive::BceWithLogits { target: y }, &[logit])?;
        Ok((
            l,
            ExampleLosses {
                l_uis: tape.value(l).item(),
                l_s: 0.0,
            },
        ))
    }

    fn parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.user_table, &self.item_table, &self.scenario_table];
        for l in &self.ffn.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> =
            vec![&mut self.user_table, &mut self.item_table, &mut self.scenario_table];
        for l in &mut self.ffn.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }
}

/// Trains the requested baseline and evaluates it.
///
/// `single` and `finetune` require a target scenario; their reports
/// cover only that scenario and omit the pooled row. `mix` reports
/// every scenario plus the pooled row.
pub fn run_baseline(
    kind: BaselineKind,
    target: Option<u32>,
    train_set: &[Example],
    test_set: &[Example],
    net: &BaselineNetConfig,
    vocab: VocabSizes,
    cfg: &TrainConfig,
) -> Result<MetricsReport, EvalError> {
    let target = match kind {
        BaselineKind::Mix => None,
        BaselineKind::Single | BaselineKind::Finetune => {
            Some(target.ok_or(EvalError::MissingTarget)?)
        }
    };
    if let Some(scen) = target {
        if !train_set.iter().any(|e| e.scenario_id == scen) {
            return Err(EvalError::NoTrainingData { scenario: scen });
        }
    }

    let mut model = BaselineModel::new(net, vocab)?;
    match kind {
        BaselineKind::Single => {
            let scen = target.unwrap();
            let subset: Vec<Example> = train_set
                .iter()
                .filter(|e| e.scenario_id == scen)
                .cloned()
                .collect();
            train(&mut model, &subset, cfg)?;
        }
        BaselineKind::Mix => {
            train(&mut model, train_set, cfg)?;
        }
        BaselineKind::Finetune => {
            let scen = target.unwrap();
            train(&mut model, train_set, cfg)?;
            if net.finetune_epochs > 0 {
                let subset: Vec<Example> = train_set
                    .iter()
                    .filter(|e| e.scenario_id == scen)
                    .cloned()
                    .collect();
                let stage2 = TrainConfig {
                    learning_rate: cfg.learning_rate * net.finetune_lr_scale,
                    epochs: net.finetune_epochs,
                    ..cfg.clone()
                };
                train(&mut model, &subset, &stage2)?;
            }
        }
    }

    let eval_set: Vec<&Example> = match target {
        None => test_set.iter().collect(),
        Some(scen) => test_set.iter().filter(|e| e.scenario_id == scen).collect(),
    };
    if eval_set.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let scored: Vec<ExampleScore> = eval_set
        .iter()
        .map(|ex| {
            Ok(ExampleScore {
                scenario: ex.scenario_id,
                label: ex.label,
                y_m: model.score(ex)?,
                y_s: None,
                interest: ex.ground_truth_interest,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let mut report = report_from_scores(&scored, 0.0, true)?;
    report.scored_with = "baseline_logit".to_string();
    if target.is_some() {
        // Single-scenario models have no meaningful pooled row.
        report.overall = None;
    }
    Ok(report)
}
