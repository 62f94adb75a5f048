//! The M-scan network.
//!
//! Per example: embed the user, candidate item, and scenario; run a GRU
//! over the current-scenario click history; score every cross-scenario
//! history item against the candidate and every current-scenario
//! behavior with a co-attention FFN, max-pool over the current side,
//! and softmax into attention weights; aggregate the history; then two
//! heads — an interest score over all features and a scenario-bias
//! score from the scenario embedding alone. Training fuses the heads
//! multiplicatively; inference subtracts the scenario's direct effect.

mod params;

pub use params::{
    checksum_parameters, Ffn, FfnLayer, GruWeights, ModelConfig, ModelError, MScanParameters,
    VocabSizes,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Primitive, Tape, Tensor, VarId};
use crate::data::Example;

/// Counterfactual reference constant used at inference time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub c: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { c: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Training-time fusion of the two heads: `y_m * sigmoid(y_s)`.
pub fn fuse(y_m: f64, y_s: f64) -> f64 {
    y_m * sigmoid(y_s)
}

/// Debiased inference score: `y_m * sigmoid(y_s) - c * sigmoid(y_s)`,
/// i.e. the interest effect with the scenario's direct effect removed
/// relative to the reference state `c`.
pub fn infer_debiased(y_m: f64, y_s: f64, c: f64) -> f64 {
    y_m * sigmoid(y_s) - c * sigmoid(y_s)
}

/// Tape handles of one forward pass, for building losses on top.
pub struct ForwardNodes {
    pub user: VarId,
    pub item: VarId,
    pub scenario: VarId,
    pub gru_states: Vec<VarId>,
    pub h_final: VarId,
    /// Co-attention matrix `[J, K]`; absent without both histories.
    pub coattention: Option<VarId>,
    /// Pooled scores `[J]`; absent when the mixed history is empty.
    pub pooled: Option<VarId>,
    pub beta: Option<VarId>,
    /// Aggregated history `[d]`; absent when co-attention is disabled.
    pub aggregate: Option<VarId>,
    pub y_m: VarId,
    pub y_s: Option<VarId>,
    pub y_uis: Option<VarId>,
}

/// All intermediates of one forward pass, padded to the history caps.
///
/// Attention fields (`coattention`, `pooled`, `beta`) hold exact zeros
/// at pad positions; `beta` is zero beyond the valid mixed length and
/// sums to one over it.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub user_embedding: Vec<f64>,
    pub item_embedding: Vec<f64>,
    pub scenario_embedding: Vec<f64>,
    pub gru_states: Vec<Vec<f64>>,
    pub coattention: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
    pub beta: Vec<f64>,
    pub aggregate: Vec<f64>,
    pub n_mixed: usize,
    pub n_current: usize,
    pub y_m: f64,
    pub y_s: Option<f64>,
    pub y_uis: Option<f64>,
    pub y_db: Option<f64>,
}

impl ForwardTrace {
    /// The logit the training loss supervises.
    pub fn training_logit(&self) -> f64 {
        self.y_uis.unwrap_or(self.y_m)
    }

    /// The ranking score used at inference.
    pub fn inference_score(&self) -> f64 {
        self.y_db.unwrap_or(self.y_m)
    }
}

/// Raw head outputs of one example, for scoring without a full trace.
#[derive(Debug, Clone, Copy)]
pub struct Scores {
    pub y_m: f64,
    pub y_s: Option<f64>,
}

impl Scores {
    pub fn inference_score(&self, c: f64) -> f64 {
        match self.y_s {
            Some(y_s) => infer_debiased(self.y_m, y_s, c),
            None => self.y_m,
        }
    }
}

pub struct MScanModel {
    pub config: ModelConfig,
    pub vocab: VocabSizes,
    pub params: MScanParameters,
}

impl MScanModel {
    pub fn new(config: ModelConfig, vocab: VocabSizes) -> Result<Self, ModelError> {
        config.validate()?;
        let params = MScanParameters::init(&config, vocab);
        Ok(MScanModel { config, vocab, params })
    }

    fn check_example(&self, ex: &Example) -> Result<(), ModelError> {
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
        for &(item, scen) in &ex.sequences.mixed {
            check("item", item, self.vocab.items)?;
            check("scenario", scen, self.vocab.scenarios)?;
        }
        for &item in &ex.sequences.current {
            check("item", item, self.vocab.items)?;
        }
        Ok(())
    }

    /// GRU over the current-scenario item embeddings. Returns all
    /// hidden states and the final one; the empty history yields the
    /// zero initial state.
    pub fn encode_current_scenario<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        inputs: &[VarId],
    ) -> Result<(Vec<VarId>, VarId), ModelError> {
        let g = &self.params.gru;
        let mut h = tape.constant(Tensor::zeros(vec![self.config.gru_hidden]));
        if inputs.is_empty() {
            return Ok((Vec::new(), h));
        }
        let w_z = tape.param(&g.w_z);
        let w_r = tape.param(&g.w_r);
        let w_h = tape.param(&g.w_h);
        let u_z = tape.param(&g.u_z);
        let u_r = tape.param(&g.u_r);
        let u_h = tape.param(&g.u_h);
        let b_z = tape.param(&g.b_z);
        let b_r = tape.param(&g.b_r);
        let b_h = tape.param(&g.b_h);

        let gate = |tape: &mut Tape<'a>, x: VarId, h: VarId, w, u, b| -> Result<VarId, ModelError> {
            let xa = tape.apply(Primitive::MatMul, &[x, w])?;
            let ha = tape.apply(Primitive::MatMul, &[h, u])?;
            let s = tape.apply(Primitive::Add, &[xa, ha])?;
            let s = tape.apply(Primitive::Add, &[s, b])?;
            Ok(tape.apply(Primitive::Sigmoid, &[s])?)
        };

        let mut states = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let z = gate(tape, x, h, w_z, u_z, b_z)?;
            let r = gate(tape, x, h, w_r, u_r, b_r)?;
            let xa = tape.apply(Primitive::MatMul, &[x, w_h])?;
            let rh = tape.apply(Primitive::Mul, &[r, h])?;
            let ha = tape.apply(Primitive::MatMul, &[rh, u_h])?;
            let pre = tape.apply(Primitive::Add, &[xa, ha])?;
            let pre = tape.apply(Primitive::Add, &[pre, b_h])?;
            let cand = tape.apply(Primitive::Tanh, &[pre])?;
            let keep = tape.apply(Primitive::OneMinus, &[z])?;
            let old = tape.apply(Primitive::Mul, &[keep, h])?;
            let new = tape.apply(Primitive::Mul, &[z, cand])?;
            h = tape.apply(Primitive::Add, &[old, new])?;
            states.push(h);
        }
        Ok((states, h))
    }

    /// Co-attention scores: `C[j,k] = FFN([h_j + i + s_k])` over every
    /// (mixed, current) pair, then a per-row max over the current side.
    pub fn co_attention_scores<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        mixed: VarId,
        candidate: VarId,
        current: VarId,
    ) -> Result<(VarId, VarId), ModelError> {
        let ffn = self
            .params
            .attention_ffn
            .as_ref()
            .expect("co-attention requires the attention FFN");
        let j = tape.value(mixed).shape()[0];
        let k = tape.value(current).shape()[0];
        let h_rep = tape.apply(Primitive::RepeatRows { times: k }, &[mixed])?;
        let i_rep = tape.apply(Primitive::BroadcastRow { rows: j * k }, &[candidate])?;
        let s_tile = tape.apply(Primitive::TileRows { times: j }, &[current])?;
        let x = tape.apply(Primitive::ConcatCols, &[h_rep, i_rep, s_tile])?;
        let scores = ffn_2d(tape, ffn, x)?;
        let c = tape.apply(Primitive::Reshape { shape: vec![j, k] }, &[scores])?;
        let pooled = tape.apply(Primitive::MaxPool { axis: 1 }, &[c])?;
        Ok((c, pooled))
    }

    /// Softmax over pooled scores and weighted aggregation of the
    /// mixed-history embeddings.
    pub fn attention_aggregate<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        pooled: VarId,
        mixed: VarId,
    ) -> Result<(VarId, VarId), ModelError> {
        let beta = tape.apply(Primitive::Softmax { axis: 0 }, &[pooled])?;
        let agg = tape.apply(Primitive::MatMul, &[beta, mixed])?;
        Ok((beta, agg))
    }

    /// Interest head over `[u + i + s + h_final (+ R_h)]`.
    pub fn predict_interest<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        user: VarId,
        item: VarId,
        scenario: VarId,
        h_final: VarId,
        aggregate: Option<VarId>,
    ) -> Result<VarId, ModelError> {
        let mut parts = vec![user, item, scenario, h_final];
        if let Some(agg) = aggregate {
            parts.push(agg);
        }
        let x = tape.apply(Primitive::Concat, &parts)?;
        ffn_1d(tape, &self.params.interest_ffn, x)
    }

    /// Scenario-bias head: a function of the scenario embedding alone.
    pub fn predict_scenario_bias<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        scenario: VarId,
    ) -> Result<VarId, ModelError> {
        let ffn = self
            .params
            .scenario_ffn
            .as_ref()
            .expect("scenario head requires the scenario FFN");
        ffn_1d(tape, ffn, scenario)
    }

    /// Records the whole network for one example.
    pub fn forward_on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        ex: &Example,
    ) -> Result<ForwardNodes, ModelError> {
        self.check_example(ex)?;
        let d = self.config.embed_dim;
        let user_tbl = tape.param(&self.params.user_table);
        let item_tbl = tape.param(&self.params.item_table);
        let scen_tbl = tape.param(&self.params.scenario_table);
        let user = tape.apply(Primitive::Lookup { row: ex.user_id as usize }, &[user_tbl])?;
        let item = tape.apply(Primitive::Lookup { row: ex.item_id as usize }, &[item_tbl])?;
        let scenario =
            tape.apply(Primitive::Lookup { row: ex.scenario_id as usize }, &[scen_tbl])?;

        let current_embeds: Vec<VarId> = ex
            .sequences
            .current
            .iter()
            .map(|&it| tape.apply(Primitive::Lookup { row: it as usize }, &[item_tbl]))
            .collect::<Result<_, _>>()?;
        let (gru_states, h_final) = self.encode_current_scenario(tape, &current_embeds)?;

        let mut coattention = None;
        let mut pooled_id = None;
        let mut beta_id = None;
        let mut aggregate = None;
        if self.config.saca {
            let j = ex.sequences.mixed.len();
            if j == 0 {
                aggregate = Some(tape.constant(Tensor::zeros(vec![d])));
            } else {
                let mixed_embeds: Vec<VarId> = ex
                    .sequences
                    .mixed
                    .iter()
                    .map(|&(it, _)| tape.apply(Primitive::Lookup { row: it as usize }, &[item_tbl]))
                    .collect::<Result<_, _>>()?;
                let mixed = tape.apply(Primitive::Stack, &mixed_embeds)?;
                let pooled = if current_embeds.is_empty() {
                    // No current-scenario evidence: every history item is
                    // equally relevant and attention degrades to uniform.
                    tape.constant(Tensor::zeros(vec![j]))
                } else {
                    let current = tape.apply(Primitive::Stack, &current_embeds)?;
                    let (c, pooled) = self.co_attention_scores(tape, mixed, item, current)?;
                    coattention = Some(c);
                    pooled
                };
                let (beta, agg) = self.attention_aggregate(tape, pooled, mixed)?;
                pooled_id = Some(pooled);
                beta_id = Some(beta);
                aggregate = Some(agg);
            }
        }

        let y_m = self.predict_interest(tape, user, item, scenario, h_final, aggregate)?;
        let (y_s, y_uis) = if self.config.sbe {
            let y_s = self.predict_scenario_bias(tape, scenario)?;
            let gate = tape.apply(Primitive::Sigmoid, &[y_s])?;
            let y_uis = tape.apply(Primitive::Mul, &[y_m, gate])?;
            (Some(y_s), Some(y_uis))
        } else {
            (None, None)
        };

        Ok(ForwardNodes {
            user,
            item,
            scenario,
            gru_states,
            h_final,
            coattention,
            pooled: pooled_id,
            beta: beta_id,
            aggregate,
            y_m,
            y_s,
            y_uis,
        })
    }

    /// One deterministic forward pass, returning every intermediate.
    pub fn forward(
        &self,
        ex: &Example,
        mode: Mode,
        cfg: &InferenceConfig,
    ) -> Result<ForwardTrace, ModelError> {
        let mut tape = Tape::new();
        let nodes = self.forward_on_tape(&mut tape, ex)?;
        let (l_h, l_s_cap) = self.config.caps;
        let n_mixed = ex.sequences.mixed.len();
        let n_current = ex.sequences.current.len();

        let grab = |id: VarId| tape.value(id).data().to_vec();
        let mut coattention = vec![vec![0.0; l_s_cap]; l_h];
        if let Some(c) = nodes.coattention {
            let t = tape.value(c);
            for j in 0..n_mixed {
                coattention[j][..n_current].copy_from_slice(t.row(j));
            }
        }
        let mut pooled = vec![0.0; l_h];
        if let Some(p) = nodes.pooled {
            pooled[..n_mixed].copy_from_slice(tape.value(p).data());
        }
        let mut beta = vec![0.0; l_h];
        if let Some(b) = nodes.beta {
            beta[..n_mixed].copy_from_slice(tape.value(b).data());
        }
        let aggregate = nodes
            .aggregate
            .map(&grab)
            .unwrap_or_else(|| vec![0.0; self.config.embed_dim]);

        let y_m = tape.value(nodes.y_m).item();
        let y_s = nodes.y_s.map(|id| tape.value(id).item());
        let y_uis = nodes.y_uis.map(|id| tape.value(id).item());
        let y_db = match (mode, y_s) {
            (Mode::Infer, Some(y_s)) => Some(infer_debiased(y_m, y_s, cfg.c)),
            _ => None,
        };

        Ok(ForwardTrace {
            user_embedding: grab(nodes.user),
            item_embedding: grab(nodes.item),
            scenario_embedding: grab(nodes.scenario),
            gru_states: nodes.gru_states.iter().map(|&s| grab(s)).collect(),
            coattention,
            pooled,
            beta,
            aggregate,
            n_mixed,
            n_current,
            y_m,
            y_s,
            y_uis,
            y_db,
        })
    }

    /// Head outputs only, on a caller-provided (reused) tape.
    pub fn score_with<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        ex: &Example,
    ) -> Result<Scores, ModelError> {
        tape.clear();
        let nodes = self.forward_on_tape(tape, ex)?;
        Ok(Scores {
            y_m: tape.value(nodes.y_m).item(),
            y_s: nodes.y_s.map(|id| tape.value(id).item()),
        })
    }
}

fn ffn_1d<'a>(tape: &mut Tape<'a>, ffn: &'a Ffn, x: VarId) -> Result<VarId, ModelError> {
    let mut cur = x;
    let last = ffn.layers.len() - 1;
    for (li, layer) in ffn.layers.iter().enumerate() {
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

fn ffn_2d<'a>(tape: &mut Tape<'a>, ffn: &'a Ffn, x: VarId) -> Result<VarId, ModelError> {
    let mut cur = x;
    let last = ffn.layers.len() - 1;
    for (li, layer) in ffn.layers.iter().enumerate() {
        let w = tape.param(&layer.w);
        let b = tape.param(&layer.b);
        cur = tape.apply(Primitive::MatMul, &[cur, w])?;
        cur = tape.apply(Primitive::AddRowVec, &[cur, b])?;
        if li < last {
            cur = tape.apply(Primitive::Relu, &[cur])?;
        }
    }
    Ok(cur)
}
