//! Scoring a test set and assembling per-scenario metric reports.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{auc, rel_impr, MetricsError};
use super::EvalError;
use crate::autodiff::Tape;
use crate::data::Example;
use crate::model::{InferenceConfig, MScanModel, Scores};

/// One scored test example.
#[derive(Debug, Clone, Copy)]
pub struct ExampleScore {
    pub scenario: u32,
    pub label: bool,
    pub y_m: f64,
    pub y_s: Option<f64>,
    pub interest: Option<f64>,
}

impl ExampleScore {
    pub fn inference_score(&self, c: f64) -> f64 {
        Scores { y_m: self.y_m, y_s: self.y_s }.inference_score(c)
    }
}

/// Runs the heads over the whole test set. Examples are independent,
/// so this fans out across threads; results keep input order.
pub fn score_examples(
    model: &MScanModel,
    test: &[Example],
) -> Result<Vec<ExampleScore>, EvalError> {
    let scored: Result<Vec<ExampleScore>, EvalError> = test
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let s = model.score_with(&mut tape, ex)?;
            Ok(ExampleScore {
                scenario: ex.scenario_id,
                label: ex.label,
                y_m: s.y_m,
                y_s: s.y_s,
                interest: ex.ground_truth_interest,
            })
        })
        .collect();
    scored
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub n: usize,
    pub n_pos: usize,
    /// AUC against click labels; absent when a class is missing.
    pub auc: Option<f64>,
    /// AUC against ground-truth-interest labels (synthetic data only).
    pub interest_auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelImprBlock {
    pub vs: String,
    pub per_scenario: BTreeMap<u32, Option<f64>>,
    pub overall: Option<f64>,
}

/// Per-scenario and pooled metrics for one model on one test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Which score ranked the examples ("debiased" or "interest_logit").
    pub scored_with: String,
    pub c: f64,
    pub per_scenario: BTreeMap<u32, ScenarioMetrics>,
    /// Pooled row over every scenario; absent for single-scenario
    /// baselines that cannot be tested globally.
    pub overall: Option<ScenarioMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rel_impr: Option<RelImprBlock>,
}

impl MetricsReport {
    pub fn overall_auc(&self) -> Option<f64> {
        self.overall.as_ref().and_then(|m| m.auc)
    }

    pub fn overall_interest_auc(&self) -> Option<f64> {
        self.overall.as_ref().and_then(|m| m.interest_auc)
    }

    /// Attaches relative improvements against a named baseline report.
    pub fn attach_rel_impr(&mut self, name: &str, base: &MetricsReport) {
        let mut per_scenario = BTreeMap::new();
        for (scen, row) in &self.per_scenario {
            let pair = row.auc.zip(base.per_scenario.get(scen).and_then(|b| b.auc));
            per_scenario.insert(*scen, pair.and_then(|(a, b)| rel_impr(a, b).ok()));
        }
        let overall = self
            .overall_auc()
            .zip(base.overall_auc())
            .and_then(|(a, b)| rel_impr(a, b).ok());
        self.rel_impr = Some(RelImprBlock {
            vs: name.to_string(),
            per_scenario,
            overall,
        });
    }
}

fn metrics_row(scores: &[f64], labels: &[bool], interest_labels: Option<&[bool]>) -> ScenarioMetrics {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let click_auc = match auc(scores, labels) {
        Ok(v) => Some(v),
        Err(MetricsError::UndefinedAuc) => None,
        Err(_) => None,
    };
    let interest_auc = interest_labels.and_then(|labs| auc(scores, labs).ok());
    ScenarioMetrics {
        n,
        n_pos,
        auc: click_auc,
        interest_auc,
    }
}

/// Threshold interests at the per-scenario median so the oracle labels
/// are balanced inside every scenario.
fn interest_labels(scored: &[ExampleScore]) -> Option<Vec<bool>> {
    if scored.iter().any(|s| s.interest.is_none()) {
        return None;
    }
    let mut by_scenario: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in scored {
        by_scenario.entry(s.scenario).or_default().push(s.interest.unwrap());
    }
    let medians: BTreeMap<u32, f64> = by_scenario
        .into_iter()
        .map(|(scen, mut vals)| {
            vals.sort_by(f64::total_cmp);
            let mid = vals.len() / 2;
            let median = if vals.len() % 2 == 1 {
                vals[mid]
            } else {
                0.5 * (vals[mid - 1] + vals[mid])
            };
            (scen, median)
        })
        .collect();
    Some(
        scored
            .iter()
            .map(|s| s.interest.unwrap() > medians[&s.scenario])
            .collect(),
    )
}

/// Builds the full report from per-example scores at reference `c`.
pub fn report_from_scores(
    scored: &[ExampleScore],
    c: f64,
    group_by_scenario: bool,
) -> Result<MetricsReport, EvalError> {
    if scored.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let final_scores: Vec<f64> = scored.iter().map(|s| s.inference_score(c)).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
    let oracle = interest_labels(scored);

    let mut per_scenario = BTreeMap::new();
    if group_by_scenario {
        let mut scenarios: Vec<u32> = scored.iter().map(|s| s.scenario).collect();
        scenarios.sort_unstable();
        scenarios.dedup();
        for scen in scenarios {
            let idx: Vec<usize> = (0..scored.len())
                .filter(|&i| scored[i].scenario == scen)
                .collect();
            let s: Vec<f64> = idx.iter().map(|&i| final_scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let o: Option<Vec<bool>> =
                oracle.as_ref().map(|o| idx.iter().map(|&i| o[i]).collect());
            per_scenario.insert(scen, metrics_row(&s, &l, o.as_deref()));
        }
    }
    let overall = Some(metrics_row(&final_scores, &labels, oracle.as_deref()));
    let scored_with = if scored.iter().all(|s| s.y_s.is_some()) {
        "debiased"
    } else {
        "interest_logit"
    };
    Ok(MetricsReport {
        scored_with: scored_with.to_string(),
        c,
        per_scenario,
        overall,
        rel_impr: None,
    })
}

/// Scores the test set with the debiased rule and reports AUC per
/// scenario and pooled, plus interest-AUC when ground truth exists.
pub fn evaluate(
    model: &MScanModel,
    cfg: &InferenceConfig,
    test: &[Example],
    group_by_scenario: bool,
) -> Result<MetricsReport, EvalError> {
    let scored = score_examples(model, test)?;
    report_from_scores(&scored, cfg.c, group_by_scenario)
}
