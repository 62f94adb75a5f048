//! Multi-scenario click-prediction experimentation engine.
//!
//! Implements the M-scan architecture end to end: a GRU over the
//! current scenario's click history, scenario-aware co-attention that
//! pulls matching interests out of the cross-scenario history, and a
//! two-branch head whose interest and scenario-bias logits are fused
//! multiplicatively for training and combined counterfactually at
//! inference to strip the scenario's direct exposure effect.
//!
//! The crate is self-contained: a tape-based reverse-mode autodiff core
//! ([`autodiff`]), log ingestion plus a causal synthetic-data generator
//! with known ground-truth interest ([`data`]), the network itself
//! ([`model`]), the joint training loop ([`train`]), and an evaluation
//! harness with AUC/RelImp metrics, reference baselines, component
//! ablations, and hyperparameter sweeps ([`eval`]). Every stochastic
//! step is seeded; identical configs reproduce identical bytes.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod model;
pub mod rng;
pub mod train;
