//! The two cross-entropy terms and their weighted sum.

use crate::autodiff::bce_with_logits;

/// Cross-entropy of `sigmoid(y_uis)` against the click label, in the
/// overflow-free formulation.
pub fn loss_uis(y_uis: f64, clicked: bool) -> f64 {
    bce_with_logits(y_uis, clicked as u8 as f64)
}

/// Cross-entropy of `sigmoid(y_s)` against the bias-branch target
/// (a hard click label or a soft per-scenario rate).
pub fn loss_s(y_s: f64, target: f64) -> f64 {
    bce_with_logits(y_s, target)
}

/// `L_final = L_uis + alpha * L_s` over batch means.
pub fn loss_total(mean_uis: f64, mean_s: f64, alpha: f64) -> f64 {
    mean_uis + alpha * mean_s
}
