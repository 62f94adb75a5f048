//! First-order optimizers over named parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Parameter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[&Parameter]) -> Self {
        let moments = params
            .iter()
            .map(|p| {
                let n = p.value.numel();
                (p.name.clone(), (vec![0.0; n], vec![0.0; n]))
            })
            .collect();
        OptimizerState { kind, t: 0, moments }
    }

    /// One update from the gradients currently in the parameter buffers.
    /// A zero learning rate is a strict no-op, bit for bit.
    pub fn step(&mut self, params: Vec<&mut Parameter>, lr: f64) {
        self.t += 1;
        if lr == 0.0 {
            return;
        }
        for p in params {
            match self.kind {
                OptimizerKind::Sgd => {
                    let grad = p.gradient.data().to_vec();
                    for (v, g) in p.value.data_mut().iter_mut().zip(grad) {
                        *v -= lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (m, v) = self
                        .moments
                        .get_mut(&p.name)
                        .expect("optimizer state covers every parameter");
                    let bc1 = 1.0 - beta1.powi(self.t as i32);
                    let bc2 = 1.0 - beta2.powi(self.t as i32);
                    let grad = p.gradient.data().to_vec();
                    for ((val, g), (mi, vi)) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(grad)
                        .zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *val -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
