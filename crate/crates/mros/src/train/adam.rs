//! Adam optimizer with bias-corrected moment estimates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Additive L2 term folded into the gradient (0 disables it).
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the shared step
/// counter, aligned with the model's canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(param_sizes: &[usize], hyper: AdamHyper) -> Self {
        OptimizerState {
            hyper,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Advances the shared step counter; call once per training step before
    /// the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// One Adam update for parameter slot `idx`:
    /// `p ← p − lr·m̂/(√v̂ + eps)` with bias-corrected moments.
    pub fn update(
        &mut self,
        idx: usize,
        name: &str,
        param: &mut [f64],
        grad: &[f64],
        lr: f64,
    ) -> Result<()> {
        let h = self.hyper;
        let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
        if m.len() != param.len() || grad.len() != param.len() {
            return Err(Error::ShapeMismatch {
                op: "adam update",
                left: vec![param.len()],
                right: vec![grad.len()],
            });
        }
        let t = self.step as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        for i in 0..param.len() {
            let mut g = grad[i];
            if !g.is_finite() {
                return Err(Error::Divergence(format!(
                    "gradient of parameter {name} (element {i})"
                )));
            }
            if h.weight_decay != 0.0 {
                g += h.weight_decay * param[i];
            }
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + h.eps);
        }
        Ok(())
    }
}
