//! Per-stripe heads: batch normalization of the pooled features followed by
//! an independent fully-connected classifier per stripe.

use rand::Rng;

use crate::autodiff::{RunningStats, Tape, TensorId};
use crate::model::StripeKey;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats,
}

impl BnParams {
    fn identity(channels: usize) -> Self {
        BnParams {
            gamma: Tensor::full(vec![channels], 1.0).with_grad(),
            beta: Tensor::zeros(vec![channels]).with_grad(),
            stats: RunningStats::new(channels),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StripeHead {
    pub key: StripeKey,
    pub channels: usize,
    pub bn: BnParams,
    /// `[channels, num_classes]`
    pub fc_w: Tensor,
    /// `[num_classes]`
    pub fc_b: Tensor,
}

pub struct StripeBinding {
    pub gamma: TensorId,
    pub beta: TensorId,
    pub fc_w: TensorId,
    pub fc_b: TensorId,
}

impl StripeHead {
    pub fn bind(&self, tape: &mut Tape) -> StripeBinding {
        StripeBinding {
            gamma: tape.leaf(self.bn.gamma.clone()),
            beta: tape.leaf(self.bn.beta.clone()),
            fc_w: tape.leaf(self.fc_w.clone()),
            fc_b: tape.leaf(self.fc_b.clone()),
        }
    }

    fn param_name(&self, field: &str) -> String {
        format!(
            "head.{}{}.{}",
            self.key.resolution.tag(),
            self.key.index,
            field
        )
    }
}

/// Initialization constants for the head parameters.
#[derive(Debug, Clone, Copy)]
pub struct HeadInit {
    /// Classifier weight standard deviation.
    pub fc_std: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for HeadInit {
    fn default() -> Self {
        HeadInit {
            fc_std: 0.001,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Head {
    pub stripes: Vec<StripeHead>,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Head {
    pub fn new(
        layout: &[(StripeKey, usize)],
        num_classes: usize,
        init: HeadInit,
        rng: &mut impl Rng,
    ) -> Self {
        let stripes = layout
            .iter()
            .map(|&(key, channels)| StripeHead {
                key,
                channels,
                bn: BnParams::identity(channels),
                fc_w: Tensor::randn(vec![channels, num_classes], init.fc_std, rng).with_grad(),
                fc_b: Tensor::zeros(vec![num_classes]).with_grad(),
            })
            .collect();
        Head {
            stripes,
            num_classes,
            bn_eps: init.bn_eps,
            bn_momentum: init.bn_momentum,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for st in &self.stripes {
            v.push((st.param_name("gamma"), &st.bn.gamma));
            v.push((st.param_name("beta"), &st.bn.beta));
            v.push((st.param_name("fc_w"), &st.fc_w));
            v.push((st.param_name("fc_b"), &st.fc_b));
        }
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for st in &mut self.stripes {
            let name = format!("head.{}{}", st.key.resolution.tag(), st.key.index);
            v.push((format!("{name}.gamma"), &mut st.bn.gamma));
            v.push((format!("{name}.beta"), &mut st.bn.beta));
            v.push((format!("{name}.fc_w"), &mut st.fc_w));
            v.push((format!("{name}.fc_b"), &mut st.fc_b));
        }
        v
    }

    /// Running statistics, named consistently with the parameters.
    pub fn named_stats_mut(&mut self) -> Vec<(String, &mut RunningStats)> {
        self.stripes
            .iter_mut()
            .map(|st| {
                (
                    format!("head.{}{}.stats", st.key.resolution.tag(), st.key.index),
                    &mut st.bn.stats,
                )
            })
            .collect()
    }
}
