//! The training objective: batch-hard triplet loss, center loss,
//! label-smoothed cross-entropy, and their weighted fusion.

use crate::autodiff::{Op, Tape, TensorId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights of the composed objective. Triplet and cross-entropy carry
/// implicit weight 1; only the center term is scaled.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Triplet margin.
    pub alpha: f64,
    /// Center-loss weight.
    pub beta: f64,
    /// Label-smoothing mass.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.3,
            beta: 0.0005,
            epsilon: 0.1,
        }
    }
}

/// One learned center vector per training identity. Centers are updated by
/// their own rule, not by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    /// `[num_classes, dim]`
    pub centers: Tensor,
    pub update_rate: f64,
}

impl ClassCenters {
    pub fn zeros(num_classes: usize, dim: usize, update_rate: f64) -> Self {
        ClassCenters {
            centers: Tensor::zeros(vec![num_classes, dim]),
            update_rate,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.shape()[1]
    }
}

/// Hardest-positive / hardest-negative selection for one anchor, saved at
/// forward time so the backward pass reuses the exact mined pair.
#[derive(Debug, Clone)]
pub(crate) struct AnchorTerm {
    pub anchor: usize,
    pub pos: usize,
    pub neg: usize,
    pub d_pos: f64,
    pub d_neg: f64,
    pub active: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct TripletMining {
    pub terms: Vec<AnchorTerm>,
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// Validates the P×K structure of a label vector: at least two identities,
/// every identity with the same count. Returns (P, K).
pub fn check_pk_labels(labels: &[usize]) -> Result<(usize, usize)> {
    if labels.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let p = counts.len();
    if p < 2 {
        return Err(Error::DegenerateBatch(format!(
            "batch-hard mining needs at least 2 identities, got {p}"
        )));
    }
    let k = *counts.values().next().unwrap();
    if k < 1 || counts.values().any(|&c| c != k) {
        return Err(Error::Contract(format!(
            "unbalanced batch: identity counts {:?}",
            counts.values().collect::<Vec<_>>()
        )));
    }
    Ok((p, k))
}

impl Tape {
    /// Batch-hard triplet loss over an `[m,d]` embedding matrix: for every
    /// anchor, hinge of margin + hardest-positive − hardest-negative L2
    /// distance, summed over all anchors. Ties at the extreme distance break
    /// toward the lowest row index.
    pub fn triplet_batch_hard(
        &mut self,
        g: TensorId,
        labels: &[usize],
        alpha: f64,
    ) -> Result<TensorId> {
        let t = self.value(g);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "triplet_batch_hard",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        check_pk_labels(labels)?;
        let (m, d) = (t.shape()[0], t.shape()[1]);
        let data = t.data();

        let mut dist = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                dist[i * m + j] = l2_distance(&data[i * d..(i + 1) * d], &data[j * d..(j + 1) * d]);
            }
        }

        let mut terms = Vec::with_capacity(m);
        let mut total = 0.0;
        for a in 0..m {
            let mut pos = a;
            let mut d_pos = 0.0; // the anchor itself sits in the positive set
            let mut neg = usize::MAX;
            let mut d_neg = f64::INFINITY;
            for j in 0..m {
                let dj = dist[a * m + j];
                if labels[j] == labels[a] {
                    if dj > d_pos {
                        d_pos = dj;
                        pos = j;
                    }
                } else if dj < d_neg {
                    d_neg = dj;
                    neg = j;
                }
            }
            let hinge = alpha + d_pos - d_neg;
            let active = hinge > 0.0;
            if active {
                total += hinge;
            }
            terms.push(AnchorTerm {
                anchor: a,
                pos,
                neg,
                d_pos,
                d_neg,
                active,
            });
        }

        let tracked = self.is_tracked(g);
        Ok(self.push(
            Tensor::scalar(total),
            Op::TripletBatchHard {
                g,
                mining: TripletMining { terms },
            },
            tracked,
        ))
    }

    /// Center loss: ½ Σᵢ ‖gᵢ − c_{yᵢ}‖². Gradient flows to the embeddings
    /// only; the centers move via [`update_centers`].
    pub fn center_loss(
        &mut self,
        g: TensorId,
        labels: &[usize],
        centers: &ClassCenters,
    ) -> Result<TensorId> {
        let t = self.value(g);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "center_loss",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let d = t.shape()[1];
        if d != centers.dim() {
            return Err(Error::ShapeMismatch {
                op: "center_loss",
                left: vec![d],
                right: vec![centers.dim()],
            });
        }
        let m = t.shape()[0];
        let mut residuals = vec![0.0; m * d];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= centers.num_classes() {
                return Err(Error::MissingCenter {
                    label,
                    num_classes: centers.num_classes(),
                });
            }
            let row = t.row(i);
            let c = centers.centers.row(label);
            for k in 0..d {
                let r = row[k] - c[k];
                residuals[i * d + k] = r;
                total += r * r;
            }
        }
        total *= 0.5;
        let tracked = self.is_tracked(g);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CenterLoss { g, residuals },
            tracked,
        ))
    }

    /// Label-smoothed cross-entropy, averaged over the batch. `logits` is
    /// `[m,classes]` (a single `[classes]` vector is treated as m = 1).
    /// The target distribution is `(1-ε)·one_hot(label) + ε/classes`, and the
    /// log-softmax is stabilized by max subtraction.
    pub fn cross_entropy_ls(
        &mut self,
        logits: TensorId,
        labels: &[usize],
        epsilon: f64,
    ) -> Result<TensorId> {
        let t = self.value(logits);
        let (m, c) = match t.rank() {
            1 => (1, t.shape()[0]),
            2 => (t.shape()[0], t.shape()[1]),
            _ => {
                return Err(Error::Contract(format!(
                    "cross_entropy_ls expects [classes] or [m,classes], got {:?}",
                    t.shape()
                )))
            }
        };
        if c < 2 {
            return Err(Error::Contract(
                "cross_entropy_ls needs >= 2 classes".into(),
            ));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Contract(format!(
                "label smoothing epsilon {epsilon} outside [0,1)"
            )));
        }
        if labels.len() != m {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_ls",
                left: vec![m],
                right: vec![labels.len()],
            });
        }
        let mut softmax = vec![0.0; m * c];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::Contract(format!(
                    "label {label} out of range for {c} classes"
                )));
            }
            let row = &t.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            let lse = denom.ln() + max;
            let uniform = epsilon / c as f64;
            let mut loss_i = 0.0;
            for (k, &v) in row.iter().enumerate() {
                let logp = v - lse;
                softmax[i * c + k] = logp.exp();
                let q = if k == label {
                    1.0 - epsilon + uniform
                } else {
                    uniform
                };
                loss_i -= q * logp;
            }
            total += loss_i;
        }
        total /= m as f64;
        let tracked = self.is_tracked(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropyLs {
                logits,
                labels: labels.to_vec(),
                epsilon,
                softmax,
            },
            tracked,
        ))
    }

    /// Weighted fusion of the three parts: `triplet + beta·center + cross`.
    /// Rejects non-finite parts, naming the offender.
    pub fn total_loss(
        &mut self,
        triplet: TensorId,
        center: TensorId,
        cross: TensorId,
        weights: &LossWeights,
    ) -> Result<TensorId> {
        for (id, name) in [
            (triplet, "triplet"),
            (center, "center"),
            (cross, "cross-entropy"),
        ] {
            let v = self.value(id).item()?;
            if !v.is_finite() {
                return Err(Error::Divergence(format!("{name} loss ({v})")));
            }
        }
        let scaled_center = self.scale(center, weights.beta);
        let partial = self.add(triplet, scaled_center)?;
        self.add(partial, cross)
    }
}

/// Mean of the per-stripe cross-entropy losses (each already a batch mean).
pub fn total_cross_entropy(tape: &mut Tape, stripe_losses: &[TensorId]) -> Result<TensorId> {
    if stripe_losses.is_empty() {
        return Err(Error::Config("no stripe losses to average".into()));
    }
    let mut acc = stripe_losses[0];
    for &l in &stripe_losses[1..] {
        acc = tape.add(acc, l)?;
    }
    Ok(tape.scale(acc, 1.0 / stripe_losses.len() as f64))
}

/// Center update rule: for every class present in the batch,
/// `c_j ← c_j − rate · Σ_{i: yᵢ=j}(c_j − gᵢ) / (1 + count_j)`.
/// Classes absent from the batch are untouched.
pub fn update_centers(
    embeddings: &Tensor,
    labels: &[usize],
    centers: &mut ClassCenters,
) -> Result<()> {
    if embeddings.rank() != 2 || embeddings.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "update_centers",
            left: embeddings.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let d = embeddings.shape()[1];
    if d != centers.dim() {
        return Err(Error::ShapeMismatch {
            op: "update_centers",
            left: vec![d],
            right: vec![centers.dim()],
        });
    }
    let num_classes = centers.num_classes();
    let mut delta = vec![0.0; num_classes * d];
    let mut counts = vec![0usize; num_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::MissingCenter { label, num_classes });
        }
        counts[label] += 1;
        let row = embeddings.row(i);
        let c = centers.centers.row(label);
        for k in 0..d {
            delta[label * d + k] += c[k] - row[k];
        }
    }
    let rate = centers.update_rate;
    let data = centers.centers.data_mut();
    for (j, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let denom = 1.0 + count as f64;
        for k in 0..d {
            data[j * d + k] -= rate * delta[j * d + k] / denom;
        }
    }
    Ok(())
}

// ── Backward kernels (called from the tape's reverse sweep) ────────────────

pub(crate) fn triplet_backward(
    data: &[f64],
    d: usize,
    mining: &TripletMining,
    upstream: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; data.len()];
    for term in &mining.terms {
        if !term.active {
            continue;
        }
        let (a, p, n) = (term.anchor, term.pos, term.neg);
        // d‖x−y‖/dx = (x−y)/‖x−y‖; subgradient 0 at coincident points
        if term.d_pos > 1e-300 {
            let inv = upstream / term.d_pos;
            for k in 0..d {
                let diff = (data[a * d + k] - data[p * d + k]) * inv;
                grad[a * d + k] += diff;
                grad[p * d + k] -= diff;
            }
        }
        if term.d_neg > 1e-300 && term.d_neg.is_finite() {
            let inv = upstream / term.d_neg;
            for k in 0..d {
                let diff = (data[a * d + k] - data[n * d + k]) * inv;
                grad[a * d + k] -= diff;
                grad[n * d + k] += diff;
            }
        }
    }
    grad
}

pub(crate) fn cross_entropy_backward(
    softmax: &[f64],
    labels: &[usize],
    epsilon: f64,
    c: usize,
    upstream: f64,
) -> Vec<f64> {
    let m = labels.len();
    let scale = upstream / m as f64;
    let uniform = epsilon / c as f64;
    let mut grad = vec![0.0; m * c];
    for (i, &label) in labels.iter().enumerate() {
        for k in 0..c {
            let q = if k == label {
                1.0 - epsilon + uniform
            } else {
                uniform
            };
            grad[i * c + k] = (softmax[i * c + k] - q) * scale;
        }
    }
    grad
}
