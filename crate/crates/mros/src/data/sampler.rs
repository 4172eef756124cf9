//! P×K batch sampling: P distinct identities per batch, K images each.

use rand::seq::SliceRandom;
use rand::{Rng, RngExt};

use crate::error::{Error, Result};

/// Index plan for one batch: positions into the training list, with the
/// dense label repeated K times per identity.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Samples batches of P identities × K images over a training set grouped by
/// dense label. An epoch is `ceil(num_identities / P)` batches and visits
/// every identity at least once.
#[derive(Debug, Clone)]
pub struct PkSampler {
    /// `groups[label]` holds the train-list indices of that identity.
    groups: Vec<Vec<usize>>,
    pub p: usize,
    pub k: usize,
}

impl PkSampler {
    pub fn new(labels: &[usize], p: usize, k: usize) -> Result<Self> {
        if p < 2 || k < 1 {
            return Err(Error::Sampler(format!(
                "P={p} and K={k} must be >= 2 and >= 1"
            )));
        }
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            groups[l].push(i);
        }
        if groups.iter().any(|g| g.is_empty()) {
            return Err(Error::Sampler("labels are not dense".into()));
        }
        if num_classes < p {
            return Err(Error::Sampler(format!(
                "need at least P={p} identities, have {num_classes}"
            )));
        }
        Ok(PkSampler { groups, p, k })
    }

    pub fn num_identities(&self) -> usize {
        self.groups.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.groups.len().div_ceil(self.p)
    }

    /// Plans one epoch. Identities are drawn without replacement per batch;
    /// the final short batch is padded with identities drawn from the rest of
    /// the pool. Images are drawn without replacement when an identity has at
    /// least K of them, with replacement otherwise.
    pub fn epoch(&self, rng: &mut impl Rng) -> Vec<BatchPlan> {
        let n = self.groups.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut batches = Vec::with_capacity(self.batches_per_epoch());
        for chunk in order.chunks(self.p) {
            let mut ids = chunk.to_vec();
            if ids.len() < self.p {
                let mut others: Vec<usize> = (0..n).filter(|i| !chunk.contains(i)).collect();
                others.shuffle(rng);
                ids.extend(others.into_iter().take(self.p - ids.len()));
            }
            let mut indices = Vec::with_capacity(self.p * self.k);
            let mut labels = Vec::with_capacity(self.p * self.k);
            for &id in &ids {
                let group = &self.groups[id];
                if group.len() >= self.k {
                    let mut pool = group.clone();
                    pool.shuffle(rng);
                    indices.extend(pool.into_iter().take(self.k));
                } else {
                    for _ in 0..self.k {
                        indices.push(group[rng.random_range(0..group.len())]);
                    }
                }
                labels.extend(std::iter::repeat_n(id, self.k));
            }
            batches.push(BatchPlan { indices, labels });
        }
        batches
    }
}
