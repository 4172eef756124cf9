//! Single-query retrieval evaluation: pairwise distances, the same-camera /
//! junk exclusion protocol, per-query average precision (area under the
//! precision-recall curve) and the CMC rank-k curve.

pub mod embedding;

pub use embedding::EmbeddingSet;

use crate::data::JUNK_IDENTITY;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2,
    Cosine,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!(
                "unknown metric {other:?}; expected l2 or cosine"
            ))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
        })
    }
}

/// Row-major `[nq, ng]` pairwise distances.
pub fn distance_matrix(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    metric: Metric,
) -> Result<Vec<f64>> {
    if query.dim() != gallery.dim() {
        return Err(Error::ShapeMismatch {
            op: "distance_matrix",
            left: vec![query.dim()],
            right: vec![gallery.dim()],
        });
    }
    let (nq, ng, d) = (query.len(), gallery.len(), query.dim());
    let mut out = vec![0.0; nq * ng];
    for i in 0..nq {
        let q = query.descriptors.row(i);
        for j in 0..ng {
            let g = gallery.descriptors.row(j);
            out[i * ng + j] = match metric {
                Metric::L2 => {
                    let mut s = 0.0;
                    for k in 0..d {
                        let diff = q[k] - g[k];
                        s += diff * diff;
                    }
                    s.sqrt()
                }
                Metric::Cosine => {
                    let (mut dot, mut nq2, mut ng2) = (0.0, 0.0, 0.0);
                    for k in 0..d {
                        dot += q[k] * g[k];
                        nq2 += q[k] * q[k];
                        ng2 += g[k] * g[k];
                    }
                    let denom = (nq2 * ng2).sqrt();
                    if denom == 0.0 {
                        1.0
                    } else {
                        1.0 - dot / denom
                    }
                }
            };
        }
    }
    Ok(out)
}

/// Gallery validity flags for one query: junk entries and same-identity,
/// same-camera entries are excluded.
pub fn protocol_filter(
    query_identity: i32,
    query_camera: u32,
    gallery: &EmbeddingSet,
) -> Vec<bool> {
    (0..gallery.len())
        .map(|j| {
            let id = gallery.identities[j];
            let cam = gallery.cameras[j];
            id != JUNK_IDENTITY && !(id == query_identity && cam == query_camera)
        })
        .collect()
}

/// Gallery ranking for one query after invalid entries are removed:
/// positions sorted by ascending distance, ties broken by lower gallery
/// index, with a per-position relevance flag.
#[derive(Debug, Clone)]
pub struct RankingResult {
    /// Gallery indices in rank order (valid entries only).
    pub order: Vec<usize>,
    /// Relevance flag per rank position.
    pub relevant: Vec<bool>,
}

pub fn rank_gallery(
    distances: &[f64],
    valid: &[bool],
    query_identity: i32,
    gallery: &EmbeddingSet,
) -> RankingResult {
    let mut order: Vec<usize> = (0..gallery.len()).filter(|&j| valid[j]).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .partial_cmp(&distances[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let relevant = order
        .iter()
        .map(|&j| gallery.identities[j] == query_identity)
        .collect();
    RankingResult { order, relevant }
}

/// Average precision over a ranked list: mean over relevant positions k of
/// (relevant found in the top k) / k. `None` when the list holds no relevant
/// entry.
pub fn average_precision(ranking: &RankingResult) -> Option<f64> {
    let total: usize = ranking.relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &rel) in ranking.relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// 1-based rank of the first relevant entry, if any.
pub fn first_hit(ranking: &RankingResult) -> Option<usize> {
    ranking.relevant.iter().position(|&r| r).map(|p| p + 1)
}

/// CMC curve over per-query first hits: entry `k-1` is the fraction of
/// queries whose first relevant entry lies within the top k.
pub fn cmc(first_hits: &[usize], max_rank: usize) -> Vec<f64> {
    let n = first_hits.len();
    let mut curve = vec![0.0; max_rank];
    if n == 0 {
        return curve;
    }
    for &hit in first_hits {
        if hit <= max_rank {
            curve[hit - 1] += 1.0;
        }
    }
    let mut acc = 0.0;
    for v in curve.iter_mut() {
        acc += *v;
        *v = acc / n as f64;
    }
    curve
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub map: f64,
    pub cmc: Vec<f64>,
    pub per_query_ap: Vec<f64>,
    /// Queries without any valid relevant gallery entry, excluded from the
    /// averages.
    pub skipped_queries: usize,
}

impl EvalReport {
    /// Rank-k accuracy; saturates at the end of the stored curve.
    pub fn rank(&self, k: usize) -> f64 {
        if self.cmc.is_empty() || k == 0 {
            return 0.0;
        }
        self.cmc[k.min(self.cmc.len()) - 1]
    }

    pub fn rank1(&self) -> f64 {
        self.rank(1)
    }
}

/// Composes distances, protocol filtering, ranking, AP and CMC over all
/// queries in single-query mode.
pub fn evaluate(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    metric: Metric,
    apply_protocol: bool,
) -> Result<EvalReport> {
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::Contract(
            "evaluate needs non-empty query and gallery".into(),
        ));
    }
    let distances = distance_matrix(query, gallery, metric)?;
    let ng = gallery.len();
    let mut aps = Vec::with_capacity(query.len());
    let mut hits = Vec::with_capacity(query.len());
    let mut skipped = 0usize;
    for i in 0..query.len() {
        let valid = if apply_protocol {
            protocol_filter(query.identities[i], query.cameras[i], gallery)
        } else {
            vec![true; ng]
        };
        let ranking = rank_gallery(
            &distances[i * ng..(i + 1) * ng],
            &valid,
            query.identities[i],
            gallery,
        );
        match average_precision(&ranking) {
            Some(ap) => {
                aps.push(ap);
                hits.push(first_hit(&ranking).expect("relevant entry exists"));
            }
            None => skipped += 1,
        }
    }
    if aps.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let max_rank = ng.clamp(10, 100);
    let curve = cmc(&hits, max_rank);
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok(EvalReport {
        map,
        cmc: curve,
        per_query_ap: aps,
        skipped_queries: skipped,
    })
}
