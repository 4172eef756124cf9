//! Python bindings for the core numeric pieces: the three losses, stripe
//! pooling, the learning-rate schedule, filename parsing and the retrieval
//! evaluator. Built as an extension module named `mros_py`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mros::autodiff::Tape;
use mros::eval::{self, EmbeddingSet, Metric};
use mros::losses::{self, ClassCenters};
use mros::model::pooling;
use mros::tensor::Tensor;
use mros::train::schedule::{self, LrSchedule};

fn to_py_err(e: mros::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_tensor(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Tensor> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what} must be non-empty")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!(
            "{what} rows must share one positive length"
        )));
    }
    let n = rows.len();
    Tensor::new(vec![n, d], rows.into_iter().flatten().collect()).map_err(to_py_err)
}

/// Learning rate at an epoch: linear warm-up then staircase decay.
#[pyfunction]
#[pyo3(signature = (epoch, base_lr=0.001, warmup_epochs=10, warmup_coefficient=0.01, decay_factor=0.1, decay_period=30))]
fn lr_at_epoch(
    epoch: usize,
    base_lr: f64,
    warmup_epochs: usize,
    warmup_coefficient: f64,
    decay_factor: f64,
    decay_period: usize,
) -> f64 {
    schedule::lr_at_epoch(
        epoch,
        &LrSchedule {
            base_lr,
            warmup_epochs,
            warmup_coefficient,
            decay_factor,
            decay_period,
        },
    )
}

/// Batch-hard triplet loss over an embedding matrix (one row per sample).
#[pyfunction]
#[pyo3(signature = (embeddings, labels, alpha=0.3))]
fn triplet_batch_hard(embeddings: Vec<Vec<f64>>, labels: Vec<usize>, alpha: f64) -> PyResult<f64> {
    let t = matrix_tensor(embeddings, "embeddings")?;
    let mut tape = Tape::new();
    let g = tape.leaf(t);
    let loss = tape
        .triplet_batch_hard(g, &labels, alpha)
        .map_err(to_py_err)?;
    tape.value(loss).item().map_err(to_py_err)
}

/// Batch-hard triplet loss plus its gradient with respect to the embeddings.
#[pyfunction]
#[pyo3(signature = (embeddings, labels, alpha=0.3))]
fn triplet_batch_hard_with_grad(
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    alpha: f64,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let t = matrix_tensor(embeddings, "embeddings")?;
    let d = t.shape()[1];
    let mut tape = Tape::new();
    let g = tape.leaf(t.with_grad());
    let loss = tape
        .triplet_batch_hard(g, &labels, alpha)
        .map_err(to_py_err)?;
    let value = tape.value(loss).item().map_err(to_py_err)?;
    tape.backward(loss).map_err(to_py_err)?;
    let grad = tape
        .grad(g)
        .ok_or_else(|| PyValueError::new_err("gradient missing"))?;
    Ok((value, grad.chunks(d).map(|c| c.to_vec()).collect()))
}

/// Center loss: half the summed squared distance of each row to its class
/// center.
#[pyfunction]
fn center_loss(
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    centers: Vec<Vec<f64>>,
) -> PyResult<f64> {
    let g = matrix_tensor(embeddings, "embeddings")?;
    let c = matrix_tensor(centers, "centers")?;
    let holder = ClassCenters {
        centers: c,
        update_rate: 0.5,
    };
    let mut tape = Tape::new();
    let id = tape.leaf(g);
    let loss = tape.center_loss(id, &labels, &holder).map_err(to_py_err)?;
    tape.value(loss).item().map_err(to_py_err)
}

/// Applies the center update rule once and returns the new centers.
#[pyfunction]
#[pyo3(signature = (embeddings, labels, centers, update_rate=0.5))]
fn update_centers(
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    centers: Vec<Vec<f64>>,
    update_rate: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let g = matrix_tensor(embeddings, "embeddings")?;
    let c = matrix_tensor(centers, "centers")?;
    let d = c.shape()[1];
    let mut holder = ClassCenters {
        centers: c,
        update_rate,
    };
    losses::update_centers(&g, &labels, &mut holder).map_err(to_py_err)?;
    Ok(holder
        .centers
        .data()
        .chunks(d)
        .map(|r| r.to_vec())
        .collect())
}

/// Label-smoothed cross-entropy of one logit vector.
#[pyfunction]
#[pyo3(signature = (logits, label, epsilon=0.1))]
fn cross_entropy_ls(logits: Vec<f64>, label: usize, epsilon: f64) -> PyResult<f64> {
    let n = logits.len();
    let t = Tensor::new(vec![n], logits).map_err(to_py_err)?;
    let mut tape = Tape::new();
    let id = tape.leaf(t);
    let loss = tape
        .cross_entropy_ls(id, &[label], epsilon)
        .map_err(to_py_err)?;
    tape.value(loss).item().map_err(to_py_err)
}

/// Weighted fusion of the three loss parts: `triplet + beta*center + cross`.
#[pyfunction]
#[pyo3(signature = (triplet, center, cross, beta=0.0005))]
fn total_loss(triplet: f64, center: f64, cross: f64, beta: f64) -> PyResult<f64> {
    for (v, name) in [(triplet, "triplet"), (center, "center"), (cross, "cross")] {
        if !v.is_finite() {
            return Err(PyValueError::new_err(format!("non-finite {name} loss")));
        }
    }
    Ok(triplet + beta * center + cross)
}

fn pool_with(
    data: Vec<f64>,
    shape: (usize, usize, usize),
    s: usize,
    overlap: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let t = Tensor::new(vec![shape.0, shape.1, shape.2], data).map_err(to_py_err)?;
    let mut tape = Tape::new();
    let id = tape.leaf(t);
    let rows = if overlap {
        pooling::overlap_pool(&mut tape, id, s)
    } else {
        pooling::non_overlap_pool(&mut tape, id, s)
    }
    .map_err(to_py_err)?;
    Ok(rows
        .into_iter()
        .map(|r| tape.value(r).data().to_vec())
        .collect())
}

/// Overlapping-pair stripe pooling of a `[c,h,w]` tensor (row-major data):
/// `s-1` pooled vectors of length `c`.
#[pyfunction]
fn overlap_pool(data: Vec<f64>, shape: (usize, usize, usize), s: usize) -> PyResult<Vec<Vec<f64>>> {
    pool_with(data, shape, s, true)
}

/// Plain per-stripe pooling: `s` vectors of length `c`.
#[pyfunction]
fn non_overlap_pool(
    data: Vec<f64>,
    shape: (usize, usize, usize),
    s: usize,
) -> PyResult<Vec<Vec<f64>>> {
    pool_with(data, shape, s, false)
}

/// Parses a dataset filename into `(identity, camera, sequence)`.
#[pyfunction]
fn parse_market_filename(name: &str) -> PyResult<(i32, u32, u32)> {
    let p = mros::data::parse_market_filename(name).map_err(to_py_err)?;
    Ok((p.identity, p.camera, p.sequence))
}

/// Retrieval scores in single-query mode.
#[pyclass(name = "EvalReport")]
struct PyEvalReport {
    #[pyo3(get)]
    map: f64,
    #[pyo3(get)]
    rank1: f64,
    #[pyo3(get)]
    rank5: f64,
    #[pyo3(get)]
    rank10: f64,
    #[pyo3(get)]
    per_query_ap: Vec<f64>,
    #[pyo3(get)]
    skipped_queries: usize,
}

#[pymethods]
impl PyEvalReport {
    fn __repr__(&self) -> String {
        format!(
            "EvalReport(map={:.4}, rank1={:.4}, rank5={:.4}, rank10={:.4}, skipped={})",
            self.map, self.rank1, self.rank5, self.rank10, self.skipped_queries
        )
    }
}

/// Single-query mAP/CMC evaluation with the same-camera/junk exclusion
/// protocol.
#[pyfunction]
#[pyo3(signature = (query, query_ids, query_cams, gallery, gallery_ids, gallery_cams, metric="l2", protocol=true))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    query: Vec<Vec<f64>>,
    query_ids: Vec<i32>,
    query_cams: Vec<u32>,
    gallery: Vec<Vec<f64>>,
    gallery_ids: Vec<i32>,
    gallery_cams: Vec<u32>,
    metric: &str,
    protocol: bool,
) -> PyResult<PyEvalReport> {
    let nq = query.len();
    let ng = gallery.len();
    let q = EmbeddingSet::new(
        matrix_tensor(query, "query")?,
        query_ids,
        query_cams,
        vec![String::new(); nq],
    )
    .map_err(to_py_err)?;
    let g = EmbeddingSet::new(
        matrix_tensor(gallery, "gallery")?,
        gallery_ids,
        gallery_cams,
        vec![String::new(); ng],
    )
    .map_err(to_py_err)?;
    let metric = Metric::parse(metric).map_err(to_py_err)?;
    let report = eval::evaluate(&q, &g, metric, protocol).map_err(to_py_err)?;
    Ok(PyEvalReport {
        map: report.map,
        rank1: report.rank(1),
        rank5: report.rank(5),
        rank10: report.rank(10),
        per_query_ap: report.per_query_ap.clone(),
        skipped_queries: report.skipped_queries,
    })
}

#[pymodule]
fn mros_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(lr_at_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_batch_hard, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_batch_hard_with_grad, m)?)?;
    m.add_function(wrap_pyfunction!(center_loss, m)?)?;
    m.add_function(wrap_pyfunction!(update_centers, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy_ls, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_pool, m)?)?;
    m.add_function(wrap_pyfunction!(non_overlap_pool, m)?)?;
    m.add_function(wrap_pyfunction!(parse_market_filename, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyEvalReport>()?;
    Ok(())
}
