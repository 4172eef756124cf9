//! Horizontal stripe partitioning and the overlapping-pair pooling that
//! turns a `[c,h,w]` feature tensor into per-stripe feature vectors.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn stripe_height(t: &Tensor, s: usize) -> Result<usize> {
    if t.rank() != 3 {
        return Err(Error::Contract(format!(
            "stripe pooling expects [c,h,w], got {:?}",
            t.shape()
        )));
    }
    if s == 0 {
        return Err(Error::Geometry("stripe count must be positive".into()));
    }
    let h = t.shape()[1];
    if !h.is_multiple_of(s) {
        return Err(Error::Geometry(format!(
            "height {h} not divisible into {s} equal stripes"
        )));
    }
    Ok(h / s)
}

/// Splits a `[c,h,w]` tensor into `s` equal-height stripes, top to bottom.
/// Vertical concatenation of the result reproduces the input exactly.
pub fn partition_stripes(t: &Tensor, s: usize) -> Result<Vec<Tensor>> {
    let sh = stripe_height(t, s)?;
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut stripes = Vec::with_capacity(s);
    for k in 0..s {
        let mut data = Vec::with_capacity(c * sh * w);
        for ch in 0..c {
            let base = ch * h * w + k * sh * w;
            data.extend_from_slice(&t.data()[base..base + sh * w]);
        }
        stripes.push(Tensor::new(vec![c, sh, w], data)?);
    }
    Ok(stripes)
}

/// Pools adjacent stripe pairs: row `i` is the per-channel mean over stripes
/// `i` and `i+1` (rows `[i·h/s, (i+2)·h/s)`, full width). Produces `s-1`
/// vectors of length `c`; differentiable.
pub fn overlap_pool(tape: &mut Tape, t: TensorId, s: usize) -> Result<Vec<TensorId>> {
    if s < 2 {
        return Err(Error::Geometry(format!(
            "overlapping pooling needs s >= 2 stripes, got {s}"
        )));
    }
    let sh = stripe_height(tape.value(t), s)?;
    (0..s - 1)
        .map(|i| tape.mean_over_region(t, i * sh, (i + 2) * sh))
        .collect()
}

/// Per-stripe global average pooling without overlap: row `k` is the mean of
/// stripe `k` alone. Produces `s` vectors of length `c`; differentiable.
pub fn non_overlap_pool(tape: &mut Tape, t: TensorId, s: usize) -> Result<Vec<TensorId>> {
    let sh = stripe_height(tape.value(t), s)?;
    (0..s)
        .map(|k| tape.mean_over_region(t, k * sh, (k + 1) * sh))
        .collect()
}
