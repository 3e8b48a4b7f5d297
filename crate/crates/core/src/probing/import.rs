//! Flat binary container for per-layer logit matrices captured from an
//! external model, so the classification stage can run on real activations.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! bytes 0..8    magic  b"TALOGIT1"
//! bytes 8..16   u64    number of layers
//! bytes 16..24  u64    rows per matrix
//! bytes 24..32  u64    columns per matrix
//! then          f64    layers * rows * cols values, layer-major, row-major
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{attention_entropy, attention_logits_difference, context_sensitivity_score};

pub const LOGIT_MAGIC: [u8; 8] = *b"TALOGIT1";
const HEADER_LEN: usize = 32;

/// Writes equally shaped matrices in the container format.
pub fn write_logit_stack<W: Write>(mut out: W, layers: &[Matrix]) -> Result<()> {
    let (rows, cols) = match layers.first() {
        Some(m) => m.shape(),
        None => (0, 0),
    };
    if layers.iter().any(|m| m.shape() != (rows, cols)) {
        return Err(Error::Dimension("all layers must share one shape".into()));
    }
    out.write_all(&LOGIT_MAGIC)?;
    for n in [layers.len(), rows, cols] {
        out.write_all(&(n as u64).to_le_bytes())?;
    }
    for m in layers {
        for v in m.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_logit_stack<R: Read>(mut input: R) -> Result<Vec<Matrix>> {
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if header[..8] != LOGIT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let field = |i: usize| -> Result<usize> {
        let v = u64::from_le_bytes(header[8 * i..8 * i + 8].try_into().expect("8-byte slice"));
        usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} too large")))
    };
    let (layers, rows, cols) = (field(1)?, field(2)?, field(3)?);
    let per_layer = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let expected = per_layer
        .checked_mul(layers)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!("payload is {} bytes, header implies {expected}", body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    values
        .chunks(per_layer.max(1))
        .take(layers)
        .map(|c| Matrix::from_vec(rows, cols, c.to_vec()))
        .collect()
}

/// Per-layer ALD between perturbed and baseline logits from two imported stacks.
pub fn ald_from_logits(probed: &[Matrix], baseline: &[Matrix]) -> Result<Vec<f64>> {
    if probed.len() != baseline.len() {
        return Err(Error::Dimension(format!("{} probed layers vs {} baseline", probed.len(), baseline.len())));
    }
    probed
        .iter()
        .zip(baseline)
        .map(|(p, b)| attention_logits_difference(p, b))
        .collect()
}

/// Row-wise softmax of a logit matrix; non-finite entries are treated as masked.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = logits.clone();
    for (r, row) in out.iter_rows_mut().enumerate() {
        let max = row.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::FullyMaskedRow { row: r });
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = if v.is_finite() { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Per-layer context score from imported windowed and baseline logits.
pub fn ctx_scores_from_logits(windowed: &[Matrix], baseline: &[Matrix]) -> Result<Vec<f64>> {
    if windowed.len() != baseline.len() {
        return Err(Error::Dimension(format!("{} windowed layers vs {} baseline", windowed.len(), baseline.len())));
    }
    windowed
        .iter()
        .zip(baseline)
        .map(|(w, b)| {
            let hw = attention_entropy(&softmax_rows(w)?)?.mean;
            let hb = attention_entropy(&softmax_rows(b)?)?.mean;
            context_sensitivity_score(hw, hb)
        })
        .collect()
}
