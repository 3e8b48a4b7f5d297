//! Reference softmax attention with temporal rotary position embedding.
//!
//! Tokens are laid out frame-major: token `t` belongs to frame
//! `t / tokens_per_frame`, and every token of a frame shares that frame's
//! temporal position. Only the temporal axis is rotated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{IntMatrix, Matrix, TokenTensor};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// One temporal position per frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositionIndex(Vec<i64>);

impl PositionIndex {
    pub fn new(values: Vec<i64>) -> Self {
        Self(values)
    }

    /// `[0, 1, ..., frames - 1]`.
    pub fn sequential(frames: usize) -> Self {
        Self((0..frames as i64).collect())
    }

    pub fn shifted(&self, delta: i64) -> Self {
        Self(self.0.iter().map(|p| p + delta).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[i64] {
        &self.0
    }

    pub fn get(&self, frame: usize) -> i64 {
        self.0[frame]
    }
}

impl From<Vec<i64>> for PositionIndex {
    fn from(values: Vec<i64>) -> Self {
        Self(values)
    }
}

/// Pre-softmax scores, post-softmax weights and the attended output of one
/// attention call.
///
/// `logits` holds the scaled scores for every query/key pair, including pairs
/// the mask forbids; the mask is applied inside the softmax, so forbidden
/// pairs carry exactly zero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub logits: Matrix,
    pub weights: Matrix,
    pub output: TokenTensor,
}

/// Token-level attendability, indexed by flattened query and key token.
pub trait AttentionMask {
    /// `(num_query_tokens, num_key_tokens)` the mask is defined over.
    fn token_dims(&self) -> (usize, usize);

    fn allows(&self, query_token: usize, key_token: usize) -> bool;
}

/// Where rotary positions come from for a query/key frame pair.
///
/// A scheme exposes one or more position "zones". Each zone assigns a
/// position to every query frame and every key frame; the zone used for a
/// pair is chosen by [`PositionScheme::zone_for`]. Plain positions are the
/// single-zone case.
pub trait PositionScheme {
    fn zone_count(&self) -> usize;
    fn query_frames(&self) -> usize;
    fn key_frames(&self) -> usize;
    fn query_position(&self, zone: usize, frame: usize) -> i64;
    fn key_position(&self, zone: usize, frame: usize) -> i64;
    fn zone_for(&self, query_frame: usize, key_frame: usize) -> usize;
}

/// Independent query and key position sequences.
#[derive(Debug, Clone, Copy)]
pub struct PlainPositions<'a> {
    pub query: &'a PositionIndex,
    pub key: &'a PositionIndex,
}

impl PositionScheme for PlainPositions<'_> {
    fn zone_count(&self) -> usize {
        1
    }

    fn query_frames(&self) -> usize {
        self.query.len()
    }

    fn key_frames(&self) -> usize {
        self.key.len()
    }

    fn query_position(&self, _zone: usize, frame: usize) -> i64 {
        self.query.get(frame)
    }

    fn key_position(&self, _zone: usize, frame: usize) -> i64 {
        self.key.get(frame)
    }

    fn zone_for(&self, _q: usize, _k: usize) -> usize {
        0
    }
}

/// Frequencies `base^(-2t/head_dim)` for `t in 0..head_dim/2`.
pub fn rope_frequencies(head_dim: usize, base: f64) -> Result<Vec<f64>> {
    if head_dim == 0 || head_dim % 2 != 0 {
        return Err(Error::Dimension(format!("head_dim must be even and positive, got {head_dim}")));
    }
    if !(base > 1.0) || !base.is_finite() {
        return Err(Error::InvalidInput(format!("rope base must exceed 1, got {base}")));
    }
    Ok((0..head_dim / 2).map(|t| base.powf(-2.0 * t as f64 / head_dim as f64)).collect())
}

fn rotate_row(row: &mut [f64], position: i64, freqs: &[f64]) {
    if position == 0 {
        return;
    }
    let p = position as f64;
    for (pair, &theta) in row.chunks_exact_mut(2).zip(freqs) {
        let (sin, cos) = (p * theta).sin_cos();
        let (x, y) = (pair[0], pair[1]);
        pair[0] = x * cos - y * sin;
        pair[1] = x * sin + y * cos;
    }
}

fn check_frame_layout(num_tokens: usize, frames: usize, tokens_per_frame: usize, what: &str) -> Result<()> {
    if tokens_per_frame == 0 || frames * tokens_per_frame != num_tokens {
        return Err(Error::Dimension(format!(
            "{what}: {frames} frames x {tokens_per_frame} tokens/frame does not match {num_tokens} tokens"
        )));
    }
    Ok(())
}

fn check_freqs(model_dim: usize, freqs: &[f64]) -> Result<()> {
    if model_dim % 2 != 0 || freqs.len() * 2 != model_dim {
        return Err(Error::Dimension(format!(
            "model_dim {model_dim} needs {} frequencies, got {}",
            model_dim / 2,
            freqs.len()
        )));
    }
    Ok(())
}

/// Rotates each consecutive coordinate pair of every token by its frame's
/// position times the pair frequency.
pub fn rope_apply(
    tokens: &TokenTensor,
    positions: &PositionIndex,
    tokens_per_frame: usize,
    freqs: &[f64],
) -> Result<TokenTensor> {
    check_freqs(tokens.cols(), freqs)?;
    check_frame_layout(tokens.rows(), positions.len(), tokens_per_frame, "rope_apply")?;
    Ok(rotate_by(tokens, tokens_per_frame, freqs, |f| positions.get(f)))
}

fn rotate_by(tokens: &TokenTensor, tokens_per_frame: usize, freqs: &[f64], pos: impl Fn(usize) -> i64) -> TokenTensor {
    let mut out = tokens.clone();
    for t in 0..out.rows() {
        rotate_row(out.row_mut(t), pos(t / tokens_per_frame), freqs);
    }
    out
}

/// `relative[i][j] = pos_q[i] - pos_k[j]`.
pub fn relative_position_matrix(pos_q: &PositionIndex, pos_k: &PositionIndex) -> IntMatrix {
    IntMatrix::from_fn(pos_q.len(), pos_k.len(), |i, j| pos_q.get(i) - pos_k.get(j))
}

/// Single-head attention with plain query/key positions.
///
/// `scale` defaults to `1/sqrt(model_dim)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_forward(
    q: &TokenTensor,
    k: &TokenTensor,
    v: &TokenTensor,
    pos_q: &PositionIndex,
    pos_k: &PositionIndex,
    tokens_per_frame: usize,
    mask: Option<&dyn AttentionMask>,
    freqs: &[f64],
    scale: Option<f64>,
) -> Result<AttentionRecord> {
    let scheme = PlainPositions { query: pos_q, key: pos_k };
    attention_forward_with(q, k, v, &scheme, tokens_per_frame, mask, freqs, scale)
}

/// Single-head attention under an arbitrary [`PositionScheme`].
#[allow(clippy::too_many_arguments)]
pub fn attention_forward_with(
    q: &TokenTensor,
    k: &TokenTensor,
    v: &TokenTensor,
    scheme: &dyn PositionScheme,
    tokens_per_frame: usize,
    mask: Option<&dyn AttentionMask>,
    freqs: &[f64],
    scale: Option<f64>,
) -> Result<AttentionRecord> {
    let dim = q.cols();
    if k.cols() != dim {
        return Err(Error::Dimension(format!("query dim {dim} != key dim {}", k.cols())));
    }
    if v.rows() != k.rows() {
        return Err(Error::Dimension(format!("{} values for {} keys", v.rows(), k.rows())));
    }
    check_freqs(dim, freqs)?;
    check_frame_layout(q.rows(), scheme.query_frames(), tokens_per_frame, "queries")?;
    check_frame_layout(k.rows(), scheme.key_frames(), tokens_per_frame, "keys")?;
    if let Some(m) = mask {
        if m.token_dims() != (q.rows(), k.rows()) {
            return Err(Error::Dimension(format!(
                "mask covers {:?} tokens, attention has ({}, {})",
                m.token_dims(),
                q.rows(),
                k.rows()
            )));
        }
    }
    let scale = scale.unwrap_or_else(|| 1.0 / (dim as f64).sqrt());

    let zones = scheme.zone_count();
    let q_rot: Vec<Matrix> = (0..zones)
        .map(|z| rotate_by(q, tokens_per_frame, freqs, |f| scheme.query_position(z, f)))
        .collect();
    let k_rot: Vec<Matrix> = (0..zones)
        .map(|z| rotate_by(k, tokens_per_frame, freqs, |f| scheme.key_position(z, f)))
        .collect();

    let (nq, nk) = (q.rows(), k.rows());
    let mut logits = Matrix::zeros(nq, nk);
    for i in 0..nq {
        let qf = i / tokens_per_frame;
        for j in 0..nk {
            let z = scheme.zone_for(qf, j / tokens_per_frame);
            let dot: f64 = q_rot[z].row(i).iter().zip(k_rot[z].row(j)).map(|(a, b)| a * b).sum();
            logits[(i, j)] = dot * scale;
        }
    }

    let weights = masked_softmax(&logits, mask)?;
    let output = weights.matmul(v)?;
    Ok(AttentionRecord { logits, weights, output })
}

/// Row-wise softmax; forbidden entries are treated as `-inf` and get weight 0.
pub fn masked_softmax(logits: &Matrix, mask: Option<&dyn AttentionMask>) -> Result<Matrix> {
    let (nq, nk) = logits.shape();
    let mut weights = Matrix::zeros(nq, nk);
    let allowed = |i: usize, j: usize| mask.map_or(true, |m| m.allows(i, j));
    for i in 0..nq {
        let row = logits.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, &x) in row.iter().enumerate() {
            if allowed(i, j) && x > max {
                max = x;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::FullyMaskedRow { row: i });
        }
        let out = weights.row_mut(i);
        let mut sum = 0.0;
        for (j, &x) in row.iter().enumerate() {
            if allowed(i, j) {
                let e = (x - max).exp();
                out[j] = e;
                sum += e;
            }
        }
        out.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(weights)
}

/// Per-head records plus the concatenated head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadRecord {
    pub heads: Vec<AttentionRecord>,
    pub output: TokenTensor,
}

impl MultiHeadRecord {
    pub fn mean_logits(&self) -> Matrix {
        mean_of(self.heads.iter().map(|h| &h.logits))
    }

    pub fn mean_weights(&self) -> Matrix {
        mean_of(self.heads.iter().map(|h| &h.weights))
    }
}

fn mean_of<'a>(mut it: impl ExactSizeIterator<Item = &'a Matrix>) -> Matrix {
    let n = it.len() as f64;
    let first = it.next().expect("at least one head").clone();
    let sum = it.fold(first, |acc, m| acc.add(m).expect("heads share a shape"));
    sum.scale(1.0 / n)
}

/// Splits `model_dim` into `num_heads` equal heads, runs each head with its
/// own frequency schedule and `1/sqrt(head_dim)` scaling, and concatenates.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    q: &TokenTensor,
    k: &TokenTensor,
    v: &TokenTensor,
    num_heads: usize,
    scheme: &dyn PositionScheme,
    tokens_per_frame: usize,
    mask: Option<&dyn AttentionMask>,
    rope_base: f64,
) -> Result<MultiHeadRecord> {
    if num_heads == 0 || q.cols() % num_heads != 0 || v.cols() % num_heads != 0 {
        return Err(Error::Dimension(format!("{} columns do not split into {num_heads} heads", q.cols())));
    }
    let head_dim = q.cols() / num_heads;
    let v_dim = v.cols() / num_heads;
    let freqs = rope_frequencies(head_dim, rope_base)?;
    let heads = (0..num_heads)
        .map(|h| {
            let qh = q.column_block(h * head_dim, head_dim)?;
            let kh = k.column_block(h * head_dim, head_dim)?;
            let vh = v.column_block(h * v_dim, v_dim)?;
            attention_forward_with(&qh, &kh, &vh, scheme, tokens_per_frame, mask, &freqs, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Matrix> = heads.iter().map(|h| h.output.clone()).collect();
    let output = Matrix::hconcat(&outputs)?;
    Ok(MultiHeadRecord { heads, output })
}
