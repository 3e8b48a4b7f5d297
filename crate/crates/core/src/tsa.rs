//! Tiered sparse attention masks.
//!
//! Frame pairs are classified by temporal distance: dense within the local
//! window `d1`, striped in `[d1, d2)`, pruned beyond. Inside a striped block a
//! query token at within-frame index `k` may only see key tokens `l` with
//! `|k - l| < stripe_width`. The sink frame is always fully visible.

use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_forward, attention_forward_with, AttentionMask, AttentionRecord, PositionIndex, PositionScheme,
};
use crate::error::{Error, Result};
use crate::matrix::TokenTensor;

/// Largest dense mask [`materialize_mask`] will allocate.
pub const MATERIALIZE_LIMIT: usize = 1 << 26;

#[derive(Deserialize)]
struct RawTsaConfig {
    d1: u32,
    d2: u32,
    alpha: f64,
    tokens_per_frame: usize,
    frames: usize,
    #[serde(default = "default_sink")]
    sink_frame: Option<usize>,
    pretrained_ctx: u32,
}

fn default_sink() -> Option<usize> {
    Some(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTsaConfig")]
pub struct TsaConfig {
    pub d1: u32,
    pub d2: u32,
    pub alpha: f64,
    pub tokens_per_frame: usize,
    pub frames: usize,
    pub sink_frame: Option<usize>,
    pub pretrained_ctx: u32,
}

impl TryFrom<RawTsaConfig> for TsaConfig {
    type Error = Error;

    fn try_from(r: RawTsaConfig) -> Result<Self> {
        let cfg = TsaConfig {
            d1: r.d1,
            d2: r.d2,
            alpha: r.alpha,
            tokens_per_frame: r.tokens_per_frame,
            frames: r.frames,
            sink_frame: r.sink_frame,
            pretrained_ctx: r.pretrained_ctx,
        };
        cfg.check()?;
        Ok(cfg)
    }
}

impl TsaConfig {
    /// Config with the sink on frame 0.
    pub fn new(d1: u32, d2: u32, alpha: f64, tokens_per_frame: usize, frames: usize, pretrained_ctx: u32) -> Result<Self> {
        let cfg = Self { d1, d2, alpha, tokens_per_frame, frames, sink_frame: Some(0), pretrained_ctx };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn with_sink(mut self, sink_frame: Option<usize>) -> Result<Self> {
        self.sink_frame = sink_frame;
        self.check()?;
        Ok(self)
    }

    pub fn with_frames(mut self, frames: usize) -> Result<Self> {
        self.frames = frames;
        self.check()?;
        Ok(self)
    }

    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d1 == 0 || self.d1 >= self.d2 {
            return fail(format!("need 0 < d1 < d2, got d1={} d2={}", self.d1, self.d2));
        }
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return fail(format!("alpha must be finite and >= 1, got {}", self.alpha));
        }
        if self.tokens_per_frame == 0 || self.frames == 0 {
            return fail("tokens_per_frame and frames must be positive".into());
        }
        if let Some(s) = self.sink_frame {
            if s >= self.frames {
                return fail(format!("sink frame {s} outside {} frames", self.frames));
            }
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame
    }
}

/// `floor(n * d1 / (alpha * (d2 - d1)))`.
pub fn stripe_width(cfg: &TsaConfig) -> usize {
    let num = cfg.tokens_per_frame as f64 * f64::from(cfg.d1);
    let den = cfg.alpha * f64::from(cfg.d2 - cfg.d1);
    (num / den).floor() as usize
}

/// Window/decay check against the pre-trained context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsaValidity {
    /// `d1 * (1 + 1/alpha)`.
    pub value: f64,
    /// `pretrained_ctx / 4`.
    pub lower: f64,
    /// `pretrained_ctx / 2`.
    pub upper: f64,
    pub valid: bool,
    /// `n * d1 * (1 + 1/alpha)`.
    pub token_budget: f64,
    /// `n * pretrained_ctx / 2`.
    pub token_limit: f64,
    pub token_budget_ok: bool,
    /// `n * d1 + stripe_width * (d2 - d1)`, the keys one side of a query sees.
    pub one_sided_keys: usize,
}

pub fn validate_tsa(cfg: &TsaConfig) -> TsaValidity {
    let value = f64::from(cfg.d1) * (1.0 + 1.0 / cfg.alpha);
    let l = f64::from(cfg.pretrained_ctx);
    let (lower, upper) = (l / 4.0, l / 2.0);
    let n = cfg.tokens_per_frame as f64;
    let token_budget = n * value;
    let token_limit = n * upper;
    let one_sided_keys =
        cfg.tokens_per_frame * cfg.d1 as usize + stripe_width(cfg) * (cfg.d2 - cfg.d1) as usize;
    TsaValidity {
        value,
        lower,
        upper,
        valid: lower <= value && value <= upper,
        token_budget,
        token_limit,
        token_budget_ok: token_budget <= token_limit,
        one_sided_keys,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Dense,
    Striped,
    Pruned,
}

impl BlockKind {
    pub fn code(self) -> char {
        match self {
            BlockKind::Dense => 'D',
            BlockKind::Striped => 'S',
            BlockKind::Pruned => 'P',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'D' => Some(BlockKind::Dense),
            'S' => Some(BlockKind::Striped),
            'P' => Some(BlockKind::Pruned),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawDescriptor {
    frames: usize,
    tokens_per_frame: usize,
    stripe_width: usize,
    sink_frame: Option<usize>,
    pattern: String,
}

/// Frame-pair block pattern of a mask. The token-level mask is implied and
/// only built on request ([`materialize_mask`]).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDescriptor", into = "RawDescriptor")]
pub struct BlockMaskDescriptor {
    frames: usize,
    tokens_per_frame: usize,
    stripe_width: usize,
    sink_frame: Option<usize>,
    pattern: Vec<BlockKind>,
}

impl From<BlockMaskDescriptor> for RawDescriptor {
    fn from(d: BlockMaskDescriptor) -> Self {
        RawDescriptor {
            frames: d.frames,
            tokens_per_frame: d.tokens_per_frame,
            stripe_width: d.stripe_width,
            sink_frame: d.sink_frame,
            pattern: d.pattern_code(),
        }
    }
}

impl TryFrom<RawDescriptor> for BlockMaskDescriptor {
    type Error = Error;

    fn try_from(r: RawDescriptor) -> Result<Self> {
        let pattern = r
            .pattern
            .chars()
            .map(|c| BlockKind::from_code(c).ok_or_else(|| Error::Format(format!("bad block code {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        BlockMaskDescriptor::from_parts(r.frames, r.tokens_per_frame, r.stripe_width, r.sink_frame, pattern)
    }
}

impl BlockMaskDescriptor {
    pub fn from_parts(
        frames: usize,
        tokens_per_frame: usize,
        stripe_width: usize,
        sink_frame: Option<usize>,
        pattern: Vec<BlockKind>,
    ) -> Result<Self> {
        if frames == 0 || tokens_per_frame == 0 {
            return Err(Error::InvalidInput("descriptor needs at least one frame and token".into()));
        }
        if pattern.len() != frames * frames {
            return Err(Error::Format(format!("pattern has {} blocks, expected {}", pattern.len(), frames * frames)));
        }
        if sink_frame.is_some_and(|s| s >= frames) {
            return Err(Error::InvalidInput("sink frame out of range".into()));
        }
        if stripe_width == 0 && pattern.contains(&BlockKind::Striped) {
            return Err(Error::InvalidInput("striped blocks need a positive stripe width".into()));
        }
        Ok(Self { frames, tokens_per_frame, stripe_width, sink_frame, pattern })
    }

    /// Every block dense.
    pub fn all_dense(frames: usize, tokens_per_frame: usize) -> Self {
        Self { frames, tokens_per_frame, stripe_width: 0, sink_frame: None, pattern: vec![BlockKind::Dense; frames * frames] }
    }

    /// Plain frame band `|i - j| < window`, no sink, no stripes.
    pub fn sliding_window(frames: usize, tokens_per_frame: usize, window: usize) -> Self {
        let pattern = (0..frames)
            .flat_map(|i| (0..frames).map(move |j| (i, j)))
            .map(|(i, j)| if i.abs_diff(j) < window { BlockKind::Dense } else { BlockKind::Pruned })
            .collect();
        Self { frames, tokens_per_frame, stripe_width: 0, sink_frame: None, pattern }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn stripe_width(&self) -> usize {
        self.stripe_width
    }

    pub fn sink_frame(&self) -> Option<usize> {
        self.sink_frame
    }

    pub fn total_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    #[inline]
    pub fn block(&self, query_frame: usize, key_frame: usize) -> BlockKind {
        self.pattern[query_frame * self.frames + key_frame]
    }

    /// Row-major `D`/`S`/`P` string.
    pub fn pattern_code(&self) -> String {
        self.pattern.iter().map(|b| b.code()).collect()
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.pattern.iter().filter(|&&b| b == kind).count()
    }

    /// Number of key tokens a query at within-frame index `k` sees inside a
    /// block of the given kind.
    pub fn keys_in_block(&self, kind: BlockKind, k: usize) -> usize {
        match kind {
            BlockKind::Dense => self.tokens_per_frame,
            BlockKind::Pruned => 0,
            BlockKind::Striped => {
                let lo = (k + 1).saturating_sub(self.stripe_width);
                let hi = (k + self.stripe_width).min(self.tokens_per_frame);
                hi.saturating_sub(lo)
            }
        }
    }
}

impl AttentionMask for BlockMaskDescriptor {
    fn token_dims(&self) -> (usize, usize) {
        (self.total_tokens(), self.total_tokens())
    }

    #[inline]
    fn allows(&self, query_token: usize, key_token: usize) -> bool {
        let n = self.tokens_per_frame;
        match self.block(query_token / n, key_token / n) {
            BlockKind::Dense => true,
            BlockKind::Pruned => false,
            BlockKind::Striped => (query_token % n).abs_diff(key_token % n) < self.stripe_width,
        }
    }
}

/// Builds the tiered block pattern. A computed stripe width of zero turns the
/// striped zone into pruned blocks.
pub fn build_block_mask(cfg: &TsaConfig) -> BlockMaskDescriptor {
    let ds = stripe_width(cfg);
    if ds == 0 {
        log::warn!(
            "stripe width is 0 for n={} d1={} d2={} alpha={}; mid-range blocks are pruned",
            cfg.tokens_per_frame,
            cfg.d1,
            cfg.d2,
            cfg.alpha
        );
    }
    let (d1, d2) = (cfg.d1 as usize, cfg.d2 as usize);
    let f = cfg.frames;
    let mut pattern = Vec::with_capacity(f * f);
    for i in 0..f {
        for j in 0..f {
            let dist = i.abs_diff(j);
            let kind = if dist < d1 || Some(j) == cfg.sink_frame {
                BlockKind::Dense
            } else if dist < d2 && ds > 0 {
                BlockKind::Striped
            } else {
                BlockKind::Pruned
            };
            pattern.push(kind);
        }
    }
    BlockMaskDescriptor { frames: f, tokens_per_frame: cfg.tokens_per_frame, stripe_width: ds, sink_frame: cfg.sink_frame, pattern }
}

/// Dense boolean token mask, row = query token, frame-major flattening.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    size: usize,
    data: Vec<bool>,
}

impl DenseMask {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, q: usize, k: usize) -> bool {
        self.data[q * self.size + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.data[q * self.size..(q + 1) * self.size]
    }

    /// Binary PGM: header `P5\n<width> <height>\n255\n`, then one byte per
    /// token pair in row-major order, 255 = attendable, 0 = blocked.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend(self.data.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }
}

impl AttentionMask for DenseMask {
    fn token_dims(&self) -> (usize, usize) {
        (self.size, self.size)
    }

    fn allows(&self, q: usize, k: usize) -> bool {
        self.get(q, k)
    }
}

pub fn materialize_mask(desc: &BlockMaskDescriptor) -> Result<DenseMask> {
    materialize_mask_with_limit(desc, MATERIALIZE_LIMIT)
}

pub fn materialize_mask_with_limit(desc: &BlockMaskDescriptor, limit: usize) -> Result<DenseMask> {
    let size = desc.total_tokens();
    let entries = size.checked_mul(size).unwrap_or(usize::MAX);
    if entries > limit {
        return Err(Error::MaskTooLarge { entries, limit });
    }
    let mut data = Vec::with_capacity(entries);
    for q in 0..size {
        data.extend((0..size).map(|k| desc.allows(q, k)));
    }
    Ok(DenseMask { size, data })
}

/// Attendable keys of one query token, split by zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryBudget {
    /// Keys in dense blocks other than the sink frame.
    pub local_tokens: usize,
    /// Keys inside striped bands, both directions.
    pub mid_tokens: usize,
    /// Striped-band keys in frames before the query frame.
    pub mid_tokens_before: usize,
    pub sink_tokens: usize,
    /// Keys the query cannot see.
    pub pruned_tokens: usize,
}

impl QueryBudget {
    pub fn attendable(&self) -> usize {
        self.local_tokens + self.mid_tokens + self.sink_tokens
    }
}

/// Counts keys for query token `token` of frame `frame` from block arithmetic.
pub fn query_budget(desc: &BlockMaskDescriptor, frame: usize, token: usize) -> QueryBudget {
    let mut b = QueryBudget::default();
    for j in 0..desc.frames {
        let kind = desc.block(frame, j);
        let keys = desc.keys_in_block(kind, token);
        match kind {
            BlockKind::Dense if Some(j) == desc.sink_frame => b.sink_tokens += keys,
            BlockKind::Dense => b.local_tokens += keys,
            BlockKind::Striped => {
                b.mid_tokens += keys;
                if j < frame {
                    b.mid_tokens_before += keys;
                }
            }
            BlockKind::Pruned => {}
        }
    }
    b.pruned_tokens = desc.total_tokens() - b.attendable();
    b
}

/// A query whose full striped band lies before it, clear of the sink, and
/// whose token index sees a full-width stripe. `None` if the sequence is too
/// short or the frame too narrow.
pub fn interior_query(desc: &BlockMaskDescriptor, cfg: &TsaConfig) -> Option<(usize, usize)> {
    let (d1, d2) = (cfg.d1 as usize, cfg.d2 as usize);
    let ds = desc.stripe_width;
    let n = desc.tokens_per_frame;
    let token = n / 2;
    if ds == 0 || token + 1 < ds || token + ds > n {
        return None;
    }
    (d2..desc.frames)
        .find(|&i| desc.sink_frame.map_or(true, |s| !(i - (d2 - 1)..=i - d1).contains(&s)))
        .map(|i| (i, token))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskBudget {
    /// Query the per-zone counts below were measured at.
    pub reference_frame: usize,
    pub reference_token: usize,
    pub local_tokens: usize,
    pub mid_tokens: usize,
    pub mid_tokens_before: usize,
    pub pruned_tokens: usize,
    pub sink_tokens: usize,
    /// Largest attendable count over every query token.
    pub per_query_max: usize,
    /// `n * d1`.
    pub nominal_local: usize,
    /// `n * d1 / alpha`.
    pub nominal_mid: f64,
    /// `nominal_local / mid_tokens_before`, when the latter is nonzero.
    pub local_to_mid_ratio: Option<f64>,
}

/// Per-zone key counts at a reference query (the interior query when one
/// exists, otherwise the middle token of the middle frame) plus the maximum
/// over all queries.
pub fn mask_budget(desc: &BlockMaskDescriptor, cfg: &TsaConfig) -> MaskBudget {
    let (rf, rt) = interior_query(desc, cfg).unwrap_or((desc.frames / 2, desc.tokens_per_frame / 2));
    let r = query_budget(desc, rf, rt);
    let per_query_max = (0..desc.frames)
        .flat_map(|f| (0..desc.tokens_per_frame).map(move |t| (f, t)))
        .map(|(f, t)| query_budget(desc, f, t).attendable())
        .max()
        .unwrap_or(0);
    let nominal_local = cfg.tokens_per_frame * cfg.d1 as usize;
    MaskBudget {
        reference_frame: rf,
        reference_token: rt,
        local_tokens: r.local_tokens,
        mid_tokens: r.mid_tokens,
        mid_tokens_before: r.mid_tokens_before,
        pruned_tokens: r.pruned_tokens,
        sink_tokens: r.sink_tokens,
        per_query_max,
        nominal_local,
        nominal_mid: nominal_local as f64 / cfg.alpha,
        local_to_mid_ratio: (r.mid_tokens_before > 0).then(|| nominal_local as f64 / r.mid_tokens_before as f64),
    }
}

fn check_shape(q: &TokenTensor, cfg: &TsaConfig) -> Result<()> {
    if q.rows() != cfg.total_tokens() {
        return Err(Error::Dimension(format!(
            "{} tokens do not match {} frames x {} tokens/frame",
            q.rows(),
            cfg.frames,
            cfg.tokens_per_frame
        )));
    }
    Ok(())
}

/// Masked attention with the tiered mask built from `cfg`. Positions are used
/// as given; callers wanting re-encoded positions pass them in.
#[allow(clippy::too_many_arguments)]
pub fn tsa_attention(
    q: &TokenTensor,
    k: &TokenTensor,
    v: &TokenTensor,
    pos_q: &PositionIndex,
    pos_k: &PositionIndex,
    cfg: &TsaConfig,
    freqs: &[f64],
    scale: Option<f64>,
) -> Result<AttentionRecord> {
    check_shape(q, cfg)?;
    let mask = build_block_mask(cfg);
    attention_forward(q, k, v, pos_q, pos_k, cfg.tokens_per_frame, Some(&mask), freqs, scale)
}

/// [`tsa_attention`] under an arbitrary position scheme, e.g. VRPR zones.
#[allow(clippy::too_many_arguments)]
pub fn tsa_attention_with(
    q: &TokenTensor,
    k: &TokenTensor,
    v: &TokenTensor,
    scheme: &dyn PositionScheme,
    cfg: &TsaConfig,
    freqs: &[f64],
    scale: Option<f64>,
) -> Result<AttentionRecord> {
    check_shape(q, cfg)?;
    let mask = build_block_mask(cfg);
    attention_forward_with(q, k, v, scheme, cfg.tokens_per_frame, Some(&mask), freqs, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{rope_frequencies, DEFAULT_ROPE_BASE};
    use crate::matrix::Matrix;
    use crate::rng::Xoshiro256StarStar;
    use proptest::prelude::*;

    fn toy() -> TsaConfig {
        TsaConfig::new(2, 4, 2.0, 4, 8, 24).unwrap()
    }

    /// Tier predicate evaluated per token pair, independent of the descriptor.
    fn tier_oracle(cfg: &TsaConfig, qt: usize, kt: usize) -> bool {
        let n = cfg.tokens_per_frame;
        let (i, k, j, l) = (qt / n, qt % n, kt / n, kt % n);
        let d = i.abs_diff(j);
        let ds = (n * cfg.d1 as usize) as f64 / (cfg.alpha * f64::from(cfg.d2 - cfg.d1));
        d < cfg.d1 as usize || Some(j) == cfg.sink_frame || (d < cfg.d2 as usize && (k.abs_diff(l) as f64) < ds.floor())
    }

    #[test]
    fn stripe_width_examples() {
        assert_eq!(stripe_width(&toy()), 2);
        assert_eq!(stripe_width(&TsaConfig::new(8, 16, 1.0, 16, 20, 24).unwrap()), 16);
        assert_eq!(stripe_width(&TsaConfig::new(1, 9, 4.0, 4, 20, 24).unwrap()), 0);
    }

    #[test]
    fn validity_examples() {
        let wan = validate_tsa(&TsaConfig::new(8, 16, 4.0, 16, 161, 24).unwrap());
        assert_eq!((wan.value, wan.lower, wan.upper, wan.valid), (10.0, 6.0, 12.0, true));
        assert!(wan.token_budget_ok);
        let hy = validate_tsa(&TsaConfig::new(12, 24, 4.0, 16, 253, 36).unwrap());
        assert_eq!((hy.value, hy.lower, hy.upper, hy.valid), (15.0, 9.0, 18.0, true));
        let bad = validate_tsa(&TsaConfig::new(12, 24, 1.0, 16, 253, 24).unwrap());
        assert_eq!(bad.value, 24.0);
        assert!(!bad.valid && !bad.token_budget_ok);
    }

    #[test]
    fn config_invariants() {
        assert!(TsaConfig::new(0, 4, 2.0, 4, 8, 24).is_err());
        assert!(TsaConfig::new(4, 4, 2.0, 4, 8, 24).is_err());
        assert!(TsaConfig::new(2, 4, 0.5, 4, 8, 24).is_err());
        assert!(TsaConfig::new(2, 4, 2.0, 0, 8, 24).is_err());
        assert!(toy().with_sink(Some(8)).is_err());
    }

    #[test]
    fn toy_mask_row_five() {
        let d = build_block_mask(&toy());
        use BlockKind::*;
        let row: Vec<BlockKind> = (0..8).map(|j| d.block(5, j)).collect();
        assert_eq!(row, vec![Dense, Pruned, Striped, Striped, Dense, Dense, Dense, Striped]);
        assert_eq!(d.stripe_width(), 2);
    }

    #[test]
    fn wide_windows_make_all_dense() {
        let d = build_block_mask(&TsaConfig::new(8, 9, 2.0, 3, 8, 24).unwrap());
        assert_eq!(d.count(BlockKind::Dense), 64);
        let m = materialize_mask(&d).unwrap();
        assert!((0..24).all(|q| m.row(q).iter().all(|&b| b)));
        let single = build_block_mask(&TsaConfig::new(2, 4, 2.0, 4, 1, 24).unwrap());
        assert_eq!(single.pattern_code(), "D");
    }

    #[test]
    fn zero_stripe_degrades_to_pruned() {
        let d = build_block_mask(&TsaConfig::new(1, 9, 4.0, 4, 12, 24).unwrap());
        assert_eq!(d.count(BlockKind::Striped), 0);
    }

    #[test]
    fn striped_band_layout() {
        let d = build_block_mask(&toy());
        let m = materialize_mask(&d).unwrap();
        // query frame 5 vs key frame 3 is striped with D_s = 2.
        for k in 0..4 {
            for l in 0..4 {
                assert_eq!(m.get(5 * 4 + k, 3 * 4 + l), k.abs_diff(l) <= 1, "k={k} l={l}");
                assert!(!m.get(5 * 4 + k, 4 + l), "frame 1 is pruned");
            }
        }
    }

    #[test]
    fn materialize_matches_oracle_and_guard() {
        for sink in [Some(0), Some(3), Some(7), None] {
            let cfg = toy().with_sink(sink).unwrap();
            let m = materialize_mask(&build_block_mask(&cfg)).unwrap();
            for q in 0..32 {
                for k in 0..32 {
                    assert_eq!(m.get(q, k), tier_oracle(&cfg, q, k));
                }
            }
        }
        let err = materialize_mask_with_limit(&build_block_mask(&toy()), 100).unwrap_err();
        assert!(matches!(err, Error::MaskTooLarge { entries: 1024, limit: 100 }));
    }

    #[test]
    fn pgm_layout() {
        let d = BlockMaskDescriptor::sliding_window(2, 1, 1);
        let pgm = materialize_mask(&d).unwrap().to_pgm();
        assert_eq!(pgm, b"P5\n2 2\n255\n\xff\x00\x00\xff".to_vec());
    }

    #[test]
    fn descriptor_json_round_trip() {
        let d = build_block_mask(&toy());
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains(r#""pattern":"DDSSPPPP"#));
        let back: BlockMaskDescriptor = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<BlockMaskDescriptor>(
            r#"{"frames":1,"tokens_per_frame":1,"stripe_width":0,"sink_frame":0,"pattern":"X"}"#
        )
        .is_err());
    }

    #[test]
    fn budget_matches_materialized_counts() {
        for cfg in [toy(), TsaConfig::new(2, 5, 1.0, 4, 8, 24).unwrap(), toy().with_sink(Some(4)).unwrap()] {
            let d = build_block_mask(&cfg);
            let m = materialize_mask(&d).unwrap();
            for f in 0..cfg.frames {
                for t in 0..cfg.tokens_per_frame {
                    let b = query_budget(&d, f, t);
                    let qt = f * 4 + t;
                    let mut brute = QueryBudget::default();
                    for kt in 0..32 {
                        if !m.get(qt, kt) {
                            brute.pruned_tokens += 1;
                            continue;
                        }
                        let j = kt / 4;
                        if Some(j) == cfg.sink_frame {
                            brute.sink_tokens += 1;
                        } else if f.abs_diff(j) < cfg.d1 as usize {
                            brute.local_tokens += 1;
                        } else {
                            brute.mid_tokens += 1;
                            if j < f {
                                brute.mid_tokens_before += 1;
                            }
                        }
                    }
                    assert_eq!(b, brute, "cfg={cfg:?} f={f} t={t}");
                }
            }
        }
    }

    #[test]
    fn budget_examples() {
        let d = build_block_mask(&toy());
        let b = query_budget(&d, 5, 1);
        assert_eq!(b.local_tokens, 4 * (2 * 2 - 1));
        assert_eq!(b.sink_tokens, 4);
        let dense = BlockMaskDescriptor::all_dense(8, 4);
        assert_eq!(mask_budget(&dense, &toy()).per_query_max, 32);
    }

    #[test]
    fn tsa_attention_all_dense_equals_unmasked() {
        let cfg = TsaConfig::new(8, 9, 2.0, 3, 8, 24).unwrap();
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let x = Matrix::from_vec(24, 4, rng.normal_vec(96, 1.0)).unwrap();
        let p = PositionIndex::sequential(8);
        let freqs = rope_frequencies(4, DEFAULT_ROPE_BASE).unwrap();
        let a = tsa_attention(&x, &x, &x, &p, &p, &cfg, &freqs, None).unwrap();
        let b = attention_forward(&x, &x, &x, &p, &p, 3, None, &freqs, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sink_only_rows_concentrate_on_sink() {
        // d1 = 1, stripe width 0: off-diagonal frames see only the sink.
        let cfg = TsaConfig::new(1, 9, 4.0, 4, 12, 24).unwrap();
        let mut rng = Xoshiro256StarStar::seed_from_u64(6);
        let x = Matrix::from_vec(48, 4, rng.normal_vec(192, 1.0)).unwrap();
        let p = PositionIndex::sequential(12);
        let freqs = rope_frequencies(4, DEFAULT_ROPE_BASE).unwrap();
        let rec = tsa_attention(&x, &x, &x, &p, &p, &cfg, &freqs, None).unwrap();
        // Query frame 0 is the sink itself; for frame 5 only the sink and itself remain.
        for q in 20..24 {
            let row = rec.weights.row(q);
            let sink: f64 = row[0..4].iter().sum();
            let own: f64 = row[20..24].iter().sum();
            assert!((sink + own - 1.0).abs() < 1e-12);
            assert!(row.iter().enumerate().all(|(k, &w)| k < 4 || (20..24).contains(&k) || w == 0.0));
        }
    }

    #[test]
    fn tsa_attention_rejects_shape() {
        let x = Matrix::zeros(10, 4);
        let p = PositionIndex::sequential(8);
        assert!(tsa_attention(&x, &x, &x, &p, &p, &toy(), &[1.0, 0.01], None).is_err());
    }

    proptest! {
        #[test]
        fn mask_structure_invariants(
            d1 in 1u32..6, dd in 1u32..6, alpha in 1.0f64..5.0, n in 1usize..9, f in 1usize..20, sink in 0usize..20
        ) {
            let sink = Some(sink % f);
            let cfg = TsaConfig::new(d1, d1 + dd, alpha, n, f, 24).unwrap().with_sink(sink).unwrap();
            let d = build_block_mask(&cfg);
            prop_assert_eq!(&d, &build_block_mask(&cfg));
            for i in 0..f {
                prop_assert_eq!(d.block(i, sink.unwrap()), BlockKind::Dense);
                for j in 0..f {
                    if Some(j) != sink && Some(i) != sink {
                        prop_assert_eq!(d.block(i, j), d.block(j, i));
                    }
                }
                for t in 0..n {
                    let b = query_budget(&d, i, t);
                    prop_assert!(b.sink_tokens == n);
                    prop_assert_eq!(b.attendable() + b.pruned_tokens, f * n);
                }
            }
            let ds = d.stripe_width();
            let bound = 2 * n * d1 as usize + (2 * ds).saturating_sub(1) * 2 * dd as usize + n;
            prop_assert!(mask_budget(&d, &cfg).per_query_max <= bound);
        }
    }
}
