//! Seeded multi-layer attention stack used as the probing substrate.
//!
//! Each layer is pre-normalized single-head self-attention with a residual
//! connection:
//!
//! ```text
//! h  = rms_norm(x)
//! x' = x + attention(h Wq, h Wk, h Wv) Wo
//! ```
//!
//! Weights are drawn from [`Xoshiro256StarStar`] seeded with the stack seed,
//! layer by layer in the order `Wq, Wk, Wv, Wo`, each `model_dim x model_dim`
//! row-major, standard normal scaled by `1/sqrt(model_dim)`.

use std::sync::Arc;

use crate::attention::{
    attention_forward_with, rope_frequencies, AttentionMask, AttentionRecord, PlainPositions, PositionIndex,
    PositionScheme, DEFAULT_ROPE_BASE,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Xoshiro256StarStar;
use crate::tsa::BlockMaskDescriptor;
use crate::vrpr::VrprZones;

use super::plan::LayerPlan;

const RMS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStack {
    pub num_layers: usize,
    pub model_dim: usize,
    pub tokens_per_frame: usize,
    pub rope_base: f64,
    pub seed: u64,
    pub layers: Vec<LayerWeights>,
    freqs: Vec<f64>,
}

pub fn build_stack(num_layers: usize, model_dim: usize, tokens_per_frame: usize, seed: u64) -> Result<SyntheticStack> {
    if model_dim == 0 || model_dim % 2 != 0 {
        return Err(Error::Dimension(format!("model_dim must be even and positive, got {model_dim}")));
    }
    if num_layers == 0 || tokens_per_frame == 0 {
        return Err(Error::InvalidInput("num_layers and tokens_per_frame must be positive".into()));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let scale = 1.0 / (model_dim as f64).sqrt();
    let mut draw = || Matrix::from_vec(model_dim, model_dim, rng.normal_vec(model_dim * model_dim, scale));
    let layers = (0..num_layers)
        .map(|_| Ok(LayerWeights { wq: draw()?, wk: draw()?, wv: draw()?, wo: draw()? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticStack {
        num_layers,
        model_dim,
        tokens_per_frame,
        rope_base: DEFAULT_ROPE_BASE,
        seed,
        layers,
        freqs: rope_frequencies(model_dim, DEFAULT_ROPE_BASE)?,
    })
}

impl SyntheticStack {
    /// Standard-normal input tokens for `frames` frames, drawn from `input_seed`.
    pub fn input(&self, frames: usize, input_seed: u64) -> Matrix {
        let rows = frames * self.tokens_per_frame;
        let mut rng = Xoshiro256StarStar::seed_from_u64(input_seed);
        Matrix::from_vec(rows, self.model_dim, rng.normal_vec(rows * self.model_dim, 1.0))
            .expect("length matches by construction")
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.num_layers {
            return Err(Error::LayerOutOfRange { layer, num_layers: self.num_layers });
        }
        Ok(())
    }

    /// Attention record of `layer` given that layer's input activations.
    pub fn layer_attention(&self, layer: usize, hidden: &Matrix, setup: &LayerSetup) -> Result<AttentionRecord> {
        self.check_layer(layer)?;
        let w = &self.layers[layer];
        let h = hidden.rms_normalized(RMS_EPS);
        let (q, k, v) = (h.matmul(&w.wq)?, h.matmul(&w.wk)?, h.matmul(&w.wv)?);
        let mask = setup.mask.as_deref().map(|m| m as &dyn AttentionMask);
        match &setup.positions {
            LayerPositions::Plain { query, key } => {
                let scheme = PlainPositions { query, key };
                attention_forward_with(&q, &k, &v, &scheme, self.tokens_per_frame, mask, &self.freqs, None)
            }
            LayerPositions::Zoned(z) => {
                attention_forward_with(&q, &k, &v, z.as_ref() as &dyn PositionScheme, self.tokens_per_frame, mask, &self.freqs, None)
            }
        }
    }

    fn layer_forward(&self, layer: usize, hidden: &Matrix, setup: &LayerSetup) -> Result<(Matrix, AttentionRecord)> {
        let rec = self.layer_attention(layer, hidden, setup)?;
        let next = hidden.add(&rec.output.matmul(&self.layers[layer].wo)?)?;
        Ok((next, rec))
    }
}

/// Positions a layer attends with.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerPositions {
    Plain { query: PositionIndex, key: PositionIndex },
    Zoned(Arc<VrprZones>),
}

/// Positions and optional mask for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSetup {
    pub positions: LayerPositions,
    pub mask: Option<Arc<BlockMaskDescriptor>>,
}

/// Positions every layer uses unless overridden.
#[derive(Debug, Clone, PartialEq)]
pub enum BasePositions {
    /// Raw frame indices `0..frames`.
    Sequential,
    /// VRPR zone arrays for the full sequence.
    Vrpr(Arc<VrprZones>),
}

impl BasePositions {
    pub fn setup(&self, frames: usize) -> LayerSetup {
        let positions = match self {
            BasePositions::Sequential => {
                let p = PositionIndex::sequential(frames);
                LayerPositions::Plain { query: p.clone(), key: p }
            }
            BasePositions::Vrpr(z) => LayerPositions::Zoned(Arc::clone(z)),
        };
        LayerSetup { positions, mask: None }
    }
}

/// A change applied to a single layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerOverride {
    /// Adds a constant to every key position; queries keep theirs.
    ShiftKeys(i64),
    /// Restricts attention with a block mask.
    Mask(Arc<BlockMaskDescriptor>),
    /// Replaces positions and mask with a layer plan.
    Plan(LayerPlan),
}

impl LayerOverride {
    pub fn apply(&self, setup: &mut LayerSetup) {
        match self {
            LayerOverride::ShiftKeys(delta) => {
                setup.positions = match &setup.positions {
                    LayerPositions::Plain { query, key } => {
                        LayerPositions::Plain { query: query.clone(), key: key.shifted(*delta) }
                    }
                    LayerPositions::Zoned(z) => LayerPositions::Zoned(Arc::new(z.shift_keys(*delta))),
                }
            }
            LayerOverride::Mask(m) => setup.mask = Some(Arc::clone(m)),
            LayerOverride::Plan(plan) => {
                setup.positions = LayerPositions::Zoned(Arc::clone(&plan.zones));
                setup.mask = plan.mask.clone();
            }
        }
    }
}

/// Activations entering each layer (plus the final output) and every layer's
/// attention record.
#[derive(Debug, Clone, PartialEq)]
pub struct StackTrace {
    pub hidden: Vec<Matrix>,
    pub records: Vec<AttentionRecord>,
}

/// Runs every layer in order on `input`. Overrides name the layer they touch;
/// several overrides on one layer apply in slice order.
pub fn run_stack_with(
    stack: &SyntheticStack,
    input: &Matrix,
    base: &BasePositions,
    overrides: &[(usize, LayerOverride)],
) -> Result<StackTrace> {
    for (layer, _) in overrides {
        stack.check_layer(*layer)?;
    }
    if input.cols() != stack.model_dim || input.rows() % stack.tokens_per_frame != 0 {
        return Err(Error::Dimension(format!(
            "input {:?} does not fit model_dim {} with {} tokens/frame",
            input.shape(),
            stack.model_dim,
            stack.tokens_per_frame
        )));
    }
    let frames = input.rows() / stack.tokens_per_frame;
    let mut hidden = Vec::with_capacity(stack.num_layers + 1);
    let mut records = Vec::with_capacity(stack.num_layers);
    hidden.push(input.clone());
    for layer in 0..stack.num_layers {
        let mut setup = base.setup(frames);
        overrides.iter().filter(|(l, _)| *l == layer).for_each(|(_, o)| o.apply(&mut setup));
        let (next, rec) = stack.layer_forward(layer, &hidden[layer], &setup)?;
        hidden.push(next);
        records.push(rec);
    }
    Ok(StackTrace { hidden, records })
}

/// Sequential positions on a seeded input; returns the per-layer records.
pub fn run_stack(
    stack: &SyntheticStack,
    frames: usize,
    input_seed: u64,
    overrides: &[(usize, LayerOverride)],
) -> Result<Vec<AttentionRecord>> {
    if frames == 0 {
        return Err(Error::InvalidInput("frames must be at least 1".into()));
    }
    let input = stack.input(frames, input_seed);
    Ok(run_stack_with(stack, &input, &BasePositions::Sequential, overrides)?.records)
}
