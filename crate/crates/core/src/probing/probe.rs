//! Layer-by-layer sensitivity probes.
//!
//! Both probes perturb exactly one layer at a time. Because layers before the
//! perturbed one are untouched and the metric is read at the perturbed layer
//! itself, each probe reuses the baseline activations entering that layer and
//! recomputes only that layer's attention.
//!
//! Diffusion sampling steps do not exist here; metrics are averaged across
//! seeded input batches instead.

use std::sync::Arc;

use rayon::prelude::*;

use crate::attention::AttentionRecord;
use crate::error::{Error, Result};
use crate::metrics::{attention_entropy, attention_logits_difference, context_sensitivity_score};
use crate::tsa::BlockMaskDescriptor;
use crate::vrpr::{validate_vrpr, VrprConfig, VrprZones};

use super::profile::SensitivityProfile;
use super::stack::{run_stack_with, BasePositions, LayerOverride, SyntheticStack};

pub const DEFAULT_SHIFTS: [i64; 4] = [-40, -20, 20, 40];
pub const DEFAULT_INPUT_SEEDS: [u64; 3] = [0, 1, 2];
pub const DEFAULT_EXTENSION_FACTOR: usize = 2;

/// Optional external quality score for a probed layer (for example a learned
/// video-quality model). Scores are reported alongside ALD but do not drive
/// classification.
pub trait QualityScorer: Sync {
    fn score(&self, layer: usize, shift: i64, probed: &AttentionRecord) -> Option<f64>;
}

/// Scores nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoScorer;

impl QualityScorer for NoScorer {
    fn score(&self, _layer: usize, _shift: i64, _probed: &AttentionRecord) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionProbe {
    /// Mean ALD per layer over shifts and input seeds.
    pub ald: Vec<f64>,
    /// Mean scorer output per layer, `None` when the scorer abstained.
    pub quality: Vec<Option<f64>>,
}

/// Key-shift probe: mean attention-logits difference per layer.
pub fn probe_position_ood(stack: &SyntheticStack, frames: usize, shifts: &[i64], input_seeds: &[u64]) -> Result<Vec<f64>> {
    Ok(probe_position_ood_scored(stack, frames, shifts, input_seeds, &NoScorer)?.ald)
}

pub fn probe_position_ood_scored(
    stack: &SyntheticStack,
    frames: usize,
    shifts: &[i64],
    input_seeds: &[u64],
    scorer: &dyn QualityScorer,
) -> Result<PositionProbe> {
    if shifts.is_empty() || input_seeds.is_empty() {
        return Err(Error::InvalidInput("need at least one shift and one input seed".into()));
    }
    if frames == 0 {
        return Err(Error::InvalidInput("frames must be at least 1".into()));
    }
    let base = BasePositions::Sequential;
    let per_seed = input_seeds
        .iter()
        .map(|&seed| {
            let trace = run_stack_with(stack, &stack.input(frames, seed), &base, &[])?;
            (0..stack.num_layers)
                .into_par_iter()
                .map(|layer| {
                    let mut ald = 0.0;
                    let mut q_sum = 0.0;
                    let mut q_n = 0usize;
                    for &shift in shifts {
                        let mut setup = base.setup(frames);
                        LayerOverride::ShiftKeys(shift).apply(&mut setup);
                        let rec = stack.layer_attention(layer, &trace.hidden[layer], &setup)?;
                        ald += attention_logits_difference(&rec.logits, &trace.records[layer].logits)?;
                        if let Some(q) = scorer.score(layer, shift, &rec) {
                            q_sum += q;
                            q_n += 1;
                        }
                    }
                    Ok((ald / shifts.len() as f64, q_sum, q_n))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let n_seeds = input_seeds.len() as f64;
    let mut ald = vec![0.0; stack.num_layers];
    let mut quality = vec![(0.0, 0usize); stack.num_layers];
    for seed_rows in &per_seed {
        for (l, &(a, qs, qn)) in seed_rows.iter().enumerate() {
            ald[l] += a;
            quality[l].0 += qs;
            quality[l].1 += qn;
        }
    }
    ald.iter_mut().for_each(|a| *a /= n_seeds);
    let quality = quality.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect();
    Ok(PositionProbe { ald, quality })
}

/// Default sliding-window width for a base length: the widest band
/// `|i - j| < w` whose span `2w - 1` fits in `base_frames`.
pub fn default_window(base_frames: usize) -> usize {
    (base_frames + 1) / 2
}

/// Context-length probe: relative change of each layer's mean attention
/// entropy when that layer alone is restricted to a sliding window.
pub fn probe_context_ood(
    stack: &SyntheticStack,
    base_frames: usize,
    extension_factor: usize,
    vrpr: &VrprConfig,
    window: usize,
    input_seeds: &[u64],
) -> Result<Vec<f64>> {
    if extension_factor < 2 {
        return Err(Error::InvalidInput(format!("extension factor must be >= 2, got {extension_factor}")));
    }
    if base_frames == 0 || input_seeds.is_empty() {
        return Err(Error::InvalidInput("need frames and at least one input seed".into()));
    }
    let frames = base_frames * extension_factor;
    if window == 0 || window >= frames {
        return Err(Error::InvalidInput(format!(
            "window {window} must be in [1, {frames}) for an extended length of {frames}"
        )));
    }
    let report = validate_vrpr(vrpr, frames);
    if !report.valid {
        log::warn!("vrpr config exceeds the pre-trained range at {frames} frames (max {})", report.max_mapped);
    }
    let base = BasePositions::Vrpr(Arc::new(VrprZones::new(frames, vrpr)));
    let window_mask = Arc::new(BlockMaskDescriptor::sliding_window(frames, stack.tokens_per_frame, window));

    let mut scores = vec![0.0; stack.num_layers];
    for &seed in input_seeds {
        let trace = run_stack_with(stack, &stack.input(frames, seed), &base, &[])?;
        let per_layer = (0..stack.num_layers)
            .into_par_iter()
            .map(|layer| {
                let h_orig = attention_entropy(&trace.records[layer].weights)?.mean;
                let mut setup = base.setup(frames);
                LayerOverride::Mask(Arc::clone(&window_mask)).apply(&mut setup);
                let rec = stack.layer_attention(layer, &trace.hidden[layer], &setup)?;
                let h_probe = attention_entropy(&rec.weights)?.mean;
                context_sensitivity_score(h_probe, h_orig)
            })
            .collect::<Result<Vec<_>>>()?;
        scores.iter_mut().zip(per_layer).for_each(|(s, v)| *s += v);
    }
    scores.iter_mut().for_each(|s| *s /= input_seeds.len() as f64);
    Ok(scores)
}

/// Everything a full probe needs besides the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSettings {
    /// Frames for the key-shift probe; also the base length of the context probe.
    pub frames: usize,
    pub shifts: Vec<i64>,
    pub input_seeds: Vec<u64>,
    pub extension_factor: usize,
    pub vrpr: VrprConfig,
    pub window: usize,
}

impl ProbeSettings {
    /// Defaults for a given base length: four shifts, three input seeds, 2x
    /// extension, a VRPR config scaled to `frames`, and the default window.
    pub fn for_frames(frames: usize) -> Result<Self> {
        Ok(Self {
            frames,
            shifts: DEFAULT_SHIFTS.to_vec(),
            input_seeds: DEFAULT_INPUT_SEEDS.to_vec(),
            extension_factor: DEFAULT_EXTENSION_FACTOR,
            vrpr: default_probe_vrpr(frames)?,
            window: default_window(frames),
        })
    }
}

/// VRPR config used by the context probe when none is given: fine window
/// `frames/4`, medium boundary `frames/2`, group sizes 2 and 4, pre-trained
/// length `frames`.
pub fn default_probe_vrpr(frames: usize) -> Result<VrprConfig> {
    let w1 = (frames / 4).max(1) as u32;
    let w2 = ((frames / 2) as u32).max(w1 + 1);
    VrprConfig::new(w1, w2, 2, 4, (frames as u32).max(w2 + 1))
}

/// Runs both probes and builds a profile with default thresholds.
pub fn run_full_probe(stack: &SyntheticStack, settings: &ProbeSettings, model_name: &str) -> Result<SensitivityProfile> {
    let ald = probe_position_ood(stack, settings.frames, &settings.shifts, &settings.input_seeds)?;
    let ctx = probe_context_ood(
        stack,
        settings.frames,
        settings.extension_factor,
        &settings.vrpr,
        settings.window,
        &settings.input_seeds,
    )?;
    SensitivityProfile::from_scores(model_name, ald, ctx)
}
