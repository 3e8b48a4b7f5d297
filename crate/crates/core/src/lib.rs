//! Training-free temporal extension for RoPE video attention.
//!
//! The crate covers four pieces that compose into per-layer plans:
//!
//! * [`attention`]: temporal rotary attention over frame-major token tensors,
//!   with optional block masks and per-zone position schemes.
//! * [`vrpr`]: a three-zone quantized remap of relative frame distances that
//!   keeps every position inside the pre-trained range.
//! * [`tsa`]: frame-block masks with a dense local window, a striped
//!   mid-range band, a pruned far range and a sink frame.
//! * [`probing`]: per-layer sensitivity probes on a seeded synthetic stack,
//!   classification, and strategy assignment.
//!
//! ```
//! use tierattn_core::{preset, validate_vrpr};
//!
//! let p = preset("wan-2x").unwrap();
//! let report = validate_vrpr(&p.vrpr, p.target_frames);
//! assert!(report.valid);
//! assert_eq!(report.max_mapped, 34);
//! ```

pub mod attention;
pub mod error;
pub mod export;
pub mod matrix;
pub mod metrics;
pub mod presets;
pub mod probing;
pub mod rng;
pub mod tsa;
pub mod vrpr;

pub use attention::{
    attention_forward, attention_forward_with, multi_head_attention, relative_position_matrix, rope_apply,
    rope_frequencies, AttentionMask, AttentionRecord, MultiHeadRecord, PlainPositions, PositionIndex, PositionScheme,
    DEFAULT_ROPE_BASE,
};
pub use error::{Error, Result};
pub use matrix::{IntMatrix, Matrix, TokenTensor};
pub use metrics::{
    attention_entropy, attention_logits_difference, context_sensitivity_score, spearman_rho, EntropySummary,
};
pub use presets::{preset, preset_names, presets, Preset, PRESET_TOKENS_PER_FRAME};
pub use tsa::{
    build_block_mask, mask_budget, materialize_mask, stripe_width, tsa_attention, validate_tsa, BlockKind,
    BlockMaskDescriptor, DenseMask, MaskBudget, TsaConfig, TsaValidity,
};
pub use vrpr::{
    implemented_relative_matrix, remap_matrix, remap_relative, validate_vrpr, RemapReport, VrprConfig, VrprZones,
    Zone,
};
