//! Layer-wise sensitivity probing and the layer-adaptive strategy.

pub mod import;
pub mod plan;
pub mod probe;
pub mod profile;
pub mod stack;

pub use import::{ald_from_logits, ctx_scores_from_logits, read_logit_stack, write_logit_stack, LOGIT_MAGIC};
pub use plan::{build_layer_plans, LayerPlan, PlanBundle, PlanEntry, PlanValidation};
pub use probe::{
    default_probe_vrpr, default_window, probe_context_ood, probe_position_ood, probe_position_ood_scored,
    run_full_probe, NoScorer, PositionProbe, ProbeSettings, QualityScorer, DEFAULT_EXTENSION_FACTOR,
    DEFAULT_INPUT_SEEDS, DEFAULT_SHIFTS,
};
pub use profile::{
    assign_strategies, classify_sensitive, marked_count, rank_layers, shipped_orderings, shipped_profile, Direction,
    SensitivityProfile, ShippedOrdering, Strategy, SENSITIVE_FRACTION, TSA_FRACTION,
};
pub use stack::{
    build_stack, run_stack, run_stack_with, BasePositions, LayerOverride, LayerPositions, LayerSetup, LayerWeights,
    StackTrace, SyntheticStack,
};
