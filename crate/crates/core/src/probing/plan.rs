//! Per-layer bundles of re-encoded positions and optional tiered masks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsa::{build_block_mask, validate_tsa, BlockMaskDescriptor, TsaConfig, TsaValidity};
use crate::vrpr::{validate_vrpr, RemapReport, VrprConfig, VrprZones};

use super::profile::Strategy;

/// Positions (always) and mask (VRPR+TSA layers only) for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub layer: usize,
    pub strategy: Strategy,
    pub zones: Arc<VrprZones>,
    pub mask: Option<Arc<BlockMaskDescriptor>>,
}

/// Both validation reports for a target length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanValidation {
    pub vrpr: RemapReport,
    pub tsa: TsaValidity,
}

impl PlanValidation {
    pub fn check(target_frames: usize, vrpr: &VrprConfig, tsa: &TsaConfig) -> Self {
        Self { vrpr: validate_vrpr(vrpr, target_frames), tsa: validate_tsa(tsa) }
    }

    pub fn ok(&self) -> bool {
        self.vrpr.valid && self.tsa.valid
    }
}

impl std::fmt::Display for PlanValidation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "vrpr max_mapped={} (limit {}) valid={}; tsa d1(1+1/alpha)={} in [{}, {}] valid={}",
            self.vrpr.max_mapped,
            i64::from(self.vrpr.pretrained_len) - 1,
            self.vrpr.valid,
            self.tsa.value,
            self.tsa.lower,
            self.tsa.upper,
            self.tsa.valid
        )
    }
}

/// One plan per strategy entry. Targets within the pre-trained length use raw
/// frame indices; longer targets use the VRPR zone arrays. Rejects configs
/// that fail either validator.
pub fn build_layer_plans(
    strategies: &[Strategy],
    target_frames: usize,
    vrpr: &VrprConfig,
    tsa: &TsaConfig,
) -> Result<Vec<LayerPlan>> {
    if tsa.frames != target_frames {
        return Err(Error::InvalidConfig(format!(
            "tsa config covers {} frames, target is {target_frames}",
            tsa.frames
        )));
    }
    let validation = PlanValidation::check(target_frames, vrpr, tsa);
    if !validation.ok() {
        return Err(Error::PlanRejected(Box::new(validation)));
    }
    let zones = Arc::new(if target_frames <= vrpr.pretrained_len as usize {
        VrprZones::identity(target_frames)
    } else {
        VrprZones::new(target_frames, vrpr)
    });
    let mask = strategies
        .contains(&Strategy::VrprPlusTsa)
        .then(|| Arc::new(build_block_mask(tsa)));
    Ok(strategies
        .iter()
        .enumerate()
        .map(|(layer, &strategy)| LayerPlan {
            layer,
            strategy,
            zones: Arc::clone(&zones),
            mask: match strategy {
                Strategy::VrprOnly => None,
                Strategy::VrprPlusTsa => mask.clone(),
            },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer: usize,
    pub strategy: Strategy,
    pub masked: bool,
}

/// Serialized form of a plan set: the shared zone arrays and mask are stored
/// once, each layer records its strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanBundle {
    pub model_name: String,
    pub target_frames: usize,
    pub vrpr: VrprConfig,
    pub tsa: TsaConfig,
    pub validation: PlanValidation,
    pub zones: VrprZones,
    pub mask: Option<BlockMaskDescriptor>,
    pub plans: Vec<PlanEntry>,
}

impl PlanBundle {
    pub fn new(model_name: impl Into<String>, plans: &[LayerPlan], vrpr: &VrprConfig, tsa: &TsaConfig) -> Result<Self> {
        let first = plans.first().ok_or_else(|| Error::InvalidInput("no layer plans".into()))?;
        let target_frames = first.zones.target_frames;
        Ok(Self {
            model_name: model_name.into(),
            target_frames,
            vrpr: *vrpr,
            tsa: *tsa,
            validation: PlanValidation::check(target_frames, vrpr, tsa),
            zones: (*first.zones).clone(),
            mask: plans.iter().find_map(|p| p.mask.as_deref().cloned()),
            plans: plans
                .iter()
                .map(|p| PlanEntry { layer: p.layer, strategy: p.strategy, masked: p.mask.is_some() })
                .collect(),
        })
    }

    /// Rebuilds the per-layer plans.
    pub fn layer_plans(&self) -> Result<Vec<LayerPlan>> {
        let zones = Arc::new(self.zones.clone());
        let mask = self.mask.clone().map(Arc::new);
        self.plans
            .iter()
            .map(|e| {
                let m = if e.masked {
                    Some(mask.clone().ok_or_else(|| Error::Format("masked plan without a mask".into()))?)
                } else {
                    None
                };
                Ok(LayerPlan { layer: e.layer, strategy: e.strategy, zones: Arc::clone(&zones), mask: m })
            })
            .collect()
    }
}
