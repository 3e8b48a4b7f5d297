//! Named configurations for 2x and 4x temporal extension of two base models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsa::{validate_tsa, TsaConfig};
use crate::vrpr::{validate_vrpr, VrprConfig};

/// Spatial tokens per frame used by every shipped preset. With the shipped
/// windows this makes each stripe width an exact quotient (n/4 or n/8).
pub const PRESET_TOKENS_PER_FRAME: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub vrpr: VrprConfig,
    pub tsa: TsaConfig,
    pub target_frames: usize,
}

impl Preset {
    /// True when both validators accept the preset at its target length.
    pub fn is_valid(&self) -> bool {
        validate_vrpr(&self.vrpr, self.target_frames).valid && validate_tsa(&self.tsa).valid
    }
}

struct Row {
    name: &'static str,
    vrpr: (u32, u32, u32, u32, u32),
    target: usize,
    tsa: (u32, u32, f64, u32),
}

const ROWS: [Row; 4] = [
    Row { name: "wan-2x", vrpr: (12, 20, 2, 8, 81), target: 161, tsa: (8, 16, 4.0, 24) },
    Row { name: "wan-4x", vrpr: (10, 14, 2, 8, 81), target: 321, tsa: (8, 24, 4.0, 24) },
    Row { name: "hunyuan-2x", vrpr: (12, 20, 2, 4, 127), target: 253, tsa: (12, 24, 4.0, 36) },
    Row { name: "hunyuan-4x", vrpr: (12, 20, 2, 8, 127), target: 509, tsa: (12, 36, 4.0, 36) },
];

fn build(row: &Row) -> Preset {
    let (w1, w2, g1, g2, l) = row.vrpr;
    let (d1, d2, alpha, ctx) = row.tsa;
    Preset {
        name: row.name.to_string(),
        vrpr: VrprConfig::new(w1, w2, g1, g2, l).expect("shipped vrpr row is well formed"),
        tsa: TsaConfig::new(d1, d2, alpha, PRESET_TOKENS_PER_FRAME, row.target, ctx)
            .expect("shipped tsa row is well formed"),
        target_frames: row.target,
    }
}

pub fn presets() -> Vec<Preset> {
    ROWS.iter().map(build).collect()
}

pub fn preset_names() -> Vec<&'static str> {
    ROWS.iter().map(|r| r.name).collect()
}

pub fn preset(name: &str) -> Result<Preset> {
    ROWS.iter()
        .find(|r| r.name.eq_ignore_ascii_case(name))
        .map(build)
        .ok_or_else(|| Error::InvalidInput(format!("unknown preset {name:?}; known: {}", preset_names().join(", "))))
}
