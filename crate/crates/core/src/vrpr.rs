//! Video-based relative position re-encoding.
//!
//! Relative frame distances are remapped in three zones: distances up to
//! `w1` are kept, distances in `(w1, w2]` are quantized with group size
//! `g1`, and anything beyond `w2` is quantized with group size `g2`. The
//! offsets make the zones join without gaps, so the remapped range fits the
//! pre-trained window.
//!
//! Attention kernels cannot take an arbitrary relative-position table, so
//! the remap is realized as per-zone query/key index arrays
//! ([`zone_index_arrays`]). Each zone's arrays reproduce the closed-form
//! remap up to one unit of floor slack ([`approximation_error_bounds`]).

use serde::{Deserialize, Serialize};

use crate::attention::{PositionIndex, PositionScheme};
use crate::error::{Error, Result};
use crate::matrix::IntMatrix;

#[derive(Deserialize)]
struct RawVrprConfig {
    w1: u32,
    w2: u32,
    g1: u32,
    g2: u32,
    pretrained_len: u32,
}

/// Zone boundaries, group sizes and the pre-trained frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawVrprConfig")]
pub struct VrprConfig {
    pub w1: u32,
    pub w2: u32,
    pub g1: u32,
    pub g2: u32,
    pub pretrained_len: u32,
}

impl TryFrom<RawVrprConfig> for VrprConfig {
    type Error = Error;

    fn try_from(r: RawVrprConfig) -> Result<Self> {
        VrprConfig::new(r.w1, r.w2, r.g1, r.g2, r.pretrained_len)
    }
}

impl VrprConfig {
    pub fn new(w1: u32, w2: u32, g1: u32, g2: u32, pretrained_len: u32) -> Result<Self> {
        let cfg = Self { w1, w2, g1, g2, pretrained_len };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.w1 == 0 || self.w1 >= self.w2 {
            return fail(format!("need 0 < w1 < w2, got w1={} w2={}", self.w1, self.w2));
        }
        if self.g1 == 0 || self.g2 < self.g1 {
            return fail(format!("need 1 <= g1 <= g2, got g1={} g2={}", self.g1, self.g2));
        }
        if self.pretrained_len <= self.w2 {
            return fail(format!(
                "pretrained_len {} must exceed w2 {}",
                self.pretrained_len, self.w2
            ));
        }
        Ok(())
    }

    /// Offset added in the medium zone: `w1 - floor(w1/g1)`.
    pub fn medium_offset(&self) -> i64 {
        let (w1, g1) = (i64::from(self.w1), i64::from(self.g1));
        w1 - w1 / g1
    }

    /// Offset added in the coarse zone: `w2 - floor(w2/g2) - floor((w2-w1)/g1)`.
    pub fn coarse_offset(&self) -> i64 {
        let (w1, w2, g1, g2) = (
            i64::from(self.w1),
            i64::from(self.w2),
            i64::from(self.g1),
            i64::from(self.g2),
        );
        w2 - w2 / g2 - (w2 - w1) / g1
    }

    /// Largest remapped distance the theoretical mapping yields for
    /// `target_frames` frames.
    pub fn theoretical_max(&self, target_frames: usize) -> i64 {
        remap_relative(target_frames.saturating_sub(1) as i64, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    Fine,
    MediumPos,
    MediumNeg,
    CoarsePos,
    CoarseNeg,
}

impl Zone {
    pub const ALL: [Zone; 5] = [Zone::Fine, Zone::MediumPos, Zone::MediumNeg, Zone::CoarsePos, Zone::CoarseNeg];

    /// Zone of a signed query-minus-key frame distance.
    pub fn of_distance(d: i64, cfg: &VrprConfig) -> Zone {
        let a = d.unsigned_abs();
        if a <= u64::from(cfg.w1) {
            Zone::Fine
        } else if a <= u64::from(cfg.w2) {
            if d > 0 {
                Zone::MediumPos
            } else {
                Zone::MediumNeg
            }
        } else if d > 0 {
            Zone::CoarsePos
        } else {
            Zone::CoarseNeg
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Theoretical remap of a signed frame distance.
///
/// Quantization is applied to `|d|` and the sign restored afterwards, which
/// makes the map exactly antisymmetric.
pub fn remap_relative(d: i64, cfg: &VrprConfig) -> i64 {
    let a = d.abs();
    let mapped = if a <= i64::from(cfg.w1) {
        a
    } else if a <= i64::from(cfg.w2) {
        a / i64::from(cfg.g1) + cfg.medium_offset()
    } else {
        a / i64::from(cfg.g2) + cfg.coarse_offset()
    };
    d.signum() * mapped
}

/// `entry(i, j) = remap_relative(i - j)` over `target_frames` frames.
pub fn remap_matrix(target_frames: usize, cfg: &VrprConfig) -> IntMatrix {
    IntMatrix::from_fn(target_frames, target_frames, |i, j| remap_relative(i as i64 - j as i64, cfg))
}

/// Query and key position indices for one zone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneIndexArrays {
    pub zone: Zone,
    pub p_q: Vec<i64>,
    pub p_k: Vec<i64>,
}

/// Index arrays for all five zones, in [`Zone::ALL`] order.
pub fn zone_index_arrays(target_frames: usize, cfg: &VrprConfig) -> Vec<ZoneIndexArrays> {
    let idx: Vec<i64> = (0..target_frames as i64).collect();
    let (g1, g2) = (i64::from(cfg.g1), i64::from(cfg.g2));
    let grouped = |g: i64, off: i64| -> Vec<i64> { idx.iter().map(|i| i / g + off).collect() };
    let (mo, co) = (cfg.medium_offset(), cfg.coarse_offset());
    Zone::ALL
        .iter()
        .map(|&zone| {
            let (p_q, p_k) = match zone {
                Zone::Fine => (idx.clone(), idx.clone()),
                Zone::MediumPos => (grouped(g1, mo), grouped(g1, 0)),
                Zone::MediumNeg => (grouped(g1, 0), grouped(g1, mo)),
                Zone::CoarsePos => (grouped(g2, co), grouped(g2, 0)),
                Zone::CoarseNeg => (grouped(g2, 0), grouped(g2, co)),
            };
            ZoneIndexArrays { zone, p_q, p_k }
        })
        .collect()
}

/// The five zone arrays bundled with the zone selector, usable directly as an
/// attention [`PositionScheme`] for self-attention over `target_frames`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VrprZones {
    pub target_frames: usize,
    /// `None` for the identity layout (every zone holds raw frame indices).
    pub config: Option<VrprConfig>,
    pub zones: Vec<ZoneIndexArrays>,
}

impl VrprZones {
    pub fn new(target_frames: usize, cfg: &VrprConfig) -> Self {
        Self { target_frames, config: Some(*cfg), zones: zone_index_arrays(target_frames, cfg) }
    }

    /// Raw frame indices in every zone; equivalent to no re-encoding.
    pub fn identity(target_frames: usize) -> Self {
        let idx: Vec<i64> = (0..target_frames as i64).collect();
        let zones = Zone::ALL
            .iter()
            .map(|&zone| ZoneIndexArrays { zone, p_q: idx.clone(), p_k: idx.clone() })
            .collect();
        Self { target_frames, config: None, zones }
    }

    pub fn zone(&self, zone: Zone) -> &ZoneIndexArrays {
        &self.zones[zone.index()]
    }

    /// Relative position the arrays implement for frame pair `(i, j)`.
    pub fn implemented(&self, i: usize, j: usize) -> i64 {
        let z = &self.zones[self.zone_for(i, j)];
        z.p_q[i] - z.p_k[j]
    }

    /// Adds `delta` to every key index in every zone.
    pub fn shift_keys(&self, delta: i64) -> Self {
        let mut out = self.clone();
        for z in &mut out.zones {
            z.p_k.iter_mut().for_each(|p| *p += delta);
        }
        out
    }

    /// Fine-zone query positions, one per frame.
    pub fn fine_positions(&self) -> PositionIndex {
        PositionIndex::new(self.zone(Zone::Fine).p_q.clone())
    }

    pub fn max_abs_position(&self) -> i64 {
        (0..self.target_frames)
            .flat_map(|i| (0..self.target_frames).map(move |j| (i, j)))
            .map(|(i, j)| self.implemented(i, j).abs())
            .max()
            .unwrap_or(0)
    }
}

impl PositionScheme for VrprZones {
    fn zone_count(&self) -> usize {
        self.zones.len()
    }

    fn query_frames(&self) -> usize {
        self.target_frames
    }

    fn key_frames(&self) -> usize {
        self.target_frames
    }

    fn query_position(&self, zone: usize, frame: usize) -> i64 {
        self.zones[zone].p_q[frame]
    }

    fn key_position(&self, zone: usize, frame: usize) -> i64 {
        self.zones[zone].p_k[frame]
    }

    fn zone_for(&self, query_frame: usize, key_frame: usize) -> usize {
        match &self.config {
            Some(cfg) => Zone::of_distance(query_frame as i64 - key_frame as i64, cfg).index(),
            None => Zone::Fine.index(),
        }
    }
}

/// Relative positions realized by the zone index arrays; the zone is chosen
/// by the raw distance `i - j`.
pub fn implemented_relative_matrix(target_frames: usize, cfg: &VrprConfig) -> IntMatrix {
    let zones = VrprZones::new(target_frames, cfg);
    IntMatrix::from_fn(target_frames, target_frames, |i, j| zones.implemented(i, j))
}

/// Observed range of `implemented - theoretical` within one zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneError {
    pub zone: Zone,
    pub pairs: usize,
    pub min_diff: i64,
    pub max_diff: i64,
}

/// Exhaustive per-zone scan of `implemented - theoretical`. Zones with no
/// frame pairs are omitted.
pub fn approximation_error_by_zone(target_frames: usize, cfg: &VrprConfig) -> Vec<ZoneError> {
    let zones = VrprZones::new(target_frames, cfg);
    let mut acc: Vec<Option<ZoneError>> = vec![None; Zone::ALL.len()];
    for i in 0..target_frames {
        for j in 0..target_frames {
            let d = i as i64 - j as i64;
            let zone = Zone::of_distance(d, cfg);
            let diff = zones.implemented(i, j) - remap_relative(d, cfg);
            let slot = &mut acc[zone.index()];
            match slot {
                Some(e) => {
                    e.pairs += 1;
                    e.min_diff = e.min_diff.min(diff);
                    e.max_diff = e.max_diff.max(diff);
                }
                None => *slot = Some(ZoneError { zone, pairs: 1, min_diff: diff, max_diff: diff }),
            }
        }
    }
    acc.into_iter().flatten().collect()
}

/// `(min, max)` of `implemented - theoretical` over all frame pairs.
pub fn approximation_error_bounds(target_frames: usize, cfg: &VrprConfig) -> (i64, i64) {
    approximation_error_by_zone(target_frames, cfg)
        .iter()
        .fold(None, |acc: Option<(i64, i64)>, e| match acc {
            None => Some((e.min_diff, e.max_diff)),
            Some((lo, hi)) => Some((lo.min(e.min_diff), hi.max(e.max_diff))),
        })
        .unwrap_or((0, 0))
}

/// Outcome of checking a configuration against a target length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapReport {
    /// Largest absolute entry of the implemented relative-position matrix.
    pub max_mapped: i64,
    /// Closed-form value at the largest raw distance.
    pub theoretical_max: i64,
    pub pretrained_len: u32,
    pub target_len: usize,
    pub valid: bool,
}

/// Scans the implemented matrix exhaustively; valid iff every entry fits in
/// `[-(L-1), L-1]`.
pub fn validate_vrpr(cfg: &VrprConfig, target_frames: usize) -> RemapReport {
    let max_mapped = VrprZones::new(target_frames, cfg).max_abs_position();
    RemapReport {
        max_mapped,
        theoretical_max: cfg.theoretical_max(target_frames),
        pretrained_len: cfg.pretrained_len,
        target_len: target_frames,
        valid: max_mapped <= i64::from(cfg.pretrained_len) - 1,
    }
}
