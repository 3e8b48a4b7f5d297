//! Sensitivity classification, strategy assignment and profile files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default share of layers marked sensitive per metric.
pub const SENSITIVE_FRACTION: f64 = 2.0 / 3.0;
/// Default share of layers that get the tiered mask on top of re-encoding.
pub const TSA_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "VRPR")]
    VrprOnly,
    #[serde(rename = "VRPR+TSA")]
    VrprPlusTsa,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::VrprOnly => "VRPR",
            Strategy::VrprPlusTsa => "VRPR+TSA",
        }
    }
}

/// Which end of the score scale counts as sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    HigherIsSensitive,
}

/// `ceil(fraction * len)`, tolerant of the rounding in `2/3 * 30`.
pub fn marked_count(fraction: f64, len: usize) -> usize {
    let x = fraction * len as f64;
    let nearest = x.round();
    let c = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    (c as usize).min(len)
}

/// Layer indices ordered by descending score; ties keep the lower index first.
pub fn rank_layers(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Marks the `ceil(fraction * len)` highest-scoring layers.
pub fn classify_sensitive(scores: &[f64], fraction: f64, direction: Direction) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let Direction::HigherIsSensitive = direction;
    let mut marked = vec![false; scores.len()];
    for &l in rank_layers(scores).iter().take(marked_count(fraction, scores.len())) {
        marked[l] = true;
    }
    Ok(marked)
}

/// Top `ceil(tsa_fraction * len)` layers by context score get VRPR+TSA, the
/// rest VRPR only.
pub fn assign_strategies(ctx_scores: &[f64], pos_sensitive: &[bool], tsa_fraction: f64) -> Result<Vec<Strategy>> {
    if ctx_scores.len() != pos_sensitive.len() {
        return Err(Error::InvalidInput(format!(
            "{} context scores vs {} position flags",
            ctx_scores.len(),
            pos_sensitive.len()
        )));
    }
    if !(0.0..=1.0).contains(&tsa_fraction) {
        return Err(Error::InvalidInput(format!("tsa_fraction must be in [0, 1], got {tsa_fraction}")));
    }
    let mut out = vec![Strategy::VrprOnly; ctx_scores.len()];
    for &l in rank_layers(ctx_scores).iter().take(marked_count(tsa_fraction, ctx_scores.len())) {
        out[l] = Strategy::VrprPlusTsa;
    }
    Ok(out)
}

/// Per-layer scores, sensitivity flags and assigned strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityProfile {
    pub model_name: String,
    pub num_layers: usize,
    pub ald: Vec<f64>,
    pub ctx_score: Vec<f64>,
    pub pos_sensitive: Vec<bool>,
    pub ctx_sensitive: Vec<bool>,
    pub strategy: Vec<Strategy>,
}

impl SensitivityProfile {
    /// Classifies both score vectors and assigns strategies with the given
    /// fractions.
    pub fn from_scores_with(
        model_name: impl Into<String>,
        ald: Vec<f64>,
        ctx_score: Vec<f64>,
        sensitive_fraction: f64,
        tsa_fraction: f64,
    ) -> Result<Self> {
        if ald.len() != ctx_score.len() {
            return Err(Error::InvalidInput("ald and ctx_score lengths differ".into()));
        }
        let pos_sensitive = classify_sensitive(&ald, sensitive_fraction, Direction::HigherIsSensitive)?;
        let ctx_sensitive = classify_sensitive(&ctx_score, sensitive_fraction, Direction::HigherIsSensitive)?;
        let strategy = assign_strategies(&ctx_score, &pos_sensitive, tsa_fraction)?;
        Ok(Self { model_name: model_name.into(), num_layers: ald.len(), ald, ctx_score, pos_sensitive, ctx_sensitive, strategy })
    }

    pub fn from_scores(model_name: impl Into<String>, ald: Vec<f64>, ctx_score: Vec<f64>) -> Result<Self> {
        Self::from_scores_with(model_name, ald, ctx_score, SENSITIVE_FRACTION, TSA_FRACTION)
    }

    /// Builds a profile from published sensitivity orderings (most sensitive
    /// first). A listed layer at rank `r` of an `m`-long list scores `m - r`;
    /// unlisted layers score 0.
    pub fn from_orderings(
        model_name: impl Into<String>,
        num_layers: usize,
        pos_order: &[usize],
        ctx_order: &[usize],
    ) -> Result<Self> {
        let scores = |order: &[usize]| -> Result<Vec<f64>> {
            let mut s = vec![0.0; num_layers];
            for (rank, &l) in order.iter().enumerate() {
                if l >= num_layers {
                    return Err(Error::InvalidInput(format!("layer {l} outside {num_layers} layers")));
                }
                if s[l] != 0.0 {
                    return Err(Error::InvalidInput(format!("layer {l} listed twice")));
                }
                s[l] = (order.len() - rank) as f64;
            }
            Ok(s)
        };
        Self::from_scores(model_name, scores(pos_order)?, scores(ctx_order)?)
    }

    /// Layers with a positive score, most sensitive first.
    pub fn orderings(&self) -> (Vec<usize>, Vec<usize>) {
        let order = |s: &[f64]| rank_layers(s).into_iter().filter(|&l| s[l] > 0.0).collect();
        (order(&self.ald), order(&self.ctx_score))
    }

    pub fn check(&self) -> Result<()> {
        let n = self.num_layers;
        if [self.ald.len(), self.ctx_score.len(), self.pos_sensitive.len(), self.ctx_sensitive.len(), self.strategy.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Format(format!("profile vectors do not all have {n} entries")));
        }
        Ok(())
    }

    pub fn count_strategy(&self, s: Strategy) -> usize {
        self.strategy.iter().filter(|&&x| x == s).count()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.check()?;
        Ok(p)
    }

    /// `layer,metric,value` rows for both score vectors.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("layer,metric,value\n");
        for l in 0..self.num_layers {
            out.push_str(&format!("{l},ald,{}\n", crate::export::format_f64(self.ald[l])));
            out.push_str(&format!("{l},ctx_score,{}\n", crate::export::format_f64(self.ctx_score[l])));
        }
        out
    }
}

/// Published orderings as shipped in `data/`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShippedOrdering {
    pub model_name: String,
    pub num_layers: usize,
    pub pos_sensitive_order: Vec<usize>,
    pub ctx_sensitive_order: Vec<usize>,
    pub note: String,
}

impl ShippedOrdering {
    pub fn profile(&self) -> Result<SensitivityProfile> {
        SensitivityProfile::from_orderings(
            self.model_name.clone(),
            self.num_layers,
            &self.pos_sensitive_order,
            &self.ctx_sensitive_order,
        )
    }
}

const WAN_ORDERING: &str = include_str!("../../data/wan2.1-t2v-1.3b.json");
const HUNYUAN_ORDERING: &str = include_str!("../../data/hunyuan-video.json");

/// The shipped orderings: Wan2.1-T2V-1.3B (30 layers) and HunyuanVideo (60).
pub fn shipped_orderings() -> Vec<ShippedOrdering> {
    [WAN_ORDERING, HUNYUAN_ORDERING]
        .iter()
        .map(|s| serde_json::from_str(s).expect("shipped ordering files are valid"))
        .collect()
}

pub fn shipped_profile(name: &str) -> Option<SensitivityProfile> {
    shipped_orderings()
        .into_iter()
        .find(|o| o.model_name == name)
        .map(|o| o.profile().expect("shipped orderings are consistent"))
}
