//! Cross-module behavior: stack overrides, probes, plans and shipped data.

use std::sync::Arc;

use proptest::prelude::*;
use tierattn_core::attention::relative_position_matrix;
use tierattn_core::probing::{
    build_layer_plans, build_stack, classify_sensitive, probe_position_ood, run_stack, run_stack_with,
    shipped_orderings, shipped_profile, BasePositions, Direction, LayerOverride, LayerPositions, SensitivityProfile,
    Strategy,
};
use tierattn_core::{preset, spearman_rho, BlockMaskDescriptor, PositionIndex};

fn bits(m: &tierattn_core::Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn stacks_are_bitwise_reproducible() {
    let a = build_stack(30, 8, 2, 99).unwrap();
    let b = build_stack(30, 8, 2, 99).unwrap();
    assert_eq!(a.layers.len(), 30);
    for (x, y) in a.layers.iter().zip(&b.layers) {
        assert_eq!(bits(&x.wq), bits(&y.wq));
        assert_eq!(bits(&x.wo), bits(&y.wo));
    }
    assert_eq!(build_stack(60, 4, 1, 0).unwrap().layers.len(), 60);
    assert_ne!(bits(&a.layers[0].wq), bits(&build_stack(30, 8, 2, 100).unwrap().layers[0].wq));
}

#[test]
fn key_shift_of_twenty_spans_minus_forty_to_zero() {
    let frames = 21;
    let base = BasePositions::Sequential;
    let mut setup = base.setup(frames);
    LayerOverride::ShiftKeys(20).apply(&mut setup);
    let LayerPositions::Plain { query, key } = &setup.positions else { panic!("expected plain positions") };
    assert_eq!(key.values().first(), Some(&20));
    assert_eq!(key.values().last(), Some(&40));
    let rel = relative_position_matrix(query, key);
    assert_eq!((rel.min(), rel.max()), (Some(-40), Some(0)));

    let stack = build_stack(3, 8, 2, 1).unwrap();
    let baseline = run_stack(&stack, frames, 4, &[]).unwrap();
    let probed = run_stack(&stack, frames, 4, &[(1, LayerOverride::ShiftKeys(20))]).unwrap();
    assert_eq!(bits(&baseline[0].logits), bits(&probed[0].logits));
    assert_ne!(bits(&baseline[1].logits), bits(&probed[1].logits));
}

#[test]
fn all_dense_override_is_identity() {
    let stack = build_stack(3, 8, 2, 5).unwrap();
    let dense = Arc::new(BlockMaskDescriptor::all_dense(9, 2));
    let a = run_stack(&stack, 9, 0, &[]).unwrap();
    let b = run_stack(&stack, 9, 0, &[(0, LayerOverride::Mask(dense.clone())), (2, LayerOverride::Mask(dense))]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(bits(&x.weights), bits(&y.weights));
        assert_eq!(bits(&x.output), bits(&y.output));
    }
}

#[test]
fn out_of_range_override_rejected() {
    let stack = build_stack(2, 4, 1, 0).unwrap();
    assert!(run_stack(&stack, 3, 0, &[(2, LayerOverride::ShiftKeys(1))]).is_err());
}

#[test]
fn plan_override_matches_manual_setup() {
    let p = preset("wan-2x").unwrap();
    let tsa = p.tsa.with_frames(24).unwrap();
    let cfg = tierattn_core::VrprConfig::new(4, 8, 2, 4, 12).unwrap();
    let plans = build_layer_plans(&[Strategy::VrprPlusTsa, Strategy::VrprOnly], 24, &cfg, &tierattn_core::TsaConfig { pretrained_ctx: 40, ..tsa }).unwrap();
    let stack = build_stack(2, 8, 16, 3).unwrap();
    let input = stack.input(24, 0);
    let zones = plans[0].zones.clone();
    let with_plan = run_stack_with(&stack, &input, &BasePositions::Sequential, &[(0, LayerOverride::Plan(plans[0].clone()))]).unwrap();
    let manual = run_stack_with(
        &stack,
        &input,
        &BasePositions::Vrpr(zones),
        &[(0, LayerOverride::Mask(plans[0].mask.clone().unwrap()))],
    )
    .unwrap();
    assert_eq!(bits(&with_plan.records[0].weights), bits(&manual.records[0].weights));
}

/// Rank stability of ALD when the input-seed batch doubles. Four-layer
/// synthetic stacks have nearly equal per-layer ALD, so the ranking is not
/// stable for every weight seed; seed 1 is stable, seed 0 swaps layers.
#[test]
fn ald_ranking_under_seed_doubling() {
    let shifts = [-40, -20, 20, 40];
    let rho = |seed: u64| {
        let stack = build_stack(4, 32, 4, seed).unwrap();
        let three = probe_position_ood(&stack, 21, &shifts, &[0, 1, 2]).unwrap();
        let six = probe_position_ood(&stack, 21, &shifts, &[0, 1, 2, 3, 4, 5]).unwrap();
        spearman_rho(&three, &six).unwrap()
    };
    assert_eq!(rho(1), 1.0);
    let r0 = rho(0);
    assert!((r0 - 0.6).abs() < 1e-12, "{r0}");
    assert_eq!(rho(0).to_bits(), r0.to_bits());
}

#[test]
fn shipped_profiles_round_trip_and_cover_every_layer() {
    for ordering in shipped_orderings() {
        let p = ordering.profile().unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back = SensitivityProfile::from_json(&text).unwrap();
        assert_eq!(back, p);
        let (pos, ctx) = back.orderings();
        assert_eq!(pos, ordering.pos_sensitive_order);
        assert_eq!(ctx, ordering.ctx_sensitive_order);
        let n = p.num_layers;
        let marked = p.pos_sensitive.iter().filter(|&&b| b).count();
        assert_eq!(marked, 2 * n / 3);
        assert_eq!(p.count_strategy(Strategy::VrprPlusTsa), n / 2);
        assert!((0..n).all(|l| p.pos_sensitive[l] || p.ctx_sensitive[l]), "{} leaves a layer uncovered", p.model_name);
    }
    let hunyuan = shipped_profile("HunyuanVideo").unwrap();
    let (_, ctx_order) = hunyuan.orderings();
    assert!(ctx_order[..30].iter().all(|&l| hunyuan.strategy[l] == Strategy::VrprPlusTsa));
    assert!(ctx_order[30..].iter().all(|&l| hunyuan.strategy[l] == Strategy::VrprOnly));
    assert_eq!(shipped_profile("Wan2.1-T2V-1.3B").unwrap().num_layers, 30);
}

#[test]
fn wan4x_plans_from_shipped_profile() {
    let p = preset("wan-4x").unwrap();
    let profile = shipped_profile("Wan2.1-T2V-1.3B").unwrap();
    let plans = build_layer_plans(&profile.strategy, p.target_frames, &p.vrpr, &p.tsa).unwrap();
    assert_eq!(plans.iter().filter(|pl| pl.mask.is_some()).count(), 15);
    for pl in &plans {
        assert_eq!(pl.mask.is_some(), pl.strategy == Strategy::VrprPlusTsa);
    }
    let zones = &plans[0].zones;
    let bound = (0..321).flat_map(|i| (0..321).map(move |j| zones.implemented(i, j).abs())).max();
    assert_eq!(bound, Some(51));
}

#[test]
fn sequential_positions_helper() {
    assert_eq!(PositionIndex::sequential(3).values(), &[0, 1, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classification_is_rank_based(scores in prop::collection::vec(-1e3f64..1e3, 1..40), fraction in 0.05f64..1.0) {
        let a = classify_sensitive(&scores, fraction, Direction::HigherIsSensitive).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s / 100.0).exp()).collect();
        let b = classify_sensitive(&transformed, fraction, Direction::HigherIsSensitive).unwrap();
        prop_assert_eq!(&a, &b);
        let expected = (fraction * scores.len() as f64 - 1e-9).ceil() as usize;
        prop_assert_eq!(a.iter().filter(|&&x| x).count(), expected.max(1));
    }

    #[test]
    fn strategies_are_total(ctx in prop::collection::vec(0.0f64..5.0, 2..40)) {
        let ald: Vec<f64> = ctx.iter().rev().cloned().collect();
        let p = SensitivityProfile::from_scores("prop", ald, ctx.clone()).unwrap();
        prop_assert_eq!(p.strategy.len(), ctx.len());
        prop_assert_eq!(p.count_strategy(Strategy::VrprPlusTsa), ctx.len().div_ceil(2));
    }
}
