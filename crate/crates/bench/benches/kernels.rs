use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tierattn_bench::{qkv, sequential};
use tierattn_core::probing::{build_stack, probe_position_ood};
use tierattn_core::{
    attention_forward, build_block_mask, implemented_relative_matrix, materialize_mask, preset, rope_frequencies,
    tsa_attention, TsaConfig,
};

fn vrpr(c: &mut Criterion) {
    let p = preset("hunyuan-4x").unwrap();
    c.bench_function("implemented_relative_matrix/509", |b| {
        b.iter(|| implemented_relative_matrix(black_box(p.target_frames), &p.vrpr))
    });
}

fn masks(c: &mut Criterion) {
    let p = preset("wan-4x").unwrap();
    c.bench_function("build_block_mask/321", |b| b.iter(|| build_block_mask(black_box(&p.tsa))));
    let small = p.tsa.with_frames(64).unwrap();
    let desc = build_block_mask(&small);
    c.bench_function("materialize_mask/64x16", |b| b.iter(|| materialize_mask(black_box(&desc)).unwrap()));
}

fn attention(c: &mut Criterion) {
    let (frames, n, dim) = (32, 8, 32);
    let (q, k, v) = qkv(frames, n, dim, 1);
    let pos = sequential(frames);
    let freqs = rope_frequencies(dim, 10_000.0).unwrap();
    c.bench_function("attention_forward/256", |b| {
        b.iter(|| attention_forward(&q, &k, &v, &pos, &pos, n, None, &freqs, None).unwrap())
    });
    let cfg = TsaConfig::new(4, 8, 2.0, n, frames, 16).unwrap();
    c.bench_function("tsa_attention/256", |b| {
        b.iter(|| tsa_attention(&q, &k, &v, &pos, &pos, &cfg, &freqs, None).unwrap())
    });
}

fn probing(c: &mut Criterion) {
    let stack = build_stack(4, 32, 4, 7).unwrap();
    let mut group = c.benchmark_group("probe");
    group.sample_size(10);
    group.bench_function("position_ood/4x21", |b| {
        b.iter(|| probe_position_ood(&stack, 21, &[-20, 20], &[0]).unwrap())
    });
    group.finish();
}

criterion_group!(benches, vrpr, masks, attention, probing);
criterion_main!(benches);
