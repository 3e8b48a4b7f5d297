//! Fixtures shared by the benchmark targets.

use tierattn_core::rng::Xoshiro256StarStar;
use tierattn_core::{Matrix, PositionIndex};

/// Seeded standard-normal query, key and value tensors for `frames` frames.
pub fn qkv(frames: usize, tokens_per_frame: usize, dim: usize, seed: u64) -> (Matrix, Matrix, Matrix) {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let rows = frames * tokens_per_frame;
    let mut draw = || Matrix::from_vec(rows, dim, rng.normal_vec(rows * dim, 1.0)).expect("shape matches length");
    (draw(), draw(), draw())
}

pub fn sequential(frames: usize) -> PositionIndex {
    PositionIndex::sequential(frames)
}
