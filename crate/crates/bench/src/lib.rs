//! Fixtures shared by the pipeline benchmarks.

use vidattr_core::oracle::synthesize_belonging;
use vidattr_core::{ToyChunkAutoencoder, ToyConfig, Video};

/// The default toy target and one belonging video of `n_chunks` chunks.
pub fn desk_fixture(n_chunks: usize) -> (ToyChunkAutoencoder, Video) {
    let toy = ToyChunkAutoencoder::build(ToyConfig::desk(7)).expect("default toy config is valid");
    let video = synthesize_belonging(&toy, n_chunks, 0.01, 1).expect("n_chunks >= 2");
    (toy, video)
}

/// Deterministic pseudo-random values in `[0, 1)`.
pub fn ramp(n: usize, salt: u32) -> Vec<f32> {
    (0..n as u32)
        .map(|i| (i.wrapping_mul(2_654_435_761).wrapping_add(salt) >> 8) as f32 / (1u32 << 24) as f32)
        .collect()
}
