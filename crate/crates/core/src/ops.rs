//! Operation-count cost model for reproducible timings.
//!
//! Counts are coarse: one unit per multiply-add or comparison. Dividing by
//! [`OPS_PER_SECOND`] gives a nominal duration that depends only on the inputs.

use crate::compress::{LayerQuantStats, QuantizedLayer};

/// Nominal device throughput.
pub const OPS_PER_SECOND: f64 = 1e9;

pub fn seconds(ops: u64) -> f64 {
    ops as f64 / OPS_PER_SECOND
}

fn n_log_n(n: u64) -> u64 {
    if n < 2 {
        n
    } else {
        n * (64 - (n - 1).leading_zeros() as u64)
    }
}

/// Forward and backward pass: about 6 operations per parameter per sample.
pub fn train(samples: u64, params: u64) -> u64 {
    6 * samples * params
}

/// Global magnitude selection, Lloyd iterations and Huffman table builds.
pub fn compress(params: u64, layers: &[QuantizedLayer], stats: &[LayerQuantStats]) -> u64 {
    let mut ops = 2 * params;
    for (l, s) in layers.iter().zip(stats) {
        let kept = l.positions.len() as u64;
        let k = l.codebook.centroids.len() as u64;
        let mut gaps: Vec<usize> = l.positions.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.extend(l.positions.first());
        gaps.sort_unstable();
        gaps.dedup();
        ops += kept * k * s.iterations as u64 + 2 * kept + n_log_n(k) + n_log_n(gaps.len() as u64);
    }
    ops
}

/// Decoding every symbol and scattering into a dense tensor.
pub fn decompress(params: u64, layers: &[QuantizedLayer]) -> u64 {
    params + layers.iter().map(|l| 2 * l.positions.len() as u64).sum::<u64>()
}

pub fn select(clients: u64) -> u64 {
    clients
}

pub fn aggregate(selected: u64, params: u64) -> u64 {
    selected * params
}
