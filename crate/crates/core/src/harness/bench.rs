//! Timing of graph construction against a full-sort reference.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{fused_distance, knn_build, GazeGrid, GraphConfig, NodeGrid};
use crate::numerics::Tensor;

pub const BENCH_CHANNELS: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnBench {
    pub n: usize,
    pub k: usize,
    pub channels: usize,
    pub feature_ms: f64,
    pub fused_ms: f64,
    pub reference_ms: f64,
    /// The fused graph equals the full-sort reference.
    pub agrees: bool,
}

/// Neighbors of every node by sorting all distances.
pub fn full_sort_knn(n: usize, k: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(all[..k].iter().map(|p| p.1));
    }
    out
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn knn_bench(n: usize, k: usize, seed: u64) -> Result<KnnBench> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = Tensor::from_fn(&[n, BENCH_CHANNELS], |_| rng.random_range(-1.0..1.0));
    let nodes = NodeGrid::new(feats, 1, n)?;
    let gaze = GazeGrid::new((0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let mut cfg = GraphConfig {
        k,
        lambda_g: 3.0,
        use_gaze: false,
    };
    let t = Instant::now();
    knn_build(&nodes, None, &cfg)?;
    let feature_ms = ms(t);
    cfg.use_gaze = true;
    let t = Instant::now();
    let fused = knn_build(&nodes, Some(&gaze), &cfg)?;
    let fused_ms = ms(t);
    let t = Instant::now();
    let reference = full_sort_knn(n, k, |i, j| fused_distance(&nodes, &gaze, i, j, cfg.lambda_g));
    let reference_ms = ms(t);
    Ok(KnnBench {
        n,
        k,
        channels: BENCH_CHANNELS,
        feature_ms,
        fused_ms,
        reference_ms,
        agrees: fused.as_flat() == reference.as_slice(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_agrees_and_rejects_bad_k() {
        assert!(knn_bench(64, 8, 1).unwrap().agrees);
        assert!(knn_bench(8, 8, 1).is_err());
    }
}
