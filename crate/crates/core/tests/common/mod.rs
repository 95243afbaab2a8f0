//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use gdvig_core::graph::{knn_build, GazeGrid, GraphConfig, NodeGrid};
use gdvig_core::harness::metrics::compute_metrics;
use gdvig_core::harness::auc;
use gdvig_core::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub rows: Vec<Vec<f64>>,
    pub gaze: Vec<f64>,
    pub k: usize,
}

impl Instance {
    pub fn nodes(&self) -> NodeGrid {
        let c = self.rows[0].len();
        let flat = self.rows.concat();
        NodeGrid::new(Tensor::new(&[self.rows.len(), c], flat).unwrap(), 1, self.rows.len()).unwrap()
    }

    pub fn gaze_grid(&self) -> GazeGrid {
        GazeGrid::new(self.gaze.clone()).unwrap()
    }
}

/// Random instance; `coarse` draws from a few levels so that ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_k: usize, coarse: bool) -> Instance {
    let k = rng.random_range(1..=max_k);
    let n = rng.random_range(k + 1..=max_n);
    let c = rng.random_range(1..=8);
    let draw = |rng: &mut ChaCha8Rng| {
        if coarse {
            rng.random_range(0..4) as f64 / 4.0
        } else {
            rng.random_range(-1.0..1.0)
        }
    };
    let rows = (0..n).map(|_| (0..c).map(|_| draw(rng)).collect()).collect();
    let gaze = (0..n)
        .map(|_| if coarse { rng.random_range(0..5) as f64 / 4.0 } else { rng.random_range(0.0..=1.0) })
        .collect();
    Instance { rows, gaze, k }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sorts every candidate by (distance, index) and keeps the first k.
pub fn brute_knn(inst: &Instance, lambda_g: Option<f64>) -> Vec<Vec<usize>> {
    let n = inst.rows.len();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let mut d = sq_dist(&inst.rows[i], &inst.rows[j]);
                    if let Some(l) = lambda_g {
                        let (gi, gj) = (inst.gaze[i], inst.gaze[j]);
                        d += l * ((gi - gj) * (gi - gj)) * gi;
                    }
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.truncate(inst.k);
            all.into_iter().map(|p| p.1).collect()
        })
        .collect()
}

pub fn built(inst: &Instance, lambda_g: Option<f64>) -> Vec<Vec<usize>> {
    let cfg = GraphConfig {
        k: inst.k,
        lambda_g: lambda_g.unwrap_or(0.0),
        use_gaze: lambda_g.is_some(),
    };
    let g = knn_build(&inst.nodes(), Some(&inst.gaze_grid()), &cfg).unwrap();
    g.rows().map(<[usize]>::to_vec).collect()
}

/// `trials` random instances, with and without gaze. Returns mismatches.
pub fn knn_oracle(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for t in 0..trials {
        let inst = random_instance(&mut rng, 256, 16, t % 2 == 0);
        let lambda = rng.random_range(0.0..5.0);
        bad += usize::from(built(&inst, None) != brute_knn(&inst, None));
        bad += usize::from(built(&inst, Some(lambda)) != brute_knn(&inst, Some(lambda)));
    }
    bad
}

/// λ_g = 0 and constant gaze both reproduce the feature-only graph.
pub fn degeneracy(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for t in 0..trials {
        let mut inst = random_instance(&mut rng, 128, 16, t % 2 == 0);
        let plain = built(&inst, None);
        bad += usize::from(built(&inst, Some(0.0)) != plain);
        let level = rng.random_range(0.0..=1.0);
        inst.gaze.iter_mut().for_each(|g| *g = level);
        bad += usize::from(built(&inst, Some(3.0)) != plain);
    }
    bad
}

pub struct Affinity {
    pub centers: usize,
    pub never_lower: bool,
    pub strictly_higher: usize,
}

/// An 8×8 grid whose top-left 4×4 block is gazed at (0.9) and the rest not
/// (0.1); features are random unit vectors.
pub fn block_gaze_affinity(seed: u64) -> Affinity {
    let (side, block, k) = (8, 4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_block = |i: usize| i / side < block && i % side < block;
    let rows: Vec<Vec<f64>> = (0..side * side)
        .map(|_| {
            let v: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let gaze = (0..side * side).map(|i| if in_block(i) { 0.9 } else { 0.1 }).collect();
    let inst = Instance { rows, gaze, k };
    let (plain, fused) = (built(&inst, Some(0.0)), built(&inst, Some(3.0)));
    let frac = |row: &[usize]| row.iter().filter(|&&j| in_block(j)).count();
    let mut out = Affinity {
        centers: 0,
        never_lower: true,
        strictly_higher: 0,
    };
    for i in (0..side * side).filter(|&i| in_block(i)) {
        out.centers += 1;
        let (a, b) = (frac(&plain[i]), frac(&fused[i]));
        out.never_lower &= b >= a;
        out.strictly_higher += usize::from(b > a);
    }
    out
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (si, _) in scores.iter().zip(positive).filter(|p| *p.1) {
        for (sj, _) in scores.iter().zip(positive).filter(|p| !*p.1) {
            pairs += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs
}

/// Random score/label sets with ties; returns mismatches against the oracle.
pub fn auc_oracle(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..trials {
        let n = rng.random_range(2..60);
        let levels = rng.random_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        positive[0] = true;
        positive[1] = false;
        bad += usize::from(auc(&scores, &positive).unwrap() != brute_auc(&scores, &positive));
    }
    bad
}

/// (probs, labels, classes, acc, f1) worked out by hand from the confusion matrix.
pub fn metric_fixtures() -> Vec<(Vec<Vec<f64>>, Vec<usize>, usize, f64, f64)> {
    let p = |v: &[f64]| v.to_vec();
    vec![
        // TP=2 FN=1 FP=1 TN=2: precision=recall=2/3.
        (
            vec![p(&[0.2, 0.8]), p(&[0.3, 0.7]), p(&[0.6, 0.4]), p(&[0.1, 0.9]), p(&[0.9, 0.1]), p(&[0.7, 0.3])],
            vec![1, 1, 1, 0, 0, 0],
            2,
            4.0 / 6.0,
            2.0 / 3.0,
        ),
        // TP=1 FN=0 FP=2 TN=1: precision 1/3, recall 1, f1 = 1/2.
        (
            vec![p(&[0.4, 0.6]), p(&[0.3, 0.7]), p(&[0.2, 0.8]), p(&[0.8, 0.2])],
            vec![1, 0, 0, 0],
            2,
            2.0 / 4.0,
            0.5,
        ),
        // Three classes, confusion rows [[2,0,0],[1,1,0],[0,1,1]]:
        // f1 = 0.8, 0.5, 2/3 → macro 59/90.
        (
            vec![
                p(&[0.8, 0.1, 0.1]),
                p(&[0.6, 0.3, 0.1]),
                p(&[0.5, 0.4, 0.1]),
                p(&[0.2, 0.7, 0.1]),
                p(&[0.1, 0.6, 0.3]),
                p(&[0.1, 0.2, 0.7]),
            ],
            vec![0, 0, 1, 1, 2, 2],
            3,
            4.0 / 6.0,
            (0.8 + 0.5 + 2.0 / 3.0) / 3.0,
        ),
    ]
}

pub fn fixtures_match() -> bool {
    metric_fixtures().into_iter().all(|(probs, labels, classes, acc, f1)| {
        let m = compute_metrics(&probs, &labels, classes).unwrap();
        (m.acc - acc).abs() < 1e-12 && (m.f1 - f1).abs() < 1e-12
    })
}
