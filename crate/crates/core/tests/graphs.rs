mod common;

use common::*;
use gdvig_core::graph::{fused_distance, knn_build, GazeGrid, GraphConfig, NodeGrid};
use gdvig_core::harness::compare_graphs;
use gdvig_core::numerics::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn knn_matches_full_sort_oracle() {
    assert_eq!(knn_oracle(200, 11), 0);
}

#[test]
fn zero_lambda_and_constant_gaze_reproduce_feature_graph() {
    assert_eq!(degeneracy(50, 12), 0);
}

#[test]
fn worked_fused_distance() {
    let nodes = NodeGrid::new(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), 1, 2).unwrap();
    let gaze = GazeGrid::new(vec![0.5, 0.25]).unwrap();
    assert_eq!(fused_distance(&nodes, &gaze, 0, 1, 3.0), 2.09375);
}

#[test]
fn gazed_block_becomes_more_connected() {
    for seed in 0..5 {
        let a = block_gaze_affinity(seed);
        assert!(a.never_lower);
        assert!(2 * a.strictly_higher >= a.centers, "seed {seed}: {}/{}", a.strictly_higher, a.centers);
    }
}

#[test]
fn dump_partition_and_distances_check_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for t in 0..30 {
        let inst = random_instance(&mut rng, 64, 8, t % 2 == 0);
        let (nodes, gaze) = (inst.nodes(), inst.gaze_grid());
        let centers: Vec<usize> = (0..inst.rows.len()).step_by(3).collect();
        let set = compare_graphs(&nodes, &gaze, inst.k, 3.0, &centers).unwrap();
        let (feat, fused) = (brute_knn(&inst, None), brute_knn(&inst, Some(3.0)));
        for c in &set.report.centers {
            let f = &feat[c.center];
            let u = &fused[c.center];
            let gone: Vec<usize> = f.iter().copied().filter(|j| !u.contains(j)).collect();
            let kept: Vec<usize> = f.iter().copied().filter(|j| u.contains(j)).collect();
            assert_eq!(c.eliminated, gone);
            assert_eq!(c.retained, kept);
            for e in c.feature_graph.iter().chain(&c.gaze_graph).chain(&c.fused_graph) {
                assert_eq!(e.fused_distance, fused_distance(&nodes, &gaze, c.center, e.neighbor, 3.0));
                assert_eq!(e.fused_distance, e.feature_distance + e.gaze_distance);
            }
        }
        let zero = compare_graphs(&nodes, &gaze, inst.k, 0.0, &centers).unwrap();
        assert_eq!(zero.fused.graph, zero.feature.graph);
    }
}

proptest! {
    #[test]
    fn knn_rows_are_valid_and_nearest_first(
        n in 3usize..40,
        c in 1usize..5,
        seed in any::<u64>(),
        lambda in 0.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = {
            let mut i = random_instance(&mut rng, n, 2, seed % 2 == 0);
            i.rows.iter_mut().for_each(|r| r.resize(c, 0.0));
            i
        };
        let nodes = inst.nodes();
        let gaze = inst.gaze_grid();
        let cfg = GraphConfig { k: inst.k, lambda_g: lambda, use_gaze: true };
        let g = knn_build(&nodes, Some(&gaze), &cfg).unwrap();
        for (i, row) in g.rows().enumerate() {
            prop_assert!(!row.contains(&i));
            let d: Vec<f64> = row.iter().map(|&j| fused_distance(&nodes, &gaze, i, j, lambda)).collect();
            prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
            let worst = d[d.len() - 1];
            for j in (0..inst.rows.len()).filter(|j| *j != i && !row.contains(j)) {
                prop_assert!(fused_distance(&nodes, &gaze, i, j, lambda) >= worst);
            }
        }
    }
}
