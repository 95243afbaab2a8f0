//! Side-by-side graphs under the feature, gaze-only and fused distances, and
//! which feature-graph neighbors the gaze term removes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::data::{make_batch, SampleRecord};
use crate::graph::{
    downsample_gaze, feature_distance, fused_distance, gaze_distance, knn_by, GazeGrid, GraphDump, NeighborGraph, NodeGrid,
};
use crate::harness::train::default_gaze_sigma;
use crate::model::GdVig;
use crate::nn::{Ctx, ParamStore};
use crate::numerics::{BnOptions, Mode, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub neighbor: usize,
    pub feature_distance: f64,
    pub gaze_distance: f64,
    pub fused_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterReport {
    pub center: usize,
    pub gaze: f64,
    pub feature_graph: Vec<Edge>,
    pub gaze_graph: Vec<Edge>,
    pub fused_graph: Vec<Edge>,
    /// In the feature graph, dropped by fusion.
    pub eliminated: Vec<usize>,
    /// In both the feature and the fused graph.
    pub retained: Vec<usize>,
    /// Brought in by fusion.
    pub introduced: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub k: usize,
    pub lambda_g: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    pub centers: Vec<CenterReport>,
}

pub struct GraphSet {
    pub feature: GraphDump,
    pub gaze: GraphDump,
    pub fused: GraphDump,
    pub report: GraphReport,
}

fn edges(nodes: &NodeGrid, gaze: &GazeGrid, lambda_g: f64, center: usize, row: &[usize]) -> Vec<Edge> {
    row.iter()
        .map(|&j| Edge {
            neighbor: j,
            feature_distance: feature_distance(nodes, center, j),
            gaze_distance: gaze_distance(gaze, center, j, lambda_g),
            fused_distance: fused_distance(nodes, gaze, center, j, lambda_g),
        })
        .collect()
}

/// Builds the three graphs over `nodes` (already normalized if the model
/// normalizes) and reports on `centers`.
pub fn compare_graphs(nodes: &NodeGrid, gaze: &GazeGrid, k: usize, lambda_g: f64, centers: &[usize]) -> Result<GraphSet> {
    if gaze.len() != nodes.len() {
        return Err(Error::shape("compare_graphs", &[nodes.len()], &[gaze.len()]));
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= nodes.len()) {
        return Err(Error::Config(format!("center {bad} outside a graph of {} nodes", nodes.len())));
    }
    let n = nodes.len();
    let feature = knn_by(n, k, |i, j| feature_distance(nodes, i, j))?;
    let gaze_only = knn_by(n, k, |i, j| gaze_distance(gaze, i, j, lambda_g))?;
    let fused = knn_by(n, k, |i, j| fused_distance(nodes, gaze, i, j, lambda_g))?;
    let centers = centers
        .iter()
        .map(|&c| {
            let (f, fu) = (feature.row(c), fused.row(c));
            CenterReport {
                center: c,
                gaze: gaze.values()[c],
                feature_graph: edges(nodes, gaze, lambda_g, c, f),
                gaze_graph: edges(nodes, gaze, lambda_g, c, gaze_only.row(c)),
                fused_graph: edges(nodes, gaze, lambda_g, c, fu),
                eliminated: f.iter().copied().filter(|j| !fu.contains(j)).collect(),
                retained: f.iter().copied().filter(|j| fu.contains(j)).collect(),
                introduced: fu.iter().copied().filter(|j| !f.contains(j)).collect(),
            }
        })
        .collect();
    let (grid_h, grid_w) = nodes.grid();
    let dump = |mode: &str, graph: NeighborGraph| GraphDump {
        mode: mode.to_string(),
        lambda_g,
        grid_h,
        grid_w,
        graph,
    };
    Ok(GraphSet {
        feature: dump("feature", feature),
        gaze: dump("gaze", gaze_only),
        fused: dump("fused", fused),
        report: GraphReport {
            k,
            lambda_g,
            grid_h,
            grid_w,
            centers,
        },
    })
}

/// Graphs of the first classifier block for one sample. The gaze is the one
/// the model used; a model without gaze falls back to the sample's stored map.
/// `lambda_g` defaults to the model's.
pub fn sample_graphs(
    model: &GdVig,
    store: &mut ParamStore,
    bn: BnOptions,
    record: &SampleRecord,
    centers: &[usize],
    lambda_g: Option<f64>,
) -> Result<GraphSet> {
    let batch = make_batch(&[record], default_gaze_sigma(model.cfg.image_size))?;
    let mut ctx = Ctx::new(store, Mode::Infer, bn).frozen();
    let fwd = model.forward(&mut ctx, &batch)?;
    let trace = fwd
        .gdc
        .traces
        .into_iter()
        .next()
        .ok_or_else(|| Error::Structure("classifier recorded no graph trace".into()))?;
    let (gh, gw) = trace.grid;
    let n = gh * gw;
    let c = trace.features.shape()[1];
    let first = Tensor::new(&[n, c], trace.features.data()[..n * c].to_vec())?;
    let mut nodes = NodeGrid::new(first, gh, gw)?;
    if model.cfg.normalize_knn {
        nodes = nodes.normalized();
    }
    let gaze = match trace.gaze.and_then(|g| g.into_iter().next()) {
        Some(g) => g,
        None => {
            let gm = record.gaze(default_gaze_sigma(model.cfg.image_size))?;
            downsample_gaze(gm.tensor(), gh, gw)?
        }
    };
    compare_graphs(&nodes, &gaze, model.cfg.k, lambda_g.unwrap_or(model.cfg.lambda_g), centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> (NodeGrid, GazeGrid) {
        let feats = Tensor::from_fn(&[16, 3], |i| ((i * 7919) % 13) as f64 / 13.0);
        let gaze = GazeGrid::new((0..16).map(|i| if i % 4 < 2 { 0.9 } else { 0.1 }).collect()).unwrap();
        (NodeGrid::new(feats, 4, 4).unwrap(), gaze)
    }

    #[test]
    fn zero_lambda_matches_feature_graph() {
        let (nodes, gaze) = instance();
        let set = compare_graphs(&nodes, &gaze, 4, 0.0, &[0, 5]).unwrap();
        assert_eq!(set.fused.graph, set.feature.graph);
        assert!(set.report.centers.iter().all(|c| c.eliminated.is_empty()));
    }

    #[test]
    fn partition_of_feature_neighbors() {
        let (nodes, gaze) = instance();
        let set = compare_graphs(&nodes, &gaze, 5, 3.0, &[0, 1, 6]).unwrap();
        for c in &set.report.centers {
            assert_eq!(c.eliminated.len() + c.retained.len(), 5);
            assert_eq!(c.eliminated.len(), c.introduced.len());
        }
        assert!(compare_graphs(&nodes, &gaze, 5, 3.0, &[16]).is_err());
    }
}
