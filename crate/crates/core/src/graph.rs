//! KNN graphs over feature-grid nodes.
//!
//! The distance from a center node `i` to a candidate `j` is the squared
//! feature distance, optionally plus a gaze term weighted by the center's own
//! gaze value:
//!
//! ```text
//! d(i, j) = ‖x_i − x_j‖² + λ_g · (gm_i − gm_j)² · gm_i
//! ```
//!
//! The gaze term is deliberately asymmetric: `d(i, j) != d(j, i)` in general.
//! Nodes the reader looked at strongly are pulled toward neighbors with
//! similar gaze; unattended centers keep their feature-only neighborhoods.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{resample2d, Resample, Tensor};

/// Node features laid out on an `H_f × W_f` grid, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrid {
    features: Tensor,
    grid_h: usize,
    grid_w: usize,
}

impl NodeGrid {
    pub fn new(features: Tensor, grid_h: usize, grid_w: usize) -> Result<Self> {
        match features.shape() {
            [n, _] if *n == grid_h * grid_w => Ok(NodeGrid {
                features,
                grid_h,
                grid_w,
            }),
            s => Err(Error::shape("node_grid", s, &[grid_h * grid_w])),
        }
    }

    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    /// Grid cell `(row, col)` of node `i`.
    pub fn cell(&self, i: usize) -> (usize, usize) {
        (i / self.grid_w, i % self.grid_w)
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn node(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Copy with every node vector scaled to unit L2 norm (zero rows stay zero).
    pub fn normalized(&self) -> NodeGrid {
        let c = self.channels();
        let mut data = self.features.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        NodeGrid {
            features: Tensor::new(self.features.shape(), data).expect("same shape"),
            grid_h: self.grid_h,
            grid_w: self.grid_w,
        }
    }
}

/// Gaze values in `[0, 1]`, one per node, indexed like [`NodeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GazeGrid {
    values: Vec<f64>,
}

impl GazeGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("gaze value {v} outside [0, 1]")));
        }
        Ok(GazeGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `k` directed neighbors per center node; the center itself never appears.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    neighbors: Vec<usize>,
}

impl NeighborGraph {
    pub fn new(k: usize, neighbors: Vec<usize>) -> Result<Self> {
        if k == 0 || neighbors.len() % k != 0 {
            return Err(Error::Structure(format!(
                "{} neighbor entries do not form rows of {k}",
                neighbors.len()
            )));
        }
        let n = neighbors.len() / k;
        for (i, row) in neighbors.chunks_exact(k).enumerate() {
            for (p, &j) in row.iter().enumerate() {
                if j >= n || j == i || row[..p].contains(&j) {
                    return Err(Error::Structure(format!("invalid neighbor {j} in row {i}")));
                }
            }
        }
        Ok(NeighborGraph { k, neighbors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.neighbors.chunks_exact(self.k)
    }

    pub fn as_flat(&self) -> &[usize] {
        &self.neighbors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k: usize,
    pub lambda_g: f64,
    pub use_gaze: bool,
}

pub fn feature_distance(nodes: &NodeGrid, i: usize, j: usize) -> f64 {
    nodes
        .node(i)
        .iter()
        .zip(nodes.node(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// The gaze term alone: `λ_g · (gm_i − gm_j)² · gm_i`.
pub fn gaze_distance(gaze: &GazeGrid, i: usize, j: usize, lambda_g: f64) -> f64 {
    let (gi, gj) = (gaze.values[i], gaze.values[j]);
    lambda_g * ((gi - gj) * (gi - gj)) * gi
}

pub fn fused_distance(nodes: &NodeGrid, gaze: &GazeGrid, i: usize, j: usize, lambda_g: f64) -> f64 {
    feature_distance(nodes, i, j) + gaze_distance(gaze, i, j, lambda_g)
}

/// For each center, the `k` other nodes with the smallest `dist(center, j)`,
/// ties broken by ascending index. Rows are ordered nearest first.
pub fn knn_by(n: usize, k: usize, dist: impl Fn(usize, usize) -> f64) -> Result<NeighborGraph> {
    if k == 0 || k >= n {
        return Err(Error::Config(format!("k = {k} must satisfy 1 <= k < N = {n}")));
    }
    let mut neighbors = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, order);
        }
        let best = &mut cand[..k];
        best.sort_unstable_by(order);
        neighbors.extend(best.iter().map(|&(_, j)| j));
    }
    Ok(NeighborGraph { k, neighbors })
}

pub fn knn_build(nodes: &NodeGrid, gaze: Option<&GazeGrid>, cfg: &GraphConfig) -> Result<NeighborGraph> {
    if !(cfg.lambda_g >= 0.0) {
        return Err(Error::Config(format!("lambda_g must be >= 0, got {}", cfg.lambda_g)));
    }
    match (cfg.use_gaze, gaze) {
        (false, _) => knn_by(nodes.len(), cfg.k, |i, j| feature_distance(nodes, i, j)),
        (true, None) => Err(Error::Config("gaze-directed graph requested without a gaze grid".into())),
        (true, Some(g)) => {
            if g.len() != nodes.len() {
                return Err(Error::shape("knn_build", &[nodes.len()], &[g.len()]));
            }
            knn_by(nodes.len(), cfg.k, |i, j| fused_distance(nodes, g, i, j, cfg.lambda_g))
        }
    }
}

/// Area-pools an `[H, W]` gaze map onto a `grid_h × grid_w` node grid.
pub fn downsample_gaze(gm: &Tensor, grid_h: usize, grid_w: usize) -> Result<GazeGrid> {
    let (h, w) = match gm.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::shape("downsample_gaze", s, &[2])),
    };
    if grid_h == 0 || grid_w == 0 || h % grid_h != 0 || w % grid_w != 0 {
        return Err(Error::Config(format!(
            "gaze map {h}x{w} does not divide into a {grid_h}x{grid_w} grid"
        )));
    }
    let pooled = resample2d(gm, grid_h, grid_w, Resample::Area)?;
    GazeGrid::new(pooled.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Text form of one graph: a `#` header line followed by `center: n1,...,nK`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDump {
    pub mode: String,
    pub lambda_g: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    pub graph: NeighborGraph,
}

impl GraphDump {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# mode={} lambda_g={} k={} grid={}x{}\n",
            self.mode,
            self.lambda_g,
            self.graph.k(),
            self.grid_h,
            self.grid_w
        );
        for (i, row) in self.graph.rows().enumerate() {
            let list: Vec<String> = row.iter().map(|j| j.to_string()).collect();
            let _ = writeln!(s, "{i}: {}", list.join(","));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Structure(format!("graph dump: {m}"));
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| bad("missing header"))?;
        let (mut mode, mut lambda_g, mut k, mut grid) = (None, None, None, None);
        for field in header.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad("malformed header"))?;
            match key {
                "mode" => mode = Some(value.to_string()),
                "lambda_g" => lambda_g = value.parse::<f64>().ok(),
                "k" => k = value.parse::<usize>().ok(),
                "grid" => {
                    grid = value
                        .split_once('x')
                        .and_then(|(h, w)| Some((h.parse::<usize>().ok()?, w.parse::<usize>().ok()?)))
                }
                other => return Err(bad(&format!("unknown header key {other}"))),
            }
        }
        let k = k.ok_or_else(|| bad("missing k"))?;
        let (grid_h, grid_w) = grid.ok_or_else(|| bad("missing grid"))?;
        let mut neighbors = Vec::new();
        for (i, line) in lines.enumerate() {
            let (center, list) = line.split_once(": ").ok_or_else(|| bad("malformed row"))?;
            if center.parse::<usize>().ok() != Some(i) {
                return Err(bad("rows out of order"));
            }
            for tok in list.split(',') {
                neighbors.push(tok.parse::<usize>().map_err(|_| bad("bad index"))?);
            }
        }
        let graph = NeighborGraph::new(k, neighbors)?;
        if graph.len() != grid_h * grid_w {
            return Err(bad("row count does not match grid"));
        }
        Ok(GraphDump {
            mode: mode.ok_or_else(|| bad("missing mode"))?,
            lambda_g: lambda_g.ok_or_else(|| bad("missing lambda_g"))?,
            grid_h,
            grid_w,
            graph,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&[f64]], h: usize, w: usize) -> NodeGrid {
        let c = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        NodeGrid::new(Tensor::new(&[rows.len(), c], data).unwrap(), h, w).unwrap()
    }

    #[test]
    fn feature_distance_hand_values() {
        let g = grid(&[&[1.0, 0.0], &[0.0, 1.0]], 1, 2);
        assert_eq!(feature_distance(&g, 0, 1), 2.0);
        assert_eq!(feature_distance(&g, 1, 0), 2.0);
        assert_eq!(feature_distance(&g, 1, 1), 0.0);
    }

    #[test]
    fn fused_distance_worked_value() {
        let g = grid(&[&[1.0, 0.0], &[0.0, 1.0]], 1, 2);
        let gaze = GazeGrid::new(vec![0.5, 0.25]).unwrap();
        assert_eq!(fused_distance(&g, &gaze, 0, 1, 3.0), 2.09375);
        // Reverse direction uses the other center's gaze: 2 + 3·0.0625·0.25.
        assert_eq!(fused_distance(&g, &gaze, 1, 0, 3.0), 2.046875);
        assert_eq!(fused_distance(&g, &gaze, 0, 1, 0.0), 2.0);
    }

    #[test]
    fn zero_gaze_center_ignores_gaze_term() {
        let g = grid(&[&[1.0, 0.0], &[0.0, 1.0]], 1, 2);
        let gaze = GazeGrid::new(vec![0.0, 0.9]).unwrap();
        assert_eq!(fused_distance(&g, &gaze, 0, 1, 3.0), feature_distance(&g, 0, 1));
    }

    #[test]
    fn one_hot_two_by_two_picks_lowest_equidistant_index() {
        let g = grid(
            &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]],
            2,
            2,
        );
        let cfg = GraphConfig {
            k: 1,
            lambda_g: 0.0,
            use_gaze: false,
        };
        let graph = knn_build(&g, None, &cfg).unwrap();
        let rows: Vec<&[usize]> = graph.rows().collect();
        assert_eq!(rows, vec![&[1][..], &[0], &[0], &[0]]);
    }

    #[test]
    fn k_must_be_below_node_count() {
        let g = grid(&[&[1.0], &[2.0]], 1, 2);
        let mut cfg = GraphConfig {
            k: 2,
            lambda_g: 0.0,
            use_gaze: false,
        };
        assert!(matches!(knn_build(&g, None, &cfg), Err(Error::Config(_))));
        cfg.k = 0;
        assert!(knn_build(&g, None, &cfg).is_err());
        cfg.k = 1;
        cfg.use_gaze = true;
        assert!(knn_build(&g, None, &cfg).is_err());
    }

    #[test]
    fn downsample_constant_and_delta() {
        let gm = Tensor::full(&[8, 8], 0.7);
        let gg = downsample_gaze(&gm, 2, 4).unwrap();
        assert!(gg.values().iter().all(|v| (v - 0.7).abs() < 1e-12));

        let mut delta = Tensor::zeros(&[8, 8]);
        delta.data_mut()[5 * 8 + 2] = 1.0;
        let gg = downsample_gaze(&delta, 4, 4).unwrap();
        let nonzero: Vec<usize> = (0..16).filter(|&i| gg.values()[i] != 0.0).collect();
        assert_eq!(nonzero, vec![2 * 4 + 1]);

        assert!(matches!(downsample_gaze(&gm, 3, 4), Err(Error::Config(_))));
    }

    #[test]
    fn gaze_grid_rejects_out_of_range() {
        assert!(GazeGrid::new(vec![0.0, 1.0]).is_ok());
        assert!(GazeGrid::new(vec![1.5]).is_err());
        assert!(GazeGrid::new(vec![-0.1]).is_err());
    }

    #[test]
    fn neighbor_graph_rejects_self_and_duplicates() {
        assert!(NeighborGraph::new(1, vec![1, 0]).is_ok());
        assert!(NeighborGraph::new(1, vec![0, 0]).is_err());
        assert!(NeighborGraph::new(2, vec![1, 1, 0, 2, 0, 1]).is_err());
        assert!(NeighborGraph::new(1, vec![5, 0]).is_err());
    }

    #[test]
    fn dump_round_trips() {
        let g = grid(&[&[0.0], &[1.0], &[3.0], &[7.0]], 2, 2);
        let graph = knn_by(4, 2, |i, j| feature_distance(&g, i, j)).unwrap();
        let dump = GraphDump {
            mode: "feature".into(),
            lambda_g: 3.0,
            grid_h: 2,
            grid_w: 2,
            graph,
        };
        let text = dump.to_text();
        assert!(text.starts_with("# mode=feature lambda_g=3 k=2 grid=2x2\n0: 1,2\n"));
        assert_eq!(GraphDump::parse(&text).unwrap(), dump);
    }
}
