//! Gaze-directed classifier: graph blocks whose KNN graphs come from the
//! fused feature/gaze distance, then global average pooling and a linear head.

use rand::Rng;

use crate::blocks::{ConvBnRelu, Ffn, Grapher, Stem};
use crate::error::{Error, Result};
use crate::gmg::batch_knn;
use crate::graph::{downsample_gaze, knn_build, GazeGrid, GraphConfig, NeighborGraph, NodeGrid};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::numerics::{Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GdcConfig {
    pub num_classes: usize,
    /// `(depth, channels)` per stage; stage `s` runs on the `/2^(s+2)` grid.
    pub stages: Vec<(usize, usize)>,
    pub k: usize,
    pub lambda_g: f64,
    pub normalize_knn: bool,
}

impl GdcConfig {
    pub fn graph_config(&self, use_gaze: bool) -> GraphConfig {
        GraphConfig {
            k: self.k,
            lambda_g: self.lambda_g,
            use_gaze,
        }
    }
}

/// Gaze-directed graph construction for one sample's node features.
pub fn gdgc(features: &Tensor, grid: (usize, usize), gaze: &GazeGrid, cfg: &GdcConfig) -> Result<NeighborGraph> {
    let mut nodes = NodeGrid::new(features.clone(), grid.0, grid.1)?;
    if cfg.normalize_knn {
        nodes = nodes.normalized();
    }
    knn_build(&nodes, Some(gaze), &cfg.graph_config(true))
}

/// Balance weight of the classification term in the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLossWeights {
    pub lambda_c: f64,
}

impl JointLossWeights {
    pub fn new(lambda_c: f64) -> Result<Self> {
        if !(lambda_c >= 0.0 && lambda_c.is_finite()) {
            return Err(Error::Config(format!("lambda_c must be finite and >= 0, got {lambda_c}")));
        }
        Ok(JointLossWeights { lambda_c })
    }
}

/// Graph construction inputs and outputs of one grapher block, kept for
/// inspection (graph dumps, consistency checks).
#[derive(Debug, Clone)]
pub struct GraphTrace {
    pub stage: usize,
    pub block: usize,
    pub grid: (usize, usize),
    /// `[B·N, C]` features the graph was built from (before normalization).
    pub features: Tensor,
    pub gaze: Option<Vec<GazeGrid>>,
    pub graphs: Vec<NeighborGraph>,
}

pub struct GdcOutput {
    /// `[B, num_classes]`.
    pub logits: Var,
    /// Last-stage node features `[B·N, C]`.
    pub last_features: Var,
    pub last_grid: (usize, usize),
    pub traces: Vec<GraphTrace>,
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<(Grapher, Ffn)>,
}

#[derive(Debug, Clone)]
pub struct Gdc {
    pub cfg: GdcConfig,
    stem: Stem,
    stages: Vec<Stage>,
    transitions: Vec<ConvBnRelu>,
    head: Linear,
}

impl Gdc {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: GdcConfig) -> Result<Self> {
        if cfg.num_classes < 2 {
            return Err(Error::Config("classifier needs at least two classes".into()));
        }
        let first = cfg
            .stages
            .first()
            .ok_or_else(|| Error::Config("classifier needs at least one stage".into()))?
            .1;
        let stem = Stem::new(store, rng, &format!("{name}.stem"), 1, first)?;
        let mut stages = Vec::new();
        let mut transitions = Vec::new();
        for (s, &(depth, c)) in cfg.stages.iter().enumerate() {
            if s > 0 {
                let prev = cfg.stages[s - 1].1;
                transitions.push(ConvBnRelu::new(store, rng, &format!("{name}.down{s}"), prev, c, 3, 2, false)?);
            }
            let blocks = (0..depth)
                .map(|b| {
                    Ok((
                        Grapher::new(store, rng, &format!("{name}.s{s}.b{b}.grapher"), c)?,
                        Ffn::new(store, rng, &format!("{name}.s{s}.b{b}.ffn"), c)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { blocks });
        }
        let last = cfg.stages.last().map(|s| s.1).unwrap_or(first);
        let head = Linear::new(store, rng, &format!("{name}.head"), last, cfg.num_classes)?;
        Ok(Gdc {
            cfg,
            stem,
            stages,
            transitions,
            head,
        })
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// `images: [B, 1, H, W]`; `gaze`, when present, is one `[H, W]` map per
    /// sample and switches graph construction to the fused distance.
    pub fn forward(&self, ctx: &mut Ctx, images: Var, gaze: Option<&[Tensor]>) -> Result<GdcOutput> {
        let batch = ctx.tape.shape(images)[0];
        if let Some(g) = gaze {
            if g.len() != batch {
                return Err(Error::shape("gdc_forward", &[batch], &[g.len()]));
            }
        }
        let mut x = self.stem.forward(ctx, images)?.quarter;
        let mut traces = Vec::new();
        let mut nodes = None;
        let mut grid = (0, 0);
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                x = self.transitions[s - 1].forward(ctx, x)?;
            }
            let shape = ctx.tape.shape(x).to_vec();
            grid = (shape[2], shape[3]);
            let gaze_grids = gaze
                .map(|maps| {
                    maps.iter()
                        .map(|m| downsample_gaze(m, grid.0, grid.1))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            let graph_cfg = self.cfg.graph_config(gaze_grids.is_some());
            let mut h = ctx.tape.to_nodes(x)?;
            for (b, (grapher, ffn)) in stage.blocks.iter().enumerate() {
                let mut trace = None;
                h = grapher.forward(ctx, h, &mut |f| {
                    let (nb, graphs) =
                        batch_knn(f, batch, grid, &graph_cfg, self.cfg.normalize_knn, gaze_grids.as_deref())?;
                    trace = Some(GraphTrace {
                        stage: s,
                        block: b,
                        grid,
                        features: f.clone(),
                        gaze: gaze_grids.clone(),
                        graphs,
                    });
                    Ok(nb)
                })?;
                traces.extend(trace);
                h = ffn.forward(ctx, h)?;
            }
            nodes = Some(h);
            x = ctx.tape.from_nodes(h, batch, grid.0, grid.1)?;
        }
        let last_features = match nodes {
            Some(n) => n,
            None => ctx.tape.to_nodes(x)?,
        };
        let pooled = ctx.tape.mean_pool_nodes(last_features, batch)?;
        let logits = self.head.forward(ctx, pooled)?;
        Ok(GdcOutput {
            logits,
            last_features,
            last_grid: grid,
            traces,
        })
    }
}
