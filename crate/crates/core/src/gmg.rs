//! Gaze map generator: a graph encoder at `/4` and `/8` resolution followed by
//! a convolutional decoder with skip connections and a sigmoid head.

use rand::Rng;

use crate::blocks::{BatchNeighbors, CnnBlock, ConvBnRelu, Ffn, Grapher, Stem};
use crate::config::GmgVariant;
use crate::error::{Error, Result};
use crate::graph::{knn_build, GazeGrid, GraphConfig, NeighborGraph, NodeGrid};
use crate::nn::{BatchNorm, Conv, Ctx, ParamStore};
use crate::numerics::{Tensor, Var};

/// An `H × W` attention map with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeMap(Tensor);

impl GazeMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::shape("gaze_map", values.shape(), &[2]));
        }
        if let Some(v) = values.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("gaze map value {v} outside [0, 1]")));
        }
        Ok(GazeMap(values))
    }

    pub fn uniform(h: usize, w: usize, value: f64) -> Result<Self> {
        Self::new(Tensor::full(&[h, w], value))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.0.shape()[0], self.0.shape()[1])
    }
}

/// Mean squared error between a generated and a ground-truth map.
pub fn gmg_loss(gm: &GazeMap, gm_hat: &GazeMap) -> Result<f64> {
    if gm.dims() != gm_hat.dims() {
        return Err(Error::shape("gmg_loss", gm.0.shape(), gm_hat.0.shape()));
    }
    let n = gm.0.len() as f64;
    Ok(gm
        .0
        .data()
        .iter()
        .zip(gm_hat.0.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmgConfig {
    pub variant: GmgVariant,
    pub encoder_depth: usize,
    pub base_channels: usize,
    pub k: usize,
    pub normalize_knn: bool,
}

/// Builds per-sample KNN graphs over a batch of node rows and returns them as
/// batch-global neighbor lists. `gaze`, when given, holds one grid per sample.
pub fn batch_knn(
    features: &Tensor,
    batch: usize,
    grid: (usize, usize),
    cfg: &GraphConfig,
    normalize: bool,
    gaze: Option<&[GazeGrid]>,
) -> Result<(BatchNeighbors, Vec<NeighborGraph>)> {
    let n = grid.0 * grid.1;
    let c = features.shape()[1];
    if features.shape()[0] != batch * n {
        return Err(Error::shape("batch_knn", features.shape(), &[batch * n, c]));
    }
    let mut flat = Vec::with_capacity(batch * n * cfg.k);
    let mut graphs = Vec::with_capacity(batch);
    for b in 0..batch {
        let rows = Tensor::new(&[n, c], features.data()[b * n * c..(b + 1) * n * c].to_vec())?;
        let mut nodes = NodeGrid::new(rows, grid.0, grid.1)?;
        if normalize {
            nodes = nodes.normalized();
        }
        let g = knn_build(&nodes, gaze.map(|g| &g[b]), cfg)?;
        flat.extend(g.as_flat().iter().map(|j| j + b * n));
        graphs.push(g);
    }
    Ok(((cfg.k, flat), graphs))
}

#[derive(Debug, Clone)]
enum EncoderBlock {
    Graph(Grapher, Ffn),
    Cnn(CnnBlock),
}

impl EncoderBlock {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize, variant: GmgVariant) -> Result<Self> {
        Ok(match variant {
            GmgVariant::CnnOnly => EncoderBlock::Cnn(CnnBlock::new(store, rng, name, c)?),
            _ => EncoderBlock::Graph(
                Grapher::new(store, rng, &format!("{name}.grapher"), c)?,
                Ffn::new(store, rng, &format!("{name}.ffn"), c)?,
            ),
        })
    }

    fn forward(&self, ctx: &mut Ctx, x: Var, k: usize, normalize: bool) -> Result<Var> {
        match self {
            EncoderBlock::Cnn(b) => b.forward(ctx, x),
            EncoderBlock::Graph(grapher, ffn) => {
                let s = ctx.tape.shape(x).to_vec();
                let (batch, h, w) = (s[0], s[2], s[3]);
                let cfg = GraphConfig {
                    k,
                    lambda_g: 0.0,
                    use_gaze: false,
                };
                let nodes = ctx.tape.to_nodes(x)?;
                let y = grapher.forward(ctx, nodes, &mut |f| {
                    batch_knn(f, batch, (h, w), &cfg, normalize, None).map(|(nb, _)| nb)
                })?;
                let y = ffn.forward(ctx, y)?;
                ctx.tape.from_nodes(y, batch, h, w)
            }
        }
    }
}

/// Initial head bias: sigmoid(-3) ≈ 0.05, the scale of a sparse gaze map.
pub const HEAD_BIAS_INIT: f64 = -3.0;

#[derive(Debug, Clone)]
pub struct Gmg {
    pub cfg: GmgConfig,
    stem: Stem,
    enc_quarter: Vec<EncoderBlock>,
    transition: ConvBnRelu,
    enc_eighth: Vec<EncoderBlock>,
    dec_eighth: Option<CnnBlock>,
    proj_eighth: ConvBnRelu,
    dec_quarter: Option<CnnBlock>,
    proj_quarter: ConvBnRelu,
    dec_half: Option<CnnBlock>,
    dec_full: Option<CnnBlock>,
    head_norm: BatchNorm,
    head: Conv,
}

impl Gmg {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: GmgConfig) -> Result<Self> {
        let c = cfg.base_channels;
        if c < 4 || c % 4 != 0 {
            return Err(Error::Config(format!("generator channels {c} must be a multiple of 4")));
        }
        let enc = |store: &mut ParamStore, rng: &mut _, tag: &str, ch: usize| -> Result<Vec<EncoderBlock>> {
            (0..cfg.encoder_depth)
                .map(|i| EncoderBlock::new(store, rng, &format!("{name}.{tag}.{i}"), ch, cfg.variant))
                .collect()
        };
        let stem = Stem::new(store, rng, &format!("{name}.stem"), 1, c)?;
        let enc_quarter = enc(store, rng, "enc4", c)?;
        let transition = ConvBnRelu::new(store, rng, &format!("{name}.down"), c, 2 * c, 3, 2, true)?;
        let enc_eighth = enc(store, rng, "enc8", 2 * c)?;
        let with_cnn = cfg.variant != GmgVariant::GnnOnly;
        let dec = |store: &mut ParamStore, rng: &mut _, tag: &str, ch: usize| -> Result<Option<CnnBlock>> {
            with_cnn
                .then(|| CnnBlock::new(store, rng, &format!("{name}.{tag}"), ch))
                .transpose()
        };
        let dec_eighth = dec(store, rng, "dec8", 2 * c)?;
        let proj_eighth = ConvBnRelu::new(store, rng, &format!("{name}.proj8"), 2 * c, c, 1, 1, true)?;
        let dec_quarter = dec(store, rng, "dec4", c)?;
        let proj_quarter = ConvBnRelu::new(store, rng, &format!("{name}.proj4"), c, c / 2, 1, 1, true)?;
        let dec_half = dec(store, rng, "dec2", c / 2)?;
        let dec_full = dec(store, rng, "dec1", c / 2)?;
        let head_norm = BatchNorm::new(store, &format!("{name}.head_norm"), c / 2)?;
        let head = Conv::new(store, rng, &format!("{name}.head"), c / 2, 1, 1, 1, true)?;
        // Start near a sparse map instead of uniform 0.5.
        if let Some(b) = &head.bias {
            store.get_mut(b)?.data_mut().fill(HEAD_BIAS_INIT);
        }
        Ok(Gmg {
            cfg,
            stem,
            enc_quarter,
            transition,
            enc_eighth,
            dec_eighth,
            proj_eighth,
            dec_quarter,
            proj_quarter,
            dec_half,
            dec_full,
            head_norm,
            head,
        })
    }

    pub fn head_names(&self) -> (String, Option<String>) {
        (self.head.weight.clone(), self.head.bias.clone())
    }

    /// `images: [B, 1, H, W]` → gaze maps `[B, 1, H, W]` in `(0, 1)`.
    pub fn forward(&self, ctx: &mut Ctx, images: Var) -> Result<Var> {
        let (k, norm) = (self.cfg.k, self.cfg.normalize_knn);
        let stem = self.stem.forward(ctx, images)?;
        let mut e4 = stem.quarter;
        for b in &self.enc_quarter {
            e4 = b.forward(ctx, e4, k, norm)?;
        }
        let mut e8 = self.transition.forward(ctx, e4)?;
        for b in &self.enc_eighth {
            e8 = b.forward(ctx, e8, k, norm)?;
        }

        let maybe = |ctx: &mut Ctx, block: &Option<CnnBlock>, x: Var| match block {
            Some(b) => b.forward(ctx, x),
            None => Ok(x),
        };
        let mut d = maybe(ctx, &self.dec_eighth, e8)?;
        d = self.proj_eighth.forward(ctx, d)?;
        d = ctx.tape.upsample_nearest(d, 2)?;
        d = ctx.tape.add(d, e4)?;
        d = maybe(ctx, &self.dec_quarter, d)?;
        d = self.proj_quarter.forward(ctx, d)?;
        d = ctx.tape.upsample_nearest(d, 2)?;
        d = ctx.tape.add(d, stem.half)?;
        d = maybe(ctx, &self.dec_half, d)?;
        d = ctx.tape.upsample_nearest(d, 2)?;
        d = maybe(ctx, &self.dec_full, d)?;
        d = self.head_norm.forward(ctx, d)?;
        d = ctx.tape.relu(d)?;
        let logits = self.head.forward(ctx, d)?;
        ctx.tape.sigmoid(logits)
    }
}
