//! Network blocks shared by the generator and the classifier.
//!
//! Every block is residual and its last learned layer can be zeroed to make
//! the block an exact identity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, Ctx, Linear, ParamStore};
use crate::numerics::{Tensor, Var};

/// Neighbor lists for a batch of node rows: `(k, flat row-major indices)`.
pub type BatchNeighbors = (usize, Vec<usize>);

/// 3×3 (or 1×1) convolution, batch norm, optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        relu: bool,
    ) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv::new(store, rng, &format!("{name}.conv"), cin, cout, k, stride, false)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout)?,
            relu,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        if self.relu {
            ctx.tape.relu(y)
        } else {
            Ok(y)
        }
    }
}

/// Init scale of the last layer in each residual branch, so a fresh block
/// starts close to the identity.
pub const RESIDUAL_INIT_SCALE: f64 = 0.1;

fn shrink(store: &mut ParamStore, name: &str) -> Result<()> {
    store
        .get_mut(name)?
        .data_mut()
        .iter_mut()
        .for_each(|v| *v *= RESIDUAL_INIT_SCALE);
    Ok(())
}

/// Neighbor fusion: `X' = W2(GC(relu(W1 X))) + X` over `[M, C]` node rows.
#[derive(Debug, Clone)]
pub struct Grapher {
    pub w1: Linear,
    pub w2: Linear,
}

impl Grapher {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Result<Self> {
        let w2 = Linear::new(store, rng, &format!("{name}.w2"), 2 * channels, channels)?;
        shrink(store, &w2.weight)?;
        Ok(Grapher {
            w1: Linear::new(store, rng, &format!("{name}.w1"), channels, channels)?,
            w2,
        })
    }

    /// `build_graph` receives the node features that enter the graph
    /// convolution and returns the neighbor lists to aggregate over.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        x: Var,
        build_graph: &mut dyn FnMut(&Tensor) -> Result<BatchNeighbors>,
    ) -> Result<Var> {
        let h = self.w1.forward(ctx, x)?;
        let h = ctx.tape.relu(h)?;
        let (k, neighbors) = build_graph(ctx.tape.value(h))?;
        let g = ctx.tape.max_relative_gc(h, &neighbors, k)?;
        let y = self.w2.forward(ctx, g)?;
        ctx.tape.add(y, x)
    }
}

/// Feature transform: `Y = W4(relu(W3 X')) + X'` with a 4× hidden width.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub w3: Linear,
    pub w4: Linear,
}

pub const FFN_EXPANSION: usize = 4;

impl Ffn {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Result<Self> {
        let hidden = FFN_EXPANSION * channels;
        let w3 = Linear::new(store, rng, &format!("{name}.w3"), channels, hidden)?;
        let w4 = Linear::new(store, rng, &format!("{name}.w4"), hidden, channels)?;
        shrink(store, &w4.weight)?;
        Ok(Ffn { w3, w4 })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.w3.forward(ctx, x)?;
        let h = ctx.tape.relu(h)?;
        let y = self.w4.forward(ctx, h)?;
        ctx.tape.add(y, x)
    }
}

/// `Z = Conv2(Conv1(Y)) + Y`, each conv a channel-preserving 3×3 conv-BN-ReLU.
#[derive(Debug, Clone)]
pub struct CnnBlock {
    pub conv1: ConvBnRelu,
    pub conv2: ConvBnRelu,
}

impl CnnBlock {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Result<Self> {
        Ok(CnnBlock {
            conv1: ConvBnRelu::new(store, rng, &format!("{name}.conv1"), channels, channels, 3, 1, true)?,
            conv2: ConvBnRelu::new(store, rng, &format!("{name}.conv2"), channels, channels, 3, 1, true)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, y: Var) -> Result<Var> {
        let z = self.conv1.forward(ctx, y)?;
        let z = self.conv2.forward(ctx, z)?;
        ctx.tape.add(z, y)
    }
}

/// Two stride-2 conv-BN-ReLU stages, `1 → C/2 → C` channels, `/4` spatially.
#[derive(Debug, Clone)]
pub struct Stem {
    pub conv1: ConvBnRelu,
    pub conv2: ConvBnRelu,
}

/// Outputs of [`Stem::forward`]: the `/2` intermediate and the `/4` features.
pub struct StemOut {
    pub half: Var,
    pub quarter: Var,
}

impl Stem {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        channels: usize,
    ) -> Result<Self> {
        if channels < 2 || channels % 2 != 0 {
            return Err(Error::Config(format!("stem channels {channels} must be even and >= 2")));
        }
        Ok(Stem {
            conv1: ConvBnRelu::new(store, rng, &format!("{name}.conv1"), in_channels, channels / 2, 3, 2, true)?,
            conv2: ConvBnRelu::new(store, rng, &format!("{name}.conv2"), channels / 2, channels, 3, 2, true)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, image: Var) -> Result<StemOut> {
        let s = ctx.tape.shape(image).to_vec();
        if s.len() != 4 || s[2] % 16 != 0 || s[3] % 16 != 0 {
            return Err(Error::Config(format!("image dims {s:?} must be [B, C, H, W] with H, W divisible by 16")));
        }
        let half = self.conv1.forward(ctx, image)?;
        let quarter = self.conv2.forward(ctx, half)?;
        Ok(StemOut { half, quarter })
    }
}
