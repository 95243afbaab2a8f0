//! The end-to-end model: generator → generated gaze map → gaze-directed classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{GazeSource, ModelConfig};
use crate::error::{Error, Result};
use crate::gdc::{Gdc, GdcConfig, GdcOutput, JointLossWeights};
use crate::gmg::{Gmg, GmgConfig};
use crate::nn::{Ctx, ParamStore};
use crate::numerics::{Tape, Tensor, Var};

/// One mini-batch. `gaze_targets` is required whenever the generator is
/// trained or the gaze source is the oracle.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, 1, H, W]` in `[0, 1]`.
    pub images: Tensor,
    /// `[B, 1, H, W]` ground-truth gaze maps.
    pub gaze_targets: Option<Tensor>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct GdVig {
    pub cfg: ModelConfig,
    pub gmg: Option<Gmg>,
    pub gdc: Gdc,
}

pub struct ForwardOut {
    /// Generated maps `[B, 1, H, W]`, when the generator is present.
    pub gaze_pred: Option<Var>,
    /// The per-sample `[H, W]` maps handed to graph construction.
    pub gaze_used: Option<Vec<Tensor>>,
    pub gdc: GdcOutput,
}

pub struct LossTerms {
    pub total: Var,
    pub gmg: Option<Var>,
    pub gdc: Var,
}

impl GdVig {
    /// Builds the networks and their freshly initialized parameters.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<(GdVig, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gmg = match cfg.gaze_source {
            GazeSource::None => None,
            _ => Some(Gmg::new(
                &mut store,
                &mut rng,
                "gmg",
                GmgConfig {
                    variant: cfg.gmg_variant,
                    encoder_depth: cfg.gmg_depth,
                    base_channels: cfg.gmg_channels,
                    k: cfg.k,
                    normalize_knn: cfg.normalize_knn,
                },
            )?),
        };
        let gdc = Gdc::new(
            &mut store,
            &mut rng,
            "gdc",
            GdcConfig {
                num_classes: cfg.num_classes,
                stages: cfg.gdc_depths.iter().copied().zip(cfg.gdc_channels.iter().copied()).collect(),
                k: cfg.k,
                lambda_g: cfg.lambda_g,
                normalize_knn: cfg.normalize_knn,
            },
        )?;
        Ok((
            GdVig {
                cfg: cfg.clone(),
                gmg,
                gdc,
            },
            store,
        ))
    }

    pub fn forward(&self, ctx: &mut Ctx, batch: &Batch) -> Result<ForwardOut> {
        let s = batch.images.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != self.cfg.image_size || s[3] != self.cfg.image_size {
            return Err(Error::shape("gdvig_forward", s, &[s[0], 1, self.cfg.image_size, self.cfg.image_size]));
        }
        if batch.labels.len() != s[0] {
            return Err(Error::shape("gdvig_forward", s, &[batch.labels.len()]));
        }
        let (h, w) = (s[2], s[3]);
        let images = ctx.tape.constant(batch.images.clone());
        let gaze_pred = self.gmg.as_ref().map(|g| g.forward(ctx, images)).transpose()?;
        let per_sample = |t: &Tensor| -> Result<Vec<Tensor>> {
            (0..s[0]).map(|b| t.slice_outer(b).reshape(&[h, w])).collect()
        };
        let gaze_used = match self.cfg.gaze_source {
            GazeSource::None => None,
            GazeSource::Generated => {
                let pred = gaze_pred.expect("generator present");
                Some(per_sample(ctx.tape.value(pred))?)
            }
            GazeSource::Oracle => {
                let t = batch
                    .gaze_targets
                    .as_ref()
                    .ok_or_else(|| Error::Config("oracle gaze source needs ground-truth gaze maps".into()))?;
                Some(per_sample(t)?)
            }
        };
        let gdc = self.gdc.forward(ctx, images, gaze_used.as_deref())?;
        Ok(ForwardOut {
            gaze_pred,
            gaze_used,
            gdc,
        })
    }
}

/// `L = L_GMG + λ_c · L_GDC`; without a generator only `λ_c · L_GDC` remains.
pub fn joint_loss(tape: &mut Tape, out: &ForwardOut, batch: &Batch, weights: JointLossWeights) -> Result<LossTerms> {
    let gdc = tape.cross_entropy(out.gdc.logits, &batch.labels)?;
    let scaled = tape.scale(gdc, weights.lambda_c)?;
    let Some(pred) = out.gaze_pred else {
        return Ok(LossTerms {
            total: scaled,
            gmg: None,
            gdc,
        });
    };
    let target = batch
        .gaze_targets
        .as_ref()
        .ok_or_else(|| Error::Config("generator loss needs ground-truth gaze maps".into()))?;
    let target = tape.constant(target.clone());
    let gmg = tape.mse_loss(pred, target)?;
    let total = tape.add(gmg, scaled)?;
    Ok(LossTerms {
        total,
        gmg: Some(gmg),
        gdc,
    })
}
