//! Seeded mini-batch training with best-by-validation checkpointing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse_run_config, render_pairs, ModelConfig, TrainConfig};
use crate::data::{make_batch, record_seed, SampleRecord};
use crate::error::{Error, Result};
use crate::gdc::JointLossWeights;
use crate::model::{joint_loss, GdVig};
use crate::nn::{Ctx, ParamStore};
use crate::numerics::ops::softmax_row;
use crate::numerics::{Adam, BnOptions, Mode};

/// Blur used when a record carries fixations but no stored map.
pub fn default_gaze_sigma(image_size: usize) -> f64 {
    image_size as f64 / 32.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean generator loss; absent without a generator.
    pub loss_gmg: Option<f64>,
    pub loss_gdc: f64,
    pub loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let mut s = format!("epoch={}", self.epoch);
        if let Some(g) = self.loss_gmg {
            let _ = write!(s, " loss_gmg={g}");
        }
        let _ = write!(s, " loss_gdc={} loss={} train_acc={}", self.loss_gdc, self.loss, self.train_acc);
        if let Some(v) = self.val_acc {
            let _ = write!(s, " val_acc={v}");
        }
        s
    }
}

pub struct Trained {
    pub model: GdVig,
    /// Parameters of the selected epoch.
    pub store: ParamStore,
    pub train_cfg: TrainConfig,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl Trained {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|l| l.line() + "\n").collect()
    }
}

fn diverged(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            batch,
            source: Box::new(e),
        },
        other => other,
    }
}

/// Raw logits per record from an inference-mode forward pass.
pub fn predict_logits(
    model: &GdVig,
    store: &mut ParamStore,
    records: &[&SampleRecord],
    bn: BnOptions,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let sigma = default_gaze_sigma(model.cfg.image_size);
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk, sigma)?;
        let mut ctx = Ctx::new(store, Mode::Infer, bn).frozen();
        let fwd = model.forward(&mut ctx, &batch)?;
        let logits = ctx.tape.value(fwd.gdc.logits);
        out.extend((0..chunk.len()).map(|i| logits.row(i).to_vec()));
    }
    Ok(out)
}

/// Class probabilities per record.
pub fn predict(
    model: &GdVig,
    store: &mut ParamStore,
    records: &[&SampleRecord],
    bn: BnOptions,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let logits = predict_logits(model, store, records, bn, batch_size)?;
    Ok(logits.iter().map(|l| softmax_row(l)).collect())
}

pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Seeded split of record indices into (train, validation).
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = (fraction * n as f64).round() as usize;
    if n_val == 0 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(record_seed(seed, 0x5A1, 0)));
    let val = idx.split_off(n - n_val.min(n - 1));
    let mut train = idx;
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Trains on `records`, calling `on_epoch` after every epoch.
pub fn train(
    records: &[SampleRecord],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    for r in records {
        r.validate()?;
        if r.label >= model_cfg.num_classes {
            return Err(Error::LabelOutOfRange {
                label: r.label,
                classes: model_cfg.num_classes,
            });
        }
        if r.dims() != (model_cfg.image_size, model_cfg.image_size) {
            return Err(Error::shape(
                "train",
                &[r.dims().0, r.dims().1],
                &[model_cfg.image_size, model_cfg.image_size],
            ));
        }
    }
    let weights = JointLossWeights::new(train_cfg.lambda_c)?;
    let (model, mut store) = GdVig::build(model_cfg, train_cfg.seed)?;
    let mut adam = Adam::new(train_cfg.adam())?;
    let bn = train_cfg.bn();
    let sigma = default_gaze_sigma(model_cfg.image_size);
    let (train_idx, val_idx) = validation_split(records.len(), train_cfg.val_fraction, train_cfg.seed);
    let val: Vec<&SampleRecord> = val_idx.iter().map(|&i| &records[i]).collect();
    let val_labels: Vec<usize> = val.iter().map(|r| r.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(train_cfg.seed, 0x5B1, 0));

    let mut log = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order = train_idx.clone();
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_gmg, mut sum_gdc, mut sum_total, mut hits) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch_records: Vec<&SampleRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let batch = make_batch(&batch_records, sigma)?;
            let wrap = diverged(epoch, b + 1);
            let mut ctx = Ctx::new(&mut store, Mode::Train, bn);
            let fwd = model.forward(&mut ctx, &batch).map_err(&wrap)?;
            let terms = joint_loss(&mut ctx.tape, &fwd, &batch, weights).map_err(&wrap)?;
            let n = chunk.len() as f64;
            let total = ctx.tape.value(terms.total).item();
            if !total.is_finite() {
                return Err(wrap(Error::NonFinite { op: "joint_loss" }));
            }
            sum_total += total * n;
            sum_gdc += ctx.tape.value(terms.gdc).item() * n;
            if let Some(g) = terms.gmg {
                sum_gmg += ctx.tape.value(g).item() * n;
            }
            let logits = ctx.tape.value(fwd.gdc.logits);
            hits += (0..chunk.len()).filter(|&i| argmax(logits.row(i)) == batch.labels[i]).count();
            ctx.step(terms.total, &mut adam).map_err(&wrap)?;
        }
        let n = order.len() as f64;
        let val_acc = if val.is_empty() {
            None
        } else {
            let probs = predict(&model, &mut store, &val, bn, train_cfg.batch_size)?;
            Some(accuracy(&probs, &val_labels))
        };
        let entry = EpochLog {
            epoch,
            loss_gmg: model.gmg.as_ref().map(|_| sum_gmg / n),
            loss_gdc: sum_gdc / n,
            loss: sum_total / n,
            train_acc: hits as f64 / n,
            val_acc,
        };
        on_epoch(&entry);
        log.push(entry);
        // Later epochs win ties: tiny validation sets tie often.
        let score = val_acc.unwrap_or(0.0);
        if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
            best = Some((score, epoch, store.clone()));
        }
    }
    let (_, best_epoch, mut best_store) = best.expect("at least one epoch");
    best_store.narrow_to_f32();
    Ok(Trained {
        model,
        store: best_store,
        train_cfg: train_cfg.clone(),
        log,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub best_epoch: usize,
    pub epochs: usize,
    pub num_parameters: usize,
    /// Corpus directory the model was trained on, for per-sample exports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

/// A trained model loaded from (or about to be written to) a directory.
pub struct Checkpoint {
    pub model: GdVig,
    pub store: ParamStore,
    pub train_cfg: TrainConfig,
    pub meta: CheckpointMeta,
}

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.txt";
pub const META_FILE: &str = "meta.json";
pub const PARAMS_DIR: &str = "params";

impl Checkpoint {
    pub fn from_trained(t: Trained) -> Checkpoint {
        let meta = CheckpointMeta {
            best_epoch: t.best_epoch,
            epochs: t.log.len(),
            num_parameters: t.store.num_scalars(),
            corpus: None,
        };
        Checkpoint {
            model: t.model,
            store: t.store,
            train_cfg: t.train_cfg,
            meta,
        }
    }

    pub fn save(&self, dir: &Path, log_text: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.save(&dir.join(PARAMS_DIR))?;
        let write = |name: &str, text: &str| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write(CONFIG_FILE, &render_pairs(&[&self.model.cfg, &self.train_cfg]))?;
        write(LOG_FILE, log_text)?;
        write(META_FILE, &(serde_json::to_string_pretty(&self.meta)? + "\n"))
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let (model_cfg, train_cfg) = parse_run_config(&text)?;
        let meta_path = dir.join(META_FILE);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&meta_text)?;
        let (model, mut store) = GdVig::build(&model_cfg, train_cfg.seed)?;
        store.load_into(&dir.join(PARAMS_DIR))?;
        Ok(Checkpoint {
            model,
            store,
            train_cfg,
            meta,
        })
    }

    pub fn predict(&mut self, records: &[&SampleRecord]) -> Result<Vec<Vec<f64>>> {
        predict(&self.model, &mut self.store, records, self.train_cfg.bn(), self.train_cfg.batch_size)
    }

    pub fn predict_logits(&mut self, records: &[&SampleRecord]) -> Result<Vec<Vec<f64>>> {
        predict_logits(&self.model, &mut self.store, records, self.train_cfg.bn(), self.train_cfg.batch_size)
    }
}
