//! Grad-CAM over the classifier's last-stage node grid.

use std::fs;
use std::path::Path;

use crate::data::{make_batch, SampleRecord};
use crate::error::{Error, Result};
use crate::harness::train::{argmax, default_gaze_sigma};
use crate::model::GdVig;
use crate::nn::{Ctx, ParamStore};
use crate::numerics::io::write_tensor;
use crate::numerics::{resample2d, BnOptions, Mode, Resample, Tensor};

/// Grad-CAM from node features `[N, C]` and their gradients on a `gh × gw`
/// grid: channel weights are the mean gradient, the map is the ReLU of the
/// weighted channel sum, bilinearly upsampled to `h × w` and min-max
/// normalized. A constant map comes back as all zeros.
pub fn cam_from_grads(features: &[f64], grads: &[f64], grid: (usize, usize), channels: usize, out: (usize, usize)) -> Result<Tensor> {
    let n = grid.0 * grid.1;
    if features.len() != n * channels || grads.len() != n * channels {
        return Err(Error::shape("grad_cam", &[features.len(), grads.len()], &[n * channels]));
    }
    let mut alpha = vec![0.0; channels];
    for row in grads.chunks_exact(channels) {
        alpha.iter_mut().zip(row).for_each(|(a, g)| *a += g / n as f64);
    }
    let cam: Vec<f64> = features
        .chunks_exact(channels)
        .map(|row| row.iter().zip(&alpha).map(|(f, a)| f * a).sum::<f64>().max(0.0))
        .collect();
    let up = resample2d(&Tensor::new(&[grid.0, grid.1], cam)?, out.0, out.1, Resample::Bilinear)?;
    Ok(min_max(up))
}

fn min_max(mut t: Tensor) -> Tensor {
    let (lo, hi) = (t.min(), t.max());
    let span = hi - lo;
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = if span > 0.0 { (*v - lo) / span } else { 0.0 });
    t
}

/// Per-sample heatmaps for the predicted class, `[H, W]` in `[0, 1]`.
pub fn grad_cam(model: &GdVig, store: &mut ParamStore, records: &[&SampleRecord], bn: BnOptions) -> Result<Vec<Tensor>> {
    let batch = make_batch(records, default_gaze_sigma(model.cfg.image_size))?;
    let b = batch.len();
    let (h, w) = records[0].dims();
    let mut ctx = Ctx::new(store, Mode::Infer, bn);
    let fwd = model.forward(&mut ctx, &batch)?;
    let logits = ctx.tape.value(fwd.gdc.logits).clone();
    let classes = logits.shape()[1];
    // Samples are independent in inference mode, so one backward pass from
    // the sum of the selected logits yields every per-sample gradient.
    let mut seed = vec![0.0; b * classes];
    for i in 0..b {
        seed[i * classes + argmax(logits.row(i))] = 1.0;
    }
    let grads = ctx.tape.backward_with(fwd.gdc.logits, seed)?;
    let feats = ctx.tape.value(fwd.gdc.last_features);
    let g = grads
        .get(fwd.gdc.last_features)
        .ok_or_else(|| Error::Structure("no gradient reached the last-stage features".into()))?;
    let c = feats.shape()[1];
    let per = fwd.gdc.last_grid.0 * fwd.gdc.last_grid.1 * c;
    (0..b)
        .map(|i| {
            let span = i * per..(i + 1) * per;
            cam_from_grads(&feats.data()[span.clone()], &g[span], fwd.gdc.last_grid, c, (h, w))
        })
        .collect()
}

/// First index of the maximum.
pub fn argmax_cell(map: &Tensor) -> usize {
    argmax(map.data())
}

/// Whether the heatmap's argmax pixel lies inside the record's lesion mask.
pub fn argmax_in_lesion(map: &Tensor, record: &SampleRecord) -> Option<bool> {
    record.lesion_mask.as_ref().map(|m| m.data()[argmax_cell(map)] > 0.5)
}

/// Binary PGM (P5, maxval 255) of a `[H, W]` map in `[0, 1]`.
pub fn to_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match map.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::shape("to_pgm", s, &[2])),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Writes `<stem>.pgm` and `<stem>.gdvt` into `dir`.
pub fn write_heatmap(dir: &Path, stem: &str, map: &Tensor) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pgm = dir.join(format!("{stem}.pgm"));
    fs::write(&pgm, to_pgm(map)?).map_err(|e| Error::io(&pgm, e))?;
    write_tensor(&dir.join(format!("{stem}.gdvt")), map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_features_give_all_zero_map() {
        let feats = vec![0.7; 4 * 3];
        let grads: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let cam = cam_from_grads(&feats, &grads, (2, 2), 3, (8, 8)).unwrap();
        assert_eq!(cam.shape(), &[8, 8]);
        assert!(cam.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cam_is_normalized_and_peaks_at_the_hot_cell() {
        let mut feats = vec![0.0; 4 * 2];
        feats[3 * 2] = 5.0;
        feats[2] = 1.0;
        let grads = vec![1.0; 8];
        let cam = cam_from_grads(&feats, &grads, (2, 2), 2, (4, 4)).unwrap();
        assert_eq!(cam.max(), 1.0);
        assert_eq!(cam.min(), 0.0);
        assert_eq!(argmax_cell(&cam), 15);
    }

    #[test]
    fn pgm_header_and_payload() {
        let m = Tensor::new(&[1, 3], vec![0.0, 0.5, 1.0]).unwrap();
        let bytes = to_pgm(&m).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255]);
    }
}
