//! Non-differentiable 2-D map utilities used for gaze maps.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// Overlap-weighted average of the covered input cells.
    Area,
    Nearest,
    /// Half-pixel-centered linear interpolation, edges clamped.
    Bilinear,
}

/// Source index pair and weight of the upper one for output cell `o`.
fn linear_taps(o: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let pos = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, pos - lo as f64)
}

fn map_dims(op: &'static str, x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [h, w] => Ok((*h, *w)),
        s => Err(Error::shape(op, s, &[2])),
    }
}

/// Overlap of `[lo, hi)` with each unit input cell, as `(cell, weight)` pairs.
fn area_weights(out: usize, out_len: usize, in_len: usize) -> Vec<(usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let lo = out as f64 * scale;
    let hi = (out + 1) as f64 * scale;
    let mut weights = Vec::new();
    let mut cell = lo.floor() as usize;
    while cell < in_len && (cell as f64) < hi {
        let a = lo.max(cell as f64);
        let b = hi.min((cell + 1) as f64);
        if b > a {
            weights.push((cell, (b - a) / scale));
        }
        cell += 1;
    }
    weights
}

pub fn resample2d(x: &Tensor, out_h: usize, out_w: usize, mode: Resample) -> Result<Tensor> {
    let (h, w) = map_dims("resample2d", x)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resample2d target dims must be positive".into()));
    }
    let d = x.data();
    let out = match mode {
        Resample::Nearest => {
            let mut out = Vec::with_capacity(out_h * out_w);
            for oy in 0..out_h {
                let iy = oy * h / out_h;
                for ox in 0..out_w {
                    out.push(d[iy * w + ox * w / out_w]);
                }
            }
            out
        }
        Resample::Bilinear => {
            let rows: Vec<_> = (0..out_h).map(|o| linear_taps(o, out_h, h)).collect();
            let cols: Vec<_> = (0..out_w).map(|o| linear_taps(o, out_w, w)).collect();
            let mut out = Vec::with_capacity(out_h * out_w);
            for &(y0, y1, fy) in &rows {
                for &(x0, x1, fx) in &cols {
                    let top = d[y0 * w + x0] * (1.0 - fx) + d[y0 * w + x1] * fx;
                    let bottom = d[y1 * w + x0] * (1.0 - fx) + d[y1 * w + x1] * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
            out
        }
        Resample::Area => {
            let rows: Vec<_> = (0..out_h).map(|o| area_weights(o, out_h, h)).collect();
            let cols: Vec<_> = (0..out_w).map(|o| area_weights(o, out_w, w)).collect();
            let (lo, hi) = (x.min(), x.max());
            let mut out = Vec::with_capacity(out_h * out_w);
            for ry in &rows {
                for rx in &cols {
                    let mut s = 0.0;
                    for &(iy, wy) in ry {
                        for &(ix, wx) in rx {
                            s += wy * wx * d[iy * w + ix];
                        }
                    }
                    out.push(s.clamp(lo, hi));
                }
            }
            out
        }
    };
    Tensor::new(&[out_h, out_w], out)
}

/// Index into `[0, n)` with symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized 1-D Gaussian weights with radius `ceil(3·sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of an `[H, W]` map with reflected borders.
pub fn gaussian_blur2d(x: &Tensor, sigma: f64) -> Result<Tensor> {
    let (h, w) = map_dims("gaussian_blur2d", x)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let d = x.data();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            tmp[y * w + xx] = kernel
                .iter()
                .enumerate()
                .map(|(t, kv)| kv * d[y * w + reflect(xx as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            out[y * w + xx] = kernel
                .iter()
                .enumerate()
                .map(|(t, kv)| kv * tmp[reflect(y as isize + t as isize - r, h) * w + xx])
                .sum();
        }
    }
    Tensor::new(&[h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_symmetrically() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 3)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 2, 1, 0, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn constant_map_survives_resample_both_ways() {
        let x = Tensor::full(&[6, 4], 0.3);
        for (h, w) in [(1, 1), (3, 2), (12, 8), (5, 7)] {
            for mode in [Resample::Area, Resample::Nearest, Resample::Bilinear] {
                let y = resample2d(&x, h, w, mode).unwrap();
                assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
            }
        }
        let up = resample2d(&x, 12, 8, Resample::Nearest).unwrap();
        let back = resample2d(&up, 6, 4, Resample::Area).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn bilinear_doubling_of_a_ramp() {
        let x = Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap();
        let y = resample2d(&x, 1, 4, Resample::Bilinear).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn area_average_of_diagonal() {
        let x = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = resample2d(&x, 1, 1, Resample::Area).unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn resample_stays_within_input_range() {
        let x = Tensor::from_fn(&[7, 5], |i| ((i * 37) % 11) as f64 / 10.0);
        for mode in [Resample::Area, Resample::Nearest, Resample::Bilinear] {
            let y = resample2d(&x, 3, 4, mode).unwrap();
            assert!(y.min() >= x.min() && y.max() <= x.max());
        }
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let x = Tensor::full(&[5, 9], 0.8);
        let y = gaussian_blur2d(&x, 2.5).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
        assert!((y.sum() - x.sum()).abs() / x.sum() < 1e-6);
    }

    #[test]
    fn impulse_peak_is_squared_kernel_peak() {
        let mut x = Tensor::zeros(&[15, 15]);
        x.data_mut()[7 * 15 + 7] = 1.0;
        let y = gaussian_blur2d(&x, 1.0).unwrap();
        // Analytic 1-D peak: 1 / Σ_{i=-3..3} exp(-i²/2).
        let norm: f64 = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).sum();
        let peak = 1.0 / norm;
        assert!((y.data()[7 * 15 + 7] - peak * peak).abs() < 1e-15);
        assert!(y.max() <= x.max());
    }

    #[test]
    fn rejects_bad_sigma() {
        let x = Tensor::zeros(&[3, 3]);
        assert!(gaussian_blur2d(&x, 0.0).is_err());
        assert!(gaussian_blur2d(&x, -1.0).is_err());
    }
}
