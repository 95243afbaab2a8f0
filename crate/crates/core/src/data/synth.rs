//! Synthetic corpus: textured backgrounds, small low-contrast lesions, an
//! oracle gaze map per image and an optional corner token whose presence is
//! correlated with the label at a controllable strength.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{apply_pairs, parse_pairs, parse_value, KvSection};
use crate::data::gaze::{fixations_to_gaze_map, normalize_max, Fixation};
use crate::data::{Corpus, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::numerics::{gaussian_blur2d, Tensor};

/// Smallest and largest lesion area as a fraction of the image.
pub const LESION_FRACTION: (f64, f64) = (0.01, 0.04);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl std::str::FromStr for Corner {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "top_left" => Ok(Corner::TopLeft),
            "top_right" => Ok(Corner::TopRight),
            "bottom_left" => Ok(Corner::BottomLeft),
            "bottom_right" => Ok(Corner::BottomRight),
            _ => Err(format!("unknown corner {s}")),
        }
    }
}

impl std::fmt::Display for Corner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Corner::TopLeft => "top_left",
            Corner::TopRight => "top_right",
            Corner::BottomLeft => "bottom_left",
            Corner::BottomRight => "bottom_right",
        })
    }
}

/// Metadata of a stamped shortcut token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortcutCue {
    pub corner: Corner,
    pub intensity: f64,
    pub size: usize,
    /// True when the token sits on a lesion-bearing image, i.e. agrees with a
    /// positive token/label correlation.
    pub correlated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub classes: usize,
    /// Lesion radius range in pixels; `0` derives it from [`LESION_FRACTION`].
    pub lesion_radius_min: f64,
    pub lesion_radius_max: f64,
    pub lesion_contrast_min: f64,
    pub lesion_contrast_max: f64,
    pub shortcut: bool,
    pub train_correlation: f64,
    pub test_correlation: f64,
    pub token_size: usize,
    pub token_intensity: f64,
    pub token_corner: Corner,
    pub noise_sigma: f64,
    /// Gaze blur sigma in pixels; `0` means `image_size / 32`.
    pub gaze_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_train: 64,
            n_test: 64,
            image_size: 32,
            classes: 2,
            lesion_radius_min: 0.0,
            lesion_radius_max: 0.0,
            lesion_contrast_min: 0.15,
            lesion_contrast_max: 0.25,
            shortcut: false,
            train_correlation: 0.0,
            test_correlation: 0.0,
            token_size: 3,
            token_intensity: 1.0,
            token_corner: Corner::TopLeft,
            noise_sigma: 0.03,
            gaze_sigma: 0.0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    /// Reads a flat `key = value` spec file; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = CorpusSpec::default();
        apply_pairs(&parse_pairs(text)?, &mut [&mut spec])?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_train == 0 || self.n_test == 0 || self.image_size == 0 {
            return fail("n_train, n_test and image_size must be positive");
        }
        if !(2..=3).contains(&self.classes) {
            return fail("classes must be 2 (absent/present) or 3 (absent/bright/dark)");
        }
        for r in [self.train_correlation, self.test_correlation] {
            if !(-1.0..=1.0).contains(&r) {
                return fail("correlations must lie in [-1, 1]");
            }
        }
        if self.lesion_radius_min < 0.0 || self.lesion_radius_max < self.lesion_radius_min {
            return fail("lesion radius range is empty");
        }
        if !(0.0 < self.lesion_contrast_min && self.lesion_contrast_min <= self.lesion_contrast_max) {
            return fail("lesion contrast range must be positive and ordered");
        }
        if self.shortcut && (self.token_size == 0 || 2 * (self.token_size + 1) > self.image_size) {
            return fail("token does not fit the image");
        }
        if !(0.0..=1.0).contains(&self.token_intensity) || self.noise_sigma < 0.0 || self.gaze_sigma < 0.0 {
            return fail("token intensity must be in [0, 1], sigmas non-negative");
        }
        Ok(())
    }

    pub fn gaze_sigma(&self) -> f64 {
        if self.gaze_sigma > 0.0 {
            self.gaze_sigma
        } else {
            self.image_size as f64 / 32.0
        }
    }

    /// Radius range, derived from the pixel-fraction bounds when unset.
    pub fn radius_range(&self) -> (f64, f64) {
        if self.lesion_radius_max > 0.0 {
            return (self.lesion_radius_min, self.lesion_radius_max);
        }
        let area = (self.image_size * self.image_size) as f64;
        let r = |f: f64| (f * area / PI).sqrt();
        (r(LESION_FRACTION.0) * 1.05, r(LESION_FRACTION.1) * 0.95)
    }
}

impl KvSection for CorpusSpec {
    fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n_train" => self.n_train = parse_value(key, value)?,
            "n_test" => self.n_test = parse_value(key, value)?,
            "image_size" => self.image_size = parse_value(key, value)?,
            "classes" => self.classes = parse_value(key, value)?,
            "lesion_radius_min" => self.lesion_radius_min = parse_value(key, value)?,
            "lesion_radius_max" => self.lesion_radius_max = parse_value(key, value)?,
            "lesion_contrast_min" => self.lesion_contrast_min = parse_value(key, value)?,
            "lesion_contrast_max" => self.lesion_contrast_max = parse_value(key, value)?,
            "shortcut" => self.shortcut = parse_value(key, value)?,
            "train_correlation" => self.train_correlation = parse_value(key, value)?,
            "test_correlation" => self.test_correlation = parse_value(key, value)?,
            "token_size" => self.token_size = parse_value(key, value)?,
            "token_intensity" => self.token_intensity = parse_value(key, value)?,
            "token_corner" => self.token_corner = parse_value(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_value(key, value)?,
            "gaze_sigma" => self.gaze_sigma = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("image_size", self.image_size.to_string()),
            ("classes", self.classes.to_string()),
            ("lesion_radius_min", self.lesion_radius_min.to_string()),
            ("lesion_radius_max", self.lesion_radius_max.to_string()),
            ("lesion_contrast_min", self.lesion_contrast_min.to_string()),
            ("lesion_contrast_max", self.lesion_contrast_max.to_string()),
            ("shortcut", self.shortcut.to_string()),
            ("train_correlation", self.train_correlation.to_string()),
            ("test_correlation", self.test_correlation.to_string()),
            ("token_size", self.token_size.to_string()),
            ("token_intensity", self.token_intensity.to_string()),
            ("token_corner", self.token_corner.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("gaze_sigma", self.gaze_sigma.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// SplitMix64 finalizer over `(seed, stream, index)`, so every record gets an
/// independent stream regardless of generation order.
pub fn record_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn narrow(t: Tensor) -> Tensor {
    let shape = t.shape().to_vec();
    let data = t.into_data().into_iter().map(|v| v as f32 as f64).collect();
    Tensor::new(&shape, data).expect("same shape")
}

fn background(rng: &mut ChaCha8Rng, n: usize, noise_sigma: f64) -> Vec<f64> {
    // A few low-frequency plane waves give every image a distinct, smooth texture.
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..2.0 * PI);
            let freq = rng.random_range(0.5..2.5) * 2.0 * PI / n as f64;
            (freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.02..0.06))
        })
        .collect();
    let noise = Normal::new(0.0, noise_sigma.max(1e-12)).expect("finite sigma");
    let mut img = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut v = 0.45;
            for &(fx, fy, phase, amp) in &waves {
                v += amp * (fx * x as f64 + fy * y as f64 + phase).sin();
            }
            if noise_sigma > 0.0 {
                v += noise.sample(rng);
            }
            img[y * n + x] = v;
        }
    }
    img
}

struct Lesion {
    mask: Vec<f64>,
    profile: Vec<f64>,
}

fn place_lesion(rng: &mut ChaCha8Rng, spec: &CorpusSpec) -> Result<Lesion> {
    let n = spec.image_size;
    let (rmin, rmax) = spec.radius_range();
    let area = (n * n) as f64;
    for _ in 0..256 {
        let r = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
        let margin = r.ceil() + 1.0;
        if 2.0 * margin >= n as f64 {
            break;
        }
        let cy = rng.random_range(margin..n as f64 - margin);
        let cx = rng.random_range(margin..n as f64 - margin);
        let sigma = r / 1.5;
        let mut mask = vec![0.0; n * n];
        let mut profile = vec![0.0; n * n];
        let mut count = 0usize;
        for y in 0..n {
            for x in 0..n {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                if d2 <= r * r {
                    mask[y * n + x] = 1.0;
                    count += 1;
                }
                profile[y * n + x] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        let frac = count as f64 / area;
        if (LESION_FRACTION.0..=LESION_FRACTION.1).contains(&frac) {
            return Ok(Lesion { mask, profile });
        }
    }
    Err(Error::Config(format!(
        "cannot place a lesion covering {:?} of a {n}x{n} image with radius range {:?}",
        LESION_FRACTION,
        spec.radius_range()
    )))
}

fn stamp_token(img: &mut [f64], n: usize, size: usize, corner: Corner, intensity: f64) {
    let (y0, x0) = match corner {
        Corner::TopLeft => (1, 1),
        Corner::TopRight => (1, n - 1 - size),
        Corner::BottomLeft => (n - 1 - size, 1),
        Corner::BottomRight => (n - 1 - size, n - 1 - size),
    };
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            img[y * n + x] = intensity;
        }
    }
}

fn generate_record(spec: &CorpusSpec, split: Split, index: usize) -> Result<SampleRecord> {
    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(spec.seed, stream, index as u64));
    let n = spec.image_size;
    let label = index % spec.classes;
    let mut img = background(&mut rng, n, spec.noise_sigma);
    let sigma = spec.gaze_sigma();

    let (gaze_map, fixations, lesion_mask) = if label > 0 {
        let lesion = place_lesion(&mut rng, spec)?;
        let contrast = rng.random_range(spec.lesion_contrast_min..=spec.lesion_contrast_max);
        let sign = if label == 1 { 1.0 } else { -1.0 };
        img.iter_mut().zip(&lesion.profile).for_each(|(v, p)| *v += sign * contrast * p);
        let mask = Tensor::new(&[n, n], lesion.mask)?;
        let gaze = normalize_max(gaussian_blur2d(&mask, sigma)?)?;
        (gaze, None, Some(mask))
    } else {
        let count = rng.random_range(1..=3);
        let fixations: Vec<Fixation> = (0..count)
            .map(|_| Fixation {
                x: rng.random_range(0.0..(n - 1) as f64),
                y: rng.random_range(0.0..(n - 1) as f64),
                duration: rng.random_range(0.2..1.0),
            })
            .collect();
        let gaze = fixations_to_gaze_map(&fixations, n, n, sigma)?;
        (gaze, Some(fixations), None)
    };

    let shortcut = if spec.shortcut {
        let rho = match split {
            Split::Train => spec.train_correlation,
            Split::Test => spec.test_correlation,
        };
        let positive = label > 0;
        let p_token = if positive { (1.0 + rho) / 2.0 } else { (1.0 - rho) / 2.0 };
        let draw: f64 = rng.random();
        (draw < p_token).then(|| {
            stamp_token(&mut img, n, spec.token_size, spec.token_corner, spec.token_intensity);
            ShortcutCue {
                corner: spec.token_corner,
                intensity: spec.token_intensity,
                size: spec.token_size,
                correlated: positive,
            }
        })
    } else {
        None
    };

    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let image = narrow(Tensor::new(&[1, n, n], img)?);
    let gaze_map = crate::gmg::GazeMap::new(narrow(gaze_map.into_tensor()))?;
    Ok(SampleRecord {
        id: format!("{}-{index:05}", split.as_str()),
        image,
        fixations,
        gaze_map: Some(gaze_map),
        label,
        shortcut,
        lesion_mask,
    })
}

/// Deterministic corpus for `spec`: the same spec always yields the same records.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let make = |split, n| (0..n).map(|i| generate_record(spec, split, i)).collect::<Result<Vec<_>>>();
    Ok(Corpus {
        train: make(Split::Train, spec.n_train)?,
        test: make(Split::Test, spec.n_test)?,
    })
}
