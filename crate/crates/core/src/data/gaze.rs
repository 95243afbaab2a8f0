use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmg::GazeMap;
use crate::numerics::{gaussian_blur2d, Tensor};

/// One eye fixation: pixel column `x`, pixel row `y`, dwell time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub duration: f64,
}

/// Duration-weighted impulses at the rounded fixation cells, Gaussian
/// blurred and scaled so the maximum is exactly 1.
pub fn fixations_to_gaze_map(fixations: &[Fixation], h: usize, w: usize, sigma: f64) -> Result<GazeMap> {
    if fixations.is_empty() {
        return Err(Error::Empty("fixation list".into()));
    }
    let mut impulses = Tensor::zeros(&[h, w]);
    for f in fixations {
        let inside = f.x >= 0.0 && f.y >= 0.0 && f.x <= (w - 1) as f64 && f.y <= (h - 1) as f64;
        if !inside || !(f.duration >= 0.0) {
            return Err(Error::Config(format!("fixation {f:?} outside a {h}x{w} image or negative duration")));
        }
        let (r, c) = (f.y.round() as usize, f.x.round() as usize);
        impulses.data_mut()[r * w + c] += f.duration;
    }
    if impulses.max() <= 0.0 {
        return Err(Error::Empty("fixations with zero total duration".into()));
    }
    normalize_max(gaussian_blur2d(&impulses, sigma)?)
}

/// Scales a non-negative map so its maximum is 1.
pub fn normalize_max(mut t: Tensor) -> Result<GazeMap> {
    let max = t.max();
    if !(max > 0.0) {
        return Err(Error::Empty("map has no positive mass".into()));
    }
    t.data_mut().iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    GazeMap::new(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fix(x: f64, y: f64, duration: f64) -> Fixation {
        Fixation { x, y, duration }
    }

    #[test]
    fn single_fixation_peaks_at_one_on_its_cell() {
        let gm = fixations_to_gaze_map(&[fix(5.2, 3.7, 0.3)], 10, 12, 1.5).unwrap();
        let t = gm.tensor();
        assert_eq!(t.max(), 1.0);
        assert_eq!(t.data()[4 * 12 + 5], 1.0);
    }

    #[test]
    fn separated_equal_fixations_both_reach_one() {
        let gm = fixations_to_gaze_map(&[fix(3.0, 3.0, 1.0), fix(26.0, 26.0, 1.0)], 30, 30, 1.0).unwrap();
        let t = gm.tensor();
        assert_eq!(t.data()[3 * 30 + 3], 1.0);
        assert_eq!(t.data()[26 * 30 + 26], 1.0);
    }

    #[test]
    fn duration_scale_does_not_change_the_map() {
        let fs = [fix(2.0, 2.0, 0.4), fix(7.0, 5.0, 1.1)];
        let doubled: Vec<_> = fs.iter().map(|f| fix(f.x, f.y, 2.0 * f.duration)).collect();
        let a = fixations_to_gaze_map(&fs, 10, 10, 1.0).unwrap();
        let b = fixations_to_gaze_map(&doubled, 10, 10, 1.0).unwrap();
        assert!(a.tensor().max_abs_diff(b.tensor()) < 1e-15);
    }

    #[test]
    fn invalid_inputs_error() {
        assert!(fixations_to_gaze_map(&[], 4, 4, 1.0).is_err());
        assert!(fixations_to_gaze_map(&[fix(9.0, 1.0, 1.0)], 4, 4, 1.0).is_err());
        assert!(fixations_to_gaze_map(&[fix(1.0, 1.0, 0.0)], 4, 4, 1.0).is_err());
    }
}
