//! Gaze ground truth from fixations, the synthetic corpus and its on-disk form.

mod corpus;
mod gaze;
mod synth;

pub use corpus::{load_corpus, save_corpus, Manifest, ManifestRecord};
pub use gaze::{fixations_to_gaze_map, normalize_max, Fixation};
pub use synth::{generate_corpus, record_seed, Corner, CorpusSpec, ShortcutCue, LESION_FRACTION};

use crate::error::{Error, Result};
use crate::gmg::GazeMap;
use crate::model::Batch;
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s} (train|test)")),
        }
    }
}

/// An (image, gaze, label) triple plus synthetic-only metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// `[1, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub fixations: Option<Vec<Fixation>>,
    pub gaze_map: Option<GazeMap>,
    pub label: usize,
    pub shortcut: Option<ShortcutCue>,
    /// Binary `[H, W]` lesion map.
    pub lesion_mask: Option<Tensor>,
}

impl SampleRecord {
    pub fn validate(&self) -> Result<()> {
        let s = self.image.shape();
        if s.len() != 3 || s[0] != 1 {
            return Err(Error::Structure(format!("{}: image must be [1, H, W], got {s:?}", self.id)));
        }
        if self.image.min() < 0.0 || self.image.max() > 1.0 {
            return Err(Error::Structure(format!("{}: image values outside [0, 1]", self.id)));
        }
        if self.fixations.is_none() && self.gaze_map.is_none() {
            return Err(Error::Structure(format!("{}: needs fixations or a gaze map", self.id)));
        }
        if let Some(g) = &self.gaze_map {
            if g.dims() != (s[1], s[2]) {
                return Err(Error::shape("sample_gaze", &[s[1], s[2]], &[g.dims().0, g.dims().1]));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }

    /// The stored map, or one rebuilt from fixations with `sigma`.
    pub fn gaze(&self, sigma: f64) -> Result<GazeMap> {
        if let Some(g) = &self.gaze_map {
            return Ok(g.clone());
        }
        let (h, w) = self.dims();
        fixations_to_gaze_map(self.fixations.as_deref().unwrap_or(&[]), h, w, sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[SampleRecord] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn find(&self, id: &str) -> Option<&SampleRecord> {
        self.train.iter().chain(&self.test).find(|r| r.id == id)
    }

    pub fn num_classes(&self) -> usize {
        self.train.iter().chain(&self.test).map(|r| r.label + 1).max().unwrap_or(0)
    }
}

/// Stacks records into a batch. Gaze targets are included when every
/// record has (or can derive) one.
pub fn make_batch(records: &[&SampleRecord], sigma: f64) -> Result<Batch> {
    let first = records.first().ok_or_else(|| Error::Empty("batch".into()))?;
    let (h, w) = first.dims();
    let images: Vec<&Tensor> = records.iter().map(|r| &r.image).collect();
    let images = Tensor::stack(&images)?;
    let gaze = records
        .iter()
        .map(|r| r.gaze(sigma).ok().map(|g| g.into_tensor()))
        .collect::<Option<Vec<_>>>();
    let gaze_targets = match gaze {
        Some(maps) => {
            let refs: Vec<&Tensor> = maps.iter().collect();
            Some(Tensor::stack(&refs)?.reshape(&[records.len(), 1, h, w])?)
        }
        None => None,
    };
    Ok(Batch {
        images,
        gaze_targets,
        labels: records.iter().map(|r| r.label).collect(),
    })
}
