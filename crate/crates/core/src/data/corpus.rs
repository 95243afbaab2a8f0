//! Corpus directories: `manifest.json` plus one GDVT file per tensor, each
//! guarded by a SHA-256 checksum.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Corpus, Fixation, SampleRecord, ShortcutCue, Split};
use crate::error::{Error, Result};
use crate::gmg::GazeMap;
use crate::numerics::io::{decode, encode};
use crate::numerics::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub label: usize,
    pub image: FileRef,
    #[serde(default)]
    pub gaze_map: Option<FileRef>,
    #[serde(default)]
    pub lesion_mask: Option<FileRef>,
    #[serde(default)]
    pub fixations: Option<Vec<Fixation>>,
    #[serde(default)]
    pub shortcut: Option<ShortcutCue>,
}

pub type Manifest = Vec<ManifestRecord>;

fn write_checked(dir: &Path, file: String, t: &Tensor) -> Result<FileRef> {
    let bytes = encode(t);
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(FileRef {
        file,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn read_checked(dir: &Path, r: &FileRef) -> Result<Tensor> {
    let path = dir.join(&r.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if hex::encode(Sha256::digest(&bytes)) != r.sha256 {
        return Err(Error::Checksum { path });
    }
    decode(&bytes, &path)
}

/// Writes `corpus` under `dir`. Tensors are stored as `f32`, so the round
/// trip is exact for values that are already `f32`-representable (as
/// generated corpora are).
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let tensors = dir.join("tensors");
    fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
    let mut manifest = Manifest::new();
    for (split, records) in [(Split::Train, &corpus.train), (Split::Test, &corpus.test)] {
        for r in records {
            r.validate()?;
            if r.id.is_empty() || r.id.contains(['/', '\\']) || r.id.starts_with('.') {
                return Err(Error::Structure(format!("record id {:?} is not usable as a file name", r.id)));
            }
            let name = |kind: &str| format!("tensors/{}.{kind}.gdvt", r.id);
            manifest.push(ManifestRecord {
                id: r.id.clone(),
                split,
                label: r.label,
                image: write_checked(dir, name("image"), &r.image)?,
                gaze_map: r
                    .gaze_map
                    .as_ref()
                    .map(|g| write_checked(dir, name("gaze"), g.tensor()))
                    .transpose()?,
                lesion_mask: r
                    .lesion_mask
                    .as_ref()
                    .map(|m| write_checked(dir, name("lesion"), m))
                    .transpose()?,
                fixations: r.fixations.clone(),
                shortcut: r.shortcut,
            });
        }
    }
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path: PathBuf = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    let mut corpus = Corpus::default();
    let mut seen = std::collections::BTreeSet::new();
    for m in manifest {
        if !seen.insert(m.id.clone()) {
            return Err(Error::Format {
                path,
                msg: format!("duplicate record id {}", m.id),
            });
        }
        let record = SampleRecord {
            image: read_checked(dir, &m.image)?,
            gaze_map: m
                .gaze_map
                .as_ref()
                .map(|r| read_checked(dir, r).and_then(GazeMap::new))
                .transpose()?,
            lesion_mask: m.lesion_mask.as_ref().map(|r| read_checked(dir, r)).transpose()?,
            fixations: m.fixations,
            shortcut: m.shortcut,
            label: m.label,
            id: m.id,
        };
        record.validate()?;
        match m.split {
            Split::Train => corpus.train.push(record),
            Split::Test => corpus.test.push(record),
        }
    }
    if corpus.train.is_empty() && corpus.test.is_empty() {
        return Err(Error::Empty(format!("{} lists no records", path.display())));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, CorpusSpec};

    fn small() -> Corpus {
        generate_corpus(&CorpusSpec {
            n_train: 6,
            n_test: 4,
            image_size: 16,
            shortcut: true,
            train_correlation: 1.0,
            test_correlation: -1.0,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        save_corpus(&c, dir.path()).unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap(), c);
    }

    #[test]
    fn truncated_tensor_reports_checksum_with_file() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&small(), dir.path()).unwrap();
        let victim = dir.path().join("tensors/train-00001.image.gdvt");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }), "{err}");
        assert!(err.to_string().contains("train-00001.image.gdvt"), "{err}");
    }

    #[test]
    fn unknown_manifest_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&small(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replacen("\"label\"", "\"hospital\": 3,\n    \"label\"", 1);
        fs::write(&path, text).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(err.to_string().contains("hospital"), "{err}");
    }

    #[test]
    fn missing_tensor_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&small(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("tensors/test-00000.gaze.gdvt")).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::Io { .. })));
    }
}
