//! Shortcut experiment: a no-gaze baseline and the full gaze-directed model
//! trained on the same token-correlated corpus, tested where the token/label
//! correlation is reversed.

use serde::{Deserialize, Serialize};

use crate::config::{apply_pairs, parse_pairs, GazeSource, KvSection, ModelConfig, TrainConfig};
use crate::data::{generate_corpus, CorpusSpec, SampleRecord};
use crate::error::{Error, Result};
use crate::harness::attention::{argmax_in_lesion, grad_cam};
use crate::harness::train::{accuracy, train, Checkpoint};

/// Corpus, model and training settings of one experiment file. `image_size`
/// and `seed` belong to the corpus; the model follows the corpus size and
/// every run takes its seed from the seed list.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut corpus = CorpusSpec::default();
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        apply_pairs(&parse_pairs(text)?, &mut [&mut corpus, &mut model, &mut train])?;
        let spec = ExperimentSpec { corpus, model, train }.synced();
        spec.validate()?;
        Ok(spec)
    }

    fn synced(mut self) -> Self {
        self.model.image_size = self.corpus.image_size;
        self.model.num_classes = self.corpus.classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !self.corpus.shortcut || self.corpus.train_correlation != 1.0 || self.corpus.test_correlation != -1.0 {
            return Err(Error::Config(
                "shortcut experiment needs shortcut = true, train_correlation = 1, test_correlation = -1".into(),
            ));
        }
        if self.model.lambda_g <= 0.0 {
            return Err(Error::Config("the gaze-directed arm needs lambda_g > 0".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut model = self.model.to_pairs();
        model.retain(|(k, _)| *k != "image_size" && *k != "num_classes");
        let mut train = self.train.to_pairs();
        train.retain(|(k, _)| *k != "seed");
        self.corpus
            .to_pairs()
            .into_iter()
            .chain(model)
            .chain(train)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Model settings of each arm.
    pub fn arm_model(&self, arm: Arm) -> ModelConfig {
        let mut m = self.model.clone();
        match arm {
            Arm::Baseline => {
                m.lambda_g = 0.0;
                m.gaze_source = GazeSource::None;
            }
            Arm::GdVig => m.gaze_source = GazeSource::Generated,
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    GdVig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedResult {
    pub seed: u64,
    pub test_acc: f64,
    /// Test positives whose heatmap argmax falls inside the lesion.
    pub attention_hits: usize,
    pub attention_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmReport {
    pub arm: Arm,
    pub gaze_source: GazeSource,
    pub lambda_g: f64,
    pub runs: Vec<SeedResult>,
    pub median_test_acc: f64,
    /// Pooled over every seed's test positives.
    pub attention_in_lesion_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortcutReport {
    pub seeds: Vec<u64>,
    pub baseline: ArmReport,
    pub gd_vig: ArmReport,
    /// `gd_vig.median_test_acc − baseline.median_test_acc`.
    pub median_acc_gap: f64,
}

impl ShortcutReport {
    /// Rejects reports whose arm fields do not describe their named arm.
    pub fn validate(&self) -> Result<()> {
        let b = &self.baseline;
        let g = &self.gd_vig;
        if b.arm != Arm::Baseline || b.gaze_source != GazeSource::None || b.lambda_g != 0.0 {
            return Err(Error::Structure("baseline entry does not describe the no-gaze arm".into()));
        }
        if g.arm != Arm::GdVig || g.gaze_source != GazeSource::Generated || !(g.lambda_g > 0.0) {
            return Err(Error::Structure("gd_vig entry does not describe the gaze-directed arm".into()));
        }
        let seeds = |a: &ArmReport| a.runs.iter().map(|r| r.seed).collect::<Vec<_>>();
        if seeds(b) != self.seeds || seeds(g) != self.seeds {
            return Err(Error::Structure("arm runs do not match the seed list".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ShortcutReport = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Trains one arm on `train_set` and scores it on `test_set`.
pub fn run_arm(spec: &ExperimentSpec, arm: Arm, seed: u64, train_set: &[SampleRecord], test_set: &[SampleRecord]) -> Result<SeedResult> {
    let model_cfg = spec.arm_model(arm);
    let train_cfg = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let mut ck = Checkpoint::from_trained(train(train_set, &model_cfg, &train_cfg, &mut |_| {})?);
    let records: Vec<&SampleRecord> = test_set.iter().collect();
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let probs = ck.predict(&records)?;
    let positives: Vec<&SampleRecord> = records.iter().copied().filter(|r| r.lesion_mask.is_some()).collect();
    let mut hits = 0;
    for chunk in positives.chunks(train_cfg.batch_size) {
        let maps = grad_cam(&ck.model, &mut ck.store, chunk, train_cfg.bn())?;
        hits += maps
            .iter()
            .zip(chunk)
            .filter(|(m, r)| argmax_in_lesion(m, r) == Some(true))
            .count();
    }
    Ok(SeedResult {
        seed,
        test_acc: accuracy(&probs, &labels),
        attention_hits: hits,
        attention_total: positives.len(),
    })
}

fn arm_report(spec: &ExperimentSpec, arm: Arm, runs: Vec<SeedResult>) -> ArmReport {
    let m = spec.arm_model(arm);
    let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
    let hits: usize = runs.iter().map(|r| r.attention_hits).sum();
    let total: usize = runs.iter().map(|r| r.attention_total).sum();
    ArmReport {
        arm,
        gaze_source: m.gaze_source,
        lambda_g: m.lambda_g,
        median_test_acc: median(&accs),
        attention_in_lesion_rate: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        runs,
    }
}

/// Runs both arms for every seed; `progress` receives one line per run.
pub fn shortcut_experiment(spec: &ExperimentSpec, seeds: &[u64], progress: &mut dyn FnMut(&str)) -> Result<ShortcutReport> {
    spec.validate()?;
    if seeds.is_empty() {
        return Err(Error::Empty("seed list".into()));
    }
    let (mut base, mut gd) = (Vec::new(), Vec::new());
    for &seed in seeds {
        let corpus = generate_corpus(&CorpusSpec {
            seed,
            ..spec.corpus.clone()
        })?;
        for (arm, out) in [(Arm::Baseline, &mut base), (Arm::GdVig, &mut gd)] {
            let r = run_arm(spec, arm, seed, &corpus.train, &corpus.test)?;
            progress(&format!(
                "seed={seed} arm={} test_acc={} attention_in_lesion={}/{}",
                serde_json::to_value(arm)?.as_str().unwrap_or("?"),
                r.test_acc,
                r.attention_hits,
                r.attention_total
            ));
            out.push(r);
        }
    }
    let baseline = arm_report(spec, Arm::Baseline, base);
    let gd_vig = arm_report(spec, Arm::GdVig, gd);
    Ok(ShortcutReport {
        seeds: seeds.to_vec(),
        median_acc_gap: gd_vig.median_test_acc - baseline.median_test_acc,
        baseline,
        gd_vig,
    })
}
