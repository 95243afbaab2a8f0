use gdvig_core::config::{ModelConfig, TrainConfig};
use gdvig_core::data::{generate_corpus, CorpusSpec, SampleRecord};
use gdvig_core::harness::attention::{argmax_in_lesion, grad_cam};
use gdvig_core::harness::train;

fn overfit() -> (gdvig_core::harness::Trained, Vec<SampleRecord>) {
    let c = generate_corpus(&CorpusSpec {
        n_train: 32,
        n_test: 2,
        image_size: 32,
        seed: 8,
        ..CorpusSpec::default()
    })
    .unwrap();
    let model = ModelConfig {
        image_size: 32,
        gmg_channels: 16,
        gdc_channels: vec![16, 32],
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 60,
        val_fraction: 0.0,
        seed: 8,
        ..TrainConfig::default()
    };
    (train(&c.train, &model, &cfg, &mut |_| {}).unwrap(), c.train)
}

#[test]
fn heatmaps_are_batch_independent_and_normalized() {
    let (mut t, data) = overfit();
    let bn = t.train_cfg.bn();
    let positives: Vec<&SampleRecord> = data.iter().filter(|r| r.lesion_mask.is_some()).collect();
    let maps = grad_cam(&t.model, &mut t.store, &positives, bn).unwrap();
    for m in &maps {
        assert_eq!(m.shape(), &[32, 32]);
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let doubled: Vec<&SampleRecord> = positives.iter().chain(&positives).copied().collect();
    let again = grad_cam(&t.model, &mut t.store, &doubled, bn).unwrap();
    for (i, m) in maps.iter().enumerate() {
        assert_eq!(&again[i], m);
        assert_eq!(&again[i + maps.len()], m);
    }
}

#[test]
fn overfit_positive_heatmap_peaks_in_lesion() {
    let (mut t, data) = overfit();
    let bn = t.train_cfg.bn();
    let first = data.iter().find(|r| r.lesion_mask.is_some()).unwrap();
    let map = grad_cam(&t.model, &mut t.store, &[first], bn).unwrap().remove(0);
    assert_eq!(argmax_in_lesion(&map, first), Some(true));
}
