use gdvig_core::blocks::{Ffn, Grapher, Stem};
use gdvig_core::config::{GazeSource, GmgVariant, ModelConfig, TrainConfig};
use gdvig_core::data::{generate_corpus, make_batch, CorpusSpec, SampleRecord};
use gdvig_core::gdc::JointLossWeights;
use gdvig_core::gmg::{Gmg, GmgConfig};
use gdvig_core::harness::train::{accuracy, default_gaze_sigma};
use gdvig_core::harness::{predict, train};
use gdvig_core::model::{joint_loss, GdVig};
use gdvig_core::nn::{Ctx, ParamStore};
use gdvig_core::numerics::{BnOptions, Mode, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model(source: GazeSource) -> ModelConfig {
    ModelConfig {
        image_size: 32,
        gmg_channels: 16,
        gdc_channels: vec![16, 32],
        gaze_source: source,
        ..ModelConfig::default()
    }
}

fn corpus(n_train: usize, seed: u64) -> Vec<SampleRecord> {
    generate_corpus(&CorpusSpec {
        n_train,
        n_test: 2,
        image_size: 32,
        seed,
        ..CorpusSpec::default()
    })
    .unwrap()
    .train
}

#[test]
fn grapher_and_ffn_with_zero_output_weights_are_identity() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = Grapher::new(&mut store, &mut rng, "g", 4).unwrap();
    let f = Ffn::new(&mut store, &mut rng, "f", 4).unwrap();
    store.get_mut(&g.w2.weight).unwrap().data_mut().fill(0.0);
    store.get_mut(&f.w4.weight).unwrap().data_mut().fill(0.0);
    let x = Tensor::from_fn(&[6, 4], |i| (i as f64 * 0.37).sin());
    let mut ctx = Ctx::new(&mut store, Mode::Train, BnOptions::default());
    let xv = ctx.tape.constant(x.clone());
    let y = g
        .forward(&mut ctx, xv, &mut |_| Ok((2, (0..6).flat_map(|i| [(i + 1) % 6, (i + 2) % 6]).collect())))
        .unwrap();
    let z = f.forward(&mut ctx, y).unwrap();
    assert_eq!(ctx.tape.value(y), &x);
    assert_eq!(ctx.tape.value(z), &x);
}

#[test]
fn max_relative_gc_hand_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[3, 2], vec![1.0, 0.0, 3.0, -1.0, 0.0, 2.0]).unwrap());
    let y = tape.max_relative_gc(x, &[1, 2, 0, 2, 0, 1], 2).unwrap();
    assert_eq!(
        tape.value(y).data(),
        &[1.0, 0.0, 2.0, 2.0, 3.0, -1.0, -2.0, 3.0, 0.0, 2.0, 3.0, -2.0]
    );
}

#[test]
fn generator_with_zeroed_head_outputs_one_half() {
    for variant in GmgVariant::ALL {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = GmgConfig {
            variant,
            encoder_depth: 1,
            base_channels: 8,
            k: 4,
            normalize_knn: true,
        };
        let gmg = Gmg::new(&mut store, &mut rng, "gmg", cfg).unwrap();
        let (w, b) = gmg.head_names();
        store.get_mut(&w).unwrap().data_mut().fill(0.0);
        if let Some(b) = b {
            store.get_mut(&b).unwrap().data_mut().fill(0.0);
        }
        let mut ctx = Ctx::new(&mut store, Mode::Train, BnOptions::default());
        let img = ctx.tape.constant(Tensor::from_fn(&[2, 1, 32, 32], |i| (i % 7) as f64 / 7.0));
        let out = gmg.forward(&mut ctx, img).unwrap();
        let v = ctx.tape.value(out);
        assert_eq!(v.shape(), &[2, 1, 32, 32]);
        assert!(v.data().iter().all(|&p| p == 0.5), "{variant}");
    }
}

fn gdc_loss(model: &GdVig, store: &mut ParamStore, records: &[&SampleRecord]) -> (f64, Vec<(String, Vec<f64>)>) {
    let batch = make_batch(records, default_gaze_sigma(32)).unwrap();
    let mut ctx = Ctx::new(store, Mode::Infer, BnOptions::default());
    let out = model.forward(&mut ctx, &batch).unwrap();
    let terms = joint_loss(&mut ctx.tape, &out, &batch, JointLossWeights::new(1.0).unwrap()).unwrap();
    let grads = ctx.tape.backward(terms.gdc).unwrap();
    let loss = ctx.tape.value(terms.gdc).data()[0];
    let gmg_grads = ctx
        .bound()
        .iter()
        .filter(|(n, _)| n.starts_with("gmg."))
        .map(|(n, v)| (n.clone(), grads.get(*v).map(<[f64]>::to_vec).unwrap_or_default()))
        .collect();
    (loss, gmg_grads)
}

#[test]
fn classifier_loss_does_not_reach_the_generator() {
    let (model, mut store) = GdVig::build(&small_model(GazeSource::Generated), 3).unwrap();
    let data = corpus(4, 3);
    let records: Vec<&SampleRecord> = data.iter().collect();
    let (base, grads) = gdc_loss(&model, &mut store, &records);
    assert!(!grads.is_empty());
    assert!(grads.iter().all(|(_, g)| g.iter().all(|&v| v == 0.0)));
    // A small nudge to the generator head changes the gaze map but not the
    // neighbor indices, so the classifier loss is unchanged.
    let (_, bias) = model.gmg.as_ref().unwrap().head_names();
    let bias = bias.unwrap();
    for delta in [1e-6, -1e-6] {
        store.get_mut(&bias).unwrap().data_mut()[0] += delta;
        let (moved, _) = gdc_loss(&model, &mut store, &records);
        store.get_mut(&bias).unwrap().data_mut()[0] -= delta;
        assert_eq!(moved, base);
    }
}

#[test]
fn two_samples_overfit() {
    let data = corpus(2, 4);
    assert_ne!(data[0].label, data[1].label);
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 60,
        batch_size: 2,
        val_fraction: 0.0,
        seed: 4,
        ..TrainConfig::default()
    };
    let t = train(&data, &small_model(GazeSource::Generated), &cfg, &mut |_| {}).unwrap();
    let last = t.log.last().unwrap();
    assert!(last.loss_gdc < 1e-2, "{}", last.line());
    assert_eq!(last.train_acc, 1.0);
}

#[test]
fn zero_classification_weight_leaves_the_classifier_at_chance() {
    let spec = CorpusSpec {
        n_train: 16,
        n_test: 64,
        image_size: 32,
        seed: 5,
        ..CorpusSpec::default()
    };
    let c = generate_corpus(&spec).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 3,
        lambda_c: 0.0,
        val_fraction: 0.0,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut t = train(&c.train, &small_model(GazeSource::Generated), &cfg, &mut |_| {}).unwrap();
    let test: Vec<&SampleRecord> = c.test.iter().collect();
    let labels: Vec<usize> = test.iter().map(|r| r.label).collect();
    let probs = predict(&t.model, &mut t.store, &test, cfg.bn(), 8).unwrap();
    let acc = accuracy(&probs, &labels);
    // Binomial 95% band around 0.5 for 64 balanced samples.
    let band = 1.96 * (0.25f64 / 64.0).sqrt();
    assert!((acc - 0.5).abs() <= band, "acc {acc}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = corpus(8, 6);
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 2,
        seed: 6,
        ..TrainConfig::default()
    };
    let run = || train(&data, &small_model(GazeSource::Generated), &cfg, &mut |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log_text(), b.log_text());
    assert!(a.store.iter().zip(b.store.iter()).all(|(x, y)| x == y));
    let other = train(&data, &small_model(GazeSource::Generated), &TrainConfig { seed: 7, ..cfg.clone() }, &mut |_| {}).unwrap();
    assert_ne!(a.log_text(), other.log_text());
}

#[test]
fn ffn_hand_value() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = Ffn::new(&mut store, &mut rng, "f", 1).unwrap();
    store.get_mut(&f.w3.weight).unwrap().data_mut().copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
    store.get_mut(&f.w4.weight).unwrap().data_mut().copy_from_slice(&[1.0, 1.0, 1.0, 2.0]);
    let mut ctx = Ctx::new(&mut store, Mode::Train, BnOptions::default());
    let x = ctx.tape.constant(Tensor::new(&[1, 1], vec![1.0]).unwrap());
    let y = f.forward(&mut ctx, x).unwrap();
    // relu([1, -1, 2, 0.5]) · [1, 1, 1, 2] + 1
    assert_eq!(ctx.tape.value(y).data(), &[5.0]);
}

#[test]
fn stem_quarters_the_grid_and_keeps_constant_images_constant() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let stem = Stem::new(&mut store, &mut rng, "s", 1, 8).unwrap();
    let mut ctx = Ctx::new(&mut store, Mode::Infer, BnOptions::default());
    let img = ctx.tape.constant(Tensor::from_fn(&[1, 1, 32, 48], |_| 0.7));
    let out = stem.forward(&mut ctx, img).unwrap();
    let q = ctx.tape.value(out.quarter);
    assert_eq!(q.shape(), &[1, 8, 8, 12]);
    // Zero padding only reaches the first row and column.
    for c in 0..8 {
        let at = |y: usize, x: usize| q.data()[(c * 8 + y) * 12 + x];
        let v = at(1, 1);
        assert!((1..8).all(|y| (1..12).all(|x| at(y, x) == v)));
    }
    let bad = ctx.tape.constant(Tensor::zeros(&[1, 1, 24, 32]));
    assert!(stem.forward(&mut ctx, bad).is_err());
}
