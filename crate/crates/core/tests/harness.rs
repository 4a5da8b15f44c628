use contrastive_ace::data::{make_synthetic_domains, DomainDataset, LabeledSample};
use contrastive_ace::harness::{
    adam_step, evaluate, prepare_fold, stratified_batches, train, AdamState, MetricsWriter, TrainConfig,
};
use contrastive_ace::models::{ClassifierSpec, EncoderSpec, ModelBundle};
use contrastive_ace::numcore::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden: vec![16],
        latent_dim: 4,
        epochs: 4,
        batch_size: 32,
        learning_rate: 0.01,
        init_seed: 3,
        data_seed: 4,
        pair_seed: 5,
        ..TrainConfig::default()
    }
}

fn synthetic() -> DomainDataset {
    make_synthetic_domains(3, 120, 9).unwrap()
}

#[test]
fn erm_run_matches_a_plain_cross_entropy_loop() {
    let cfg = TrainConfig { rho: 0.0, ..small_config() };
    let fold = prepare_fold(&synthetic(), 2, &cfg).unwrap();
    let outcome = train(&cfg, &fold, None).unwrap();

    let mut model = ModelBundle::init(
        EncoderSpec::new(fold.train.feature_dim(), cfg.hidden.clone(), cfg.latent_dim),
        ClassifierSpec::linear(cfg.latent_dim, fold.train.classes()),
        cfg.init_seed,
    )
    .unwrap();
    let mut adam = AdamState::new(&model.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let labels = fold.train.labels();
    let mut snapshots = vec![model.clone()];
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = stratified_batches(&labels, cfg.batch_size, &mut rng);
        let n = batches.len() as f64;
        for mut positions in batches {
            positions.sort_by_key(|&i| fold.train.samples()[i].id);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let x = tape.constant(fold.train.features_of(&positions));
            let z = bound.encode(&mut tape, x).unwrap();
            let y = bound.classify(&mut tape, z).unwrap();
            let batch_labels: Vec<usize> = positions.iter().map(|&i| labels[i]).collect();
            let ce = tape.softmax_cross_entropy(y, &batch_labels).unwrap();
            loss_sum += tape.scalar(ce).unwrap();
            let grads = bound.gradients(&tape.backward(ce).unwrap());
            adam_step(&mut adam, &mut model.parameters_mut(), &grads, cfg.learning_rate).unwrap();
        }
        assert_eq!(outcome.metrics.epochs[epoch].loss.to_bits(), (loss_sum / n).to_bits(), "epoch {epoch}");
        snapshots.push(model.clone());
    }
    assert_eq!(outcome.model, snapshots[outcome.metrics.best_epoch]);
}

#[test]
fn first_epoch_lowers_the_loss() {
    let cfg = small_config();
    let fold = prepare_fold(&synthetic(), 0, &cfg).unwrap();
    let m = train(&cfg, &fold, None).unwrap().metrics;
    assert!(m.epochs[1].loss < m.initial().loss, "{} vs {}", m.epochs[1].loss, m.initial().loss);
}

#[test]
fn selection_is_the_earliest_best_validation_epoch() {
    let cfg = TrainConfig { epochs: 6, ..small_config() };
    let fold = prepare_fold(&synthetic(), 1, &cfg).unwrap();
    let m = train(&cfg, &fold, None).unwrap().metrics;
    assert_eq!(m.epochs.len(), 7);
    let best = m.epochs[1..].iter().map(|e| e.val_acc).fold(f64::MIN, f64::max);
    let first = m.epochs[1..].iter().position(|e| e.val_acc == best).unwrap() + 1;
    assert_eq!(m.best_epoch, first);
    assert_eq!(m.selected().epoch, first);
}

#[test]
fn metrics_files_are_reproducible() {
    let cfg = small_config();
    let fold = prepare_fold(&synthetic(), 0, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("m{k}.csv"));
        let mut w = MetricsWriter::create(&path).unwrap();
        train(&cfg, &fold, Some(&mut w)).unwrap();
        drop(w);
        texts.push(std::fs::read_to_string(&path).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    assert_eq!(texts[0].lines().count(), cfg.epochs + 2);
}

/// One-hot inputs over 5 balanced classes.
fn one_hot_dataset(reverse: bool) -> DomainDataset {
    let mut samples: Vec<LabeledSample> = (0..25)
        .map(|i| {
            let mut features = vec![0.0; 5];
            features[i % 5] = 1.0;
            LabeledSample {
                id: i,
                features,
                label: i % 5,
                domain: 0,
            }
        })
        .collect();
    if reverse {
        samples.reverse();
    }
    DomainDataset::new(samples, 5, 5, vec![0]).unwrap()
}

fn identity_model() -> ModelBundle {
    let mut m = ModelBundle::init(EncoderSpec::new(5, vec![], 5), ClassifierSpec::linear(5, 5), 0).unwrap();
    m.encoder[0].weight = Tensor::identity(5);
    m.classifier[0].weight = Tensor::identity(5);
    m
}

#[test]
fn evaluate_reference_cases() {
    let perfect = identity_model();
    assert_eq!(evaluate(&perfect, &one_hot_dataset(false)).unwrap(), 1.0);
    assert_eq!(evaluate(&perfect, &one_hot_dataset(true)).unwrap(), 1.0);

    let mut constant = identity_model();
    constant.classifier[0].weight = Tensor::zeros(&[5, 5]);
    constant.classifier[0].bias = Tensor::vector(vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(evaluate(&constant, &one_hot_dataset(false)).unwrap(), 0.2);

    // all-tied logits predict class 0
    constant.classifier[0].bias = Tensor::zeros(&[5]);
    assert_eq!(evaluate(&constant, &one_hot_dataset(true)).unwrap(), 0.2);
}

#[test]
fn normalization_uses_training_statistics_only() {
    let ds = synthetic();
    let cfg = TrainConfig { normalize: true, ..small_config() };
    let fold = prepare_fold(&ds, 2, &cfg).unwrap();
    let t = fold.normalizer.as_ref().unwrap();
    let train_features = fold.train.features();
    let rows = train_features.rows() as f64;
    for j in 0..ds.feature_dim() {
        let mean = (0..train_features.rows()).map(|i| train_features.at(i, j)).sum::<f64>() / rows;
        assert!(mean.abs() < 1e-9, "feature {j} mean {mean}");
    }
    assert_eq!(t.mean.len(), ds.feature_dim());
    assert!(fold.test.samples().iter().all(|s| s.domain == 2));
}
