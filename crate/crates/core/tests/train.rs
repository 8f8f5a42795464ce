use bendflow::augment::AugmentConfig;
use bendflow::dataset::{generate_dataset, Dataset, GenerationConfig, Sample, Split, SplitCounts};
use bendflow::nn::train::{mean_rmse, write_loss_csv};
use bendflow::nn::{train, LayerSpec, Model, ModelConfig, TrainConfig};

fn small_dataset(train: usize) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenerationConfig { counts: SplitCounts { train, val: 1, test: 1 }, seed: 5, n: 16, ..GenerationConfig::default() };
    generate_dataset(dir.path(), &cfg).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    (dir, ds)
}

#[test]
fn zero_epochs_returns_initial_weights() {
    let (_dir, ds) = small_dataset(2);
    let tr = ds.load_split(Split::Train).unwrap();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let out = train(&ModelConfig::tiny(), &tr, &[], &ds.manifest.stats, &cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, None);
    assert_eq!(out.model, Model::new(ModelConfig::tiny()).unwrap());
}

#[test]
fn tiny_model_overfits_four_samples() {
    let (_dir, ds) = small_dataset(4);
    let tr = ds.load_split(Split::Train).unwrap();
    let cfg = TrainConfig { epochs: 500, batch_size: 4, augment: AugmentConfig::disabled(), ..TrainConfig::default() };
    // the gradient-check model with room to memorize four fields
    let model = ModelConfig {
        encoder: vec![LayerSpec::new(16, 4, 2, 1), LayerSpec::new(32, 4, 2, 1)],
        bottleneck: 64,
        decoder: vec![LayerSpec::new(16, 4, 2, 1), LayerSpec::new(16, 3, 1, 1), LayerSpec::new(1, 4, 2, 1)],
        ..ModelConfig::tiny()
    };
    // validating on the training samples keeps the final best model
    let out = train(&model, &tr, &tr, &ds.manifest.stats, &cfg).unwrap();
    let refs: Vec<&Sample> = tr.iter().collect();
    let rmse = mean_rmse(&out.model, &refs, &ds.manifest.stats).unwrap();
    let speed = tr.iter().map(Sample::mean_speed).sum::<f64>() / tr.len() as f64;
    assert!(rmse < 0.05 * speed, "rmse {rmse} m/s vs mean speed {speed} m/s");
}

#[test]
fn training_is_deterministic() {
    let (_dir, ds) = small_dataset(3);
    let tr = ds.load_split(Split::Train).unwrap();
    let va = ds.load_split(Split::Val).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 2, seed: 9, ..TrainConfig::default() };
    let run = || {
        let out = train(&ModelConfig::tiny(), &tr, &va, &ds.manifest.stats, &cfg).unwrap();
        let mut csv = Vec::new();
        write_loss_csv(&mut csv, &out.history).unwrap();
        (out.model, csv)
    };
    let (ma, ca) = run();
    let (mb, cb) = run();
    assert_eq!(ma, mb);
    assert_eq!(ca, cb);
    assert_eq!(String::from_utf8(ca).unwrap().lines().count(), 4);
}
