use bendflow::nn::gradcheck::{check_model, rel_error};
use bendflow::nn::loss::masked_mse;
use bendflow::nn::{Model, ModelConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    for residual in [true, false] {
        let cfg = ModelConfig { use_residual: residual, ..ModelConfig::tiny() };
        let reports = check_model(&cfg, 11).unwrap();
        assert_eq!(reports.len(), Model::new(cfg).unwrap().params().len());
        for r in reports {
            assert!(r.passes(1e-4), "residual={residual}: {r:?}");
        }
    }
}

#[test]
fn zero_mask_gives_zero_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let x = random(&[3, 1, 16, 16], &mut rng);
    let (vx, vy) = model.predict(&x, &Tensor::zeros(&[3, 1, 16, 16])).unwrap();
    assert!(vx.data().iter().chain(vy.data()).all(|&v| v == 0.0));
}

#[test]
fn zero_weights_give_zero_prediction() {
    let mut model = Model::new(ModelConfig::tiny()).unwrap();
    for p in model.params_mut() {
        p.data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 1, 16, 16], &mut rng);
    let (vx, vy) = model.predict(&x, &Tensor::from_fn(&[2, 1, 16, 16], |_| 1.0)).unwrap();
    assert!(vx.data().iter().chain(vy.data()).all(|&v| v == 0.0));
}

#[test]
fn predictions_vanish_outside_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..100 {
        let model = Model::new(ModelConfig { init_seed: seed, ..ModelConfig::tiny() }).unwrap();
        let x = random(&[1, 1, 16, 16], &mut rng);
        let m = Tensor::from_fn(&[1, 1, 16, 16], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        let (vx, vy) = model.predict(&x, &m).unwrap();
        for i in 0..m.len() {
            if m.data()[i] == 0.0 {
                assert_eq!((vx.data()[i], vy.data()[i]), (0.0, 0.0));
            }
        }
    }
}

#[test]
fn loss_and_gradients_ignore_targets_outside_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let shape = [2, 1, 16, 16];
    let x = random(&shape, &mut rng);
    let m = Tensor::from_fn(&shape, |_| if rng.gen_bool(0.6) { 1.0 } else { 0.0 });
    let tx = random(&shape, &mut rng);
    let ty = random(&shape, &mut rng);
    let mut tx2 = tx.clone();
    let mut ty2 = ty.clone();
    for i in 0..m.len() {
        if m.data()[i] == 0.0 {
            tx2.data_mut()[i] = rng.gen_range(-50.0..50.0);
            ty2.data_mut()[i] = rng.gen_range(-50.0..50.0);
        }
    }
    let (px, py, cache) = model.forward(&x, &m).unwrap();
    let a = masked_mse(&px, &py, &tx, &ty, &m).unwrap();
    let b = masked_mse(&px, &py, &tx2, &ty2, &m).unwrap();
    assert_eq!(a.0, b.0);
    let ga = model.backward(&cache, &a.1, &a.2).unwrap();
    let gb = model.backward(&cache, &b.1, &b.2).unwrap();
    assert_eq!(ga, gb);
}

#[test]
fn batch_rows_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let x = random(&[3, 1, 16, 16], &mut rng);
    let m = Tensor::from_fn(&[3, 1, 16, 16], |_| 1.0);
    let (vx, _) = model.predict(&x, &m).unwrap();
    let (one, _) = model.predict(&x.slice_outer(1), &m.slice_outer(1)).unwrap();
    for (a, b) in vx.slice_outer(1).data().iter().zip(one.data()) {
        assert!(rel_error(*a, *b) < 1e-12);
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let x = Tensor::zeros(&[1, 1, 8, 8]);
    assert!(model.predict(&x, &x).is_err());
}
