//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, dense, dense_backward, relu, relu_backward};
use super::loss::masked_mse;
use super::model::{Model, ModelConfig};
use super::tensor::Tensor;
use crate::error::Result;

pub const STEP: f64 = 1e-4;

/// Worst agreement between analytic and numeric derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub label: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps round-off on vanishing
/// derivatives from reading as a relative failure.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Compares `analytic` against central differences of `f` around `x`.
fn compare(label: &str, x: &Tensor, analytic: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> GradReport {
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_error(analytic.data()[i], (up - down) / (2.0 * STEP)));
    }
    GradReport { label: label.to_string(), checked: x.len(), max_rel_error: worst }
}

/// Checks input, weight and bias gradients of every layer kind under the
/// scalar objective `⟨layer(x), r⟩` for a random probe `r`.
pub fn check_layers(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let x = random(&[2, 2, 7, 7], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let r = random(conv2d(&x, &w, Some(&b), 2, 1)?.shape(), &mut rng);
    let g = conv2d_backward(&x, &w, &r, 2, 1)?;
    out.push(compare("conv input", &x, &g.input, |t| conv2d(t, &w, Some(&b), 2, 1).unwrap().dot(&r)));
    out.push(compare("conv weight", &w, &g.weight, |t| conv2d(&x, t, Some(&b), 2, 1).unwrap().dot(&r)));
    out.push(compare("conv bias", &b, &g.bias, |t| conv2d(&x, &w, Some(t), 2, 1).unwrap().dot(&r)));

    let x = random(&[2, 3, 4, 4], &mut rng);
    let w = random(&[3, 2, 4, 4], &mut rng);
    let b = random(&[2], &mut rng);
    let r = random(deconv2d(&x, &w, Some(&b), 2, 1)?.shape(), &mut rng);
    let g = deconv2d_backward(&x, &w, &r, 2, 1)?;
    out.push(compare("deconv input", &x, &g.input, |t| deconv2d(t, &w, Some(&b), 2, 1).unwrap().dot(&r)));
    out.push(compare("deconv weight", &w, &g.weight, |t| deconv2d(&x, t, Some(&b), 2, 1).unwrap().dot(&r)));
    out.push(compare("deconv bias", &b, &g.bias, |t| deconv2d(&x, &w, Some(t), 2, 1).unwrap().dot(&r)));

    let x = random(&[3, 7], &mut rng);
    let w = random(&[5, 7], &mut rng);
    let b = random(&[5], &mut rng);
    let r = random(&[3, 5], &mut rng);
    let g = dense_backward(&x, &w, &r)?;
    out.push(compare("dense input", &x, &g.input, |t| dense(t, &w, Some(&b)).unwrap().dot(&r)));
    out.push(compare("dense weight", &w, &g.weight, |t| dense(&x, t, Some(&b)).unwrap().dot(&r)));
    out.push(compare("dense bias", &b, &g.bias, |t| dense(&x, &w, Some(t)).unwrap().dot(&r)));

    // keep inputs away from the kink so the difference quotient is exact
    let x = Tensor::from_fn(&[40], |_| {
        let v: f64 = rng.gen_range(0.01..1.0);
        if rng.gen_bool(0.5) { v } else { -v }
    });
    let r = random(&[40], &mut rng);
    let g = relu_backward(&relu(&x), &r);
    out.push(compare("relu input", &x, &g, |t| relu(t).dot(&r)));
    Ok(out)
}

/// Checks every parameter of a model built from `config` (with random
/// biases) under the masked training loss on a random batch of two.
pub fn check_model(config: &ModelConfig, seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(ModelConfig { init_seed: seed, ..config.clone() })?;
    for p in model.params_mut() {
        if p.shape().len() == 1 {
            for v in p.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let n = config.n;
    let shape = [2, 1, n, n];
    let input = random(&shape, &mut rng);
    let mask = Tensor::from_fn(&shape, |_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 });
    let tx = random(&shape, &mut rng);
    let ty = random(&shape, &mut rng);

    let (px, py, cache) = model.forward(&input, &mask)?;
    let (_, gx, gy) = masked_mse(&px, &py, &tx, &ty, &mask)?;
    let grads = model.backward(&cache, &gx, &gy)?;

    let loss_of = |m: &Model| {
        let (px, py) = m.predict(&input, &mask).unwrap();
        masked_mse(&px, &py, &tx, &ty, &mask).unwrap().0
    };
    let count = grads.len();
    let mut reports = Vec::with_capacity(count);
    for k in 0..count {
        let param = model.params()[k].clone();
        let mut probe = model.clone();
        let report = compare(&format!("param {k} {:?}", param.shape()), &param, &grads[k], |t| {
            *probe.params_mut()[k] = t.clone();
            loss_of(&probe)
        });
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_gradients_agree() {
        for r in check_layers(3).unwrap() {
            assert!(r.passes(1e-4), "{r:?}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(rel_error(1.0, 1.0), 0.0);
        assert!(rel_error(0.0, 1e-12) < 1e-5);
        assert!(rel_error(1.0, 1.1) > 0.05);
    }
}
