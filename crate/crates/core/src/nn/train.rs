//! Mini-batch training with on-line augmentation, and evaluation in m/s.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::loss::{masked_mse, masked_rmse};
use super::model::{Model, ModelConfig};
use super::tensor::Tensor;
use crate::augment::{augment_sample, AugmentConfig};
use crate::dataset::{derive_seed, epoch_batches, Sample};
use crate::error::{Error, Result};
use crate::raster::{FieldKind, ScalarField, StandardizationStats};

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augment: AugmentConfig,
    /// Drives shuffling and augmentation draws.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 32, learning_rate: 1e-3, augment: AugmentConfig::default(), seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Standardized units.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean per-sample masked RMSE on the validation split.
    pub val_rmse_mps: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochLoss>,
    pub best_epoch: Option<usize>,
}

/// Input, mask and standardized targets for a set of samples.
pub struct BatchTensors {
    pub input: Tensor,
    pub mask: Tensor,
    pub target_vx: Tensor,
    pub target_vy: Tensor,
}

pub fn batch_tensors(samples: &[&Sample], kind: FieldKind, stats: &StandardizationStats) -> Result<BatchTensors> {
    let Some(first) = samples.first() else {
        return Err(Error::Shape("empty batch".into()));
    };
    let n = first.mask.n();
    let shape = [samples.len(), 1, n, n];
    let geo = stats.get(kind)?;
    let (sx, sy) = (stats.get(FieldKind::Vx)?, stats.get(FieldKind::Vy)?);
    let mut input = Vec::with_capacity(samples.len() * n * n);
    let mut mask = Vec::with_capacity(input.capacity());
    let mut tx = Vec::with_capacity(input.capacity());
    let mut ty = Vec::with_capacity(input.capacity());
    for s in samples {
        if s.mask.n() != n {
            return Err(Error::Shape(format!("sample {} has grid {} instead of {n}", s.id, s.mask.n())));
        }
        input.extend(s.geometry(kind)?.values.iter().map(|v| (v - geo.mean) / geo.std));
        mask.extend_from_slice(&s.mask.values);
        tx.extend(s.vx.values.iter().map(|v| (v - sx.mean) / sx.std));
        ty.extend(s.vy.values.iter().map(|v| (v - sy.mean) / sy.std));
    }
    Ok(BatchTensors {
        input: Tensor::from_vec(&shape, input)?,
        mask: Tensor::from_vec(&shape, mask)?,
        target_vx: Tensor::from_vec(&shape, tx)?,
        target_vy: Tensor::from_vec(&shape, ty)?,
    })
}

/// Loss summed over masked pixels and the pixel count, for pooling.
fn pooled_loss(model: &Model, samples: &[&Sample], stats: &StandardizationStats) -> Result<(f64, f64)> {
    let mut num = 0.0;
    let mut den = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let b = batch_tensors(chunk, model.config().input_kind, stats)?;
        let (px, py) = model.predict(&b.input, &b.mask)?;
        let (loss, _, _) = masked_mse(&px, &py, &b.target_vx, &b.target_vy, &b.mask)?;
        let count = 2.0 * b.mask.data().iter().sum::<f64>();
        num += loss * count;
        den += count;
    }
    Ok((num, den))
}

/// Trains a fresh model and keeps the best-validation parameters.
pub fn train(
    model_config: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    stats: &StandardizationStats,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.augment.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidParams("training split is empty".into()));
    }
    let mut model = Model::new(model_config.clone())?;
    let mut adam = AdamState::new(model.params(), config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let val_refs: Vec<&Sample> = val_set.iter().collect();

    for epoch in 0..config.epochs {
        let mut num = 0.0;
        let mut den = 0.0;
        for batch in epoch_batches(train_set.len(), config.batch_size, config.seed, epoch as u64)? {
            let augmented: Vec<Sample> = batch
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, epoch as u64, s.id as u64]));
                    augment_sample(s, &config.augment, &mut rng).0
                })
                .collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            let b = batch_tensors(&refs, model_config.input_kind, stats)?;
            let (px, py, cache) = model.forward(&b.input, &b.mask)?;
            let (loss, gx, gy) = masked_mse(&px, &py, &b.target_vx, &b.target_vy, &b.mask)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, history });
            }
            let grads = model.backward(&cache, &gx, &gy)?;
            adam.update(&mut model.params_mut(), &grads)?;
            let count = 2.0 * b.mask.data().iter().sum::<f64>();
            num += loss * count;
            den += count;
        }
        let train_loss = if den > 0.0 { num / den } else { 0.0 };
        let (val_loss, val_rmse_mps) = if val_refs.is_empty() {
            (train_loss, f64::NAN)
        } else {
            let (vn, vd) = pooled_loss(&model, &val_refs, stats)?;
            let rmse = sample_rmse(&model, &val_refs, stats)?;
            (if vd > 0.0 { vn / vd } else { 0.0 }, rmse.iter().sum::<f64>() / rmse.len() as f64)
        };
        let row = EpochLoss { epoch, train_loss, val_loss, val_rmse_mps };
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} val rmse {val_rmse_mps:.4} m/s");
        history.push(row);
        if !train_loss.is_finite() || !val_loss.is_finite() || !model.params().iter().all(|p| p.is_finite()) {
            return Err(Error::Diverged { epoch, history });
        }
        if best.as_ref().map_or(true, |b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, Some(epoch)),
        None => (model, None),
    };
    Ok(TrainOutcome { model, history, best_epoch })
}

/// Predicted velocity fields in m/s, zero outside the fluid.
pub fn predict_fields(model: &Model, samples: &[&Sample], stats: &StandardizationStats) -> Result<Vec<(ScalarField, ScalarField)>> {
    let (sx, sy) = (stats.get(FieldKind::Vx)?, stats.get(FieldKind::Vy)?);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let b = batch_tensors(chunk, model.config().input_kind, stats)?;
        let (px, py) = model.predict(&b.input, &b.mask)?;
        for (i, s) in chunk.iter().enumerate() {
            let grid = s.mask.grid;
            let m = &s.mask.values;
            let phys = |t: &Tensor, st: crate::raster::KindStats| {
                let vals = t.slice_outer(i).into_data().iter().zip(m).map(|(v, &mk)| mk * (v * st.std + st.mean)).collect();
                ScalarField::from_values(grid, vals)
            };
            out.push((phys(&px, sx)?, phys(&py, sy)?));
        }
    }
    Ok(out)
}

/// Masked RMSE in m/s of every sample.
pub fn sample_rmse(model: &Model, samples: &[&Sample], stats: &StandardizationStats) -> Result<Vec<f64>> {
    let preds = predict_fields(model, samples, stats)?;
    Ok(samples
        .iter()
        .zip(&preds)
        .map(|(s, (px, py))| masked_rmse(&px.values, &py.values, &s.vx.values, &s.vy.values, &s.mask.values))
        .collect())
}

pub fn mean_rmse(model: &Model, samples: &[&Sample], stats: &StandardizationStats) -> Result<f64> {
    let r = sample_rmse(model, samples, stats)?;
    if r.is_empty() {
        return Ok(0.0);
    }
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

pub fn write_loss_csv<W: Write>(mut w: W, history: &[EpochLoss]) -> io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,val_rmse_mps")?;
    for h in history {
        writeln!(w, "{},{:.9e},{:.9e},{:.9e}", h.epoch, h.train_loss, h.val_loss, h.val_rmse_mps)?;
    }
    Ok(())
}
