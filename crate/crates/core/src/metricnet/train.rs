use std::collections::{BTreeMap, HashMap};
use std::hash::BuildHasher;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{pair_loss_grad, SiameseModel};
use crate::error::{Error, Result};
use crate::pairgen::{BatchSchedule, TrainingPair};

/// Pairs per parallel work unit. Gradients are summed in chunk order, so the
/// result does not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` iterations.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Leading backbone layers excluded from updates.
    #[serde(default)]
    pub frozen_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.001,
            momentum: 0.9,
            lr_decay: 0.5,
            decay_every: 512,
            seed: 0,
            frozen_layers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.decay_every == 0 || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("decay must be in (0, 1] and applied every >= 1 iterations");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((iteration / self.decay_every) as i32)
    }
}

/// Lookup of view rasters by sample id.
pub trait ViewSource: Sync {
    fn view(&self, sample_id: &str) -> Option<&RgbImage>;
}

impl<S: BuildHasher + Sync> ViewSource for HashMap<String, RgbImage, S> {
    fn view(&self, sample_id: &str) -> Option<&RgbImage> {
        self.get(sample_id)
    }
}

impl ViewSource for BTreeMap<String, RgbImage> {
    fn view(&self, sample_id: &str) -> Option<&RgbImage> {
        self.get(sample_id)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SiameseModel,
    /// Mean pair loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// SGD with momentum over mini-batches of pairs; per-pair gradient of the
/// cross-entropy through the calibration head and both twins.
pub fn train(
    mut model: SiameseModel,
    pairs: &[TrainingPair],
    views: &dyn ViewSource,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    if config.frozen_layers > model.arch().layers().len() {
        return Err(Error::InvalidArgument(format!(
            "cannot freeze {} of {} layers",
            config.frozen_layers,
            model.arch().layers().len()
        )));
    }
    let mut inputs: BTreeMap<&str, Vec<f32>> = BTreeMap::new();
    for p in pairs {
        for id in [&p.left, &p.right] {
            if !inputs.contains_key(id.as_str()) {
                let img = views
                    .view(id)
                    .ok_or_else(|| Error::Validation(format!("no view raster for sample '{id}'")))?;
                inputs.insert(id, model.prepare(img)?);
            }
        }
    }

    let n = model.params().len();
    let schedule = BatchSchedule::new(pairs.len(), config.batch_size, config.seed)?;
    let mut velocity = vec![0f32; n];
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut iteration = 0usize;
    let momentum = config.momentum as f32;

    for epoch in 0..config.epochs {
        let mut epoch_loss = 0f64;
        for (bi, batch) in schedule.epoch(epoch).iter().enumerate() {
            let scale = 1.0 / batch.len() as f32;
            let arch = model.arch();
            let params = model.params();
            let partials: Vec<(f64, Vec<f32>)> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = vec![0f32; n];
                    let mut loss = 0f64;
                    for &pi in chunk {
                        let p = &pairs[pi];
                        loss += pair_loss_grad(
                            arch,
                            params,
                            &inputs[p.left.as_str()],
                            &inputs[p.right.as_str()],
                            p.label,
                            scale,
                            &mut g,
                            config.frozen_layers,
                        ) as f64;
                    }
                    (loss, g)
                })
                .collect();
            let mut grad = vec![0f32; n];
            let mut batch_loss = 0f64;
            for (l, g) in partials {
                batch_loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            epoch_loss += batch_loss;
            let lr = config.learning_rate_at(iteration) as f32;
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
            iteration += 1;
        }
        loss_trace.push(epoch_loss / pairs.len() as f64);
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Writes `epoch,mean_loss` rows (epochs counted from 1).
pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
