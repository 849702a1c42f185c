use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{CptmModel, ModelInput};
use super::PatchTriple;
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Graph};

/// One window and the labels of its middle patch.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub triple: PatchTriple,
    pub labels: Array3<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr·min_lr_fraction` over `steps`.
    pub cosine_decay: bool,
    pub min_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            lr: 1e-3,
            cosine_decay: true,
            min_lr_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.min_lr_fraction) {
            return Err(Error::Config(format!(
                "min_lr_fraction {} not in [0, 1]",
                self.min_lr_fraction
            )));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{n} {b} not in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    /// Learning rate for zero-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if !self.cosine_decay || self.steps <= 1 {
            return self.lr;
        }
        let t = step.min(self.steps - 1) as f64 / (self.steps - 1) as f64;
        let floor = self.lr * self.min_lr_fraction;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub seed: u64,
}

fn sample_loss_and_grads(model: &CptmModel, sample: &TrainSample) -> Result<(f64, Vec<Vec<f64>>)> {
    let c = model.config();
    let (d, h, w) = sample.labels.dim();
    if [d, h, w] != c.patch_shape {
        return Err(Error::Shape(format!(
            "labels of shape {:?}, patch is {:?}",
            [d, h, w],
            c.patch_shape
        )));
    }
    let flat = sample.labels.as_standard_layout();
    let labels: Vec<usize> = model
        .to_hierarchical(flat.as_slice().unwrap())
        .into_iter()
        .map(usize::from)
        .collect();
    if let Some(bad) = labels.iter().find(|&&l| l >= c.n_classes) {
        return Err(Error::Data(format!(
            "label {bad} outside [0, {})",
            c.n_classes
        )));
    }
    let mut g = Graph::new();
    let p = model.store().bind(&mut g);
    let logits = model.logits(&mut g, &p, ModelInput::Triple(&sample.triple))?;
    let loss = g.cross_entropy(logits, &labels)?;
    g.backward(loss)?;
    let grads = p
        .vars()
        .iter()
        .zip(model.store().iter())
        .map(|(&v, (_, _, t))| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    Ok((g.value(loss)[0], grads))
}

/// Mean cross-entropy of the batch without updating anything.
pub fn batch_loss(model: &CptmModel, batch: &[TrainSample]) -> Result<f64> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let p = model.store().bind(&mut g);
            let logits = model.logits(&mut g, &p, ModelInput::Triple(&s.triple))?;
            let flat = s.labels.as_standard_layout();
            let labels: Vec<usize> = model
                .to_hierarchical(flat.as_slice().unwrap())
                .into_iter()
                .map(usize::from)
                .collect();
            let loss = g.cross_entropy(logits, &labels)?;
            Ok(g.value(loss)[0])
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One Adam step on the mean per-voxel cross-entropy of `batch`. Samples are
/// differentiated in parallel and reduced in batch order, so the result is
/// independent of thread scheduling. Returns the batch loss before the step.
pub fn train_step(model: &mut CptmModel, adam: &mut Adam, batch: &[TrainSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty training batch".into()));
    }
    let results: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_iter()
        .map(|s| sample_loss_and_grads(model, s))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Vec<Vec<f64>> = model
        .store()
        .iter()
        .map(|(_, _, t)| vec![0.0; t.numel()])
        .collect();
    for (l, grads) in &results {
        loss += l;
        for (acc, g) in total.iter_mut().zip(grads) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss became {loss}")));
    }
    for (t, mut g) in model.store_mut().tensors_mut().zip(total) {
        g.iter_mut().for_each(|x| *x *= scale);
        t.set_grad(g)?;
    }
    adam.step(model.store_mut())?;
    Ok(loss)
}

/// Runs `config.steps` steps on batches drawn from `next_batch`, reporting
/// every step to `log`. Returns the loss of every step.
pub fn fit(
    model: &mut CptmModel,
    config: &TrainConfig,
    seed: u64,
    mut next_batch: impl FnMut(usize) -> Result<Vec<TrainSample>>,
    mut log: impl FnMut(&LogEntry),
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut adam = Adam::new(config.adam(), model.store());
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let lr = config.lr_at(step);
        adam.config.lr = lr;
        let batch = next_batch(step)?;
        let loss = train_step(model, &mut adam, &batch)?;
        log(&LogEntry {
            step,
            loss,
            lr,
            seed,
        });
        losses.push(loss);
    }
    Ok(losses)
}
