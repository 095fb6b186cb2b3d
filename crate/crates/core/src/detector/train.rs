use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{DetectorModel, Example};
use crate::domain::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

fn d_lr() -> f64 {
    1e-3
}
fn d_batch() -> usize {
    32
}
fn d_epochs() -> usize {
    30
}
fn d_wd() -> f64 {
    1e-5
}
fn d_hidden() -> usize {
    128
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "d_hidden")]
    pub d_h: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: d_lr(),
            batch_size: d_batch(),
            epochs: d_epochs(),
            weight_decay: d_wd(),
            seed: 0,
            optimizer: OptimizerKind::Adam,
            d_h: d_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be a positive real"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.d_h == 0 {
            return Err(Error::invalid("batch_size, epochs and d_h must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut DetectorModel, grad: &DetectorModel, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let (m, v) = (&mut self.m, &mut self.v);
        model.update_with(grad, |i, p, g| {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
        });
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    /// Mean training cross-entropy at the start of each epoch.
    pub loss_trace: Vec<f64>,
    /// Mean training cross-entropy after the last epoch.
    pub final_loss: f64,
}

/// Mini-batch training of `model` on `data`. The shuffle order is drawn from
/// `cfg.seed`, so equal inputs give equal outputs.
pub fn train(mut model: DetectorModel, data: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let has = |l: Label| data.iter().any(|e| e.label == l);
    if !(has(Label::Real) && has(Label::Fake)) {
        return Err(Error::invalid("training split contains a single class"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = Adam::new(model.n_params());
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    let diverged = |epoch: usize, what: &str| Error::TrainingDiverged {
        fold: None,
        reason: format!("{what} at epoch {epoch}"),
    };

    for epoch in 0..cfg.epochs {
        let loss = model.cross_entropy(data)?;
        if !loss.is_finite() {
            return Err(diverged(epoch, "non-finite loss"));
        }
        loss_trace.push(loss);

        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (obj, grad) = model.objective_and_grad(&batch, cfg.weight_decay)?;
            if !obj.is_finite() {
                return Err(diverged(epoch, "non-finite batch objective"));
            }
            match cfg.optimizer {
                OptimizerKind::Adam => adam.step(&mut model, &grad, cfg.learning_rate),
                OptimizerKind::Sgd => {
                    let lr = cfg.learning_rate;
                    model.update_with(&grad, |_, p, g| *p -= lr * g);
                }
            }
        }
        if model.flat_params().iter().any(|v| !v.is_finite()) {
            return Err(diverged(epoch, "non-finite parameters"));
        }
    }
    let final_loss = model.cross_entropy(data)?;
    if !final_loss.is_finite() {
        return Err(diverged(cfg.epochs, "non-finite loss"));
    }
    Ok(TrainOutcome {
        model,
        loss_trace,
        final_loss,
    })
}
