use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_grad, patchify, MgnImage};
use super::weights::MgnWeights;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 8,
            seed: 0,
        }
    }
}

/// One patchified training image and its per-patch binary label.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub patches: Matrix,
    pub labels: Vec<u8>,
}

impl TrainSample {
    pub fn new(weights: &MgnWeights, image: &MgnImage, labels: Vec<u8>) -> Result<Self> {
        let patches = patchify(&weights.config, image)?;
        if labels.len() != weights.config.num_patches() {
            return Err(Error::shape(
                "TrainSample::new",
                format!("{} patches", weights.config.num_patches()),
                format!("{} labels", labels.len()),
            ));
        }
        Ok(Self { patches, labels })
    }
}

/// Adam state over the full weight set.
pub struct Adam {
    cfg: TrainConfig,
    m: MgnWeights,
    v: MgnWeights,
    step: i32,
}

impl Adam {
    pub fn new(weights: &MgnWeights, cfg: TrainConfig) -> Self {
        Self {
            cfg,
            m: MgnWeights::zeros(weights.config),
            v: MgnWeights::zeros(weights.config),
            step: 0,
        }
    }

    pub fn step(&mut self, weights: &mut MgnWeights, grad: &MgnWeights) {
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let params = weights.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

fn accumulate(into: &mut MgnWeights, g: &MgnWeights, k: f64) {
    for (a, b) in into.tensors_mut().into_iter().zip(g.tensors()) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += k * y;
        }
    }
}

/// Mini-batch Adam on mean BCE. Returns the trained weights and the per-epoch
/// mean training loss (measured before each sample's update step).
pub fn train(
    mut weights: MgnWeights,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(MgnWeights, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be non-negative, got {}",
            cfg.lr
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&weights, *cfg);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_index = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut per_sample = vec![0.0; dataset.len()];
        for chunk in order.chunks(cfg.batch) {
            let mut grad = MgnWeights::zeros(weights.config);
            let k = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &dataset[i];
                let (loss, g) = loss_and_grad(&weights, s.patches.clone(), &s.labels)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training loss at batch {batch_index}"
                    )));
                }
                per_sample[i] = loss;
                accumulate(&mut grad, &g, k);
            }
            if cfg.lr > 0.0 {
                adam.step(&mut weights, &grad);
            }
            batch_index += 1;
        }
        history.push(per_sample.iter().sum::<f64>() / dataset.len() as f64);
    }
    Ok((weights, history))
}
