//! Exact gradients, AdamW, and the training loop.

mod adamw;
mod fast;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{GateSpec, Model, ModelConfig};
use crate::data::{Dataset, TaskSample};
use crate::error::{Error, Result};
use crate::rng;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use fast::{backward, cross_entropy, loss, Accumulator, Prepared, SampleCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 20,
            optimizer: AdamWConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

/// Uniform `[−1/√fan_in, 1/√fan_in]` weights, zero biases, unit layernorm gain.
pub fn init_model(config: ModelConfig, gate: GateSpec, seed: u64) -> Model {
    let mut model = Model::zeros(config, gate);
    let mut r = rng::stream(seed, "init");
    let p = &mut model.params;
    for w in [
        &mut p.input_proj,
        &mut p.attention.w_q,
        &mut p.attention.w_k,
        &mut p.attention.w_v,
        &mut p.attention.w_o,
        &mut p.w_gate,
        &mut p.mlp_w1,
        &mut p.mlp_w2,
    ] {
        let bound = 1.0 / (w.nrows() as f64).sqrt();
        w.iter_mut().for_each(|v| *v = r.gen_range(-bound..=bound));
    }
    p.ln_gain.fill(1.0);
    model
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { epoch: usize, step: u64, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochMetrics>,
    pub status: RunStatus,
}

impl TrainOutcome {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_acc)
    }
}

pub fn accuracy(model: &Model, samples: &[TaskSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("accuracy of an empty sample set".into()));
    }
    let prepared = Prepared::new(model);
    let mut correct = 0usize;
    for s in samples {
        let logits = prepared.logits(&s.tokens)?;
        let pred = u8::from(logits[1] > logits[0]);
        correct += usize::from(pred == s.label);
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Trains one model. Initialization and shuffling draw from streams derived
/// from `seed`; the dataset is passed in so its seed is the caller's choice.
pub fn train(config: &TrainConfig, data: &Dataset, gate: GateSpec, seed: u64) -> Result<TrainOutcome> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Config("training needs non-empty train and test splits".into()));
    }
    let mut model = init_model(config.model, gate, seed);
    let mut state = OptimizerState::new(config.optimizer, &model.params);
    let mut shuffle_rng = rng::stream(seed, "shuffle");
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[[f64; 2]], u8)> = chunk
                .iter()
                .map(|&i| (data.train[i].tokens.as_slice(), data.train[i].label))
                .collect();
            let (batch_loss, grads) = backward(&model, &batch)?;
            if !batch_loss.is_finite() {
                return Ok(TrainOutcome {
                    model,
                    epochs,
                    status: RunStatus::Aborted {
                        epoch,
                        step: state.step,
                        reason: format!("non-finite loss {batch_loss}"),
                    },
                });
            }
            weighted_loss += batch_loss * chunk.len() as f64;
            adamw_step(&mut model.params, &grads, &mut state);
        }
        epochs.push(EpochMetrics {
            epoch,
            train_loss: weighted_loss / data.train.len() as f64,
            test_acc: accuracy(&model, &data.test)?,
        });
    }
    Ok(TrainOutcome {
        model,
        epochs,
        status: RunStatus::Completed,
    })
}
