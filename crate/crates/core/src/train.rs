//! Mini-batch training loop with per-epoch metrics, early stopping, and a
//! best-test-loss parameter snapshot.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    add_l2_grads, backward_accumulate, forward, init_params, ModelConfig, ModelParams,
};
use crate::optim::{adam_step, sgd_step, AdamConfig, OptimizerKind, OptimizerState};
use crate::preprocess::{one_hot, OneHotTarget, WindowedDataset};
use crate::rng::substream;
use crate::tensor::{softmax_cross_entropy, NumericArray};

// Windows per gradient-accumulation chunk. Chunks execute in parallel but
// their partial sums combine in chunk order, so results do not depend on
// the worker count.
const GRAD_CHUNK: usize = 8;

/// Early-stopping rule: stop when the test loss has not improved by more
/// than `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

/// Training hyperparameters. Defaults: batch size 200, 1000 epochs,
/// learning rate 1e-4, Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub early_stop: Option<EarlyStop>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            epochs: 1000,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            early_stop: None,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        self.adam.validate()
    }
}

/// One epoch of the training curve. Losses are mean cross-entropy plus the
/// L2 penalty at the epoch's end; `seconds` is wall time and is the one
/// field excluded from reproducibility comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

/// Per-epoch records, strictly increasing in `epoch`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Equality of everything except the wall-time field.
    pub fn metrics_eq(&self, other: &TrainHistory) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss == b.train_loss
                    && a.train_acc == b.train_acc
                    && a.test_loss == b.test_loss
                    && a.test_acc == b.test_acc
            })
    }

    /// `epoch,train_loss,train_acc,test_loss,test_acc,seconds` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut body = String::from("epoch,train_loss,train_acc,test_loss,test_acc,seconds\n");
        for r in &self.records {
            body.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.seconds
            ));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Everything [`train`] produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best test loss.
    pub best_params: ModelParams,
    /// Parameters at the end of the run.
    pub final_params: ModelParams,
    /// 1-based epoch the snapshot was taken at.
    pub best_epoch: usize,
    pub history: TrainHistory,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct ChunkResult {
    grads: ModelParams,
    ce_sum: f64,
    correct: usize,
}

fn process_chunk(
    config: &ModelConfig,
    params: &ModelParams,
    inputs: &[NumericArray],
    targets: &[OneHotTarget],
    ids: &[usize],
) -> Result<ChunkResult> {
    let mut grads = ModelParams::zeros(config)?;
    let mut ce_sum = 0.0;
    let mut correct = 0;
    for &i in ids {
        let pass = forward(config, params, &inputs[i])?;
        let (ce, _) = softmax_cross_entropy(pass.logits(), targets[i].values())?;
        ce_sum += ce;
        if argmax(pass.probabilities.data()) == targets[i].label() {
            correct += 1;
        }
        backward_accumulate(config, params, &pass.cache, &targets[i], &mut grads)?;
    }
    Ok(ChunkResult { grads, ce_sum, correct })
}

fn evaluate_split(
    config: &ModelConfig,
    params: &ModelParams,
    inputs: &[NumericArray],
    targets: &[OneHotTarget],
    ids: &[usize],
) -> Result<(f64, usize)> {
    let per_window: Vec<(f64, bool)> = ids
        .par_iter()
        .map(|&i| -> Result<(f64, bool)> {
            let pass = forward(config, params, &inputs[i])?;
            let (ce, _) = softmax_cross_entropy(pass.logits(), targets[i].values())?;
            Ok((ce, argmax(pass.probabilities.data()) == targets[i].label()))
        })
        .collect::<Result<_>>()?;
    let mut ce_sum = 0.0;
    let mut correct = 0;
    for (ce, ok) in per_window {
        ce_sum += ce;
        correct += usize::from(ok);
    }
    Ok((ce_sum, correct))
}

/// Runs the full loop: seeded shuffling into mini-batches, gradient steps,
/// per-epoch train/test metrics, optional early stopping. Returns the
/// best-test-loss snapshot alongside the end-of-run parameters.
pub fn train(
    dataset: &WindowedDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    model_config.validate()?;
    dataset.validate()?;
    if dataset.train_indices.is_empty() || dataset.test_indices.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "train/test partitions must both be nonempty (got {}/{})",
            dataset.train_indices.len(),
            dataset.test_indices.len()
        )));
    }

    let inputs: Vec<NumericArray> = dataset.windows.iter().map(|w| w.to_input()).collect();
    let targets: Vec<OneHotTarget> = dataset
        .windows
        .iter()
        .map(|w| one_hot(w.label, dataset.num_classes))
        .collect::<Result<_>>()?;

    let mut params = init_params(model_config, train_config.seed)?;
    let mut opt_state = OptimizerState::new();
    let mut shuffle_rng = substream(train_config.seed, "shuffle");
    let lambda = model_config.l2_lambda;

    let mut order: Vec<usize> = dataset.train_indices.clone();
    let n_train = order.len();
    let n_test = dataset.test_indices.len();

    let mut history = TrainHistory::default();
    let mut best_test_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut stall_best = f64::INFINITY;
    let mut stalled = 0usize;

    for epoch in 1..=train_config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_ce = 0.0;
        let mut epoch_correct = 0usize;
        for (batch_idx, batch) in order.chunks(train_config.batch_size).enumerate() {
            let chunk_results: Vec<ChunkResult> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|ids| process_chunk(model_config, &params, &inputs, &targets, ids))
                .collect::<Result<_>>()?;

            let mut grads = ModelParams::zeros(model_config)?;
            let mut batch_ce = 0.0;
            for chunk in chunk_results {
                grads.add_assign(&chunk.grads)?;
                batch_ce += chunk.ce_sum;
                epoch_correct += chunk.correct;
            }
            let batch_loss = batch_ce / batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_idx });
            }
            epoch_ce += batch_ce;

            grads.scale(1.0 / batch.len() as f64);
            if lambda > 0.0 {
                add_l2_grads(&mut grads, &params, lambda);
            }
            match train_config.optimizer {
                OptimizerKind::Sgd => sgd_step(&mut params, &grads, train_config.learning_rate)?,
                OptimizerKind::Adam => adam_step(
                    &mut params,
                    &grads,
                    &mut opt_state,
                    train_config.learning_rate,
                    &train_config.adam,
                )?,
            }
        }

        let penalty = lambda * params.l2_penalty();
        let (test_ce, test_correct) =
            evaluate_split(model_config, &params, &inputs, &targets, &dataset.test_indices)?;
        let train_loss = epoch_ce / n_train as f64 + penalty;
        let test_loss = test_ce / n_test as f64 + penalty;
        if !test_loss.is_finite() || !train_loss.is_finite() {
            let last_batch = (n_train - 1) / train_config.batch_size;
            return Err(Error::Divergence { epoch, batch: last_batch });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc: epoch_correct as f64 / n_train as f64,
            test_loss,
            test_acc: test_correct as f64 / n_test as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {}: train_loss={:.6} train_acc={:.4} test_loss={:.6} test_acc={:.4}",
            record.epoch,
            record.train_loss,
            record.train_acc,
            record.test_loss,
            record.test_acc
        );
        history.records.push(record);

        if test_loss < best_test_loss {
            best_test_loss = test_loss;
            best_params = params.clone();
            best_epoch = epoch;
        }
        if let Some(es) = train_config.early_stop {
            if stall_best - test_loss > es.min_delta {
                stall_best = test_loss;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= es.patience {
                    log::info!("early stop at epoch {epoch} after {stalled} stalled epochs");
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome { best_params, final_params: params, best_epoch, history })
}
