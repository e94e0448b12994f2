//! Loss, optimisation and the epoch loop.

mod batch;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use batch::{plan_batch, BatchPlan};
pub use optim::{bce_loss, clip_global_norm, noam_lr, Adam, BCE_EPS};

use crate::attention::ForwardContext;
use crate::data::{split_users, windows_for, Dataset, SplitIndices, SplitRatios, WindowedExample};
use crate::embeddings::EmbeddingDetail;
use crate::error::{Error, Result};
use crate::evaluation::{acc, auc, score_examples};
use crate::model::{Architecture, Checkpoint, Model, ModelConfig};
use crate::numerics::{Graph, RngStream};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Every key is required; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub architecture: Architecture,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub window: usize,
    pub stride: usize,
    pub dropout: f64,
    pub attention_dropout: bool,
    pub embedding: EmbeddingDetail,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    pub max_epochs: usize,
    /// 0 means no step limit.
    pub max_steps: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            architecture: Architecture::Saint,
            layers: 4,
            d_model: 512,
            heads: 8,
            d_ff: 2048,
            window: 100,
            stride: 100,
            dropout: 0.1,
            attention_dropout: false,
            embedding: EmbeddingDetail::A,
            batch_size: 128,
            warmup_steps: 4000,
            peak_lr: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            max_epochs: 100,
            max_steps: 0,
            patience: 10,
            split_train: 0.7,
            split_val: 0.1,
            split_test: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        if c.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                c.schema_version
            )));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        TrainConfig::from_toml_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("window", self.window),
            ("stride", self.stride),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("heads {} must divide d_model {}", self.heads, self.d_model));
        }
        if self.stride > self.window {
            return bad(format!("stride {} exceeds window {}", self.stride, self.window));
        }
        if self.warmup_steps == 0 || !(self.peak_lr > 0.0) {
            return bad("warmup_steps and peak_lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be nonnegative".into());
        }
        self.split_ratios()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.split_train,
            val: self.split_val,
            test: self.split_test,
        }
    }

    pub fn model_config(&self, num_exercises: usize, num_categories: usize) -> ModelConfig {
        ModelConfig {
            architecture: self.architecture,
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            window: self.window,
            dropout: self.dropout,
            attention_dropout: self.attention_dropout,
            detail: self.embedding,
            num_exercises,
            num_categories,
        }
    }

    /// Seeded user split of `dataset` under this configuration.
    pub fn split(&self, dataset: &Dataset) -> Result<SplitIndices> {
        split_users(&dataset.users, self.split_ratios(), self.seed)
    }
}

/// Windowed examples of the given users, in user order.
pub fn examples_for(dataset: &Dataset, users: &[usize], window: usize, stride: usize) -> Result<Vec<WindowedExample>> {
    let mut out = Vec::new();
    for &u in users {
        out.extend(windows_for(u, &dataset.users[u].interactions, window, stride)?);
    }
    Ok(out)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_acc: f64,
}

impl EpochLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log lines serialize")
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    /// Snapshot with the highest validation AUC.
    pub best: Checkpoint,
    pub steps: u64,
}

/// Loss and gradient computation for one batch, shared by training and
/// tests. Returns the loss and the per-parameter gradients in store order.
pub fn batch_gradients(
    model: &Model,
    examples: &[&WindowedExample],
    ctx: &mut ForwardContext,
) -> Result<(f64, Vec<crate::numerics::Tensor>)> {
    let plan = plan_batch(model.config().architecture, examples, false);
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let out = model.forward(&mut g, &bound, &plan.inputs, ctx)?;
    let loss = g.bce(out.probs, &plan.targets, &plan.weights, BCE_EPS)?;
    let value = g.value(loss).data()[0];
    g.backward(loss)?;
    Ok((value, bound.grads(&g)))
}

/// Mean loss of a batch in eval mode.
pub fn batch_loss(model: &Model, examples: &[&WindowedExample]) -> Result<f64> {
    let plan = plan_batch(model.config().architecture, examples, false);
    let mut g = Graph::new();
    let bound = model.params().bind_frozen(&mut g);
    let out = model.forward(&mut g, &bound, &plan.inputs, &mut ForwardContext::eval())?;
    let loss = g.bce(out.probs, &plan.targets, &plan.weights, BCE_EPS)?;
    Ok(g.value(loss).data()[0])
}

const RNG_INIT: u64 = 1;
const RNG_SHUFFLE: u64 = 2;
const RNG_DROPOUT: u64 = 3;

/// Trains a fresh model on the training users of `splits`, validating after
/// every epoch and keeping the best-validation snapshot. `on_epoch` sees
/// each log line as it is produced.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    splits: &SplitIndices,
    manifest_hash: &str,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    config.validate()?;
    let train_examples = examples_for(dataset, &splits.train, config.window, config.stride)?;
    let val_examples = examples_for(dataset, &splits.val, config.window, config.stride)?;
    if train_examples.is_empty() || val_examples.is_empty() {
        return Err(Error::Validation("training and validation splits must be nonempty".into()));
    }
    let vocab = &dataset.vocabulary;
    let root = RngStream::new(config.seed);
    let mut model = Model::new(
        config.model_config(vocab.num_exercises(), vocab.num_categories()),
        &mut root.derive(RNG_INIT),
    )?;
    let mut adam = Adam::new(model.params().tensors(), config.adam_beta1, config.adam_beta2, config.adam_eps);
    let snapshot = |model: &Model, epoch, step, val_auc| Checkpoint {
        model: model.clone(),
        train_config: Some(config.clone()),
        manifest_hash: manifest_hash.to_string(),
        vocabulary: vocab.clone(),
        epoch,
        step,
        val_auc,
    };

    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..train_examples.len()).collect();
    let shuffle_rng = root.derive(RNG_SHUFFLE);
    let dropout_rng = root.derive(RNG_DROPOUT);

    for epoch in 1..=config.max_epochs {
        shuffle_rng.derive(epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut loss_weight) = (0.0, 0.0);
        let mut lr = noam_lr(step.max(1), config.warmup_steps, config.peak_lr);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<&WindowedExample> = chunk.iter().map(|&i| &train_examples[i]).collect();
            let mut ctx = ForwardContext {
                train: true,
                dropout: config.dropout,
                attention_dropout: config.attention_dropout,
                rng: dropout_rng.derive(step),
            };
            let diverged = |detail: String, best: &Option<Checkpoint>| Error::Diverged {
                step,
                detail,
                last_good: best.clone().map(Box::new),
            };
            let (loss, mut grads) = match batch_gradients(&model, &batch, &mut ctx) {
                Ok(r) => r,
                Err(Error::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"), &best)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}"), &best));
            }
            clip_global_norm(&mut grads, config.grad_clip);
            lr = noam_lr(step, config.warmup_steps, config.peak_lr);
            match adam.step(model.params_mut().tensors_mut(), &grads, lr) {
                Ok(()) => {}
                Err(Error::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"), &best)),
                Err(e) => return Err(e),
            }
            let targets: usize = batch.iter().map(|e| e.num_targets()).sum();
            loss_sum += loss * targets as f64;
            loss_weight += targets as f64;
            if config.max_steps > 0 && step >= config.max_steps {
                break;
            }
        }
        let log = finish_epoch(&model, &val_examples, config, epoch, step, lr, loss_sum / loss_weight)?;
        on_epoch(&log);
        if best.as_ref().is_none_or(|b| b.val_auc.is_some_and(|a| log.val_auc > a)) {
            best = Some(snapshot(&model, epoch, step, Some(log.val_auc)));
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(log);
        let out_of_steps = config.max_steps > 0 && step >= config.max_steps;
        if out_of_steps || (config.patience > 0 && since_best >= config.patience) {
            break;
        }
    }
    Ok(TrainReport {
        history,
        best: best.expect("at least one epoch runs"),
        steps: step,
    })
}

fn finish_epoch(
    model: &Model,
    val: &[WindowedExample],
    config: &TrainConfig,
    epoch: usize,
    step: u64,
    lr: f64,
    train_loss: f64,
) -> Result<EpochLog> {
    let scored = score_examples(model, val, config.batch_size)?;
    Ok(EpochLog {
        epoch,
        step,
        lr,
        train_loss,
        val_auc: auc(&scored)?,
        val_acc: acc(&scored, 0.5)?,
    })
}

#[cfg(test)]
mod tests;
