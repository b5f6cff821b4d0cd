use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{sigmoid, Encoder, ModelConfig};
use super::PreparedData;
use crate::error::{Error, Result};
use crate::eval::{prf1, DevCriterion, Scores, SeedRun};
use crate::model::Label;

/// Training hyperparameters and encoder shape. `Default` holds the
/// fine-tuning values (batch 16, learning rate 2e-5, patience 3, threshold
/// 0.5, 20 seeds); [`TrainConfig::desk`] raises the learning rate for the
/// randomly initialized desk-scale encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub threshold: f64,
    pub n_seeds: usize,
    /// Weight of the positive (hateful) term of the loss. `None` uses the
    /// negative/positive ratio of the training split.
    pub pos_weight: Option<f64>,
    pub dev_criterion: DevCriterion,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub positions: bool,
    /// Lower bound on the encoder sequence length (class token included).
    pub min_seq_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            patience: 3,
            max_epochs: 50,
            threshold: 0.5,
            n_seeds: 20,
            pos_weight: None,
            dev_criterion: DevCriterion::F1,
            dim: 32,
            heads: 4,
            layers: 1,
            ffn_dim: 64,
            dropout: 0.1,
            positions: true,
            min_seq_len: 8,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            ..Self::default()
        }
    }

    pub fn model_config(&self, vocab_size: usize, seq_len: usize, image_dim: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            ffn_dim: self.ffn_dim,
            seq_len,
            image_dim,
            positions: self.positions,
            dropout: self.dropout,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_seeds == 0 || self.max_epochs == 0 {
            return Err(Error::Model("batch_size, n_seeds and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Model("learning_rate must be positive and threshold in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One classifier input after tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub meme_id: String,
    pub ids: Vec<usize>,
    pub label: Label,
    pub image: Option<Vec<f64>>,
}

/// Weighted binary cross entropy on a logit and its derivative:
/// `-[w·y·log p + (1-y)·log(1-p)]` with `p = sigmoid(z)`.
pub fn weighted_bce(logit: f64, y: f64, pos_weight: f64) -> (f64, f64) {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let loss = pos_weight * y * softplus(-logit) + (1.0 - y) * softplus(logit);
    let p = sigmoid(logit);
    let grad = -pos_weight * y * (1.0 - p) + (1.0 - y) * p;
    (loss, grad)
}

/// Negative over positive count of the training labels.
pub fn pos_weight_of(labels: &[Label]) -> Result<f64> {
    let pos = labels.iter().filter(|l| **l == Label::Hateful).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Model(format!(
            "training split needs both classes ({pos} hateful, {neg} non-hateful)"
        )));
    }
    Ok(neg as f64 / pos as f64)
}

/// Mean loss and gradient over a batch, accumulated into `grads`.
pub fn batch_loss_and_grad(
    encoder: &Encoder,
    batch: &[&EncodedExample],
    pos_weight: f64,
    mut rng: Option<&mut ChaCha8Rng>,
    grads: &mut [f64],
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let trace = encoder.forward(&ex.ids, ex.image.as_deref(), rng.as_deref_mut())?;
        let (loss, dlogit) = weighted_bce(trace.logit, ex.label.as_f64(), pos_weight);
        total += loss;
        encoder.backward(&trace, dlogit * scale, grads);
    }
    Ok(total * scale)
}

/// AdamW with decoupled weight decay on the masked parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    decay: Vec<bool>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(decay: Vec<bool>, cfg: &TrainConfig) -> Self {
        let n = decay.len();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            decay,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            let decay = if self.decay[i] { self.weight_decay * params[i] } else { 0.0 };
            params[i] -= self.lr * (update + decay);
        }
    }
}

/// Epoch-by-epoch training state for one seed.
pub struct Trainer {
    encoder: Encoder,
    opt: AdamW,
    rng: ChaCha8Rng,
    pos_weight: f64,
    batch_size: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(encoder: Encoder, cfg: &TrainConfig, pos_weight: f64, seed: u64) -> Self {
        let opt = AdamW::new(encoder.layout.decay_mask(), cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Initialization draws from stream 0 of the same seed.
        rng.set_stream(1);
        Self {
            encoder,
            opt,
            rng,
            pos_weight,
            batch_size: cfg.batch_size,
            epoch: 0,
        }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn into_encoder(self) -> Encoder {
        self.encoder
    }

    pub fn pos_weight(&self) -> f64 {
        self.pos_weight
    }

    /// One shuffled pass over the training data; returns the mean batch loss.
    pub fn run_epoch(&mut self, train: &[EncodedExample]) -> Result<f64> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut grads = vec![0.0; self.encoder.params.len()];
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(self.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = batch_loss_and_grad(&self.encoder, &batch, self.pos_weight, Some(&mut self.rng), &mut grads)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    loss,
                    epoch: self.epoch,
                    batch: b,
                });
            }
            self.opt.step(&mut self.encoder.params, &grads);
            total += loss;
            batches += 1;
        }
        Ok(total / batches.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub improved: bool,
}

pub struct TrainOutcome {
    /// Weights from the epoch with the lowest development loss.
    pub encoder: Encoder,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub pos_weight: f64,
}

/// Mean weighted loss over a dataset, without dropout.
pub fn mean_loss(encoder: &Encoder, data: &[EncodedExample], pos_weight: f64) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for ex in data {
        let logit = encoder.forward(&ex.ids, ex.image.as_deref(), None)?.logit;
        total += weighted_bce(logit, ex.label.as_f64(), pos_weight).0;
    }
    Ok(total / data.len() as f64)
}

/// Trains until the development loss has not improved for `patience`
/// consecutive epochs, or `max_epochs`. With an empty development set the
/// final weights are returned.
pub fn train(
    encoder: Encoder,
    train: &[EncodedExample],
    dev: &[EncodedExample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labels: Vec<Label> = train.iter().map(|e| e.label).collect();
    let pos_weight = match cfg.pos_weight {
        Some(w) => w,
        None => pos_weight_of(&labels)?,
    };
    let mut trainer = Trainer::new(encoder, cfg, pos_weight, seed);
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = trainer.run_epoch(train)?;
        let dev_loss = mean_loss(trainer.encoder(), dev, pos_weight)?;
        let improved = !dev.is_empty() && best.as_ref().is_none_or(|b| dev_loss < b.1);
        if improved || dev.is_empty() {
            best = Some((epoch, dev_loss, trainer.encoder().params.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        log::debug!("seed {seed} epoch {epoch}: train loss {train_loss:.4}, dev loss {dev_loss:.4}");
        log.push(EpochLog {
            epoch,
            train_loss,
            dev_loss,
            improved,
        });
        if !dev.is_empty() && stale >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_dev_loss, params) = best.expect("at least one epoch");
    let mut encoder = trainer.into_encoder();
    encoder.params = params;
    Ok(TrainOutcome {
        encoder,
        log,
        best_epoch,
        best_dev_loss,
        pos_weight,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub meme_id: String,
    pub probability: f64,
    pub label: Label,
}

pub fn predict(encoder: &Encoder, data: &[EncodedExample], threshold: f64) -> Result<Vec<Prediction>> {
    data.iter()
        .map(|ex| {
            let p = sigmoid(encoder.forward(&ex.ids, ex.image.as_deref(), None)?.logit);
            Ok(Prediction {
                meme_id: ex.meme_id.clone(),
                probability: p,
                label: Label::from_bool(p >= threshold),
            })
        })
        .collect()
}

pub fn score(predictions: &[Prediction], data: &[EncodedExample], positive: Label) -> Result<Scores> {
    let pred: Vec<Label> = predictions.iter().map(|p| p.label).collect();
    let gold: Vec<Label> = data.iter().map(|e| e.label).collect();
    prf1(&pred, &gold, positive)
}

pub struct SeedOutcome {
    pub seed: u64,
    pub dev: Scores,
    pub dev_loss: f64,
    pub test: Scores,
    pub dev_predictions: Vec<Prediction>,
    pub test_predictions: Vec<Prediction>,
    pub log: Vec<EpochLog>,
    pub encoder: Encoder,
}

impl SeedOutcome {
    pub fn summary(&self) -> SeedRun {
        SeedRun {
            seed: self.seed,
            dev: self.dev,
            dev_loss: self.dev_loss,
            test: self.test,
        }
    }
}

/// Trains one model per seed `0..n_seeds`. Each run is single-threaded and
/// reproducible; runs execute in parallel.
pub fn run_seeds(data: &PreparedData, cfg: &TrainConfig) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    (0..cfg.n_seeds as u64)
        .into_par_iter()
        .map(|seed| run_seed(data, cfg, seed))
        .collect()
}

pub fn run_seed(data: &PreparedData, cfg: &TrainConfig, seed: u64) -> Result<SeedOutcome> {
    let encoder = Encoder::new(data.model_config.clone(), seed)?;
    let outcome = train(encoder, &data.train, &data.dev, cfg, seed)?;
    let dev_predictions = predict(&outcome.encoder, &data.dev, cfg.threshold)?;
    let test_predictions = predict(&outcome.encoder, &data.test, cfg.threshold)?;
    Ok(SeedOutcome {
        seed,
        dev: score(&dev_predictions, &data.dev, data.positive)?,
        dev_loss: outcome.best_dev_loss,
        test: score(&test_predictions, &data.test, data.positive)?,
        dev_predictions,
        test_predictions,
        log: outcome.log,
        encoder: outcome.encoder,
    })
}
