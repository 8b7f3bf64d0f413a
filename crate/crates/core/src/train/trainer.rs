use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NormMode, Tape};
use crate::data::{augment, PreparedCase};
use crate::error::{Error, Result};
use crate::metrics::{categorize_slice, cross_entropy_loss, LabelMask, SliceCategory};
use crate::net::ZonalNet;
use crate::seeding::derive_seed;
use crate::tensor::{Tensor, TensorError};

use super::checkpoint::{Checkpoint, EpochRecord};
use super::config::TrainConfig;
use super::eval::validation_score;
use super::optim::{Sgd, SgdHyper};

// Independent random streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

/// One training example: slice `slice` of prepared case `case`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub case: usize,
    pub slice: usize,
}

/// Every slice of every case, or only slices containing prostate.
pub fn sample_list(cases: &[PreparedCase], prostate_only: bool) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (ci, case) in cases.iter().enumerate() {
        let masks = case.masks.as_ref().ok_or_else(|| Error::Dataset(format!("{} has no mask to train on", case.id)))?;
        for (z, m) in masks.iter().enumerate() {
            if !prostate_only || categorize_slice(m) != SliceCategory::NonProstate {
                samples.push(Sample { case: ci, slice: z });
            }
        }
    }
    Ok(samples)
}

/// Owns a model and its optimizer state during training.
pub struct Trainer {
    config: TrainConfig,
    model: ZonalNet,
    optimizer: Sgd,
    epoch: usize,
    iteration: usize,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ZonalNet::new(config.model.clone(), derive_seed(config.seed, &[STREAM_INIT]))?;
        let optimizer = Sgd::new(model.store());
        Ok(Self { config, model, optimizer, epoch: 0, iteration: 0, history: Vec::new() })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let model = ckpt.model()?;
        if ckpt.optimizer.velocity.len() != model.store().param_ids().len() {
            return Err(Error::Validation("optimizer state does not match the model".into()));
        }
        Ok(Self {
            config: ckpt.config,
            model,
            optimizer: ckpt.optimizer,
            epoch: ckpt.epoch,
            iteration: ckpt.iteration,
            history: ckpt.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            iteration: self.iteration,
            history: self.history.clone(),
            params: self.model.store().clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ZonalNet {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// One SGD step on a batch of input-size planes and their masks.
    /// `ids` label the batch in non-finite-loss diagnostics.
    pub fn step(&mut self, images: &[&[f32]], masks: &[LabelMask], ids: &[String], learning_rate: f64) -> Result<f64> {
        let s = self.config.model.input_size;
        let n = images.len();
        if n == 0 || masks.len() != n || images.iter().any(|p| p.len() != s * s) {
            return Err(Error::Validation(format!("batch of {n} images and {} masks at {s}×{s} expected", masks.len())));
        }
        let non_finite = |iteration| Error::NonFiniteLoss { epoch: self.epoch + 1, iteration, batch: ids.to_vec() };
        let input = Tensor::new([n, 1, s, s], images.concat())?;
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let mut forward = || -> Result<_> {
            let out = self.model.forward(&mut tape, x, NormMode::Train, true)?;
            let probs = tape.softmax_channel(out.logits)?;
            let loss = cross_entropy_loss(&mut tape, probs, masks)?;
            Ok((out, loss))
        };
        let (out, loss) = match forward() {
            Err(Error::Tensor(TensorError::NonFinite { .. })) => return Err(non_finite(self.iteration)),
            r => r?,
        };
        let value = f64::from(tape.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(non_finite(self.iteration));
        }
        tape.backward(loss)?;
        let grads = out.bindings.gradients(&tape, self.model.store());
        drop(tape);
        let hyper = SgdHyper { learning_rate, momentum: self.config.momentum, weight_decay: self.config.weight_decay };
        self.optimizer.step(self.model.store_mut(), &grads, hyper)?;
        self.model.apply_bn_updates(&out.bn_updates);
        self.iteration += 1;
        Ok(value)
    }

    /// Epoch order of sample indices, seeded by (run seed, epoch).
    pub fn epoch_order(&self, n_samples: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n_samples).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[STREAM_SHUFFLE, self.epoch as u64]));
        order.shuffle(&mut rng);
        order
    }

    /// Shuffles, augments and steps through every sample once; returns the
    /// sample-weighted mean loss.
    pub fn train_epoch(&mut self, cases: &[PreparedCase], total_iterations: usize) -> Result<f64> {
        let samples = sample_list(cases, self.config.prostate_slices_only)?;
        if samples.is_empty() {
            return Err(Error::Dataset("no training slices".into()));
        }
        let order = self.epoch_order(samples.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            let mut ids = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let Sample { case, slice } = samples[i];
                let c = &cases[case];
                let mask = &c.masks.as_ref().expect("checked by sample_list")[slice];
                let seed = derive_seed(self.config.seed, &[STREAM_AUGMENT, self.epoch as u64, i as u64]);
                let (img, m) = augment(&c.images[slice], mask, &self.config.augment.with_seed(seed))?;
                images.push(img);
                masks.push(m);
                ids.push(format!("{}:{slice}", c.id));
            }
            let refs: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
            let lr = self.config.learning_rate_at(self.iteration, total_iterations);
            loss_sum += self.step(&refs, &masks, &ids, lr)? * chunk.len() as f64;
        }
        self.epoch += 1;
        Ok(loss_sum / samples.len() as f64)
    }

    fn record(&mut self, record: EpochRecord) {
        self.history.push(record);
    }
}

/// Final and best checkpoints of a training run.
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
}

impl TrainOutcome {
    pub fn history(&self) -> &[EpochRecord] {
        &self.final_checkpoint.history
    }

    /// Writes `final` and `best` checkpoints and `history.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.final_checkpoint.save(&dir.join("final"))?;
        self.best_checkpoint.save(&dir.join("best"))?;
        let mut csv = String::from("epoch,train_loss,learning_rate,validation_dsc\n");
        for r in self.history() {
            let val = r.validation_dsc.map_or_else(String::new, |v| format!("{v:.6}"));
            csv.push_str(&format!("{},{:.6},{},{val}\n", r.epoch, r.train_loss, r.learning_rate));
        }
        let path = dir.join("history.csv");
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
    }
}

/// Trains from scratch for `config.epochs`.
pub fn train(config: &TrainConfig, train_cases: &[PreparedCase], validation: &[PreparedCase]) -> Result<TrainOutcome> {
    run(Trainer::new(config.clone())?, train_cases, validation)
}

/// Continues `trainer` until its configured epoch count. The best
/// checkpoint maximizes validation DSC when validation cases exist and
/// otherwise minimizes training loss.
pub fn run(mut trainer: Trainer, train_cases: &[PreparedCase], validation: &[PreparedCase]) -> Result<TrainOutcome> {
    let per_epoch = sample_list(train_cases, trainer.config.prostate_slices_only)?.len().div_ceil(trainer.config.batch_size);
    let total = per_epoch * trainer.config.epochs;
    let score = |r: &EpochRecord| r.validation_dsc.unwrap_or(-r.train_loss);
    let mut best = trainer.checkpoint();
    let mut best_score = trainer.history.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
    while trainer.epoch < trainer.config.epochs {
        let learning_rate = trainer.config.learning_rate_at(trainer.iteration, total);
        let train_loss = trainer.train_epoch(train_cases, total)?;
        let validation_dsc =
            if validation.is_empty() { None } else { Some(validation_score(&trainer.model, validation)?) };
        let record = EpochRecord { epoch: trainer.epoch, train_loss, learning_rate, validation_dsc };
        info!(
            "epoch {}/{}: loss {:.5}{}",
            record.epoch,
            trainer.config.epochs,
            train_loss,
            validation_dsc.map_or_else(String::new, |v| format!(", validation DSC {v:.4}"))
        );
        let s = score(&record);
        trainer.record(record);
        if s > best_score || trainer.history.len() == 1 {
            best_score = s;
            best = trainer.checkpoint();
        }
    }
    Ok(TrainOutcome { final_checkpoint: trainer.checkpoint(), best_checkpoint: best })
}
