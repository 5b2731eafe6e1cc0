use std::fmt::Write as _;

use ndcore::{lit, AdamConfig, AdamState, LrSchedule, NdError, ParamStore, Scalar, Tape};
use rand::seq::SliceRandom;

use super::checkpoint::ModelCheckpoint;
use super::config::TrainConfig;
use super::evaluate::score_examples;
use super::metrics::{hits_at_k, mrr, rank_of};
use crate::corpus::{epoch_seed, sample_negatives, MatchingExample, Vocab};
use crate::error::{Error, Result};
use crate::matchers::{Model, Pass};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean loss over the batch's training instances, before the update.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_hits1: f64,
    pub valid_mrr: f64,
    /// This epoch became the selected model.
    pub selected: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl TrainLog {
    /// Tab-separated step and epoch lines; floats use the shortest exact form
    /// so equal runs give byte-equal logs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = writeln!(out, "step\t{}\t{}\t{}", s.step, s.epoch, s.loss);
        }
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "epoch\t{}\t{}\t{}\t{}\t{}",
                e.epoch, e.mean_loss, e.valid_hits1, e.valid_mrr, e.selected
            );
        }
        let _ = writeln!(out, "stop\t{:?}", self.stop);
        out
    }

    pub fn best_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.iter().filter(|e| e.selected).last()
    }
}

pub struct TrainOutcome<T> {
    /// Parameters of the selected epoch.
    pub model: Model<T>,
    pub checkpoint: ModelCheckpoint,
    pub log: TrainLog,
}

/// Trains a freshly initialised model.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    vocab: &Vocab,
    train_set: &[MatchingExample],
    valid_set: &[MatchingExample],
) -> Result<TrainOutcome<T>> {
    let model = Model::init(config.model.clone(), vocab, config.seed)?;
    train_model(model, config, vocab, train_set, valid_set)
}

/// Validation hits@1 and MRR.
pub fn validate<T: Scalar>(model: &Model<T>, examples: &[MatchingExample], threads: usize) -> Result<(f64, f64)> {
    let scores = score_examples(model, examples, threads)?;
    let ranks: Vec<usize> = scores.iter().zip(examples).map(|(s, e)| rank_of(s, e.label)).collect();
    Ok((hits_at_k(&ranks, 1)?, mrr(&ranks)?))
}

/// Mini-batch Adam over shuffled examples with per-epoch validation. The
/// epoch with the best validation hits@1 (then MRR, then earliest) is kept.
/// Shuffling, negative draws and dropout each use their own substream of
/// `config.seed`, so a run is a pure function of its inputs.
pub fn train_model<T: Scalar>(
    mut model: Model<T>,
    config: &TrainConfig,
    vocab: &Vocab,
    train_set: &[MatchingExample],
    valid_set: &[MatchingExample],
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if model.config != config.model {
        return Err(Error::Mismatch("model architecture differs from the training configuration".into()));
    }
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation splits".into()));
    }
    let schedule = if config.lr_decay < 1.0 {
        LrSchedule::StepDecay {
            rate: config.lr_decay,
            interval: config.lr_decay_steps,
        }
    } else {
        LrSchedule::Constant
    };
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            schedule,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mode = config.negative_mode();
    let mut log = TrainLog {
        steps: Vec::new(),
        epochs: Vec::new(),
        stop: StopReason::MaxEpochs,
    };
    let mut best: Option<(f64, f64, ParamStore<T>, u64)> = None;
    let mut stale = 0usize;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::indexed_substream(config.seed, "shuffle", epoch as u64));
        let negatives_seed = epoch_seed(config.seed, epoch);
        let mut dropout_rng = rng::indexed_substream(config.seed, "dropout", epoch as u64);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut instances = Vec::new();
            for (j, &i) in batch.iter().enumerate() {
                let position = b * config.batch_size + j;
                for inst in sample_negatives(&train_set[i], mode, negatives_seed, position) {
                    instances.push((i, inst));
                }
            }
            let weight = 1.0 / instances.len() as f64;
            model.store.zero_grad();
            let mut batch_loss = 0.0;
            for (i, inst) in &instances {
                let mut tape = Tape::new();
                let loss = model.loss(&mut tape, &train_set[*i], inst, &mut Pass::train(&mut dropout_rng))?;
                let value = tape.value(loss).item().to_f64_lossy();
                if !value.is_finite() {
                    return Err(diverged(&model, config, vocab, step));
                }
                batch_loss += value * weight;
                let scaled = tape.scale(loss, lit(weight))?;
                tape.backward(scaled)?.accumulate_into(&tape, &mut model.store);
            }
            match adam.step(&mut model.store) {
                Ok(()) => {}
                Err(NdError::NonFiniteGradient(_)) => return Err(diverged(&model, config, vocab, step)),
                Err(e) => return Err(e.into()),
            }
            log.steps.push(StepRecord {
                step,
                epoch,
                loss: batch_loss,
            });
            step += 1;
            epoch_loss += batch_loss;
            batches += 1;
        }
        let (h1, m) = validate(&model, valid_set, config.threads)?;
        let improved = match &best {
            None => true,
            Some((bh, bm, _, _)) => h1 > *bh || (h1 == *bh && m > *bm),
        };
        if improved {
            best = Some((h1, m, model.store.clone(), step));
            stale = 0;
        } else {
            stale += 1;
        }
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / batches as f64,
            valid_hits1: h1,
            valid_mrr: m,
            selected: improved,
        });
        if config.target_hits1 > 0.0 && h1 >= config.target_hits1 {
            log.stop = StopReason::Target;
            break;
        }
        if config.patience > 0 && stale >= config.patience {
            log.stop = StopReason::Patience;
            break;
        }
    }
    let (h1, _, store, best_step) = best.expect("at least one epoch ran");
    model.store = store;
    model.store.zero_grad();
    let checkpoint = ModelCheckpoint::from_model(&model, config, vocab, best_step, h1);
    Ok(TrainOutcome { model, checkpoint, log })
}

fn diverged<T: Scalar>(model: &Model<T>, config: &TrainConfig, vocab: &Vocab, step: u64) -> Error {
    Error::Diverged {
        step,
        checkpoint: Box::new(ModelCheckpoint::from_model(model, config, vocab, step, f64::NAN)),
    }
}
