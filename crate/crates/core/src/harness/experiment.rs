//! End-to-end runs over record splits: vocabulary, assembly, training and
//! test evaluation with a fully populated report.

use super::evaluate::{evaluate, RankingReport, ReportMeta};
use super::train::{train, TrainOutcome};
use super::{corpus_hash, TrainConfig};
use crate::corpus::{
    assemble_corpus, build_vocab, generate_splits, DialogueRecord, EmbeddingSpec, Limits, MatchingExample, SynthSpec, Vocab,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<DialogueRecord>,
    pub valid: Vec<DialogueRecord>,
    pub test: Vec<DialogueRecord>,
}

impl Splits {
    pub fn synthetic(spec: &SynthSpec, sizes: [usize; 3]) -> Result<Self> {
        let [train, valid, test] = generate_splits(spec, sizes)?;
        Ok(Self {
            train: train.records,
            valid: valid.records,
            test: test.records,
        })
    }

    /// Hash over all three splits, in order.
    pub fn hash(&self) -> String {
        let all: Vec<DialogueRecord> = [&self.train, &self.valid, &self.test].into_iter().flatten().cloned().collect();
        corpus_hash(&all)
    }
}

/// Tensorized splits under one persona configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocab,
    pub train: Vec<MatchingExample>,
    pub valid: Vec<MatchingExample>,
    pub test: Vec<MatchingExample>,
    pub corpus_hash: String,
}

impl Prepared {
    /// Builds the vocabulary from the training records (frozen vectors are
    /// pseudo-random, keyed on `embedding_seed`) and assembles every split.
    pub fn new(splits: &Splits, config: &TrainConfig, embedding_seed: u64) -> Result<Self> {
        let vocab = build_vocab(
            &splits.train,
            &EmbeddingSpec::random(config.fixed_dim, embedding_seed),
            &EmbeddingSpec::random(config.trained_dim, embedding_seed.wrapping_add(1)),
        )?;
        Self::with_vocab(splits, config, vocab)
    }

    pub fn with_vocab(splits: &Splits, config: &TrainConfig, vocab: Vocab) -> Result<Self> {
        let limits = Limits::default();
        let assemble = |records: &[DialogueRecord], name: &str| -> Result<Vec<MatchingExample>> {
            let examples = assemble_corpus(records, config.persona, &limits, &vocab).examples;
            if examples.is_empty() {
                return Err(Error::Config(format!("{name} split yields no examples")));
            }
            Ok(examples)
        };
        Ok(Self {
            train: assemble(&splits.train, "training")?,
            valid: assemble(&splits.valid, "validation")?,
            test: assemble(&splits.test, "test")?,
            corpus_hash: splits.hash(),
            vocab,
        })
    }

    pub fn meta(&self, config: &TrainConfig) -> ReportMeta {
        ReportMeta {
            config_hash: config.hash(),
            corpus_hash: self.corpus_hash.clone(),
            seed: config.seed,
            ..ReportMeta::default()
        }
    }
}

pub struct RunResult {
    pub outcome: TrainOutcome<f64>,
    pub report: RankingReport,
}

/// Trains on the prepared splits and ranks the test split with the selected model.
pub fn run_experiment(config: &TrainConfig, prepared: &Prepared) -> Result<RunResult> {
    let outcome = train::<f64>(config, &prepared.vocab, &prepared.train, &prepared.valid)?;
    let report = evaluate(&outcome.model, &prepared.test, config.persona, prepared.meta(config), config.threads)?;
    Ok(RunResult { outcome, report })
}
