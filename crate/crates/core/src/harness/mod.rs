//! Training, evaluation, significance testing and checkpoint persistence.

mod checkpoint;
mod config;
mod evaluate;
mod experiment;
mod metrics;
mod significance;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, NamedTensor, MAGIC, VERSION};
pub use config::{parse_entries, sha256_hex, Entry, Preset, TrainConfig, KEYS};
pub use evaluate::{evaluate, score_examples, Aggregate, RankEntry, RankingReport, ReportMeta};
pub use experiment::{run_experiment, Prepared, RunResult, Splits};
pub use metrics::{hits_at_k, mrr, rank_of, ranking};
pub use significance::{aligned_reciprocal_ranks, paired_significance, paired_t_test, Significance};
pub use train::{train, train_model, validate, EpochRecord, StepRecord, StopReason, TrainLog, TrainOutcome};

/// Content hash of a record list in its canonical JSONL form.
pub fn corpus_hash(records: &[crate::corpus::DialogueRecord]) -> String {
    sha256_hex(crate::corpus::to_jsonl(records).as_bytes())
}
