//! Dialogue records, vocabulary, example assembly and synthetic corpora.

mod assemble;
mod negatives;
mod parlai;
mod record;
mod synth;
mod tokenize;
mod vocab;

pub use assemble::{
    assemble_corpus, assemble_examples, Assembly, Limits, MatchingExample, PersonaConfig, PersonaSide,
    PersonaVersion, Sentence,
};
pub use negatives::{epoch_seed, sample_negatives, NegativeMode, TrainingInstance};
pub use parlai::{merge_revised, parse_parlai, ParlaiParse};
pub use record::{
    load_corpus, parse_jsonl, to_jsonl, CorpusFormat, DialogueRecord, LoadOptions, Speaker, Turn, DEFAULT_CANDIDATES,
    MAX_PROFILES, MIN_PROFILES,
};
pub use synth::{generate_splits, generate_synthetic, keyword, Signal, SynthCorpus, SynthSpec};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, EmbeddingSource, EmbeddingSpec, Vocab, CHAR_PAD, CHAR_UNK, CLS, PAD, SEP, UNK};
