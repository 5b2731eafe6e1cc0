#![allow(dead_code)]

use pfuse::corpus::{
    assemble_corpus, build_vocab, generate_synthetic, EmbeddingSpec, Limits, MatchingExample, PersonaConfig, Signal,
    SynthSpec, Vocab,
};
use pfuse::fusion::FusionStrategy;
use pfuse::matchers::{Family, ModelConfig};

/// Small synthetic examples and their vocabulary.
pub fn synth(signal: Signal, dialogues: usize, candidates: usize, turns: usize, seed: u64) -> (Vocab, Vec<MatchingExample>) {
    synth_with(signal, dialogues, candidates, turns, seed, PersonaConfig::default())
}

pub fn synth_with(
    signal: Signal,
    dialogues: usize,
    candidates: usize,
    turns: usize,
    seed: u64,
    persona: PersonaConfig,
) -> (Vocab, Vec<MatchingExample>) {
    let mut spec = SynthSpec::new(dialogues, 24, signal, seed);
    spec.candidates = candidates;
    spec.turns = turns;
    let corpus = generate_synthetic(&spec).unwrap();
    let vocab = build_vocab(&corpus.records, &EmbeddingSpec::random(4, 1), &EmbeddingSpec::random(2, 2)).unwrap();
    let examples = assemble_corpus(&corpus.records, persona, &Limits::default(), &vocab).examples;
    (vocab, examples)
}

/// The smallest useful sizes, for gradient checks and hand oracles.
pub fn tiny(family: Family, strategy: FusionStrategy) -> ModelConfig {
    ModelConfig {
        family,
        strategy,
        dropout: 0.0,
        char_dim: 2,
        char_widths: vec![2, 3],
        char_filters: 2,
        hidden: 2,
        context_hidden: 3,
        mlp_hidden: 4,
        interaction: true,
        layers: 1,
        heads: 2,
        model_dim: 4,
        ff_dim: 6,
        max_seq_len: 96,
        subtypes: true,
    }
}

pub fn configs() -> Vec<(Family, FusionStrategy)> {
    Family::ALL
        .iter()
        .flat_map(|&f| FusionStrategy::ALL.iter().map(move |&s| (f, s)))
        .collect()
}
