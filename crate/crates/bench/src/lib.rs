//! Shared fixtures for the benchmarks.

use fixsmith::corpus::{generate_corpus, generate_seeds, CorpusConfig, SeedConfig, TrainingPair};
use fixsmith::lang::Vocab;
use fixsmith::net::{ModelConfig, ModelParameters};
use fixsmith::rng;

/// A small single-mutation corpus like the one used for model selection runs.
pub fn toy_pairs(vocab: &Vocab, n: usize) -> Vec<TrainingPair> {
    let seeds = generate_seeds(vocab, &SeedConfig { min_tokens: 30, max_tokens: 90, max_lines: 64 }, 20, 1);
    generate_corpus(vocab, &seeds, &CorpusConfig { n_pairs: n, max_mutations: 1, ..Default::default() }, 1).expect("toy corpus")
}

/// Randomly initialized desk-size model.
pub fn desk_model(vocab: &Vocab) -> ModelParameters {
    ModelParameters::init(ModelConfig::desk(vocab.len()), &mut rng::seeded(1)).expect("desk config is valid")
}
