//! Training-pair synthesis: seed programs, mutations, folds and pair files.

mod mutate;
mod pairs;
mod seeds;

use thiserror::Error;

pub use mutate::{mutate_missing_decl, mutate_typographic, EditKind, FixTarget, MutationFamily, MutationRecord};
pub use pairs::{
    format_pair, generate_corpus, load_pairs, pair_is_sound, parse_pair, save_pairs, CorpusConfig, TrainingPair, LINE_BREAK, N_FOLDS,
};
pub use seeds::{generate_seed, generate_seeds, seed_source, SeedConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("no eligible mutation site")]
    NoMutableSite,
    #[error("{seeds} seed programs cannot fill {folds} folds")]
    InsufficientSeeds { seeds: usize, folds: usize },
    #[error("seed program {index} is not accepted by the checker")]
    SeedRejected { index: usize },
    #[error("could not draw a sound pair from seed {seed}")]
    Exhausted { seed: usize },
    #[error("record {record}: {reason}")]
    Format { record: usize, reason: String },
    #[error("invalid corpus configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}
