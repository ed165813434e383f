//! Sampling-based repair of syntax errors in a small C subset: a conditional
//! variational sequence model proposes many candidate fixes and a checker
//! picks the one that removes the most diagnostics.

pub mod corpus;
pub mod decode;
pub mod lang;
pub mod net;
pub mod objective;
pub mod repair;
pub mod rng;
pub mod train;

pub use corpus::{CorpusConfig, FixTarget, MutationFamily, TrainingPair};
pub use decode::{CandidateFix, DecodeMode, DecodePlan};
pub use lang::{DiagnosticReport, Program, TokenId, Vocab, VocabConfig};
pub use net::{ModelConfig, ModelParameters};
pub use objective::{LossBreakdown, ObjectiveKind, SamplerConfig};
pub use repair::{RepairStatus, RepairTrace};
pub use train::TrainConfig;
