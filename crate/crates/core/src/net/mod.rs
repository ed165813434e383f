//! Recurrent encoder/decoder with attention, the recognition network, and the
//! differentiation tape they run on.

pub mod checkpoint;
mod graph;
mod infer;
mod params;
pub mod tape;

use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, NamedArray, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use graph::{Dropout, Encoded, Graph, Posterior, StateVars, StepVars};
pub use infer::{
    argmax, decode, encode_program, recognize, CodeVector, Decoder, DecoderState, DistributionSeq, LatentGaussian, StepOutput,
};
pub use params::{ModelConfig, ModelParameters};
pub use tape::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
