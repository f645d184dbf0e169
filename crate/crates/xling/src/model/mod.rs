//! Micro decoder-only language model: vocabulary, parameters, exact
//! gradients, sampling, and checkpoint persistence.

mod checkpoint;
mod generate;
pub mod linalg;
mod net;
mod params;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use generate::{
    generate, generate_many, prefill, step, DecodeConfig, DecodeMode, Generated, KvCache,
};
pub use net::{
    backward_from_dlogits, forward, forward_cached, loss_and_grads, loss_only, nll_dlogits,
    sentence_representation, softmax_rows, BatchRow, Cache, ForwardOutput,
};
pub use params::{
    zero_grads, ModelConfig, ModelParams, Tensor, B_LN1, B_LN2, B_W1, B_W2, B_WK, B_WO, B_WQ,
    B_WV, LAYER_BLOCKS,
};
pub use vocab::{build_vocab, Vocabulary, EOS_TOKEN, PAD_TOKEN, SEP_TOKEN};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token not in vocabulary: {0}")]
    UnknownToken(String),
    #[error("cannot build a vocabulary from empty datasets")]
    EmptyDataset,
    #[error("sequence of length {len} exceeds context length {context_len}")]
    ContextOverflow { len: usize, context_len: usize },
    #[error("batch has no masked target positions")]
    DegenerateBatch,
    #[error("checkpoint is corrupt: {0}")]
    Corruption(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
