//! Transformer encoder-decoder with a target-language source factor.

mod checkpoint;
mod decode;
mod float;
mod model;
mod ops;
mod params;

pub use float::{gemm, matmul, Float, MatMut, MatRef};
pub use model::{batch_loss, decoder_self_attention, loss_and_grad, Example, FactoredBatch, LossStats};
pub use params::{init_from, InitKind, Layout, ModelConfig, Params, TensorInfo};
pub use decode::{beam_ids, greedy_ids, DecodeMode, DecodeSettings, Translation, Translator};
pub use checkpoint::{params_fingerprint, Checkpoint, OptimizerState, Provenance};
