//! Transformer encoder with relation-token embeddings, MLM head, scalar
//! class-logit head, and the query-adaptive attention head; manual forward
//! and backward passes plus checkpoint IO.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointExtras, FinetuneInfo,
    OptimizerSnapshot,
};
pub use config::EncoderConfig;
pub use forward::{
    adapt_head_backward, adapt_weights, backward, class_head_backward, class_logit, forward,
    generate_qi_tokens, mlm_head_backward, mlm_logits, pool, ForwardCache, PromptInput, RowSource,
};
pub use params::{InitKind, LayerParams, ParamSet, TensorSlot, TensorSlotMut};
