//! Relation-aware prompt pretraining and few-shot intent detection.
//!
//! The pipeline: generate or ingest multi-turn search sessions, pretrain a
//! small transformer encoder with masked-language modelling over prompts that
//! splice trainable relation tokens between related utterances, then adapt
//! the pretrained relation knowledge to K-shot intent classification where
//! each candidate intent is scored through its own prompt.
//!
//! Math kernels are generic over the scalar type so the same code path runs
//! training in `f32` and gradient checking in `f64`.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod model;
pub mod numerics;
pub mod pretrain;
pub mod prompt;
pub mod tokenizer;
pub mod verify;

pub use error::{Error, Result};

/// Scalar used for training and inference.
pub type TrainScalar = f32;
/// Scalar used for finite-difference gradient verification.
pub type CheckScalar = f64;

/// Environment variable consulted when a CLI seed flag is absent.
pub const SEED_ENV_VAR: &str = "RELPROMPT_SEED";

/// First tag passed to [`numerics::derive_seed`] by each consumer of
/// randomness, keeping every stream derived from one root seed disjoint.
pub mod streams {
    pub const MODEL_INIT: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const PRETRAIN_EPOCH: u64 = 3;
    pub const MASK_PLAN: u64 = 4;
    pub const FINETUNE: u64 = 5;
    pub const EVAL_RUN: u64 = 6;
    pub const CORPUS_GEN: u64 = 7;
    pub const DROPOUT: u64 = 8;
}
