//! Masked-language-model pretraining over relation-aware prompts: prompt set
//! construction, mask planning, the MLM objective, and the Adam training
//! loop that emits a checkpoint.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{select_partner, Session};
use crate::error::{Error, Result};
use crate::model::{
    backward, forward, mlm_head_backward, mlm_logits, save_checkpoint, Checkpoint,
    CheckpointExtras, EncoderConfig, OptimizerSnapshot, ParamSet, PromptInput,
};
use crate::numerics::{
    adam_step, derive_seed, log_softmax, AdamState, Matrix, Pcg32, Scalar,
};
use crate::prompt::{assemble_plain_prompt, assemble_relation_prompt, PromptSequence, RelationKind};
use crate::streams;
use crate::tokenizer::{Vocabulary, MASK, NUM_SPECIALS};

/// Which relation prompts the pretraining stream contains. `TextOnly` is the
/// plain-text ablation: bare [CLS] query [SEP] prompts, banks untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationMix {
    Both,
    QueryQueryOnly,
    QueryAnswerOnly,
    TextOnly,
}

impl RelationMix {
    pub fn includes(self, kind: RelationKind) -> bool {
        match self {
            RelationMix::Both => kind != RelationKind::QueryIntent,
            RelationMix::QueryQueryOnly => kind == RelationKind::QueryQuery,
            RelationMix::QueryAnswerOnly => kind == RelationKind::QueryAnswer,
            RelationMix::TextOnly => false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub mask_ratio: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub relation_mix: RelationMix,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask_ratio: 0.25,
            epochs: 4,
            learning_rate: 3e-5,
            batch_size: 32,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            relation_mix: RelationMix::Both,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::config(format!(
                "mask_ratio must lie in (0,1), got {}",
                self.mask_ratio
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// One query's worth of prompts for every session turn, subject to the mix:
/// a QueryQuery prompt against the partner query, a QueryAnswer prompt
/// against the turn's own answer (skipped for answerless turns), or a bare
/// prompt in text-only mode.
pub fn build_pretrain_set(
    sessions: &[Session],
    vocab: &Vocabulary,
    config: &EncoderConfig,
    mix: RelationMix,
) -> Result<Vec<PromptSequence>> {
    let m = config.num_relation_tokens;
    let max_len = config.max_len;
    let mut prompts = Vec::new();
    for session in sessions {
        for (i, turn) in session.turns.iter().enumerate() {
            let query = vocab.encode(&turn.query);
            if mix == RelationMix::TextOnly {
                prompts.push(assemble_plain_prompt(&query, max_len)?);
                continue;
            }
            if mix.includes(RelationKind::QueryQuery) {
                let partner = &session.turns[select_partner(session, i)].query;
                prompts.push(assemble_relation_prompt(
                    &query,
                    RelationKind::QueryQuery,
                    &vocab.encode(partner),
                    m,
                    max_len,
                )?);
            }
            if mix.includes(RelationKind::QueryAnswer) && !turn.answer.trim().is_empty() {
                prompts.push(assemble_relation_prompt(
                    &query,
                    RelationKind::QueryAnswer,
                    &vocab.encode(&turn.answer),
                    m,
                    max_len,
                )?);
            }
        }
    }
    if prompts.is_empty() {
        return Err(Error::data("pretraining set is empty"));
    }
    Ok(prompts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAction {
    /// Replace with the [MASK] token.
    Mask,
    /// Replace with this uniformly drawn non-special token.
    Random(u32),
    /// Leave the original token in place.
    Keep,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub positions: Vec<usize>,
    pub actions: Vec<MaskAction>,
    /// Original token ids; the prediction targets.
    pub targets: Vec<u32>,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Selects round-half-up(mask_ratio x |maskable|) positions (at least 1 when
/// any exist) uniformly without replacement, then assigns 80% [MASK] / 10%
/// random token / 10% keep.
pub fn make_mask_plan(
    prompt: &PromptSequence,
    mask_ratio: f64,
    vocab_size: usize,
    rng: &mut Pcg32,
) -> MaskPlan {
    let maskable = prompt.maskable_positions();
    if maskable.is_empty() {
        return MaskPlan {
            positions: Vec::new(),
            actions: Vec::new(),
            targets: Vec::new(),
        };
    }
    let count = (mask_ratio * maskable.len() as f64 + 0.5).floor() as usize;
    let count = count.clamp(1, maskable.len());

    // partial Fisher-Yates: the first `count` entries are a uniform sample
    let mut pool = maskable;
    for i in 0..count {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    let mut positions: Vec<usize> = pool[..count].to_vec();
    positions.sort_unstable();

    let mut actions = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for &pos in &positions {
        let crate::prompt::PromptElement::Text(original) = prompt.elements[pos] else {
            unreachable!("maskable positions are text positions");
        };
        targets.push(original);
        let u = rng.uniform();
        if u < 0.8 {
            actions.push(MaskAction::Mask);
        } else if u < 0.9 {
            let tok = (NUM_SPECIALS + rng.below(vocab_size - NUM_SPECIALS)) as u32;
            actions.push(MaskAction::Random(tok));
        } else {
            actions.push(MaskAction::Keep);
        }
    }
    MaskPlan {
        positions,
        actions,
        targets,
    }
}

/// Rewrites the planned positions in the lowered input.
pub fn apply_mask_plan(input: &mut PromptInput, plan: &MaskPlan) {
    for (&pos, action) in plan.positions.iter().zip(&plan.actions) {
        match *action {
            MaskAction::Mask => input.set_word(pos, MASK),
            MaskAction::Random(tok) => input.set_word(pos, tok),
            MaskAction::Keep => {}
        }
    }
}

/// Mean negative log-probability of the original token over the plan's
/// positions; logits row r corresponds to plan position r.
pub fn mlm_loss<T: Scalar>(logits: &Matrix<T>, targets: &[u32]) -> f64 {
    assert_eq!(logits.rows(), targets.len());
    assert!(!targets.is_empty(), "MLM loss over zero positions");
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let logp = log_softmax(logits.row(r));
        total -= logp[t as usize].to_f64c();
    }
    total / targets.len() as f64
}

/// Loss plus d(loss)/d(logits), scaled by `weight` (the example's share of
/// the batch objective).
pub fn mlm_loss_and_grad<T: Scalar>(
    logits: &Matrix<T>,
    targets: &[u32],
    weight: f64,
) -> (f64, Matrix<T>) {
    let loss = mlm_loss(logits, targets);
    let scale = T::from_f64c(weight / targets.len() as f64);
    let mut d = Matrix::zeros(logits.rows(), logits.cols());
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let mut probs = row.to_vec();
        crate::numerics::softmax_in_place(&mut probs);
        let drow = d.row_mut(r);
        for (o, &p) in drow.iter_mut().zip(&probs) {
            *o = p * scale;
        }
        drow[t as usize] -= scale;
    }
    (loss, d)
}

/// Per-epoch training log record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Runs MLM pretraining and returns the checkpoint plus per-epoch logs.
pub fn pretrain(
    sessions: &[Session],
    vocab: &Vocabulary,
    enc_config: &EncoderConfig,
    config: &PretrainConfig,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    enc_config.validate()?;
    config.validate()?;
    if vocab.len() != enc_config.vocab_size {
        return Err(Error::config(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            enc_config.vocab_size
        )));
    }
    let prompts = build_pretrain_set(sessions, vocab, enc_config, config.relation_mix)?;

    let mut params: ParamSet<f32> = ParamSet::init(enc_config, config.seed);
    let mut grads: ParamSet<f32> = ParamSet::zeros(enc_config);
    let mut adam: Vec<AdamState<f32>> = params
        .slots()
        .iter()
        .map(|s| AdamState::new(s.data.len()))
        .collect();
    let mut step: u64 = 0;
    let lr = config.learning_rate as f32;
    let betas = (config.adam_betas.0 as f32, config.adam_betas.1 as f32);
    let eps = config.adam_eps as f32;

    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..prompts.len()).collect();
        let mut shuffle_rng = Pcg32::seeded(derive_seed(
            config.seed,
            &[streams::PRETRAIN_EPOCH, epoch as u64],
        ));
        shuffle_rng.shuffle(&mut order);
        let mut mask_rng =
            Pcg32::seeded(derive_seed(config.seed, &[streams::MASK_PLAN, epoch as u64]));
        let mut dropout_rng =
            Pcg32::seeded(derive_seed(config.seed, &[streams::DROPOUT, epoch as u64]));

        let mut epoch_loss = 0.0;
        let mut examples = 0usize;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            grads.zero_all();
            let weight = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in batch {
                let prompt = &prompts[idx];
                let plan =
                    make_mask_plan(prompt, config.mask_ratio, enc_config.vocab_size, &mut mask_rng);
                if plan.is_empty() {
                    continue;
                }
                let mut input = PromptInput::from_prompt(prompt, true);
                apply_mask_plan(&mut input, &plan);
                let drop_rng =
                    (enc_config.dropout_rate > 0.0).then_some(&mut dropout_rng);
                let cache = forward(&params, enc_config, input, None, drop_rng)?;
                let logits = mlm_logits(&params, enc_config, &cache.hidden, &plan.positions);
                let (loss, d_logits) = mlm_loss_and_grad(&logits, &plan.targets, weight);
                if !loss.is_finite() {
                    return Err(Error::non_finite(
                        format!("pretrain epoch {epoch} batch {batch_index}"),
                        format!("loss {loss}"),
                    ));
                }
                batch_loss += loss;
                let d_hidden = mlm_head_backward(
                    &params,
                    &mut grads,
                    enc_config,
                    &cache.hidden,
                    &plan.positions,
                    &d_logits,
                );
                backward(&params, &mut grads, enc_config, &cache, d_hidden);
            }
            epoch_loss += batch_loss;
            examples += batch.len();
            step += 1;
            for ((pslot, gslot), state) in params
                .slots_mut()
                .into_iter()
                .zip(grads.slots())
                .zip(adam.iter_mut())
            {
                debug_assert_eq!(pslot.name, gslot.name);
                adam_step(pslot.data, gslot.data, state, step, lr, betas, eps);
            }
        }
        logs.push(EpochLog {
            epoch: epoch + 1,
            mean_loss: epoch_loss / examples as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }

    let optimizer = Some(OptimizerSnapshot {
        step,
        moments: adam.iter().map(|s| (s.m.clone(), s.v.clone())).collect(),
    });
    let checkpoint = Checkpoint {
        config: enc_config.clone(),
        vocab_hash: vocab.content_hash(),
        params,
        extra: Vec::new(),
        extras: CheckpointExtras {
            pretrained_relations: config.relation_mix == RelationMix::Both,
            finetune: None,
        },
        optimizer,
    };
    Ok((checkpoint, logs))
}

/// Convenience: pretrain and write the checkpoint to disk.
pub fn pretrain_to_file(
    sessions: &[Session],
    vocab: &Vocabulary,
    enc_config: &EncoderConfig,
    config: &PretrainConfig,
    path: &std::path::Path,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let (ckpt, logs) = pretrain(sessions, vocab, enc_config, config)?;
    save_checkpoint(path, &ckpt)?;
    Ok((ckpt, logs))
}
