//! Few-shot intent fine-tuning: intent prompts scored by the shared scalar
//! head, four ways to obtain query-intent relation tokens, cross-entropy
//! training over a learning-rate grid with early stopping, and prediction.

use serde::{Deserialize, Serialize};

use crate::corpus::{FewShotEpisode, IntentSchema, LabeledQuery};
use crate::error::{Error, Result};
use crate::model::{
    adapt_head_backward, adapt_weights, backward, class_head_backward, class_logit, forward,
    generate_qi_tokens, pool, Checkpoint, CheckpointExtras, EncoderConfig, FinetuneInfo,
    InitKind, ParamSet, PromptInput, TensorSlot, TensorSlotMut,
};
use crate::numerics::{
    adam_step, argmax, derive_seed, gelu, gelu_grad, softmax_in_place, AdamState, Matrix, Pcg32,
    Scalar,
};
use crate::prompt::{assemble_intent_prompt, assemble_plain_prompt};
use crate::streams;
use crate::tokenizer::Vocabulary;

/// How query-intent relation tokens are obtained during fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferStrategy {
    /// Freshly initialized trainable qi bank (the default).
    FreshRandom,
    /// Two global trainable logits; their softmax mixes the frozen banks.
    LinearGlobal,
    /// Trainable perceptron mapping concat(qq_j, qa_j) to each qi token.
    MlpGenerator,
    /// Per-query mixing weights from the adapt head over the frozen encoder.
    QueryAdapt,
}

impl TransferStrategy {
    pub fn name(self) -> &'static str {
        match self {
            TransferStrategy::FreshRandom => "fresh_random",
            TransferStrategy::LinearGlobal => "linear_global",
            TransferStrategy::MlpGenerator => "mlp_generator",
            TransferStrategy::QueryAdapt => "query_adapt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "said" | "fresh_random" => Ok(TransferStrategy::FreshRandom),
            "linear" | "linear_global" => Ok(TransferStrategy::LinearGlobal),
            "mlp" | "mlp_generator" => Ok(TransferStrategy::MlpGenerator),
            "queryadapt" | "query_adapt" => Ok(TransferStrategy::QueryAdapt),
            other => Err(Error::config(format!(
                "unknown transfer strategy '{other}' (expected said|linear|mlp|queryadapt)"
            ))),
        }
    }

    /// Whether the strategy derives qi tokens from the pretrained qq/qa banks.
    pub fn needs_pretrained_banks(self) -> bool {
        self != TransferStrategy::FreshRandom
    }
}

/// Prompt-based scoring versus a traditional C-way linear head over the
/// pooled bare query (the prompt-free ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    IntentPrompt,
    LinearHead,
}

impl ClassifierMode {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierMode::IntentPrompt => "prompt",
            ClassifierMode::LinearHead => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "prompt" => Ok(ClassifierMode::IntentPrompt),
            "linear" => Ok(ClassifierMode::LinearHead),
            other => Err(Error::config(format!(
                "unknown classifier mode '{other}' (expected prompt|linear)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub strategy: TransferStrategy,
    pub classifier: ClassifierMode,
    pub learning_rate_grid: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            strategy: TransferStrategy::FreshRandom,
            classifier: ClassifierMode::IntentPrompt,
            learning_rate_grid: vec![1e-5, 4e-5, 1e-4],
            max_epochs: 30,
            patience: 5,
            batch_size: 32,
            freeze_encoder: false,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate_grid.is_empty() {
            return Err(Error::config("learning rate grid is empty"));
        }
        if self.learning_rate_grid.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("max_epochs and batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Trainable tensors that live outside the encoder parameter set: strategy
/// state and the optional C-way linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxParams<T> {
    pub linear_logits: Option<Vec<T>>,
    pub gen_w1: Option<Matrix<T>>,
    pub gen_b1: Option<Vec<T>>,
    pub gen_w2: Option<Matrix<T>>,
    pub gen_b2: Option<Vec<T>>,
    pub head_w: Option<Matrix<T>>,
    pub head_b: Option<Vec<T>>,
}

impl<T: Scalar> AuxParams<T> {
    pub fn empty() -> Self {
        AuxParams {
            linear_logits: None,
            gen_w1: None,
            gen_b1: None,
            gen_w2: None,
            gen_b2: None,
            head_w: None,
            head_b: None,
        }
    }

    /// Allocates the tensors the strategy/classifier combination trains.
    /// Matrices draw truncated-normal entries from `rng`; logits and biases
    /// start at zero (LinearGlobal therefore starts at the bank mean).
    pub fn init(
        strategy: TransferStrategy,
        classifier: ClassifierMode,
        num_classes: usize,
        config: &EncoderConfig,
        rng: &mut Pcg32,
    ) -> Self {
        let k = config.hidden_dim;
        let mut aux = AuxParams::empty();
        match classifier {
            ClassifierMode::LinearHead => {
                let mut w = Matrix::zeros(k, num_classes);
                for x in w.data_mut() {
                    *x = T::from_f64c(rng.truncated_normal(0.02));
                }
                aux.head_w = Some(w);
                aux.head_b = Some(vec![T::zero(); num_classes]);
            }
            ClassifierMode::IntentPrompt => match strategy {
                TransferStrategy::FreshRandom | TransferStrategy::QueryAdapt => {}
                TransferStrategy::LinearGlobal => {
                    aux.linear_logits = Some(vec![T::zero(); 2]);
                }
                TransferStrategy::MlpGenerator => {
                    let mut w1 = Matrix::zeros(2 * k, k);
                    for x in w1.data_mut() {
                        *x = T::from_f64c(rng.truncated_normal(0.02));
                    }
                    let mut w2 = Matrix::zeros(k, k);
                    for x in w2.data_mut() {
                        *x = T::from_f64c(rng.truncated_normal(0.02));
                    }
                    aux.gen_w1 = Some(w1);
                    aux.gen_b1 = Some(vec![T::zero(); k]);
                    aux.gen_w2 = Some(w2);
                    aux.gen_b2 = Some(vec![T::zero(); k]);
                }
            },
        }
        aux
    }

    pub fn zeros_like(&self) -> Self {
        let zv = |v: &Option<Vec<T>>| v.as_ref().map(|x| vec![T::zero(); x.len()]);
        let zm = |m: &Option<Matrix<T>>| m.as_ref().map(|x| Matrix::zeros(x.rows(), x.cols()));
        AuxParams {
            linear_logits: zv(&self.linear_logits),
            gen_w1: zm(&self.gen_w1),
            gen_b1: zv(&self.gen_b1),
            gen_w2: zm(&self.gen_w2),
            gen_b2: zv(&self.gen_b2),
            head_w: zm(&self.head_w),
            head_b: zv(&self.head_b),
        }
    }

    pub fn zero_all(&mut self) {
        for slot in self.slots_mut() {
            slot.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn slots(&self) -> Vec<TensorSlot<'_, T>> {
        let mut out = Vec::new();
        fn pm<'a, T>(out: &mut Vec<TensorSlot<'a, T>>, name: &str, m: &'a Option<Matrix<T>>) {
            if let Some(m) = m {
                out.push(TensorSlot {
                    name: name.to_string(),
                    init: InitKind::TruncatedNormal,
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data(),
                });
            }
        }
        fn pv<'a, T>(out: &mut Vec<TensorSlot<'a, T>>, name: &str, v: &'a Option<Vec<T>>) {
            if let Some(v) = v {
                out.push(TensorSlot {
                    name: name.to_string(),
                    init: InitKind::Zero,
                    rows: 1,
                    cols: v.len(),
                    data: v,
                });
            }
        }
        pv(&mut out, "aux.linear_logits", &self.linear_logits);
        pm(&mut out, "aux.gen_w1", &self.gen_w1);
        pv(&mut out, "aux.gen_b1", &self.gen_b1);
        pm(&mut out, "aux.gen_w2", &self.gen_w2);
        pv(&mut out, "aux.gen_b2", &self.gen_b2);
        pm(&mut out, "aux.head_w", &self.head_w);
        pv(&mut out, "aux.head_b", &self.head_b);
        out
    }

    pub fn slots_mut(&mut self) -> Vec<TensorSlotMut<'_, T>> {
        let mut out = Vec::new();
        fn pm<'a, T>(out: &mut Vec<TensorSlotMut<'a, T>>, name: &str, m: &'a mut Option<Matrix<T>>) {
            if let Some(m) = m {
                let (rows, cols) = (m.rows(), m.cols());
                out.push(TensorSlotMut {
                    name: name.to_string(),
                    init: InitKind::TruncatedNormal,
                    rows,
                    cols,
                    data: m.data_mut(),
                });
            }
        }
        fn pv<'a, T>(out: &mut Vec<TensorSlotMut<'a, T>>, name: &str, v: &'a mut Option<Vec<T>>) {
            if let Some(v) = v {
                let cols = v.len();
                out.push(TensorSlotMut {
                    name: name.to_string(),
                    init: InitKind::Zero,
                    rows: 1,
                    cols,
                    data: v,
                });
            }
        }
        pv(&mut out, "aux.linear_logits", &mut self.linear_logits);
        pm(&mut out, "aux.gen_w1", &mut self.gen_w1);
        pv(&mut out, "aux.gen_b1", &mut self.gen_b1);
        pm(&mut out, "aux.gen_w2", &mut self.gen_w2);
        pv(&mut out, "aux.gen_b2", &mut self.gen_b2);
        pm(&mut out, "aux.head_w", &mut self.head_w);
        pv(&mut out, "aux.head_b", &mut self.head_b);
        out
    }
}

/// Intermediate values of one qi-token derivation, kept for the backward
/// pass.
#[derive(Debug)]
pub(crate) struct QiDerivation<T> {
    pub tokens: Option<Matrix<T>>,
    pub lambda: Option<(T, T)>,
    pub pooled_frozen: Option<Vec<T>>,
    /// MlpGenerator pre-activations, m x k.
    pub gen_pre: Option<Matrix<T>>,
}

/// A scoring-ready model: encoder parameters, strategy state, and tokenized
/// intent names.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentModel<T> {
    pub config: EncoderConfig,
    pub strategy: TransferStrategy,
    pub classifier: ClassifierMode,
    pub params: ParamSet<T>,
    pub aux: AuxParams<T>,
    /// Pretrained snapshot for QueryAdapt's lambda computation.
    pub frozen: Option<Box<ParamSet<T>>>,
    pub name_tokens: Vec<Vec<u32>>,
}

/// Which relation dominates a query's adaptive mixing weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    QueryQueryDominated,
    QueryAnswerDominated,
}

impl<T: Scalar> IntentModel<T> {
    pub fn num_classes(&self) -> usize {
        self.name_tokens.len()
    }

    fn pooled_bare_query(&self, params: &ParamSet<T>, query: &[u32]) -> Result<Vec<T>> {
        let prompt = assemble_plain_prompt(query, self.config.max_len)?;
        let input = PromptInput::from_prompt(&prompt, true);
        let cache = forward(params, &self.config, input, None, None)?;
        Ok(pool(&cache.hidden).to_vec())
    }

    pub(crate) fn derive_qi(&self, query: &[u32]) -> Result<QiDerivation<T>> {
        let none = QiDerivation {
            tokens: None,
            lambda: None,
            pooled_frozen: None,
            gen_pre: None,
        };
        match self.strategy {
            TransferStrategy::FreshRandom => Ok(none),
            TransferStrategy::LinearGlobal => {
                let logits = self
                    .aux
                    .linear_logits
                    .as_ref()
                    .ok_or_else(|| Error::config("linear strategy state missing"))?;
                let mut lam = logits.clone();
                softmax_in_place(&mut lam);
                let lambda = (lam[0], lam[1]);
                let tokens =
                    generate_qi_tokens(lambda, &self.params.banks[0], &self.params.banks[1]);
                Ok(QiDerivation {
                    tokens: Some(tokens),
                    lambda: Some(lambda),
                    ..none
                })
            }
            TransferStrategy::MlpGenerator => {
                let (w1, b1, w2, b2) = match (
                    &self.aux.gen_w1,
                    &self.aux.gen_b1,
                    &self.aux.gen_w2,
                    &self.aux.gen_b2,
                ) {
                    (Some(w1), Some(b1), Some(w2), Some(b2)) => (w1, b1, w2, b2),
                    _ => return Err(Error::config("generator strategy state missing")),
                };
                let m = self.config.num_relation_tokens;
                let k = self.config.hidden_dim;
                let mut pre = Matrix::zeros(m, k);
                let mut tokens = Matrix::zeros(m, k);
                for j in 0..m {
                    let mut concat = Vec::with_capacity(2 * k);
                    concat.extend_from_slice(self.params.banks[0].row(j));
                    concat.extend_from_slice(self.params.banks[1].row(j));
                    let h = pre.row_mut(j);
                    h.copy_from_slice(b1);
                    for (i, &x) in concat.iter().enumerate() {
                        for (hj, &w) in h.iter_mut().zip(w1.row(i)) {
                            *hj += x * w;
                        }
                    }
                    let out = tokens.row_mut(j);
                    out.copy_from_slice(b2);
                    for (a, &hv) in pre.row(j).iter().enumerate() {
                        let g = gelu(hv);
                        for (o, &w) in out.iter_mut().zip(w2.row(a)) {
                            *o += g * w;
                        }
                    }
                }
                Ok(QiDerivation {
                    tokens: Some(tokens),
                    gen_pre: Some(pre),
                    ..none
                })
            }
            TransferStrategy::QueryAdapt => {
                let frozen = self
                    .frozen
                    .as_ref()
                    .ok_or_else(|| Error::config("query-adapt strategy needs a frozen encoder"))?;
                let pooled = self.pooled_bare_query(frozen, query)?;
                let lambda = adapt_weights(&self.params, &pooled);
                let tokens =
                    generate_qi_tokens(lambda, &self.params.banks[0], &self.params.banks[1]);
                Ok(QiDerivation {
                    tokens: Some(tokens),
                    lambda: Some(lambda),
                    pooled_frozen: Some(pooled),
                    gen_pre: None,
                })
            }
        }
    }

    /// The qi token matrix the strategy would inject for `query`; None means
    /// the live qi bank embeds directly (FreshRandom).
    pub fn qi_tokens(&self, query: &[u32]) -> Result<Option<Matrix<T>>> {
        Ok(self.derive_qi(query)?.tokens)
    }

    /// Mixing weights for `query` (strategies that have them).
    pub fn lambda(&self, query: &[u32]) -> Result<Option<(T, T)>> {
        Ok(self.derive_qi(query)?.lambda)
    }

    pub fn dominance(&self, query: &[u32]) -> Result<Option<Dominance>> {
        Ok(self.lambda(query)?.map(|(qq, qa)| {
            if qq > qa {
                Dominance::QueryQueryDominated
            } else {
                Dominance::QueryAnswerDominated
            }
        }))
    }

    /// Raw per-class scalar logits.
    pub fn score_logits(&self, query: &[u32]) -> Result<Vec<T>> {
        let (logits, _, _) = self.forward_classes(query, None)?;
        Ok(logits)
    }

    /// Class probability vector (softmax over the per-class logits).
    pub fn score(&self, query: &[u32]) -> Result<Vec<T>> {
        let mut p = self.score_logits(query)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Highest-probability class; ties resolve to the lowest index.
    pub fn predict(&self, query: &[u32]) -> Result<usize> {
        Ok(argmax(&self.score_logits(query)?))
    }

    /// Shared forward: returns per-class logits, the per-class caches (when
    /// requested via `keep`), and the qi derivation.
    fn forward_classes(
        &self,
        query: &[u32],
        mut dropout: Option<&mut Pcg32>,
    ) -> Result<(Vec<T>, Vec<crate::model::ForwardCache<T>>, QiDerivation<T>)> {
        match self.classifier {
            ClassifierMode::LinearHead => {
                let (w, b) = match (&self.aux.head_w, &self.aux.head_b) {
                    (Some(w), Some(b)) => (w, b),
                    _ => return Err(Error::config("linear classifier head missing")),
                };
                let prompt = assemble_plain_prompt(query, self.config.max_len)?;
                let input = PromptInput::from_prompt(&prompt, true);
                let cache = forward(
                    &self.params,
                    &self.config,
                    input,
                    None,
                    dropout.as_deref_mut(),
                )?;
                let pooled = pool(&cache.hidden);
                let mut logits = b.clone();
                for (i, &x) in pooled.iter().enumerate() {
                    for (l, &wv) in logits.iter_mut().zip(w.row(i)) {
                        *l += x * wv;
                    }
                }
                let deriv = QiDerivation {
                    tokens: None,
                    lambda: None,
                    pooled_frozen: None,
                    gen_pre: None,
                };
                Ok((logits, vec![cache], deriv))
            }
            ClassifierMode::IntentPrompt => {
                let deriv = self.derive_qi(query)?;
                let mut logits = Vec::with_capacity(self.name_tokens.len());
                let mut caches = Vec::with_capacity(self.name_tokens.len());
                for name in &self.name_tokens {
                    let prompt = assemble_intent_prompt(
                        query,
                        name,
                        self.config.num_relation_tokens,
                        self.config.max_len,
                    )?;
                    let input = PromptInput::from_prompt(&prompt, true);
                    let cache = forward(
                        &self.params,
                        &self.config,
                        input,
                        deriv.tokens.as_ref(),
                        dropout.as_deref_mut(),
                    )?;
                    logits.push(class_logit(&self.params, pool(&cache.hidden)));
                    caches.push(cache);
                }
                Ok((logits, caches, deriv))
            }
        }
    }

    /// Cross-entropy loss for one example, with gradients accumulated into
    /// `grads`/`aux_grads` scaled by `weight`. Returns (loss, correct).
    pub(crate) fn train_example(
        &self,
        grads: &mut ParamSet<T>,
        aux_grads: &mut AuxParams<T>,
        query: &[u32],
        label: usize,
        weight: f64,
        mut dropout: Option<&mut Pcg32>,
    ) -> Result<(f64, bool)> {
        let (logits, caches, deriv) = self.forward_classes(query, dropout.as_deref_mut())?;
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        let loss = -probs[label].to_f64c().max(f64::MIN_POSITIVE).ln();
        let correct = argmax(&logits) == label;
        let w = T::from_f64c(weight);

        match self.classifier {
            ClassifierMode::LinearHead => {
                let cache = &caches[0];
                let pooled = pool(&cache.hidden).to_vec();
                let head_w = self.aux.head_w.as_ref().expect("head checked in forward");
                let gw = aux_grads.head_w.as_mut().expect("aux grads mirror aux");
                let gb = aux_grads.head_b.as_mut().expect("aux grads mirror aux");
                let k = pooled.len();
                let mut d_pooled = vec![T::zero(); k];
                for (c, (&p, gbc)) in probs.iter().zip(gb.iter_mut()).enumerate() {
                    let mut d = p * w;
                    if c == label {
                        d -= w;
                    }
                    *gbc += d;
                    for i in 0..k {
                        gw.row_mut(i)[c] += pooled[i] * d;
                        d_pooled[i] += head_w.row(i)[c] * d;
                    }
                }
                let mut d_hidden = Matrix::zeros(cache.hidden.rows(), cache.hidden.cols());
                d_hidden.row_mut(0).copy_from_slice(&d_pooled);
                backward(&self.params, grads, &self.config, cache, d_hidden);
            }
            ClassifierMode::IntentPrompt => {
                let m = self.config.num_relation_tokens;
                let k = self.config.hidden_dim;
                let mut d_qi: Option<Matrix<T>> = None;
                for (c, cache) in caches.iter().enumerate() {
                    let mut d_logit = probs[c] * w;
                    if c == label {
                        d_logit -= w;
                    }
                    let pooled = pool(&cache.hidden).to_vec();
                    let d_pooled = class_head_backward(&self.params, grads, &pooled, d_logit);
                    let mut d_hidden = Matrix::zeros(cache.hidden.rows(), cache.hidden.cols());
                    d_hidden.row_mut(0).copy_from_slice(&d_pooled);
                    if let Some(d_override) =
                        backward(&self.params, grads, &self.config, cache, d_hidden)
                    {
                        match &mut d_qi {
                            Some(acc) => acc.add_assign(&d_override),
                            None => d_qi = Some(d_override),
                        }
                    }
                }
                if let Some(d_qi) = d_qi {
                    assert_eq!((d_qi.rows(), d_qi.cols()), (m, k));
                    self.strategy_backward(grads, aux_grads, &deriv, &d_qi)?;
                }
            }
        }
        Ok((loss, correct))
    }

    /// Routes d(loss)/d(qi tokens) into the strategy's trainables and the
    /// banks (bank gradients are masked out at update time for strategies
    /// that freeze them, but are always computed).
    fn strategy_backward(
        &self,
        grads: &mut ParamSet<T>,
        aux_grads: &mut AuxParams<T>,
        deriv: &QiDerivation<T>,
        d_qi: &Matrix<T>,
    ) -> Result<()> {
        let bank_qq = &self.params.banks[0];
        let bank_qa = &self.params.banks[1];
        let dot_all = |a: &Matrix<T>, b: &Matrix<T>| -> T {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x * y)
                .fold(T::zero(), |acc, v| acc + v)
        };
        match self.strategy {
            TransferStrategy::FreshRandom => unreachable!("fresh bank embeds without override"),
            TransferStrategy::LinearGlobal => {
                let (l0, l1) = deriv.lambda.expect("lambda cached in forward");
                let d_l0 = dot_all(d_qi, bank_qq);
                let d_l1 = dot_all(d_qi, bank_qa);
                // d banks (frozen under this strategy; masked at update)
                axpy_matrix(&mut grads.banks[0], l0, d_qi);
                axpy_matrix(&mut grads.banks[1], l1, d_qi);
                // softmax backward into the two logits
                let dot = d_l0 * l0 + d_l1 * l1;
                let g = aux_grads
                    .linear_logits
                    .as_mut()
                    .expect("aux grads mirror aux");
                g[0] += l0 * (d_l0 - dot);
                g[1] += l1 * (d_l1 - dot);
            }
            TransferStrategy::MlpGenerator => {
                let pre = deriv.gen_pre.as_ref().expect("preactivations cached");
                let w1 = self.aux.gen_w1.as_ref().expect("checked in forward");
                let w2 = self.aux.gen_w2.as_ref().expect("checked in forward");
                let gw1 = aux_grads.gen_w1.as_mut().expect("aux grads mirror aux");
                let gb1 = aux_grads.gen_b1.as_mut().expect("aux grads mirror aux");
                let gw2 = aux_grads.gen_w2.as_mut().expect("aux grads mirror aux");
                let gb2 = aux_grads.gen_b2.as_mut().expect("aux grads mirror aux");
                let k = self.config.hidden_dim;
                for j in 0..self.config.num_relation_tokens {
                    let d_out = d_qi.row(j);
                    let h = pre.row(j);
                    // output layer
                    let mut d_h = vec![T::zero(); k];
                    for a in 0..k {
                        let g = gelu(h[a]);
                        let wrow = w2.row(a);
                        let growr = gw2.row_mut(a);
                        let mut acc = T::zero();
                        for (c, &d) in d_out.iter().enumerate() {
                            growr[c] += g * d;
                            acc += wrow[c] * d;
                        }
                        d_h[a] = acc * gelu_grad(h[a]);
                    }
                    for (g, &d) in gb2.iter_mut().zip(d_out) {
                        *g += d;
                    }
                    for (g, &d) in gb1.iter_mut().zip(&d_h) {
                        *g += d;
                    }
                    // input layer; concat = (qq_j, qa_j)
                    for i in 0..2 * k {
                        let x = if i < k {
                            bank_qq.get(j, i)
                        } else {
                            bank_qa.get(j, i - k)
                        };
                        let wrow = w1.row(i);
                        let growr = gw1.row_mut(i);
                        let mut acc = T::zero();
                        for (a, &d) in d_h.iter().enumerate() {
                            growr[a] += x * d;
                            acc += wrow[a] * d;
                        }
                        if i < k {
                            grads.banks[0].row_mut(j)[i] += acc;
                        } else {
                            grads.banks[1].row_mut(j)[i - k] += acc;
                        }
                    }
                }
            }
            TransferStrategy::QueryAdapt => {
                let (l0, l1) = deriv.lambda.expect("lambda cached in forward");
                let pooled = deriv
                    .pooled_frozen
                    .as_ref()
                    .expect("pooled query cached in forward");
                let d_l0 = dot_all(d_qi, bank_qq);
                let d_l1 = dot_all(d_qi, bank_qa);
                axpy_matrix(&mut grads.banks[0], l0, d_qi);
                axpy_matrix(&mut grads.banks[1], l1, d_qi);
                // the pooled vector comes from the frozen encoder: its
                // gradient ends here
                let _ = adapt_head_backward(&self.params, grads, pooled, (d_l0, d_l1));
            }
        }
        Ok(())
    }
}

fn axpy_matrix<T: Scalar>(acc: &mut Matrix<T>, scale: T, x: &Matrix<T>) {
    for (a, &v) in acc.data_mut().iter_mut().zip(x.data()) {
        *a += scale * v;
    }
}

/// Which parameter tensors the fine-tuning loop updates.
fn trainable_mask<T: Scalar>(
    params: &ParamSet<T>,
    strategy: TransferStrategy,
    classifier: ClassifierMode,
    freeze_encoder: bool,
) -> Vec<bool> {
    params
        .slots()
        .iter()
        .map(|s| {
            let name = s.name.as_str();
            match name {
                "mlm_w" | "mlm_b" => false,
                "bank_qq" | "bank_qa" => {
                    // derived-qi strategies keep the pretrained banks intact
                    classifier == ClassifierMode::IntentPrompt
                        && strategy == TransferStrategy::FreshRandom
                }
                "bank_qi" => {
                    classifier == ClassifierMode::IntentPrompt
                        && strategy == TransferStrategy::FreshRandom
                }
                n if n.starts_with("class_") => classifier == ClassifierMode::IntentPrompt,
                n if n.starts_with("adapt_") => {
                    classifier == ClassifierMode::IntentPrompt
                        && strategy == TransferStrategy::QueryAdapt
                }
                _ => !freeze_encoder,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridResult {
    pub learning_rate: f64,
    pub val_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: IntentModel<f32>,
    pub selected_lr: f64,
    pub grid: Vec<GridResult>,
}

struct EncodedExample {
    query: Vec<u32>,
    label: usize,
}

fn encode_set(vocab: &Vocabulary, set: &[LabeledQuery]) -> Vec<EncodedExample> {
    set.iter()
        .map(|q| EncodedExample {
            query: vocab.encode(&q.query),
            label: q.intent,
        })
        .collect()
}

fn accuracy_on(model: &IntentModel<f32>, set: &[EncodedExample]) -> Result<f64> {
    let mut hits = 0usize;
    for ex in set {
        if model.predict(&ex.query)? == ex.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

/// Fine-tunes over the learning-rate grid and returns the validation winner
/// (ties go to the lower rate).
pub fn finetune(
    episode: &FewShotEpisode,
    schema: &IntentSchema,
    vocab: &Vocabulary,
    ckpt: &Checkpoint,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    ckpt.config.validate()?;
    if vocab.content_hash() != ckpt.vocab_hash {
        return Err(Error::config(
            "vocabulary does not match the checkpoint's vocabulary hash",
        ));
    }
    if vocab.len() != ckpt.config.vocab_size {
        return Err(Error::config(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            ckpt.config.vocab_size
        )));
    }
    if episode.train.is_empty() || episode.validation.is_empty() {
        return Err(Error::data("episode needs train and validation examples"));
    }
    if config.classifier == ClassifierMode::IntentPrompt
        && config.strategy.needs_pretrained_banks()
        && !ckpt.extras.pretrained_relations
    {
        return Err(Error::config(format!(
            "strategy '{}' derives qi tokens from the qq/qa banks, but this checkpoint \
             was not pretrained with both relation prompt kinds",
            config.strategy.name()
        )));
    }

    let name_tokens: Vec<Vec<u32>> = schema.labels().iter().map(|l| vocab.encode(l)).collect();
    let train = encode_set(vocab, &episode.train);
    let validation = encode_set(vocab, &episode.validation);
    for ex in train.iter().chain(&validation) {
        if ex.label >= schema.len() {
            return Err(Error::data(format!(
                "episode label {} outside the {}-class schema",
                ex.label,
                schema.len()
            )));
        }
    }

    // identical trainable initialization across the grid: rates differ only
    // by the optimizer setting
    let mut init_rng = Pcg32::seeded(derive_seed(config.seed, &[streams::FINETUNE, 0]));
    let mut base_params = ckpt.params.clone();
    if config.strategy == TransferStrategy::FreshRandom
        && config.classifier == ClassifierMode::IntentPrompt
    {
        for x in base_params.banks[2].data_mut() {
            *x = init_rng.truncated_normal(0.02) as f32;
        }
    }
    let base_aux: AuxParams<f32> = AuxParams::init(
        config.strategy,
        config.classifier,
        schema.len(),
        &ckpt.config,
        &mut init_rng,
    );
    let frozen = (config.strategy == TransferStrategy::QueryAdapt
        && config.classifier == ClassifierMode::IntentPrompt)
        .then(|| Box::new(ckpt.params.clone()));
    let mask = trainable_mask(&base_params, config.strategy, config.classifier, config.freeze_encoder);

    let mut best: Option<(f64, f64, IntentModel<f32>)> = None; // (acc, lr, model)
    let mut grid = Vec::new();
    for (g, &lr) in config.learning_rate_grid.iter().enumerate() {
        let mut model = IntentModel {
            config: ckpt.config.clone(),
            strategy: config.strategy,
            classifier: config.classifier,
            params: base_params.clone(),
            aux: base_aux.clone(),
            frozen: frozen.clone(),
            name_tokens: name_tokens.clone(),
        };
        let mut grads: ParamSet<f32> = ParamSet::zeros(&ckpt.config);
        let mut aux_grads = model.aux.zeros_like();
        let mut adam: Vec<AdamState<f32>> = model
            .params
            .slots()
            .iter()
            .map(|s| AdamState::new(s.data.len()))
            .collect();
        let mut aux_adam: Vec<AdamState<f32>> = model
            .aux
            .slots()
            .iter()
            .map(|s| AdamState::new(s.data.len()))
            .collect();
        let mut step = 0u64;
        let lr32 = lr as f32;
        let betas = (0.9f32, 0.999f32);
        let eps = 1e-8f32;

        let mut best_val = f64::NEG_INFINITY;
        let mut best_epoch = 0usize;
        let mut best_state: Option<(ParamSet<f32>, AuxParams<f32>)> = None;
        let mut since_improve = 0usize;
        let mut train_losses = Vec::new();
        let mut epochs_run = 0usize;

        for epoch in 0..config.max_epochs {
            epochs_run = epoch + 1;
            let mut order: Vec<usize> = (0..train.len()).collect();
            let mut shuffle_rng = Pcg32::seeded(derive_seed(
                config.seed,
                &[streams::FINETUNE, 1, g as u64, epoch as u64],
            ));
            shuffle_rng.shuffle(&mut order);
            let mut dropout_rng = Pcg32::seeded(derive_seed(
                config.seed,
                &[streams::FINETUNE, 2, g as u64, epoch as u64],
            ));

            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                grads.zero_all();
                aux_grads.zero_all();
                let weight = 1.0 / batch.len() as f64;
                for &i in batch {
                    let ex = &train[i];
                    let drop =
                        (model.config.dropout_rate > 0.0).then_some(&mut dropout_rng);
                    let (loss, _) = model.train_example(
                        &mut grads,
                        &mut aux_grads,
                        &ex.query,
                        ex.label,
                        weight,
                        drop,
                    )?;
                    if !loss.is_finite() {
                        return Err(Error::non_finite(
                            format!("finetune epoch {epoch}"),
                            format!("loss {loss}"),
                        ));
                    }
                    epoch_loss += loss;
                }
                step += 1;
                for (((pslot, gslot), state), &trainable) in model
                    .params
                    .slots_mut()
                    .into_iter()
                    .zip(grads.slots())
                    .zip(adam.iter_mut())
                    .zip(&mask)
                {
                    if trainable {
                        adam_step(pslot.data, gslot.data, state, step, lr32, betas, eps);
                    }
                }
                for ((pslot, gslot), state) in model
                    .aux
                    .slots_mut()
                    .into_iter()
                    .zip(aux_grads.slots())
                    .zip(aux_adam.iter_mut())
                {
                    adam_step(pslot.data, gslot.data, state, step, lr32, betas, eps);
                }
            }
            train_losses.push(epoch_loss / train.len() as f64);

            let val_acc = accuracy_on(&model, &validation)?;
            if val_acc > best_val {
                best_val = val_acc;
                best_epoch = epoch;
                best_state = Some((model.params.clone(), model.aux.clone()));
                since_improve = 0;
            } else {
                since_improve += 1;
                if since_improve >= config.patience {
                    break;
                }
            }
        }

        let (bp, ba) = best_state.expect("at least one epoch ran");
        model.params = bp;
        model.aux = ba;
        grid.push(GridResult {
            learning_rate: lr,
            val_accuracy: best_val,
            epochs_run,
            best_epoch,
            train_losses,
        });
        let better = match &best {
            None => true,
            Some((acc, rate, _)) => {
                best_val > *acc || (best_val == *acc && lr < *rate)
            }
        };
        if better {
            best = Some((best_val, lr, model));
        }
    }

    let (_, selected_lr, model) = best.expect("grid is non-empty");
    Ok(FinetuneOutcome {
        model,
        selected_lr,
        grid,
    })
}

/// Packages a fine-tuned model as a checkpoint (aux tensors and the frozen
/// snapshot ride along as named extra tensors).
pub fn model_to_checkpoint(
    model: &IntentModel<f32>,
    vocab_hash: String,
    pretrained_relations: bool,
    info: FinetuneInfo,
) -> Checkpoint {
    let mut extra = Vec::new();
    for slot in model.aux.slots() {
        extra.push((
            slot.name.clone(),
            Matrix::from_vec(slot.rows, slot.cols, slot.data.to_vec()),
        ));
    }
    if let Some(frozen) = &model.frozen {
        for slot in frozen.slots() {
            extra.push((
                format!("frozen.{}", slot.name),
                Matrix::from_vec(slot.rows, slot.cols, slot.data.to_vec()),
            ));
        }
    }
    Checkpoint {
        config: model.config.clone(),
        vocab_hash,
        params: model.params.clone(),
        extra,
        extras: CheckpointExtras {
            pretrained_relations,
            finetune: Some(info),
        },
        optimizer: None,
    }
}

/// Rebuilds a scoring-ready model from a fine-tuned checkpoint.
pub fn model_from_checkpoint(
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
) -> Result<(IntentModel<f32>, FinetuneInfo)> {
    let info = ckpt
        .extras
        .finetune
        .clone()
        .ok_or_else(|| Error::config("checkpoint does not hold a fine-tuned model"))?;
    if vocab.content_hash() != ckpt.vocab_hash {
        return Err(Error::config(
            "vocabulary does not match the checkpoint's vocabulary hash",
        ));
    }
    let strategy = TransferStrategy::parse(&info.strategy)?;
    let classifier = ClassifierMode::parse(&info.classifier)?;
    let name_tokens: Vec<Vec<u32>> = info.intent_names.iter().map(|l| vocab.encode(l)).collect();

    let k = ckpt.config.hidden_dim;
    let c = info.intent_names.len();
    let mut aux: AuxParams<f32> = AuxParams::empty();
    let take_vec = |name: &str, len: usize| -> Result<Vec<f32>> {
        let m = ckpt
            .extra_tensor(name)
            .ok_or_else(|| Error::data(format!("checkpoint lacks tensor {name}")))?;
        if (m.rows(), m.cols()) != (1, len) {
            return Err(Error::data(format!("tensor {name} has the wrong shape")));
        }
        Ok(m.data().to_vec())
    };
    let take_mat = |name: &str, rows: usize, cols: usize| -> Result<Matrix<f32>> {
        let m = ckpt
            .extra_tensor(name)
            .ok_or_else(|| Error::data(format!("checkpoint lacks tensor {name}")))?;
        if (m.rows(), m.cols()) != (rows, cols) {
            return Err(Error::data(format!("tensor {name} has the wrong shape")));
        }
        Ok(m.clone())
    };
    match classifier {
        ClassifierMode::LinearHead => {
            aux.head_w = Some(take_mat("aux.head_w", k, c)?);
            aux.head_b = Some(take_vec("aux.head_b", c)?);
        }
        ClassifierMode::IntentPrompt => match strategy {
            TransferStrategy::FreshRandom | TransferStrategy::QueryAdapt => {}
            TransferStrategy::LinearGlobal => {
                aux.linear_logits = Some(take_vec("aux.linear_logits", 2)?);
            }
            TransferStrategy::MlpGenerator => {
                aux.gen_w1 = Some(take_mat("aux.gen_w1", 2 * k, k)?);
                aux.gen_b1 = Some(take_vec("aux.gen_b1", k)?);
                aux.gen_w2 = Some(take_mat("aux.gen_w2", k, k)?);
                aux.gen_b2 = Some(take_vec("aux.gen_b2", k)?);
            }
        },
    }

    let frozen = if strategy == TransferStrategy::QueryAdapt
        && classifier == ClassifierMode::IntentPrompt
    {
        let mut fr: ParamSet<f32> = ParamSet::zeros(&ckpt.config);
        for slot in fr.slots_mut() {
            let name = format!("frozen.{}", slot.name);
            let m = ckpt
                .extra_tensor(&name)
                .ok_or_else(|| Error::data(format!("checkpoint lacks tensor {name}")))?;
            if (m.rows(), m.cols()) != (slot.rows, slot.cols) {
                return Err(Error::data(format!("tensor {name} has the wrong shape")));
            }
            slot.data.copy_from_slice(m.data());
        }
        Some(Box::new(fr))
    } else {
        None
    };

    Ok((
        IntentModel {
            config: ckpt.config.clone(),
            strategy,
            classifier,
            params: ckpt.params.clone(),
            aux,
            frozen,
            name_tokens,
        },
        info,
    ))
}
