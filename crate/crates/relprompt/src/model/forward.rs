//! Forward pass with per-layer caches, manual backward pass, and the three
//! output heads (MLM, scalar class logit, adapt weights).

use crate::error::{Error, Result};
use crate::numerics::{gelu, gelu_grad, softmax_in_place, Matrix, Pcg32, Scalar};
use crate::prompt::{PromptElement, PromptSequence, RelationKind};
use crate::tokenizer;

use super::config::EncoderConfig;
use super::params::ParamSet;

const LN_EPS: f64 = 1e-5;

/// Where each input row's embedding comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSource {
    Word(u32),
    Bank { kind: RelationKind, index: usize },
}

/// Prompt lowered to embedding sources plus a PAD mask. `trim` drops the
/// trailing PAD run; kept rows produce identical outputs either way (PAD
/// columns are masked out of attention).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptInput {
    pub rows: Vec<RowSource>,
    pub pad: Vec<bool>,
}

impl PromptInput {
    pub fn from_prompt(p: &PromptSequence, trim: bool) -> Self {
        let n = if trim { p.used_len() } else { p.len() };
        let rows = p.elements[..n]
            .iter()
            .map(|e| match e {
                PromptElement::Text(id) => RowSource::Word(*id),
                PromptElement::Relation { kind, index } => RowSource::Bank {
                    kind: *kind,
                    index: *index,
                },
                PromptElement::Cls => RowSource::Word(tokenizer::CLS),
                PromptElement::Sep => RowSource::Word(tokenizer::SEP),
                PromptElement::Pad => RowSource::Word(tokenizer::PAD),
            })
            .collect();
        let pad = p.elements[..n]
            .iter()
            .map(|e| *e == PromptElement::Pad)
            .collect();
        PromptInput { rows, pad }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Replaces the token at a text position (masking).
    pub fn set_word(&mut self, position: usize, id: u32) {
        debug_assert!(
            matches!(self.rows[position], RowSource::Word(_)),
            "masking a non-word position"
        );
        self.rows[position] = RowSource::Word(id);
    }
}

#[derive(Debug)]
struct LnCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

#[derive(Debug)]
struct LayerCache<T> {
    x_in: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    /// Per-head post-softmax attention, each n x n.
    attn: Vec<Matrix<T>>,
    ctx: Matrix<T>,
    attn_drop: Option<Vec<T>>,
    ln1: LnCache<T>,
    h1: Matrix<T>,
    f1: Matrix<T>,
    g: Matrix<T>,
    ffn_drop: Option<Vec<T>>,
    ln2: LnCache<T>,
}

#[derive(Debug)]
pub struct ForwardCache<T> {
    pub input: PromptInput,
    used_override: bool,
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    pub hidden: Matrix<T>,
}

fn ln_forward<T: Scalar>(x: &Matrix<T>, gain: &[T], bias: &[T]) -> (Matrix<T>, LnCache<T>) {
    let (n, k) = (x.rows(), x.cols());
    let mut y = Matrix::zeros(n, k);
    let mut xhat = Matrix::zeros(n, k);
    let mut inv_std = vec![T::zero(); n];
    let kf = T::from_usize_c(k);
    let eps = T::from_f64c(LN_EPS);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / kf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / kf;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        let xh = xhat.row_mut(r);
        let yr = y.row_mut(r);
        for i in 0..k {
            xh[i] = (row[i] - mean) * istd;
            yr[i] = gain[i] * xh[i] + bias[i];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn ln_backward<T: Scalar>(
    cache: &LnCache<T>,
    gain: &[T],
    d_y: &Matrix<T>,
    d_gain: &mut [T],
    d_bias: &mut [T],
) -> Matrix<T> {
    let (n, k) = (d_y.rows(), d_y.cols());
    let mut d_x = Matrix::zeros(n, k);
    let kf = T::from_usize_c(k);
    for r in 0..n {
        let dy = d_y.row(r);
        let xh = cache.xhat.row(r);
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for i in 0..k {
            d_gain[i] += dy[i] * xh[i];
            d_bias[i] += dy[i];
            let dxh = dy[i] * gain[i];
            m1 += dxh;
            m2 += dxh * xh[i];
        }
        m1 /= kf;
        m2 /= kf;
        let istd = cache.inv_std[r];
        let dx = d_x.row_mut(r);
        for i in 0..k {
            let dxh = dy[i] * gain[i];
            dx[i] = istd * (dxh - m1 - xh[i] * m2);
        }
    }
    d_x
}

fn head_cols<T: Scalar>(src: &Matrix<T>, h: usize, d: usize) -> Matrix<T> {
    let n = src.rows();
    let mut out = Matrix::zeros(n, d);
    for r in 0..n {
        out.row_mut(r).copy_from_slice(&src.row(r)[h * d..(h + 1) * d]);
    }
    out
}

fn add_head_cols<T: Scalar>(dst: &mut Matrix<T>, src: &Matrix<T>, h: usize, d: usize) {
    for r in 0..src.rows() {
        let drow = dst.row_mut(r);
        for (j, &v) in src.row(r).iter().enumerate() {
            drow[h * d + j] += v;
        }
    }
}

/// Inverted dropout in place; the returned mask holds the applied per-entry
/// factors (0 or 1/(1-rate)) for the backward pass.
fn apply_dropout<T: Scalar>(x: &mut Matrix<T>, rate: f64, rng: &mut Pcg32) -> Vec<T> {
    let keep_scale = T::from_f64c(1.0 / (1.0 - rate));
    let mut mask = vec![T::zero(); x.data().len()];
    for (m, v) in mask.iter_mut().zip(x.data_mut().iter_mut()) {
        if rng.uniform() < rate {
            *v = T::zero();
        } else {
            *m = keep_scale;
            *v *= keep_scale;
        }
    }
    mask
}

fn mul_mask<T: Scalar>(x: &mut Matrix<T>, mask: &[T]) {
    for (v, &m) in x.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
}

fn check_finite<T: Scalar>(m: &Matrix<T>, layer: usize) -> Result<()> {
    for &v in m.data() {
        if !v.is_finite() {
            return Err(Error::non_finite(
                format!("encoder layer {layer}"),
                format!("activation {v}"),
            ));
        }
    }
    Ok(())
}

/// Runs embedding + encoder stack. `qi_override` substitutes the
/// QueryIntent bank rows; `dropout_rng` enables dropout when the config rate
/// is positive (training only).
pub fn forward<T: Scalar>(
    params: &ParamSet<T>,
    config: &EncoderConfig,
    input: PromptInput,
    qi_override: Option<&Matrix<T>>,
    mut dropout_rng: Option<&mut Pcg32>,
) -> Result<ForwardCache<T>> {
    let n = input.len();
    let k = config.hidden_dim;
    if n == 0 {
        return Err(Error::data("empty prompt input"));
    }
    if n > config.max_len {
        return Err(Error::data(format!(
            "prompt of {n} positions exceeds max_len {}",
            config.max_len
        )));
    }
    if let Some(ov) = qi_override {
        assert_eq!(
            (ov.rows(), ov.cols()),
            (config.num_relation_tokens, k),
            "qi override shape"
        );
    }

    let mut x = Matrix::zeros(n, k);
    let mut used_override = false;
    for (i, src) in input.rows.iter().enumerate() {
        let pos_row = params.pos_emb.row(i);
        let source_row = match *src {
            RowSource::Word(id) => {
                if id as usize >= config.vocab_size {
                    return Err(Error::data(format!(
                        "token id {id} outside vocabulary of size {}",
                        config.vocab_size
                    )));
                }
                params.word_emb.row(id as usize)
            }
            RowSource::Bank { kind, index } => {
                if index >= config.num_relation_tokens {
                    return Err(Error::data(format!(
                        "relation slot index {index} outside m={}",
                        config.num_relation_tokens
                    )));
                }
                match (kind, qi_override) {
                    (RelationKind::QueryIntent, Some(ov)) => {
                        used_override = true;
                        ov.row(index)
                    }
                    _ => params.banks[kind.bank_index()].row(index),
                }
            }
        };
        for (o, (&s, &p)) in x.row_mut(i).iter_mut().zip(source_row.iter().zip(pos_row)) {
            *o = s + p;
        }
    }

    let rate = config.dropout_rate;
    let emb_drop = match dropout_rng.as_deref_mut() {
        Some(rng) if rate > 0.0 => Some(apply_dropout(&mut x, rate, rng)),
        _ => None,
    };

    let d = config.head_dim();
    let scale = T::from_f64c(1.0 / (d as f64).sqrt());
    let mut layers = Vec::with_capacity(config.num_layers);
    let mut cur = x;
    for (li, lp) in params.layers.iter().enumerate() {
        let x_in = cur;
        let q = x_in.matmul(&lp.wq);
        let kk = x_in.matmul(&lp.wk);
        let v = x_in.matmul(&lp.wv);

        let mut ctx = Matrix::zeros(n, k);
        let mut attn = Vec::with_capacity(config.num_heads);
        for h in 0..config.num_heads {
            let qh = head_cols(&q, h, d);
            let kh = head_cols(&kk, h, d);
            let vh = head_cols(&v, h, d);
            let mut s = qh.matmul_transpose_rhs(&kh);
            for r in 0..n {
                let row = s.row_mut(r);
                for (j, cell) in row.iter_mut().enumerate() {
                    if input.pad[j] {
                        *cell = T::neg_infinity();
                    } else {
                        *cell *= scale;
                    }
                }
            }
            for r in 0..n {
                softmax_in_place(s.row_mut(r));
            }
            let ctx_h = s.matmul(&vh);
            add_head_cols(&mut ctx, &ctx_h, h, d);
            attn.push(s);
        }

        let mut attn_out = ctx.matmul(&lp.wo);
        let attn_drop = match dropout_rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => Some(apply_dropout(&mut attn_out, rate, rng)),
            _ => None,
        };
        let mut res1 = x_in.clone();
        res1.add_assign(&attn_out);
        let (h1, ln1) = ln_forward(&res1, &lp.ln1_gain, &lp.ln1_bias);

        let mut f1 = h1.matmul(&lp.ffn_w1);
        f1.add_row_broadcast(&lp.ffn_b1);
        let mut g = f1.clone();
        g.data_mut().iter_mut().for_each(|x| *x = gelu(*x));
        let mut f2 = g.matmul(&lp.ffn_w2);
        f2.add_row_broadcast(&lp.ffn_b2);
        let ffn_drop = match dropout_rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => Some(apply_dropout(&mut f2, rate, rng)),
            _ => None,
        };
        let mut res2 = h1.clone();
        res2.add_assign(&f2);
        let (h2, ln2) = ln_forward(&res2, &lp.ln2_gain, &lp.ln2_bias);
        check_finite(&h2, li)?;

        layers.push(LayerCache {
            x_in,
            q,
            k: kk,
            v,
            attn,
            ctx,
            attn_drop,
            ln1,
            h1,
            f1,
            g,
            ffn_drop,
            ln2,
        });
        cur = h2;
    }

    Ok(ForwardCache {
        input,
        used_override,
        emb_drop,
        layers,
        hidden: cur,
    })
}

/// Backpropagates `d_hidden` through the cached forward pass, accumulating
/// into `grads`. Returns the gradient of the qi override matrix when one was
/// used in the forward pass.
pub fn backward<T: Scalar>(
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    config: &EncoderConfig,
    cache: &ForwardCache<T>,
    d_hidden: Matrix<T>,
) -> Option<Matrix<T>> {
    let n = cache.input.len();
    let k = config.hidden_dim;
    let d = config.head_dim();
    let scale = T::from_f64c(1.0 / (d as f64).sqrt());

    let mut d_cur = d_hidden;
    for li in (0..params.layers.len()).rev() {
        let lp = &params.layers[li];
        let lc = &cache.layers[li];
        let gl = &mut grads.layers[li];

        let d_res2 = ln_backward(&lc.ln2, &lp.ln2_gain, &d_cur, &mut gl.ln2_gain, &mut gl.ln2_bias);
        let mut d_f2 = d_res2.clone();
        if let Some(mask) = &lc.ffn_drop {
            mul_mask(&mut d_f2, mask);
        }
        let d_g = d_f2.matmul_transpose_rhs(&lp.ffn_w2);
        gl.ffn_w2.add_assign(&lc.g.transpose_matmul(&d_f2));
        d_f2.add_column_sums_into(&mut gl.ffn_b2);
        let mut d_f1 = d_g;
        for (df, &f) in d_f1.data_mut().iter_mut().zip(lc.f1.data()) {
            *df *= gelu_grad(f);
        }
        let mut d_h1 = d_res2;
        d_h1.add_assign(&d_f1.matmul_transpose_rhs(&lp.ffn_w1));
        gl.ffn_w1.add_assign(&lc.h1.transpose_matmul(&d_f1));
        d_f1.add_column_sums_into(&mut gl.ffn_b1);

        let d_res1 = ln_backward(&lc.ln1, &lp.ln1_gain, &d_h1, &mut gl.ln1_gain, &mut gl.ln1_bias);
        let mut d_attn_out = d_res1.clone();
        if let Some(mask) = &lc.attn_drop {
            mul_mask(&mut d_attn_out, mask);
        }
        let mut d_x = d_res1;

        let d_ctx = d_attn_out.matmul_transpose_rhs(&lp.wo);
        gl.wo.add_assign(&lc.ctx.transpose_matmul(&d_attn_out));

        let mut d_q = Matrix::zeros(n, k);
        let mut d_k = Matrix::zeros(n, k);
        let mut d_v = Matrix::zeros(n, k);
        for h in 0..config.num_heads {
            let d_ctx_h = head_cols(&d_ctx, h, d);
            let a = &lc.attn[h];
            let qh = head_cols(&lc.q, h, d);
            let kh = head_cols(&lc.k, h, d);
            let vh = head_cols(&lc.v, h, d);
            let d_a = d_ctx_h.matmul_transpose_rhs(&vh);
            let d_vh = a.transpose_matmul(&d_ctx_h);
            // softmax backward per row; masked columns have a=0, giving 0.
            let mut d_s = Matrix::zeros(n, n);
            for r in 0..n {
                let ar = a.row(r);
                let dar = d_a.row(r);
                let dot: T = ar.iter().zip(dar).map(|(&x, &y)| x * y).sum();
                let ds = d_s.row_mut(r);
                for j in 0..n {
                    ds[j] = ar[j] * (dar[j] - dot) * scale;
                }
            }
            let d_qh = d_s.matmul(&kh);
            let d_kh = d_s.transpose_matmul(&qh);
            add_head_cols(&mut d_q, &d_qh, h, d);
            add_head_cols(&mut d_k, &d_kh, h, d);
            add_head_cols(&mut d_v, &d_vh, h, d);
        }

        d_x.add_assign(&d_q.matmul_transpose_rhs(&lp.wq));
        gl.wq.add_assign(&lc.x_in.transpose_matmul(&d_q));
        d_x.add_assign(&d_k.matmul_transpose_rhs(&lp.wk));
        gl.wk.add_assign(&lc.x_in.transpose_matmul(&d_k));
        d_x.add_assign(&d_v.matmul_transpose_rhs(&lp.wv));
        gl.wv.add_assign(&lc.x_in.transpose_matmul(&d_v));

        d_cur = d_x;
    }

    if let Some(mask) = &cache.emb_drop {
        mul_mask(&mut d_cur, mask);
    }
    let m = config.num_relation_tokens;
    let mut d_override = cache.used_override.then(|| Matrix::zeros(m, k));
    for (i, src) in cache.input.rows.iter().enumerate() {
        let drow = d_cur.row(i);
        for (gp, &g) in grads.pos_emb.row_mut(i).iter_mut().zip(drow) {
            *gp += g;
        }
        match *src {
            RowSource::Word(id) => {
                for (gw, &g) in grads.word_emb.row_mut(id as usize).iter_mut().zip(drow) {
                    *gw += g;
                }
            }
            RowSource::Bank { kind, index } => {
                let target = if kind == RelationKind::QueryIntent && cache.used_override {
                    d_override.as_mut().unwrap().row_mut(index)
                } else {
                    grads.banks[kind.bank_index()].row_mut(index)
                };
                for (o, &g) in target.iter_mut().zip(drow) {
                    *o += g;
                }
            }
        }
    }
    d_override
}

/// Hidden state at the CLS anchor position.
pub fn pool<T: Scalar>(hidden: &Matrix<T>) -> &[T] {
    hidden.row(0)
}

/// Vocabulary logits at the selected positions, |positions| x V. Uses the
/// word embeddings as the output projection when tying is on.
pub fn mlm_logits<T: Scalar>(
    params: &ParamSet<T>,
    config: &EncoderConfig,
    hidden: &Matrix<T>,
    positions: &[usize],
) -> Matrix<T> {
    let mut hsel = Matrix::zeros(positions.len(), config.hidden_dim);
    for (r, &pos) in positions.iter().enumerate() {
        hsel.row_mut(r).copy_from_slice(hidden.row(pos));
    }
    let mut logits = match &params.mlm_w {
        Some(w) => hsel.matmul(w),
        None => hsel.matmul_transpose_rhs(&params.word_emb),
    };
    logits.add_row_broadcast(&params.mlm_b);
    logits
}

/// Backward for the MLM head; returns d_hidden (zeros away from the
/// selected positions).
pub fn mlm_head_backward<T: Scalar>(
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    config: &EncoderConfig,
    hidden: &Matrix<T>,
    positions: &[usize],
    d_logits: &Matrix<T>,
) -> Matrix<T> {
    let mut hsel = Matrix::zeros(positions.len(), config.hidden_dim);
    for (r, &pos) in positions.iter().enumerate() {
        hsel.row_mut(r).copy_from_slice(hidden.row(pos));
    }
    let d_hsel = match &params.mlm_w {
        Some(w) => d_logits.matmul_transpose_rhs(w),
        None => d_logits.matmul(&params.word_emb),
    };
    match &mut grads.mlm_w {
        Some(gw) => gw.add_assign(&hsel.transpose_matmul(d_logits)),
        None => grads.word_emb.add_assign(&d_logits.transpose_matmul(&hsel)),
    }
    d_logits.add_column_sums_into(&mut grads.mlm_b);
    let mut d_hidden = Matrix::zeros(hidden.rows(), hidden.cols());
    for (r, &pos) in positions.iter().enumerate() {
        for (o, &g) in d_hidden.row_mut(pos).iter_mut().zip(d_hsel.row(r)) {
            *o += g;
        }
    }
    d_hidden
}

fn two_layer_hidden<T: Scalar>(w1: &Matrix<T>, b1: &[T], input: &[T]) -> Vec<T> {
    let mut h = b1.to_vec();
    for (i, &x) in input.iter().enumerate() {
        for (hj, &w) in h.iter_mut().zip(w1.row(i)) {
            *hj += x * w;
        }
    }
    h
}

/// Scalar class logit: gelu two-layer perceptron over the pooled vector. One
/// shared head scores every class's prompt. No output bias: it would shift
/// every class logit equally, which the softmax cancels.
pub fn class_logit<T: Scalar>(params: &ParamSet<T>, pooled: &[T]) -> T {
    let h = two_layer_hidden(&params.class_w1, &params.class_b1, pooled);
    let mut logit = T::zero();
    for (j, &hv) in h.iter().enumerate() {
        logit += gelu(hv) * params.class_w2[j];
    }
    logit
}

/// Backward for class_logit; returns d_pooled.
pub fn class_head_backward<T: Scalar>(
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    pooled: &[T],
    d_logit: T,
) -> Vec<T> {
    let h = two_layer_hidden(&params.class_w1, &params.class_b1, pooled);
    let mut d_h = vec![T::zero(); h.len()];
    for (j, &hv) in h.iter().enumerate() {
        grads.class_w2[j] += d_logit * gelu(hv);
        d_h[j] = d_logit * params.class_w2[j] * gelu_grad(hv);
    }
    for (gb, &dh) in grads.class_b1.iter_mut().zip(&d_h) {
        *gb += dh;
    }
    let mut d_pooled = vec![T::zero(); pooled.len()];
    for (i, dp) in d_pooled.iter_mut().enumerate() {
        let wrow = params.class_w1.row(i);
        let grow = grads.class_w1.row_mut(i);
        let mut acc = T::zero();
        for (j, &dh) in d_h.iter().enumerate() {
            grow[j] += pooled[i] * dh;
            acc += wrow[j] * dh;
        }
        *dp = acc;
    }
    d_pooled
}

/// (lambda_qq, lambda_qa): softmax over the adapt head's two logits.
pub fn adapt_weights<T: Scalar>(params: &ParamSet<T>, pooled: &[T]) -> (T, T) {
    let h = two_layer_hidden(&params.adapt_w1, &params.adapt_b1, pooled);
    let mut logits = params.adapt_b2.clone();
    for (j, &hv) in h.iter().enumerate() {
        let g = gelu(hv);
        logits[0] += g * params.adapt_w2.row(j)[0];
        logits[1] += g * params.adapt_w2.row(j)[1];
    }
    softmax_in_place(&mut logits);
    (logits[0], logits[1])
}

/// Backward for adapt_weights given d(lambda); returns d_pooled.
pub fn adapt_head_backward<T: Scalar>(
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    pooled: &[T],
    d_lambda: (T, T),
) -> Vec<T> {
    let h = two_layer_hidden(&params.adapt_w1, &params.adapt_b1, pooled);
    let gvals: Vec<T> = h.iter().map(|&hv| gelu(hv)).collect();
    let mut logits = params.adapt_b2.clone();
    for (j, &g) in gvals.iter().enumerate() {
        logits[0] += g * params.adapt_w2.row(j)[0];
        logits[1] += g * params.adapt_w2.row(j)[1];
    }
    softmax_in_place(&mut logits);
    let (l0, l1) = (logits[0], logits[1]);
    let dot = d_lambda.0 * l0 + d_lambda.1 * l1;
    let d_logit = (l0 * (d_lambda.0 - dot), l1 * (d_lambda.1 - dot));

    grads.adapt_b2[0] += d_logit.0;
    grads.adapt_b2[1] += d_logit.1;
    let mut d_h = vec![T::zero(); h.len()];
    for (j, &g) in gvals.iter().enumerate() {
        let w2 = params.adapt_w2.row(j);
        let gw2 = grads.adapt_w2.row_mut(j);
        gw2[0] += g * d_logit.0;
        gw2[1] += g * d_logit.1;
        d_h[j] = (w2[0] * d_logit.0 + w2[1] * d_logit.1) * gelu_grad(h[j]);
    }
    for (gb, &dh) in grads.adapt_b1.iter_mut().zip(&d_h) {
        *gb += dh;
    }
    let mut d_pooled = vec![T::zero(); pooled.len()];
    for (i, dp) in d_pooled.iter_mut().enumerate() {
        let wrow = params.adapt_w1.row(i);
        let grow = grads.adapt_w1.row_mut(i);
        let mut acc = T::zero();
        for (j, &dh) in d_h.iter().enumerate() {
            grow[j] += pooled[i] * dh;
            acc += wrow[j] * dh;
        }
        *dp = acc;
    }
    d_pooled
}

/// Mixes the qq and qa banks: row j = lambda_qq * qq[j] + lambda_qa * qa[j].
pub fn generate_qi_tokens<T: Scalar>(
    lambda: (T, T),
    bank_qq: &Matrix<T>,
    bank_qa: &Matrix<T>,
) -> Matrix<T> {
    assert_eq!(
        (bank_qq.rows(), bank_qq.cols()),
        (bank_qa.rows(), bank_qa.cols())
    );
    let mut out = Matrix::zeros(bank_qq.rows(), bank_qq.cols());
    for ((o, &a), &b) in out
        .data_mut()
        .iter_mut()
        .zip(bank_qq.data())
        .zip(bank_qa.data())
    {
        *o = lambda.0 * a + lambda.1 * b;
    }
    out
}
