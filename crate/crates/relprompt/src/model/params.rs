use crate::numerics::{derive_seed, Matrix, Pcg32, Scalar};
use crate::streams;

use super::config::EncoderConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub ln1_gain: Vec<T>,
    pub ln1_bias: Vec<T>,
    pub ffn_w1: Matrix<T>,
    pub ffn_b1: Vec<T>,
    pub ffn_w2: Matrix<T>,
    pub ffn_b2: Vec<T>,
    pub ln2_gain: Vec<T>,
    pub ln2_bias: Vec<T>,
}

/// Every trainable tensor of the model. Gradients use a second ParamSet of
/// identical shape, so any tensor added here automatically gains a slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub word_emb: Matrix<T>,
    pub pos_emb: Matrix<T>,
    /// Relation-token banks indexed by RelationKind::bank_index (qq, qa, qi).
    pub banks: [Matrix<T>; 3],
    pub layers: Vec<LayerParams<T>>,
    /// Untied MLM output projection (k x V); None when tied to word_emb.
    pub mlm_w: Option<Matrix<T>>,
    pub mlm_b: Vec<T>,
    pub class_w1: Matrix<T>,
    pub class_b1: Vec<T>,
    pub class_w2: Vec<T>,
    pub adapt_w1: Matrix<T>,
    pub adapt_b1: Vec<T>,
    pub adapt_w2: Matrix<T>,
    pub adapt_b2: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    TruncatedNormal,
    Zero,
    One,
}

pub struct TensorSlot<'a, T> {
    pub name: String,
    pub init: InitKind,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [T],
}

pub struct TensorSlotMut<'a, T> {
    pub name: String,
    pub init: InitKind,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [T],
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(config: &EncoderConfig) -> Self {
        let v = config.vocab_size;
        let k = config.hidden_dim;
        let m = config.num_relation_tokens;
        let bank = || Matrix::zeros(m, k);
        ParamSet {
            word_emb: Matrix::zeros(v, k),
            pos_emb: Matrix::zeros(config.max_len, k),
            banks: [bank(), bank(), bank()],
            layers: (0..config.num_layers)
                .map(|_| LayerParams {
                    wq: Matrix::zeros(k, k),
                    wk: Matrix::zeros(k, k),
                    wv: Matrix::zeros(k, k),
                    wo: Matrix::zeros(k, k),
                    ln1_gain: vec![T::zero(); k],
                    ln1_bias: vec![T::zero(); k],
                    ffn_w1: Matrix::zeros(k, config.ffn_dim),
                    ffn_b1: vec![T::zero(); config.ffn_dim],
                    ffn_w2: Matrix::zeros(config.ffn_dim, k),
                    ffn_b2: vec![T::zero(); k],
                    ln2_gain: vec![T::zero(); k],
                    ln2_bias: vec![T::zero(); k],
                })
                .collect(),
            mlm_w: (!config.tie_mlm_weights).then(|| Matrix::zeros(k, v)),
            mlm_b: vec![T::zero(); v],
            class_w1: Matrix::zeros(k, k),
            class_b1: vec![T::zero(); k],
            class_w2: vec![T::zero(); k],
            adapt_w1: Matrix::zeros(k, k),
            adapt_b1: vec![T::zero(); k],
            adapt_w2: Matrix::zeros(k, 2),
            adapt_b2: vec![T::zero(); 2],
        }
    }

    /// Deterministic initialization: truncated normal (sigma 0.02) for weight
    /// matrices, embeddings, and banks; zeros for biases and layer-norm
    /// biases; ones for layer-norm gains. Draw order equals slot order.
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = Pcg32::seeded(derive_seed(seed, &[streams::MODEL_INIT]));
        for slot in params.slots_mut() {
            match slot.init {
                InitKind::TruncatedNormal => {
                    for x in slot.data.iter_mut() {
                        *x = T::from_f64c(rng.truncated_normal(0.02));
                    }
                }
                InitKind::Zero => {}
                InitKind::One => slot.data.iter_mut().for_each(|x| *x = T::one()),
            }
        }
        params
    }

    pub fn zero_all(&mut self) {
        for slot in self.slots_mut() {
            slot.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Tensors in checkpoint/optimizer order. Must stay consistent with
    /// slots_mut; a unit test pins the correspondence.
    pub fn slots(&self) -> Vec<TensorSlot<'_, T>> {
        let mut out = Vec::new();
        fn push_m<'a, T>(out: &mut Vec<TensorSlot<'a, T>>, name: String, mat: &'a Matrix<T>) {
            out.push(TensorSlot {
                name,
                init: InitKind::TruncatedNormal,
                rows: mat.rows(),
                cols: mat.cols(),
                data: mat.data(),
            })
        }
        fn push_v<'a, T>(out: &mut Vec<TensorSlot<'a, T>>, name: String, v: &'a [T], init: InitKind) {
            out.push(TensorSlot {
                name,
                init,
                rows: 1,
                cols: v.len(),
                data: v,
            })
        }
        push_m(&mut out, "word_emb".into(), &self.word_emb);
        push_m(&mut out, "pos_emb".into(), &self.pos_emb);
        push_m(&mut out, "bank_qq".into(), &self.banks[0]);
        push_m(&mut out, "bank_qa".into(), &self.banks[1]);
        push_m(&mut out, "bank_qi".into(), &self.banks[2]);
        for (l, layer) in self.layers.iter().enumerate() {
            push_m(&mut out, format!("layer{l}.wq"), &layer.wq);
            push_m(&mut out, format!("layer{l}.wk"), &layer.wk);
            push_m(&mut out, format!("layer{l}.wv"), &layer.wv);
            push_m(&mut out, format!("layer{l}.wo"), &layer.wo);
            push_v(
                &mut out,
                format!("layer{l}.ln1_gain"),
                &layer.ln1_gain,
                InitKind::One,
            );
            push_v(
                &mut out,
                format!("layer{l}.ln1_bias"),
                &layer.ln1_bias,
                InitKind::Zero,
            );
            push_m(&mut out, format!("layer{l}.ffn_w1"), &layer.ffn_w1);
            push_v(
                &mut out,
                format!("layer{l}.ffn_b1"),
                &layer.ffn_b1,
                InitKind::Zero,
            );
            push_m(&mut out, format!("layer{l}.ffn_w2"), &layer.ffn_w2);
            push_v(
                &mut out,
                format!("layer{l}.ffn_b2"),
                &layer.ffn_b2,
                InitKind::Zero,
            );
            push_v(
                &mut out,
                format!("layer{l}.ln2_gain"),
                &layer.ln2_gain,
                InitKind::One,
            );
            push_v(
                &mut out,
                format!("layer{l}.ln2_bias"),
                &layer.ln2_bias,
                InitKind::Zero,
            );
        }
        if let Some(mlm_w) = &self.mlm_w {
            push_m(&mut out, "mlm_w".into(), mlm_w);
        }
        push_v(&mut out, "mlm_b".into(), &self.mlm_b, InitKind::Zero);
        push_m(&mut out, "class_w1".into(), &self.class_w1);
        push_v(&mut out, "class_b1".into(), &self.class_b1, InitKind::Zero);
        push_v(
            &mut out,
            "class_w2".into(),
            &self.class_w2,
            InitKind::TruncatedNormal,
        );
        push_m(&mut out, "adapt_w1".into(), &self.adapt_w1);
        push_v(&mut out, "adapt_b1".into(), &self.adapt_b1, InitKind::Zero);
        push_m(&mut out, "adapt_w2".into(), &self.adapt_w2);
        push_v(&mut out, "adapt_b2".into(), &self.adapt_b2, InitKind::Zero);
        out
    }

    pub fn slots_mut(&mut self) -> Vec<TensorSlotMut<'_, T>> {
        let mut out = Vec::new();
        fn push_m<'a, T>(out: &mut Vec<TensorSlotMut<'a, T>>, name: String, mat: &'a mut Matrix<T>) {
            let (rows, cols) = (mat.rows(), mat.cols());
            out.push(TensorSlotMut {
                name,
                init: InitKind::TruncatedNormal,
                rows,
                cols,
                data: mat.data_mut(),
            })
        }
        fn push_v<'a, T>(
            out: &mut Vec<TensorSlotMut<'a, T>>,
            name: String,
            v: &'a mut [T],
            init: InitKind,
        ) {
            let cols = v.len();
            out.push(TensorSlotMut {
                name,
                init,
                rows: 1,
                cols,
                data: v,
            })
        }
        push_m(&mut out, "word_emb".into(), &mut self.word_emb);
        push_m(&mut out, "pos_emb".into(), &mut self.pos_emb);
        let [qq, qa, qi] = &mut self.banks;
        push_m(&mut out, "bank_qq".into(), qq);
        push_m(&mut out, "bank_qa".into(), qa);
        push_m(&mut out, "bank_qi".into(), qi);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            push_m(&mut out, format!("layer{l}.wq"), &mut layer.wq);
            push_m(&mut out, format!("layer{l}.wk"), &mut layer.wk);
            push_m(&mut out, format!("layer{l}.wv"), &mut layer.wv);
            push_m(&mut out, format!("layer{l}.wo"), &mut layer.wo);
            push_v(
                &mut out,
                format!("layer{l}.ln1_gain"),
                &mut layer.ln1_gain,
                InitKind::One,
            );
            push_v(
                &mut out,
                format!("layer{l}.ln1_bias"),
                &mut layer.ln1_bias,
                InitKind::Zero,
            );
            push_m(&mut out, format!("layer{l}.ffn_w1"), &mut layer.ffn_w1);
            push_v(
                &mut out,
                format!("layer{l}.ffn_b1"),
                &mut layer.ffn_b1,
                InitKind::Zero,
            );
            push_m(&mut out, format!("layer{l}.ffn_w2"), &mut layer.ffn_w2);
            push_v(
                &mut out,
                format!("layer{l}.ffn_b2"),
                &mut layer.ffn_b2,
                InitKind::Zero,
            );
            push_v(
                &mut out,
                format!("layer{l}.ln2_gain"),
                &mut layer.ln2_gain,
                InitKind::One,
            );
            push_v(
                &mut out,
                format!("layer{l}.ln2_bias"),
                &mut layer.ln2_bias,
                InitKind::Zero,
            );
        }
        if let Some(mlm_w) = &mut self.mlm_w {
            push_m(&mut out, "mlm_w".into(), mlm_w);
        }
        push_v(&mut out, "mlm_b".into(), &mut self.mlm_b, InitKind::Zero);
        push_m(&mut out, "class_w1".into(), &mut self.class_w1);
        push_v(&mut out, "class_b1".into(), &mut self.class_b1, InitKind::Zero);
        push_v(
            &mut out,
            "class_w2".into(),
            &mut self.class_w2,
            InitKind::TruncatedNormal,
        );
        push_m(&mut out, "adapt_w1".into(), &mut self.adapt_w1);
        push_v(&mut out, "adapt_b1".into(), &mut self.adapt_b1, InitKind::Zero);
        push_m(&mut out, "adapt_w2".into(), &mut self.adapt_w2);
        push_v(&mut out, "adapt_b2".into(), &mut self.adapt_b2, InitKind::Zero);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.slots().iter().map(|s| s.data.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 16,
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 12,
            max_len: 12,
            num_relation_tokens: 3,
            dropout_rate: 0.0,
            tie_mlm_weights: true,
        }
    }

    #[test]
    fn slot_views_agree() {
        let cfg = tiny_config();
        let mut p: ParamSet<f32> = ParamSet::init(&cfg, 1);
        let names: Vec<(String, usize, usize, InitKind)> = p
            .slots()
            .iter()
            .map(|s| (s.name.clone(), s.rows, s.cols, s.init))
            .collect();
        let names_mut: Vec<(String, usize, usize, InitKind)> = p
            .slots_mut()
            .iter()
            .map(|s| (s.name.clone(), s.rows, s.cols, s.init))
            .collect();
        assert_eq!(names, names_mut);
        // untied adds exactly one tensor
        let mut cfg2 = cfg.clone();
        cfg2.tie_mlm_weights = false;
        let p2: ParamSet<f32> = ParamSet::zeros(&cfg2);
        assert_eq!(p2.slots().len(), names.len() + 1);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = tiny_config();
        let a: ParamSet<f64> = ParamSet::init(&cfg, 7);
        let b: ParamSet<f64> = ParamSet::init(&cfg, 7);
        let c: ParamSet<f64> = ParamSet::init(&cfg, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);

        for slot in a.slots() {
            match slot.init {
                InitKind::TruncatedNormal => {
                    assert!(slot.data.iter().all(|x| x.abs() <= 0.04 + 1e-12));
                    assert!(slot.data.iter().any(|x| *x != 0.0), "{}", slot.name);
                }
                InitKind::Zero => assert!(slot.data.iter().all(|x| *x == 0.0), "{}", slot.name),
                InitKind::One => assert!(slot.data.iter().all(|x| *x == 1.0), "{}", slot.name),
            }
        }
    }

    #[test]
    fn grad_shapes_mirror_params() {
        let cfg = tiny_config();
        let p: ParamSet<f32> = ParamSet::init(&cfg, 3);
        let g: ParamSet<f32> = ParamSet::zeros(&cfg);
        let ps = p.slots();
        let gs = g.slots();
        assert_eq!(ps.len(), gs.len());
        for (a, b) in ps.iter().zip(&gs) {
            assert_eq!(a.name, b.name);
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
        }
    }
}
