use super::scalar::Scalar;

/// First and second moment buffers for one tensor. The step count lives with
/// the caller because bias correction uses one global step shared by every
/// tensor in the model.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// One bias-corrected Adam update: p -= lr * m_hat / (sqrt(v_hat) + eps).
/// `step` is 1-based.
pub fn adam_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    state: &mut AdamState<T>,
    step: u64,
    lr: T,
    betas: (T, T),
    eps: T,
) {
    assert_eq!(param.len(), grad.len());
    assert_eq!(param.len(), state.m.len());
    assert!(step >= 1, "adam step is 1-based");
    let (b1, b2) = betas;
    let one = T::one();
    let bc1 = one - b1.powi(step as i32);
    let bc2 = one - b2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_fixed() {
        let mut p = vec![1.0f64, -2.0, 0.5];
        let g = vec![0.0; 3];
        let mut st = AdamState::new(3);
        for step in 1..=10 {
            adam_step(&mut p, &g, &mut st, step, 0.1, (0.9, 0.999), 1e-8);
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With bias correction, step 1 gives m_hat = g, v_hat = g^2,
        // so the update is lr * sign(g) up to eps.
        let mut p = vec![0.0f64];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[3.0], &mut st, 1, 0.01, (0.9, 0.999), 1e-8);
        assert!((p[0] + 0.01).abs() < 1e-7);
    }

    #[test]
    fn matches_scalar_recurrence_oracle() {
        // Five-step trace computed independently from the textbook recurrence.
        let grads = [1.0f64, 1.0, -0.5, 0.25, 2.0];
        let expect_p = [
            0.400000001,
            0.30000000200000065,
            0.24843466201699266,
            0.1972069523533418,
            0.12757844818682282,
        ];
        let mut p = vec![0.5f64];
        let mut st = AdamState::new(1);
        for (i, &g) in grads.iter().enumerate() {
            adam_step(
                &mut p,
                &[g],
                &mut st,
                (i + 1) as u64,
                0.1,
                (0.9, 0.999),
                1e-8,
            );
            assert!(
                (p[0] - expect_p[i]).abs() < 1e-12,
                "step {} got {} want {}",
                i + 1,
                p[0],
                expect_p[i]
            );
        }
        assert!((st.m[0] - 0.3205099999999999).abs() < 1e-15);
        assert!((st.v[0] - 0.006304946745001006).abs() < 1e-15);
    }
}
