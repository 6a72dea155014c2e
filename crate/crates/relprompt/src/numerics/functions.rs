use super::scalar::Scalar;

/// Max-subtracted softmax over a slice, in place. Entries of -inf map to 0.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    debug_assert!(max > T::neg_infinity(), "softmax over all-masked slice");
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Max-subtracted log-softmax, in place.
pub fn log_softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut sum = T::zero();
    for &x in xs.iter() {
        sum += (x - max).exp();
    }
    let lse = max + sum.ln();
    for x in xs.iter_mut() {
        *x -= lse;
    }
}

pub fn log_softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut out = xs.to_vec();
    log_softmax_in_place(&mut out);
    out
}

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64c(0.5);
    let c = T::from_f64c(SQRT_2_OVER_PI);
    let a = T::from_f64c(0.044715);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

/// Closed-form derivative of the tanh-approximation GELU.
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64c(0.5);
    let c = T::from_f64c(SQRT_2_OVER_PI);
    let a = T::from_f64c(0.044715);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::from_f64c(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

const SQRT_2_OVER_PI: f64 = 0.7978845608028654;

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    assert!(!xs.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_hand_example() {
        let mut xs = vec![0.0f64, (2.0f64).ln(), (3.0f64).ln()];
        softmax_in_place(&mut xs);
        assert!((xs[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((xs[1] - 2.0 / 6.0).abs() < 1e-12);
        assert!((xs[2] - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_masks_neg_infinity_to_zero() {
        let mut xs = vec![1.0f64, f64::NEG_INFINITY, 1.0];
        softmax_in_place(&mut xs);
        assert_eq!(xs[1], 0.0);
        assert!((xs[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_survives_large_magnitudes() {
        let mut xs = vec![1000.0f32, 1001.0, 999.0];
        log_softmax_in_place(&mut xs);
        assert!(xs.iter().all(|x| x.is_finite()));
        // f32 ulp at magnitude 1000 is ~6e-5, so the subtraction x - lse
        // carries ~1e-4 relative error; only finiteness and coarse
        // normalization are guaranteed here.
        let sum_p: f32 = xs.iter().map(|x| x.exp()).sum();
        assert!((sum_p - 1.0).abs() < 1e-3);
    }

    #[test]
    fn gelu_reference_points() {
        // Values from evaluating the tanh form directly at f64.
        assert!((gelu(0.0f64)).abs() < 1e-15);
        assert!((gelu(1.0f64) - 0.8411919906082768).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.15880800939172324).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let h = 1e-6;
        for &x in &[-3.0f64, -1.0, -0.1, 0.0, 0.5, 2.0, 4.0] {
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(
                (gelu_grad(x) - num).abs() < 1e-8,
                "x={x}: analytic {} vs numeric {num}",
                gelu_grad(x)
            );
        }
    }

    #[test]
    fn argmax_tie_takes_lowest_index() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0f32]), 0);
    }

    proptest! {
        #[test]
        fn log_softmax_is_shift_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let a = log_softmax(&xs);
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let b = log_softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_sums_to_one_and_stays_nonnegative(
            xs in proptest::collection::vec(-30.0f64..30.0, 1..12),
        ) {
            let mut p = xs.clone();
            softmax_in_place(&mut p);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
