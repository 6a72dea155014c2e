//! Central-difference gradient verification.
//!
//! A target exposes its trainable tensors as flat f64 views plus a
//! deterministic loss; the checker perturbs every coordinate twice and
//! compares (loss(x+h) - loss(x-h)) / 2h against the analytic gradient.

use serde::Serialize;

pub trait GradCheckTarget {
    fn tensor_count(&self) -> usize;
    fn tensor_name(&self, t: usize) -> String;
    fn tensor_len(&self, t: usize) -> usize;
    fn get(&self, t: usize, i: usize) -> f64;
    fn set(&mut self, t: usize, i: usize, value: f64);
    /// Loss at the current parameters. Must be deterministic and free of
    /// internal randomness so finite differences are meaningful.
    fn loss(&mut self) -> f64;
    /// Analytic gradients for every tensor at the current parameters, in
    /// tensor order, each flattened to match get/set indexing.
    fn analytic_gradients(&mut self) -> Vec<Vec<f64>>;
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    /// Coordinate attaining the max, for debugging.
    pub argmax_index: usize,
    pub analytic_at_max: f64,
    pub numeric_at_max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub precision: &'static str,
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn grad_check<G: GradCheckTarget + ?Sized>(target: &mut G, step: f64) -> GradCheckReport {
    assert!(step > 0.0, "finite-difference step must be positive");
    let analytic = target.analytic_gradients();
    assert_eq!(analytic.len(), target.tensor_count());
    let mut tensors = Vec::with_capacity(analytic.len());
    for t in 0..target.tensor_count() {
        let len = target.tensor_len(t);
        assert_eq!(analytic[t].len(), len, "gradient length mismatch");
        let mut check = TensorCheck {
            name: target.tensor_name(t),
            len,
            max_rel_error: 0.0,
            argmax_index: 0,
            analytic_at_max: 0.0,
            numeric_at_max: 0.0,
        };
        for i in 0..len {
            let saved = target.get(t, i);
            target.set(t, i, saved + step);
            let up = target.loss();
            target.set(t, i, saved - step);
            let down = target.loss();
            target.set(t, i, saved);
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.argmax_index = i;
                check.analytic_at_max = a;
                check.numeric_at_max = numeric;
            }
        }
        tensors.push(check);
    }
    GradCheckReport {
        precision: "f64",
        step,
        tensors,
    }
}
