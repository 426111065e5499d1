//! Full-cycle feed-forward baseline: 12 -> 6 -> 6 -> 1, ReLU hidden layers,
//! sigmoid output.
//!
//! Flat layout: `W1` (6 x 12), `b1`, `W2` (6 x 6), `b2`, `w3` (6), `b3`.

use crate::features::{FeatureSequence, FEATURE_DIM};
use crate::rng::SeededRng;

use super::{bce_from_logit, check_grad_len, single_step, xavier_fill, Classifier, ModelError, ModelKind};

pub const HIDDEN: usize = 6;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * FEATURE_DIM;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;
const B3: usize = W3 + HIDDEN;
pub const PARAM_COUNT: usize = B3 + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Fnn {
    theta: Vec<f64>,
}

struct Activations {
    a1: [f64; HIDDEN],
    h1: [f64; HIDDEN],
    a2: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    logit: f64,
}

impl Fnn {
    pub fn zeros() -> Self {
        Self {
            theta: vec![0.0; PARAM_COUNT],
        }
    }

    pub fn init(scale: Option<f64>, rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros();
        xavier_fill(&mut m.theta[W1..B1], FEATURE_DIM, HIDDEN, scale, rng);
        xavier_fill(&mut m.theta[W2..B2], HIDDEN, HIDDEN, scale, rng);
        xavier_fill(&mut m.theta[W3..B3], HIDDEN, 1, scale, rng);
        m
    }

    pub fn from_params(theta: Vec<f64>) -> Result<Self, ModelError> {
        if theta.len() != PARAM_COUNT {
            return Err(ModelError::Shape(format!(
                "fnn needs {PARAM_COUNT} parameters, got {}",
                theta.len()
            )));
        }
        Ok(Self { theta })
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let p = &self.theta;
        let mut a1 = [0.0; HIDDEN];
        let mut h1 = [0.0; HIDDEN];
        for r in 0..HIDDEN {
            a1[r] = p[B1 + r] + (0..FEATURE_DIM).map(|j| p[W1 + r * FEATURE_DIM + j] * x[j]).sum::<f64>();
            h1[r] = a1[r].max(0.0);
        }
        let mut a2 = [0.0; HIDDEN];
        let mut h2 = [0.0; HIDDEN];
        for r in 0..HIDDEN {
            a2[r] = p[B2 + r] + (0..HIDDEN).map(|j| p[W2 + r * HIDDEN + j] * h1[j]).sum::<f64>();
            h2[r] = a2[r].max(0.0);
        }
        let logit = p[B3] + (0..HIDDEN).map(|j| p[W3 + j] * h2[j]).sum::<f64>();
        Activations { a1, h1, a2, h2, logit }
    }
}

impl Classifier for Fnn {
    fn kind(&self) -> ModelKind {
        ModelKind::Fnn
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn logit(&self, seq: &FeatureSequence) -> Result<f64, ModelError> {
        Ok(self.activations(single_step(seq, ModelKind::Fnn)?).logit)
    }

    fn accumulate_gradient(&self, seq: &FeatureSequence, target: f64, grad: &mut [f64]) -> Result<f64, ModelError> {
        check_grad_len(PARAM_COUNT, grad.len())?;
        let x = single_step(seq, ModelKind::Fnn)?;
        let act = self.activations(x);
        let p = &self.theta;
        let d_logit = super::sigmoid(act.logit) - target;
        grad[B3] += d_logit;
        let mut d_a2 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            grad[W3 + j] += d_logit * act.h2[j];
            d_a2[j] = if act.a2[j] > 0.0 { d_logit * p[W3 + j] } else { 0.0 };
        }
        let mut d_h1 = [0.0; HIDDEN];
        for r in 0..HIDDEN {
            grad[B2 + r] += d_a2[r];
            for j in 0..HIDDEN {
                grad[W2 + r * HIDDEN + j] += d_a2[r] * act.h1[j];
                d_h1[j] += p[W2 + r * HIDDEN + j] * d_a2[r];
            }
        }
        for r in 0..HIDDEN {
            let d_a1 = if act.a1[r] > 0.0 { d_h1[r] } else { 0.0 };
            grad[B1 + r] += d_a1;
            for j in 0..FEATURE_DIM {
                grad[W1 + r * FEATURE_DIM + j] += d_a1 * x[j];
            }
        }
        Ok(bce_from_logit(act.logit, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::{max_gradient_error, random_sequence};

    #[test]
    fn zero_weights_give_half() {
        let m = Fnn::zeros();
        let seq = random_sequence(1, &mut SeededRng::new(1));
        assert_eq!(m.probability(&seq).unwrap(), 0.5);
    }

    #[test]
    fn rejects_multi_step_input() {
        let m = Fnn::zeros();
        let seq = random_sequence(4, &mut SeededRng::new(1));
        assert!(matches!(m.logit(&seq), Err(ModelError::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(2);
        for _ in 0..20 {
            let mut m = Fnn::init(None, &mut rng);
            // positive biases keep most units active so the check is not
            // dominated by dead units
            for b in B1..B1 + HIDDEN {
                m.theta[b] = 0.1;
            }
            let seq = random_sequence(1, &mut rng);
            let target = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
            let err = max_gradient_error(&m, &seq, target);
            assert!(err < 1e-4, "relative error {err}");
        }
    }
}
