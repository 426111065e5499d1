//! Logistic regression on the full-cycle 12-vector: `sigmoid(w . x + b)`.
//!
//! Flat layout: `w` (12), `b`.

use crate::features::{FeatureSequence, FEATURE_DIM};
use crate::rng::SeededRng;

use super::{bce_from_logit, check_grad_len, sigmoid, single_step, xavier_fill, Classifier, ModelError, ModelKind};

pub const PARAM_COUNT: usize = FEATURE_DIM + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlr {
    theta: Vec<f64>,
}

impl Mlr {
    pub fn zeros() -> Self {
        Self {
            theta: vec![0.0; PARAM_COUNT],
        }
    }

    pub fn init(scale: Option<f64>, rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros();
        xavier_fill(&mut m.theta[..FEATURE_DIM], FEATURE_DIM, 1, scale, rng);
        m
    }

    pub fn from_params(theta: Vec<f64>) -> Result<Self, ModelError> {
        if theta.len() != PARAM_COUNT {
            return Err(ModelError::Shape(format!(
                "mlr needs {PARAM_COUNT} parameters, got {}",
                theta.len()
            )));
        }
        Ok(Self { theta })
    }
}

impl Classifier for Mlr {
    fn kind(&self) -> ModelKind {
        ModelKind::Mlr
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn logit(&self, seq: &FeatureSequence) -> Result<f64, ModelError> {
        let x = single_step(seq, ModelKind::Mlr)?;
        Ok(self.theta[FEATURE_DIM] + x.iter().zip(&self.theta).map(|(a, w)| a * w).sum::<f64>())
    }

    fn accumulate_gradient(&self, seq: &FeatureSequence, target: f64, grad: &mut [f64]) -> Result<f64, ModelError> {
        check_grad_len(PARAM_COUNT, grad.len())?;
        let x = single_step(seq, ModelKind::Mlr)?;
        let logit = self.logit(seq)?;
        let d = sigmoid(logit) - target;
        for j in 0..FEATURE_DIM {
            grad[j] += d * x[j];
        }
        grad[FEATURE_DIM] += d;
        Ok(bce_from_logit(logit, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::{max_gradient_error, random_sequence};

    #[test]
    fn zero_weights_give_half() {
        let seq = random_sequence(1, &mut SeededRng::new(1));
        assert_eq!(Mlr::zeros().probability(&seq).unwrap(), 0.5);
    }

    #[test]
    fn gradient_is_error_times_input() {
        let mut rng = SeededRng::new(2);
        let m = Mlr::init(Some(1.0), &mut rng);
        let seq = random_sequence(1, &mut rng);
        let mut grad = vec![0.0; PARAM_COUNT];
        m.accumulate_gradient(&seq, 1.0, &mut grad).unwrap();
        let d = m.probability(&seq).unwrap() - 1.0;
        for j in 0..FEATURE_DIM {
            assert!((grad[j] - d * seq.steps[0][j]).abs() < 1e-15);
        }
        assert!((grad[FEATURE_DIM] - d).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            let m = Mlr::init(Some(1.0), &mut rng);
            let seq = random_sequence(1, &mut rng);
            let target = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
            assert!(max_gradient_error(&m, &seq, target) < 1e-4);
        }
    }
}
