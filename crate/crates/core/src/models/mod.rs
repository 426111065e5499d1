//! Sequence classifiers trained with binary cross-entropy on a sigmoid head.
//!
//! Every model keeps its parameters in one flat vector so the optimizer,
//! the finite-difference checks and the model file treat all kinds alike.

pub mod fnn;
pub mod lstm;
pub mod mlr;
pub mod persist;
pub mod rnn;
pub mod train;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::features::FeatureSequence;
use crate::rng::SeededRng;

pub use fnn::Fnn;
pub use lstm::Lstm;
pub use mlr::Mlr;
pub use rnn::Rnn;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss {loss})")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyTrainingSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lstm,
    Rnn,
    Fnn,
    Mlr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Lstm, ModelKind::Rnn, ModelKind::Fnn, ModelKind::Mlr];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Rnn => "rnn",
            ModelKind::Fnn => "fnn",
            ModelKind::Mlr => "mlr",
        }
    }

    /// FNN and MLR see the whole cycle as one step.
    pub fn is_recurrent(self) -> bool {
        matches!(self, ModelKind::Lstm | ModelKind::Rnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lstm" => Ok(ModelKind::Lstm),
            "rnn" => Ok(ModelKind::Rnn),
            "fnn" => Ok(ModelKind::Fnn),
            "mlr" => Ok(ModelKind::Mlr),
            other => Err(format!("unknown model kind '{other}' (lstm, rnn, fnn, mlr)")),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`, computed
/// without forming the probability.
pub fn bce_from_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Fills `out` with Xavier-uniform draws, or uniform in `[-scale, scale]`
/// when `scale` is given.
pub(crate) fn xavier_fill(out: &mut [f64], fan_in: usize, fan_out: usize, scale: Option<f64>, rng: &mut SeededRng) {
    let bound = scale.unwrap_or_else(|| (6.0 / (fan_in + fan_out) as f64).sqrt());
    for v in out {
        *v = rng.uniform_range(-bound, bound);
    }
}

pub(crate) fn check_grad_len(expected: usize, found: usize) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::Shape(format!(
            "gradient buffer has {found} entries, model has {expected}"
        )));
    }
    Ok(())
}

pub(crate) fn single_step(seq: &FeatureSequence, kind: ModelKind) -> Result<&[f64], ModelError> {
    match seq.steps.as_slice() {
        [step] => Ok(step),
        _ => Err(ModelError::Shape(format!(
            "{kind} takes a single full-cycle step, got {} steps",
            seq.len()
        ))),
    }
}

/// Common interface over the four classifiers.
pub trait Classifier {
    fn kind(&self) -> ModelKind;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn logit(&self, seq: &FeatureSequence) -> Result<f64, ModelError>;
    /// Adds d(loss)/d(params) into `grad` and returns the loss.
    fn accumulate_gradient(&self, seq: &FeatureSequence, target: f64, grad: &mut [f64]) -> Result<f64, ModelError>;

    fn probability(&self, seq: &FeatureSequence) -> Result<f64, ModelError> {
        self.logit(seq).map(sigmoid)
    }

    fn loss(&self, seq: &FeatureSequence, target: f64) -> Result<f64, ModelError> {
        self.logit(seq).map(|l| bce_from_logit(l, target))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lstm(Lstm),
    Rnn(Rnn),
    Fnn(Fnn),
    Mlr(Mlr),
}

impl Model {
    /// Freshly initialised model. `hidden` is ignored by FNN and MLR.
    pub fn init(kind: ModelKind, hidden: usize, scale: Option<f64>, rng: &mut SeededRng) -> Self {
        match kind {
            ModelKind::Lstm => Model::Lstm(Lstm::init(hidden, scale, rng)),
            ModelKind::Rnn => Model::Rnn(Rnn::init(hidden, scale, rng)),
            ModelKind::Fnn => Model::Fnn(Fnn::init(scale, rng)),
            ModelKind::Mlr => Model::Mlr(Mlr::init(scale, rng)),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Model::Lstm(m) => m.hidden(),
            Model::Rnn(m) => m.hidden(),
            Model::Fnn(_) => fnn::HIDDEN,
            Model::Mlr(_) => 0,
        }
    }

    /// Rebuilds a model from its kind, hidden size and flat parameters.
    pub fn from_params(kind: ModelKind, hidden: usize, params: Vec<f64>) -> Result<Self, ModelError> {
        Ok(match kind {
            ModelKind::Lstm => Model::Lstm(Lstm::from_params(hidden, params)?),
            ModelKind::Rnn => Model::Rnn(Rnn::from_params(hidden, params)?),
            ModelKind::Fnn => Model::Fnn(Fnn::from_params(params)?),
            ModelKind::Mlr => Model::Mlr(Mlr::from_params(params)?),
        })
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            Model::Lstm(m) => m,
            Model::Rnn(m) => m,
            Model::Fnn(m) => m,
            Model::Mlr(m) => m,
        }
    }
}

impl Classifier for Model {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn params(&self) -> &[f64] {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Lstm(m) => m.params_mut(),
            Model::Rnn(m) => m.params_mut(),
            Model::Fnn(m) => m.params_mut(),
            Model::Mlr(m) => m.params_mut(),
        }
    }

    fn logit(&self, seq: &FeatureSequence) -> Result<f64, ModelError> {
        self.inner().logit(seq)
    }

    fn accumulate_gradient(&self, seq: &FeatureSequence, target: f64, grad: &mut [f64]) -> Result<f64, ModelError> {
        self.inner().accumulate_gradient(seq, target, grad)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::features::FEATURE_DIM;

    pub fn random_sequence(k: usize, rng: &mut SeededRng) -> FeatureSequence {
        FeatureSequence {
            steps: (0..k)
                .map(|_| {
                    let mut s = [0.0; FEATURE_DIM];
                    for v in &mut s {
                        *v = rng.uniform();
                    }
                    s
                })
                .collect(),
            scaled: true,
        }
    }

    /// Largest relative error between the analytic gradient and central
    /// differences with step 1e-5, using `max(|a|, |n|, 1e-6)` as the scale.
    pub fn max_gradient_error<M: Classifier + Clone>(model: &M, seq: &FeatureSequence, target: f64) -> f64 {
        let mut grad = vec![0.0; model.params().len()];
        model.accumulate_gradient(seq, target, &mut grad).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..grad.len() {
            let mut plus = model.clone();
            plus.params_mut()[j] += h;
            let mut minus = model.clone();
            minus.params_mut()[j] -= h;
            let numeric = (plus.loss(seq, target).unwrap() - minus.loss(seq, target).unwrap()) / (2.0 * h);
            let scale = grad[j].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((grad[j] - numeric).abs() / scale);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_direct_formula() {
        for &l in &[-5.0, -2.0, -0.1, 0.0, 0.7, 5.0] {
            for &y in &[0.0, 1.0] {
                let p = sigmoid(l);
                let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                assert!((bce_from_logit(l, y) - direct).abs() < 1e-9 * (1.0 + direct));
            }
        }
        assert!(bce_from_logit(-800.0, 1.0).is_finite());
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.as_str().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }
}
