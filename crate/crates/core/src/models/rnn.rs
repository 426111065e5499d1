//! Vanilla recurrent baseline: `h_t = tanh(W_h h_{t-1} + W_x x_t + b_h)`,
//! output `sigmoid(w_out . h_K + b_out)`.
//!
//! Flat layout: `W_h` (`hidden x hidden`), `W_x` (`hidden x 12`), `b_h`,
//! `w_out`, `b_out`.

use crate::features::{FeatureSequence, FEATURE_DIM};
use crate::rng::SeededRng;

use super::{bce_from_logit, check_grad_len, sigmoid, xavier_fill, Classifier, ModelError, ModelKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Rnn {
    hidden: usize,
    theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnForward {
    pub logit: f64,
    pub probability: f64,
    /// `h_0` followed by `h_1..h_K`.
    pub hidden_states: Vec<Vec<f64>>,
}

pub fn param_count(hidden: usize) -> usize {
    hidden * hidden + hidden * FEATURE_DIM + hidden + hidden + 1
}

impl Rnn {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            theta: vec![0.0; param_count(hidden)],
        }
    }

    pub fn init(hidden: usize, scale: Option<f64>, rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros(hidden);
        let h = hidden;
        xavier_fill(&mut m.theta[..h * h], h, h, scale, rng);
        let x_off = m.w_x_offset();
        xavier_fill(&mut m.theta[x_off..x_off + h * FEATURE_DIM], FEATURE_DIM, h, scale, rng);
        let o_off = m.w_out_offset();
        xavier_fill(&mut m.theta[o_off..o_off + h], h, 1, scale, rng);
        m
    }

    pub fn from_params(hidden: usize, theta: Vec<f64>) -> Result<Self, ModelError> {
        if theta.len() != param_count(hidden) {
            return Err(ModelError::Shape(format!(
                "rnn with hidden {hidden} needs {} parameters, got {}",
                param_count(hidden),
                theta.len()
            )));
        }
        Ok(Self { hidden, theta })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn w_x_offset(&self) -> usize {
        self.hidden * self.hidden
    }

    fn b_h_offset(&self) -> usize {
        self.w_x_offset() + self.hidden * FEATURE_DIM
    }

    fn w_out_offset(&self) -> usize {
        self.b_h_offset() + self.hidden
    }

    fn b_out_offset(&self) -> usize {
        self.w_out_offset() + self.hidden
    }

    pub fn recurrent_weights_mut(&mut self) -> &mut [f64] {
        let h = self.hidden;
        &mut self.theta[..h * h]
    }

    pub fn input_weights_mut(&mut self) -> &mut [f64] {
        let (off, len) = (self.w_x_offset(), self.hidden * FEATURE_DIM);
        &mut self.theta[off..off + len]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let (off, len) = (self.b_h_offset(), self.hidden);
        &mut self.theta[off..off + len]
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let (off, len) = (self.w_out_offset(), self.hidden);
        &mut self.theta[off..off + len]
    }

    pub fn output_bias_mut(&mut self) -> &mut f64 {
        let off = self.b_out_offset();
        &mut self.theta[off]
    }

    pub fn forward(&self, seq: &FeatureSequence) -> Result<RnnForward, ModelError> {
        self.forward_from(&vec![0.0; self.hidden], seq)
    }

    /// Forward pass from an explicit initial state `h_0`.
    pub fn forward_from(&self, h0: &[f64], seq: &FeatureSequence) -> Result<RnnForward, ModelError> {
        let hd = self.hidden;
        if h0.len() != hd {
            return Err(ModelError::Shape(format!("initial state has {} entries, hidden is {hd}", h0.len())));
        }
        if seq.is_empty() {
            return Err(ModelError::Shape("empty sequence".into()));
        }
        let (x_off, b_off) = (self.w_x_offset(), self.b_h_offset());
        let mut states = Vec::with_capacity(seq.len() + 1);
        states.push(h0.to_vec());
        for x in &seq.steps {
            let prev = states.last().unwrap();
            let next: Vec<f64> = (0..hd)
                .map(|r| {
                    let rec: f64 = (0..hd).map(|j| self.theta[r * hd + j] * prev[j]).sum();
                    let inp: f64 = (0..FEATURE_DIM).map(|j| self.theta[x_off + r * FEATURE_DIM + j] * x[j]).sum();
                    (rec + inp + self.theta[b_off + r]).tanh()
                })
                .collect();
            states.push(next);
        }
        let h_last = states.last().unwrap();
        let w_out = &self.theta[self.w_out_offset()..self.w_out_offset() + hd];
        let logit = w_out.iter().zip(h_last).map(|(w, v)| w * v).sum::<f64>() + self.theta[self.b_out_offset()];
        Ok(RnnForward {
            logit,
            probability: sigmoid(logit),
            hidden_states: states,
        })
    }

    /// Adds parameter gradients into `grad` and returns `|dE/dh_t|` for
    /// t = 1..K.
    pub fn backward(
        &self,
        seq: &FeatureSequence,
        fwd: &RnnForward,
        target: f64,
        grad: &mut [f64],
    ) -> Result<Vec<f64>, ModelError> {
        check_grad_len(self.theta.len(), grad.len())?;
        let k = seq.len();
        if fwd.hidden_states.len() != k + 1 {
            return Err(ModelError::Shape(format!(
                "forward cache has {} states, sequence needs {}",
                fwd.hidden_states.len(),
                k + 1
            )));
        }
        let hd = self.hidden;
        let (x_off, b_off, o_off) = (self.w_x_offset(), self.b_h_offset(), self.w_out_offset());
        let d_logit = fwd.probability - target;
        let h_last = &fwd.hidden_states[k];
        for r in 0..hd {
            grad[o_off + r] += d_logit * h_last[r];
        }
        grad[self.b_out_offset()] += d_logit;

        let mut dh: Vec<f64> = self.theta[o_off..o_off + hd].iter().map(|w| d_logit * w).collect();
        let mut norms = vec![0.0; k];
        for t in (0..k).rev() {
            norms[t] = dh.iter().map(|v| v * v).sum::<f64>().sqrt();
            let h = &fwd.hidden_states[t + 1];
            let h_prev = &fwd.hidden_states[t];
            let x = &seq.steps[t];
            let da: Vec<f64> = (0..hd).map(|r| dh[r] * (1.0 - h[r] * h[r])).collect();
            let mut dh_prev = vec![0.0; hd];
            for r in 0..hd {
                grad[b_off + r] += da[r];
                for j in 0..hd {
                    grad[r * hd + j] += da[r] * h_prev[j];
                    dh_prev[j] += self.theta[r * hd + j] * da[r];
                }
                for j in 0..FEATURE_DIM {
                    grad[x_off + r * FEATURE_DIM + j] += da[r] * x[j];
                }
            }
            dh = dh_prev;
        }
        Ok(norms)
    }

    /// `|dE/dh_t|` for t = 1..K starting from `h0`.
    pub fn gradient_norms_from(&self, h0: &[f64], seq: &FeatureSequence, target: f64) -> Result<Vec<f64>, ModelError> {
        let fwd = self.forward_from(h0, seq)?;
        let mut scratch = vec![0.0; self.theta.len()];
        self.backward(seq, &fwd, target, &mut scratch)
    }

    pub fn gradient_norms(&self, seq: &FeatureSequence, target: f64) -> Result<Vec<f64>, ModelError> {
        self.gradient_norms_from(&vec![0.0; self.hidden], seq, target)
    }
}

impl Classifier for Rnn {
    fn kind(&self) -> ModelKind {
        ModelKind::Rnn
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn logit(&self, seq: &FeatureSequence) -> Result<f64, ModelError> {
        self.forward(seq).map(|f| f.logit)
    }

    fn accumulate_gradient(&self, seq: &FeatureSequence, target: f64, grad: &mut [f64]) -> Result<f64, ModelError> {
        let fwd = self.forward(seq)?;
        self.backward(seq, &fwd, target, grad)?;
        Ok(bce_from_logit(fwd.logit, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::{max_gradient_error, random_sequence};

    #[test]
    fn zero_params_give_half() {
        let m = Rnn::zeros(4);
        let seq = random_sequence(5, &mut SeededRng::new(1));
        let fwd = m.forward(&seq).unwrap();
        assert_eq!(fwd.probability, 0.5);
        assert!(fwd.hidden_states.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn strong_self_loop_saturates() {
        let mut m = Rnn::zeros(1);
        m.recurrent_weights_mut()[0] = 2.0;
        let seq = FeatureSequence {
            steps: vec![[0.0; FEATURE_DIM]; 10],
            scaled: true,
        };
        let fwd = m.forward_from(&[0.5], &seq).unwrap();
        let h: Vec<f64> = fwd.hidden_states.iter().map(|s| s[0]).collect();
        for w in h.windows(2) {
            assert!(w[1] > w[0]);
        }
        // fixed point of h = tanh(2h)
        assert!((h[10] - 0.957_504_024_145_545).abs() < 1e-6, "{}", h[10]);
    }

    #[test]
    fn matches_direct_per_step_oracle() {
        let mut rng = SeededRng::new(2);
        let m = Rnn::init(3, Some(1.0), &mut rng);
        let seq = random_sequence(6, &mut rng);
        let p = m.params();
        let (hd, d) = (3, FEATURE_DIM);
        let mut h = [0.0; 3];
        for x in &seq.steps {
            let mut next = [0.0; 3];
            for r in 0..hd {
                let mut a = p[hd * hd + hd * d + r];
                for j in 0..hd {
                    a += p[r * hd + j] * h[j];
                }
                for j in 0..d {
                    a += p[hd * hd + r * d + j] * x[j];
                }
                next[r] = a.tanh();
            }
            h = next;
        }
        let o = hd * hd + hd * d + hd;
        let logit = p[o] * h[0] + p[o + 1] * h[1] + p[o + 2] * h[2] + p[o + 3];
        assert!((m.logit(&seq).unwrap() - logit).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            let m = Rnn::init(4, Some(0.8), &mut rng);
            let seq = random_sequence(4, &mut rng);
            let target = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
            let err = max_gradient_error(&m, &seq, target);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn gradient_norm_ratio_matches_jacobian_product() {
        let mut m = Rnn::zeros(1);
        m.recurrent_weights_mut()[0] = 0.1;
        m.output_weights_mut()[0] = 1.0;
        let seq = FeatureSequence {
            steps: vec![[0.0; FEATURE_DIM]; 8],
            scaled: true,
        };
        let fwd = m.forward_from(&[0.9], &seq).unwrap();
        let norms = m.gradient_norms_from(&[0.9], &seq, 1.0).unwrap();
        for t in 1..8 {
            let h = fwd.hidden_states[t + 1][0];
            let expected = (1.0 - h * h) * 0.1;
            assert!((norms[t - 1] / norms[t] - expected).abs() < 1e-12);
        }
    }
}
