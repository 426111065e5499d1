//! Many-to-one LSTM.
//!
//! Per step, with `z = [h_{t-1}, x_t]`:
//!
//! ```text
//! f  = sigmoid(W_f z + b_f)      i = sigmoid(W_i z + b_i)
//! o  = sigmoid(W_o z + b_o)      c~ = tanh(W_c z + b_c)
//! c_t = f * c_{t-1} + i * c~     h_t = o * tanh(c_t)
//! ```
//!
//! The output is `sigmoid(w_out . h_K + b_out)`; `h_0 = c_0 = 0`.
//!
//! Flat layout: `W_f, W_i, W_o, W_c` (each `hidden x (hidden + 12)`,
//! row-major), then `b_f, b_i, b_o, b_c`, then `w_out`, then `b_out`.

use crate::features::{FeatureSequence, FEATURE_DIM};
use crate::rng::SeededRng;

use super::{bce_from_logit, check_grad_len, sigmoid, xavier_fill, Classifier, ModelError, ModelKind};

pub const GATE_F: usize = 0;
pub const GATE_I: usize = 1;
pub const GATE_O: usize = 2;
pub const GATE_C: usize = 3;
const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    hidden: usize,
    theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub c_tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmForward {
    pub logit: f64,
    pub probability: f64,
    pub states: Vec<LstmStepState>,
}

pub fn param_count(hidden: usize) -> usize {
    let z = hidden + FEATURE_DIM;
    GATES * hidden * z + GATES * hidden + hidden + 1
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-step gradient norms of the recurrent state `(h_t, c_t)`.
///
/// `hidden[t]` is `|dE/dh_t|`; `cell[t]` is `|dE/dc_t|`, the total
/// derivative including the path through `h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGradientNorms {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl StateGradientNorms {
    /// `sqrt(|dE/dh_t|^2 + |dE/dc_t|^2)` per step.
    pub fn joint(&self) -> Vec<f64> {
        self.hidden.iter().zip(&self.cell).map(|(h, c)| h.hypot(*c)).collect()
    }
}

impl Lstm {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            theta: vec![0.0; param_count(hidden)],
        }
    }

    /// Xavier-uniform gate weights and output head, zero biases except
    /// `b_f = 1`.
    pub fn init(hidden: usize, scale: Option<f64>, rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros(hidden);
        let z = m.z_len();
        for g in 0..GATES {
            let off = m.w_offset(g);
            xavier_fill(&mut m.theta[off..off + hidden * z], z, hidden, scale, rng);
        }
        let off = m.w_out_offset();
        xavier_fill(&mut m.theta[off..off + hidden], hidden, 1, scale, rng);
        m.bias_mut(GATE_F).fill(1.0);
        m
    }

    pub fn from_params(hidden: usize, theta: Vec<f64>) -> Result<Self, ModelError> {
        if theta.len() != param_count(hidden) {
            return Err(ModelError::Shape(format!(
                "lstm with hidden {hidden} needs {} parameters, got {}",
                param_count(hidden),
                theta.len()
            )));
        }
        Ok(Self { hidden, theta })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn z_len(&self) -> usize {
        self.hidden + FEATURE_DIM
    }

    fn w_offset(&self, gate: usize) -> usize {
        gate * self.hidden * self.z_len()
    }

    fn b_offset(&self, gate: usize) -> usize {
        GATES * self.hidden * self.z_len() + gate * self.hidden
    }

    fn w_out_offset(&self) -> usize {
        self.b_offset(GATES)
    }

    fn b_out_offset(&self) -> usize {
        self.w_out_offset() + self.hidden
    }

    /// Row-major `hidden x (hidden + 12)` weights of one gate.
    pub fn weights(&self, gate: usize) -> &[f64] {
        let off = self.w_offset(gate);
        &self.theta[off..off + self.hidden * self.z_len()]
    }

    pub fn weights_mut(&mut self, gate: usize) -> &mut [f64] {
        let off = self.w_offset(gate);
        let len = self.hidden * self.z_len();
        &mut self.theta[off..off + len]
    }

    pub fn bias_mut(&mut self, gate: usize) -> &mut [f64] {
        let off = self.b_offset(gate);
        let h = self.hidden;
        &mut self.theta[off..off + h]
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let off = self.w_out_offset();
        let h = self.hidden;
        &mut self.theta[off..off + h]
    }

    pub fn output_bias_mut(&mut self) -> &mut f64 {
        let off = self.b_out_offset();
        &mut self.theta[off]
    }

    fn pre_activation(&self, gate: usize, z: &[f64], r: usize) -> f64 {
        let zl = self.z_len();
        let row = &self.theta[self.w_offset(gate) + r * zl..self.w_offset(gate) + (r + 1) * zl];
        row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.theta[self.b_offset(gate) + r]
    }

    pub fn forward(&self, seq: &FeatureSequence) -> Result<LstmForward, ModelError> {
        if seq.is_empty() {
            return Err(ModelError::Shape("empty sequence".into()));
        }
        let hd = self.hidden;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut states = Vec::with_capacity(seq.len());
        for x in &seq.steps {
            let z: Vec<f64> = h.iter().chain(x.iter()).copied().collect();
            let gate = |g: usize| -> Vec<f64> { (0..hd).map(|r| self.pre_activation(g, &z, r)).collect() };
            let f: Vec<f64> = gate(GATE_F).into_iter().map(sigmoid).collect();
            let i: Vec<f64> = gate(GATE_I).into_iter().map(sigmoid).collect();
            let o: Vec<f64> = gate(GATE_O).into_iter().map(sigmoid).collect();
            let c_tilde: Vec<f64> = gate(GATE_C).into_iter().map(f64::tanh).collect();
            c = (0..hd).map(|r| f[r] * c[r] + i[r] * c_tilde[r]).collect();
            h = (0..hd).map(|r| o[r] * c[r].tanh()).collect();
            states.push(LstmStepState {
                h: h.clone(),
                c: c.clone(),
                f,
                i,
                o,
                c_tilde,
            });
        }
        let w_out = &self.theta[self.w_out_offset()..self.w_out_offset() + hd];
        let logit = w_out.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + self.theta[self.b_out_offset()];
        Ok(LstmForward {
            logit,
            probability: sigmoid(logit),
            states,
        })
    }

    /// Backpropagation through time. Adds parameter gradients into `grad`
    /// and returns the per-step state gradient norms.
    pub fn backward(
        &self,
        seq: &FeatureSequence,
        fwd: &LstmForward,
        target: f64,
        grad: &mut [f64],
    ) -> Result<StateGradientNorms, ModelError> {
        check_grad_len(self.theta.len(), grad.len())?;
        if fwd.states.len() != seq.len() {
            return Err(ModelError::Shape(format!(
                "forward cache has {} steps, sequence has {}",
                fwd.states.len(),
                seq.len()
            )));
        }
        let hd = self.hidden;
        let zl = self.z_len();
        let k = seq.len();
        let d_logit = fwd.probability - target;
        let w_out_off = self.w_out_offset();
        let h_last = &fwd.states[k - 1].h;
        for r in 0..hd {
            grad[w_out_off + r] += d_logit * h_last[r];
        }
        grad[self.b_out_offset()] += d_logit;

        let mut dh: Vec<f64> = self.theta[w_out_off..w_out_off + hd].iter().map(|w| d_logit * w).collect();
        let mut dc = vec![0.0; hd];
        let zeros = vec![0.0; hd];
        let mut norms = StateGradientNorms {
            hidden: vec![0.0; k],
            cell: vec![0.0; k],
        };
        for t in (0..k).rev() {
            norms.hidden[t] = l2(&dh);
            let s = &fwd.states[t];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros, &zeros)
            } else {
                (&fwd.states[t - 1].h, &fwd.states[t - 1].c)
            };
            let z: Vec<f64> = h_prev.iter().chain(seq.steps[t].iter()).copied().collect();
            let mut da = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
            for r in 0..hd {
                let tc = s.c[r].tanh();
                dc[r] += dh[r] * s.o[r] * (1.0 - tc * tc);
                da[GATE_O][r] = dh[r] * tc * s.o[r] * (1.0 - s.o[r]);
                da[GATE_F][r] = dc[r] * c_prev[r] * s.f[r] * (1.0 - s.f[r]);
                da[GATE_I][r] = dc[r] * s.c_tilde[r] * s.i[r] * (1.0 - s.i[r]);
                da[GATE_C][r] = dc[r] * s.i[r] * (1.0 - s.c_tilde[r] * s.c_tilde[r]);
            }
            norms.cell[t] = l2(&dc);
            let mut dz = vec![0.0; zl];
            for (g, dag) in da.iter().enumerate() {
                let w_off = self.w_offset(g);
                let b_off = self.b_offset(g);
                for r in 0..hd {
                    let a = dag[r];
                    if a == 0.0 {
                        continue;
                    }
                    grad[b_off + r] += a;
                    let row = w_off + r * zl;
                    for j in 0..zl {
                        grad[row + j] += a * z[j];
                        dz[j] += self.theta[row + j] * a;
                    }
                }
            }
            dh = dz[..hd].to_vec();
            for r in 0..hd {
                dc[r] *= s.f[r];
            }
        }
        Ok(norms)
    }

    /// State gradient norms for t = 1..K under binary cross-entropy against `target`.
    pub fn gradient_norms(&self, seq: &FeatureSequence, target: f64) -> Result<StateGradientNorms, ModelError> {
        let fwd = self.forward(seq)?;
        let mut scratch = vec![0.0; self.theta.len()];
        self.backward(seq, &fwd, target, &mut scratch)
    }
}

impl Classifier for Lstm {
    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
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
    fn zero_params_give_half_everywhere() {
        let m = Lstm::zeros(5);
        let seq = random_sequence(4, &mut SeededRng::new(1));
        let fwd = m.forward(&seq).unwrap();
        assert_eq!(fwd.probability, 0.5);
        for s in &fwd.states {
            assert!(s.f.iter().chain(&s.i).chain(&s.o).all(|g| *g == 0.5));
            assert!(s.c_tilde.iter().chain(&s.c).chain(&s.h).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn saturated_gates_hand_evaluated() {
        let mut m = Lstm::zeros(1);
        for g in [GATE_F, GATE_I, GATE_O, GATE_C] {
            m.bias_mut(g)[0] = 10.0;
        }
        let seq = random_sequence(1, &mut SeededRng::new(2));
        let s = &m.forward(&seq).unwrap().states[0];
        let sig10 = 1.0 / (1.0 + (-10.0f64).exp());
        let c1 = sig10 * 10f64.tanh();
        assert!((s.c[0] - c1).abs() < 1e-15);
        assert!((s.c[0] - 0.99999).abs() < 1e-4);
        assert!((s.h[0] - sig10 * c1.tanh()).abs() < 1e-15);
        assert!((s.h[0] - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn open_forget_gate_carries_the_cell_gradient() {
        let mut m = Lstm::zeros(1);
        m.bias_mut(GATE_F)[0] = 5.0;
        m.output_weights_mut()[0] = 2.0;
        let seq = random_sequence(8, &mut SeededRng::new(4));
        let norms = m.gradient_norms(&seq, 1.0).unwrap();
        let f = 1.0 / (1.0 + (-5.0f64).exp());
        let dh_last = 0.5 * 2.0;
        for t in 0..8 {
            let want = 0.5 * dh_last * f.powi(7 - t as i32);
            assert!((norms.cell[t] - want).abs() < 1e-15, "t={t}");
            assert_eq!(norms.hidden[t], if t == 7 { dh_last } else { 0.0 });
        }
        assert_eq!(norms.joint()[7], dh_last.hypot(0.5 * dh_last));
    }

    #[test]
    fn random_params_respect_activation_ranges() {
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            let m = Lstm::init(4, Some(3.0), &mut rng);
            let seq = random_sequence(8, &mut rng);
            for s in m.forward(&seq).unwrap().states {
                assert!(s.f.iter().chain(&s.i).chain(&s.o).all(|g| *g > 0.0 && *g < 1.0));
                assert!(s.c_tilde.iter().all(|v| v.abs() < 1.0));
                assert!(s.h.iter().all(|v| v.abs() < 1.0));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(4);
        for _ in 0..20 {
            let m = Lstm::init(3, Some(0.8), &mut rng);
            let seq = random_sequence(4, &mut rng);
            let target = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
            let err = max_gradient_error(&m, &seq, target);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn output_head_gradient_vanishes_when_prediction_is_exact() {
        // zero params predict 0.5; a soft target of 0.5 is then exact
        let m = Lstm::zeros(2);
        let seq = random_sequence(3, &mut SeededRng::new(5));
        let mut grad = vec![0.0; m.params().len()];
        m.accumulate_gradient(&seq, 0.5, &mut grad).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn constant_zero_input_dimension_gets_no_weight_gradient() {
        let mut rng = SeededRng::new(6);
        let m = Lstm::init(3, None, &mut rng);
        let mut seq = random_sequence(4, &mut rng);
        for s in &mut seq.steps {
            s[7] = 0.0;
        }
        let mut grad = vec![0.0; m.params().len()];
        m.accumulate_gradient(&seq, 1.0, &mut grad).unwrap();
        let zl = 3 + FEATURE_DIM;
        for g in 0..GATES {
            for r in 0..3 {
                assert_eq!(grad[m.w_offset(g) + r * zl + 3 + 7], 0.0);
            }
        }
    }

    #[test]
    fn swapping_steps_flips_the_prediction() {
        // forget gate shut, input and output gates open: h_K reflects the
        // last step only
        let mut m = Lstm::zeros(1);
        m.bias_mut(GATE_F)[0] = -20.0;
        m.bias_mut(GATE_I)[0] = 20.0;
        m.bias_mut(GATE_O)[0] = 20.0;
        m.weights_mut(GATE_C)[1] = 3.0;
        m.weights_mut(GATE_C)[2] = -3.0;
        m.output_weights_mut()[0] = 10.0;
        let mut a = [0.0; FEATURE_DIM];
        a[0] = 1.0;
        let mut b = [0.0; FEATURE_DIM];
        b[1] = 1.0;
        let seq = |steps: Vec<[f64; FEATURE_DIM]>| FeatureSequence { steps, scaled: true };
        let ab = m.probability(&seq(vec![a, b])).unwrap();
        let ba = m.probability(&seq(vec![b, a])).unwrap();
        assert!(ab < 0.5 && ba > 0.5, "{ab} {ba}");
    }
}
