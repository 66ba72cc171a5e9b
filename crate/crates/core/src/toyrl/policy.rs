//! A one-hidden-layer softmax policy with a shared linear value head.
//!
//! The hidden tanh activation doubles as the feature vector consumed by the
//! detection stack. All gradients (with respect to parameters and with
//! respect to the input state) are exact, hand-derived backpropagation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numstat::Matrix;

/// Outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Hidden-layer activation f(s), the detection feature vector.
    pub features: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct SoftmaxPolicy {
    d_obs: usize,
    hidden: usize,
    n_actions: usize,
    w1: Matrix, // hidden x d_obs
    b1: Vec<f64>,
    w2: Matrix, // n_actions x hidden
    b2: Vec<f64>,
    vw: Vec<f64>, // value head on features
    vb: f64,
}

/// Per-parameter gradient accumulator mirroring `SoftmaxPolicy`'s layout.
#[derive(Clone, Debug)]
pub(crate) struct Gradients {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub vw: Vec<f64>,
    pub vb: f64,
}

impl Gradients {
    pub fn zeros(policy: &SoftmaxPolicy) -> Gradients {
        Gradients {
            w1: Matrix::zeros(policy.hidden, policy.d_obs),
            b1: vec![0.0; policy.hidden],
            w2: Matrix::zeros(policy.n_actions, policy.hidden),
            b2: vec![0.0; policy.n_actions],
            vw: vec![0.0; policy.hidden],
            vb: 0.0,
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.w1 = self.w1.scaled(s);
        self.w2 = self.w2.scaled(s);
        for v in self.b1.iter_mut().chain(self.b2.iter_mut()).chain(self.vw.iter_mut()) {
            *v *= s;
        }
        self.vb *= s;
    }

    /// Flatten in the same order as `SoftmaxPolicy::flat_params`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut g = Vec::new();
        for r in 0..self.w1.rows() {
            g.extend_from_slice(self.w1.row(r));
        }
        g.extend_from_slice(&self.b1);
        for r in 0..self.w2.rows() {
            g.extend_from_slice(self.w2.row(r));
        }
        g.extend_from_slice(&self.b2);
        g.extend_from_slice(&self.vw);
        g.push(self.vb);
        g
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl SoftmaxPolicy {
    /// Fresh policy with uniform +/- 1/sqrt(fan-in) weights and zero biases.
    pub fn new(d_obs: usize, hidden: usize, n_actions: usize, seed: u64) -> SoftmaxPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize| {
            let a = 1.0 / (cols as f64).sqrt();
            let mut m = Matrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    m[(r, c)] = rng.gen_range(-a..a);
                }
            }
            m
        };
        let w1 = init(hidden, d_obs);
        let w2 = init(n_actions, hidden);
        let a = 1.0 / (hidden as f64).sqrt();
        let vw = (0..hidden).map(|_| rng.gen_range(-a..a)).collect();
        SoftmaxPolicy {
            d_obs,
            hidden,
            n_actions,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; n_actions],
            vw,
            vb: 0.0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.d_obs
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn forward(&self, obs: &[f64]) -> Result<Forward> {
        if obs.len() != self.d_obs {
            return Err(Error::DimMismatch { expected: self.d_obs, got: obs.len() });
        }
        if !obs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("policy input"));
        }
        let mut features = self.w1.matvec(obs);
        for (f, b) in features.iter_mut().zip(&self.b1) {
            *f = (*f + b).tanh();
        }
        let mut logits = self.w2.matvec(&features);
        for (l, b) in logits.iter_mut().zip(&self.b2) {
            *l += b;
        }
        let probs = softmax(&logits);
        let value = self.vw.iter().zip(&features).map(|(w, f)| w * f).sum::<f64>() + self.vb;
        Ok(Forward { features, probs, value })
    }

    /// Detection feature vector f(s).
    pub fn features(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(obs)?.features)
    }

    /// Sample an action by inverse CDF over the forward probabilities.
    pub fn sample_action(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }

    /// Gradient with respect to the *input state* of the cross-entropy
    /// J(s) = -sum_i target_i log pi(a_i | s).
    pub fn grad_state(&self, obs: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        if target.len() != self.n_actions {
            return Err(Error::DimMismatch { expected: self.n_actions, got: target.len() });
        }
        let fwd = self.forward(obs)?;
        // dJ/dlogits = probs - target.
        let g_logits: Vec<f64> =
            fwd.probs.iter().zip(target).map(|(p, t)| p - t).collect();
        let mut g_feat = self.w2.tr_matvec(&g_logits);
        for (g, f) in g_feat.iter_mut().zip(&fwd.features) {
            *g *= 1.0 - f * f; // tanh'
        }
        Ok(self.w1.tr_matvec(&g_feat))
    }

    /// Backpropagate given upstream gradients on the logits and the value
    /// output, accumulating into `grads`. Returns nothing; caller averages.
    pub(crate) fn accumulate_grads(
        &self,
        obs: &[f64],
        fwd: &Forward,
        g_logits: &[f64],
        g_value: f64,
        grads: &mut Gradients,
    ) {
        for c in 0..self.n_actions {
            for h in 0..self.hidden {
                grads.w2[(c, h)] += g_logits[c] * fwd.features[h];
            }
            grads.b2[c] += g_logits[c];
        }
        for h in 0..self.hidden {
            grads.vw[h] += g_value * fwd.features[h];
        }
        grads.vb += g_value;
        let mut g_feat = self.w2.tr_matvec(g_logits);
        for h in 0..self.hidden {
            g_feat[h] += g_value * self.vw[h];
            g_feat[h] *= 1.0 - fwd.features[h] * fwd.features[h];
        }
        for h in 0..self.hidden {
            for d in 0..self.d_obs {
                grads.w1[(h, d)] += g_feat[h] * obs[d];
            }
            grads.b1[h] += g_feat[h];
        }
    }

    /// Gradient-descent step: theta <- theta - lr * grads.
    pub(crate) fn apply_step(&mut self, grads: &Gradients, lr: f64) {
        for h in 0..self.hidden {
            for d in 0..self.d_obs {
                self.w1[(h, d)] -= lr * grads.w1[(h, d)];
            }
            self.b1[h] -= lr * grads.b1[h];
            self.vw[h] -= lr * grads.vw[h];
        }
        for c in 0..self.n_actions {
            for h in 0..self.hidden {
                self.w2[(c, h)] -= lr * grads.w2[(c, h)];
            }
            self.b2[c] -= lr * grads.b2[c];
        }
        self.vb -= lr * grads.vb;
    }

    /// Flatten all parameters (w1 rows, b1, w2 rows, b2, vw, vb) — used by
    /// finite-difference checks and nothing else.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for r in 0..self.hidden {
            p.extend_from_slice(self.w1.row(r));
        }
        p.extend_from_slice(&self.b1);
        for r in 0..self.n_actions {
            p.extend_from_slice(self.w2.row(r));
        }
        p.extend_from_slice(&self.b2);
        p.extend_from_slice(&self.vw);
        p.push(self.vb);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        let expected = self.hidden * self.d_obs
            + self.hidden
            + self.n_actions * self.hidden
            + self.n_actions
            + self.hidden
            + 1;
        if p.len() != expected {
            return Err(Error::DimMismatch { expected, got: p.len() });
        }
        let mut it = p.iter().copied();
        for r in 0..self.hidden {
            for c in 0..self.d_obs {
                self.w1[(r, c)] = it.next().unwrap();
            }
        }
        for b in &mut self.b1 {
            *b = it.next().unwrap();
        }
        for r in 0..self.n_actions {
            for c in 0..self.hidden {
                self.w2[(r, c)] = it.next().unwrap();
            }
        }
        for b in &mut self.b2 {
            *b = it.next().unwrap();
        }
        for w in &mut self.vw {
            *w = it.next().unwrap();
        }
        self.vb = it.next().unwrap();
        Ok(())
    }
}

// --- checkpoint file --------------------------------------------------------

const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format_version: u32,
    d_obs: usize,
    hidden: usize,
    n_actions: usize,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    vw: Vec<f64>,
    vb: f64,
}

impl SoftmaxPolicy {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PolicyFile {
            format_version: POLICY_FORMAT_VERSION,
            d_obs: self.d_obs,
            hidden: self.hidden,
            n_actions: self.n_actions,
            w1: self.w1.to_rows(),
            b1: self.b1.clone(),
            w2: self.w2.to_rows(),
            b2: self.b2.clone(),
            vw: self.vw.clone(),
            vb: self.vb,
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SoftmaxPolicy> {
        let text = std::fs::read_to_string(path)?;
        let file: PolicyFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if file.format_version != POLICY_FORMAT_VERSION {
            return Err(Error::UnsupportedFormatVersion {
                found: file.format_version,
                expected: POLICY_FORMAT_VERSION,
            });
        }
        let w1 = Matrix::from_rows(&file.w1)?;
        let w2 = Matrix::from_rows(&file.w2)?;
        if w1.rows() != file.hidden
            || w1.cols() != file.d_obs
            || w2.rows() != file.n_actions
            || w2.cols() != file.hidden
            || file.b1.len() != file.hidden
            || file.b2.len() != file.n_actions
            || file.vw.len() != file.hidden
        {
            return Err(Error::Parse {
                path: path.display().to_string(),
                detail: "inconsistent layer shapes in policy file".into(),
            });
        }
        Ok(SoftmaxPolicy {
            d_obs: file.d_obs,
            hidden: file.hidden,
            n_actions: file.n_actions,
            w1,
            b1: file.b1,
            w2,
            b2: file.b2,
            vw: file.vw,
            vb: file.vb,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_policy(seed: u64) -> SoftmaxPolicy {
        SoftmaxPolicy::new(6, 8, 3, seed)
    }

    fn random_obs(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut p = test_policy(0);
        let n = p.flat_params().len();
        p.set_flat_params(&vec![0.0; n]).unwrap();
        let fwd = p.forward(&[0.3; 6]).unwrap();
        for pr in &fwd.probs {
            assert!((pr - 1.0 / 3.0).abs() <= 1e-15);
        }
        assert_eq!(fwd.value, 0.0);
    }

    #[test]
    fn probabilities_normalize_and_stay_positive() {
        let p = test_policy(5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let fwd = p.forward(&random_obs(&mut rng, 6)).unwrap();
            let s: f64 = fwd.probs.iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
            assert!(fwd.probs.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn shifting_every_logit_leaves_probabilities_unchanged() {
        let p = test_policy(7);
        let mut shifted = p.clone();
        for b in &mut shifted.b2 {
            *b += 11.25;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let obs = random_obs(&mut rng, 6);
            let a = p.forward(&obs).unwrap().probs;
            let b = shifted.forward(&obs).unwrap().probs;
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn state_gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let p = test_policy(1000 + trial);
            let obs = random_obs(&mut rng, 6);
            let mut target = vec![0.0; 3];
            target[rng.gen_range(0..3)] = 1.0;
            let grad = p.grad_state(&obs, &target).unwrap();
            let j = |o: &[f64]| -> f64 {
                let fwd = p.forward(o).unwrap();
                -target.iter().zip(&fwd.probs).map(|(t, pr)| t * pr.ln()).sum::<f64>()
            };
            let h = 1e-6;
            let mut norm2 = 0.0;
            let mut err2 = 0.0;
            for d in 0..6 {
                let mut hi = obs.clone();
                let mut lo = obs.clone();
                hi[d] += h;
                lo[d] -= h;
                let fd = (j(&hi) - j(&lo)) / (2.0 * h);
                err2 += (fd - grad[d]) * (fd - grad[d]);
                norm2 += fd * fd;
            }
            assert!(
                err2.sqrt() <= 1e-5 * norm2.sqrt().max(1e-8),
                "trial {trial}: fd mismatch {} vs norm {}",
                err2.sqrt(),
                norm2.sqrt()
            );
        }
    }

    #[test]
    fn gradient_vanishes_when_target_action_is_certain() {
        let mut p = test_policy(2);
        // Drive the policy to near-certainty on action 1.
        for h in 0..8 {
            p.w2[(1, h)] = 0.0;
        }
        p.b2 = vec![-40.0, 40.0, -40.0];
        let target = vec![0.0, 1.0, 0.0];
        let grad = p.grad_state(&[0.1; 6], &target).unwrap();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm <= 1e-12, "gradient norm {norm}");
    }

    #[test]
    fn near_linear_regime_matches_linear_softmax_formula() {
        // With tiny pre-activations tanh is identity to first order, so
        // grad_s J ~= W1^T W2^T (pi - target).
        let mut p = test_policy(4);
        let scale = 1e-5;
        let params: Vec<f64> = p.flat_params().iter().map(|v| v * scale).collect();
        p.set_flat_params(&params).unwrap();
        let obs = vec![0.2, -0.1, 0.05, 0.3, -0.25, 0.15];
        let target = vec![1.0, 0.0, 0.0];
        let fwd = p.forward(&obs).unwrap();
        let g_logits: Vec<f64> = fwd.probs.iter().zip(&target).map(|(pr, t)| pr - t).collect();
        let linear = p.w1.tr_matvec(&p.w2.tr_matvec(&g_logits));
        let grad = p.grad_state(&obs, &target).unwrap();
        for (g, l) in grad.iter().zip(&linear) {
            assert!((g - l).abs() <= 1e-4 * l.abs().max(1e-12));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = test_policy(6);
        assert!(matches!(p.forward(&[0.0; 5]), Err(Error::DimMismatch { .. })));
        assert!(matches!(
            p.forward(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            p.grad_state(&[0.0; 6], &[1.0, 0.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn flat_params_round_trip() {
        let p = test_policy(8);
        let mut q = test_policy(9);
        q.set_flat_params(&p.flat_params()).unwrap();
        let obs = [0.4, -0.2, 0.1, 0.0, 0.7, -0.5];
        let a = p.forward(&obs).unwrap();
        let b = q.forward(&obs).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let p = SoftmaxPolicy::new(25, 16, 4, 77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        p.save(&path).unwrap();
        let q = SoftmaxPolicy::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let obs = random_obs(&mut rng, 25);
            let a = p.forward(&obs).unwrap();
            let b = q.forward(&obs).unwrap();
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            for (x, y) in a.probs.iter().zip(&b.probs) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
