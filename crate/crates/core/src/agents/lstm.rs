//! LSTM policy/value network and the advantage actor-critic update.
//!
//! A single LSTM cell feeds two linear heads with no hidden layers: a
//! 2-logit policy head and a scalar value head. `a2c_loss_and_grads`
//! recomputes the forward pass over a rollout and backpropagates through
//! time within it; gradients do not cross rollout boundaries.

use rand_chacha::ChaCha12Rng;

use crate::agents::checkpoint::AgentCheckpoint;
use crate::agents::nets::Mat;
use crate::agents::tabular::softmax_policy;
use crate::env::Action;
use crate::error::AgentError;

const GATES: usize = 4; // input, forget, cell, output

#[derive(Debug, Clone, PartialEq)]
pub struct LstmPolicyNet {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_gates: [Mat; GATES],
    pub b_gates: [Vec<f64>; GATES],
    pub policy_w: Mat,
    pub policy_b: Vec<f64>,
    pub value_w: Mat,
    pub value_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmStepOut {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub logits: [f64; 2],
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    z: Vec<f64>, // [x; h_prev]
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h_new: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w_gates: [Mat; GATES],
    pub b_gates: [Vec<f64>; GATES],
    pub policy_w: Mat,
    pub policy_b: Vec<f64>,
    pub value_w: Mat,
    pub value_b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cLoss {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// One step of a rollout: encoded input, action taken, reward received.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub x: Vec<f64>,
    pub action: Action,
    pub reward: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmPolicyNet {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut ChaCha12Rng) -> LstmPolicyNet {
        let z_dim = input_dim + hidden;
        let mut b_gates: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; hidden]);
        // Forget-gate bias starts at 1 so early memories persist.
        b_gates[1].iter_mut().for_each(|b| *b = 1.0);
        LstmPolicyNet {
            input_dim,
            hidden,
            w_gates: std::array::from_fn(|_| Mat::xavier(hidden, z_dim, rng)),
            b_gates,
            policy_w: Mat::xavier(2, hidden, rng),
            policy_b: vec![0.0; 2],
            value_w: Mat::xavier(1, hidden, rng),
            value_b: vec![0.0; 1],
        }
    }

    pub fn check_shapes(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(), AgentError> {
        for (name, got, expected) in [
            ("lstm input", x.len(), self.input_dim),
            ("lstm hidden", h.len(), self.hidden),
            ("lstm cell", c.len(), self.hidden),
        ] {
            if got != expected {
                return Err(AgentError::ShapeMismatch { layer: name.into(), expected, got });
            }
        }
        Ok(())
    }

    pub fn lstm_step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (LstmStepOut, LstmCache) {
        debug_assert_eq!(x.len(), self.input_dim);
        debug_assert_eq!(h.len(), self.hidden);
        debug_assert_eq!(c.len(), self.hidden);
        let mut z = Vec::with_capacity(self.input_dim + self.hidden);
        z.extend_from_slice(x);
        z.extend_from_slice(h);

        let mut gates: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; self.hidden]);
        for (k, gate) in gates.iter_mut().enumerate() {
            self.w_gates[k].matvec(&z, gate);
            for (gv, bv) in gate.iter_mut().zip(&self.b_gates[k]) {
                *gv += bv;
            }
        }
        let i: Vec<f64> = gates[0].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = gates[1].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = gates[2].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = gates[3].iter().map(|&v| sigmoid(v)).collect();

        let c_new: Vec<f64> = (0..self.hidden).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..self.hidden).map(|j| o[j] * tanh_c[j]).collect();

        let mut logits = vec![0.0; 2];
        self.policy_w.matvec(&h_new, &mut logits);
        logits[0] += self.policy_b[0];
        logits[1] += self.policy_b[1];
        let mut value = vec![0.0; 1];
        self.value_w.matvec(&h_new, &mut value);
        let value = value[0] + self.value_b[0];

        (
            LstmStepOut { h: h_new.clone(), c: c_new.clone(), logits: [logits[0], logits[1]], value },
            LstmCache { z, i, f, g, o, c_prev: c.to_vec(), tanh_c, h_new },
        )
    }

    pub fn zero_grads(&self) -> LstmGrads {
        let z_dim = self.input_dim + self.hidden;
        LstmGrads {
            w_gates: std::array::from_fn(|_| Mat::zeros(self.hidden, z_dim)),
            b_gates: std::array::from_fn(|_| vec![0.0; self.hidden]),
            policy_w: Mat::zeros(2, self.hidden),
            policy_b: vec![0.0; 2],
            value_w: Mat::zeros(1, self.hidden),
            value_b: vec![0.0; 1],
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(GATES * 2 + 4);
        for k in 0..GATES {
            out.push(self.w_gates[k].data.as_slice());
            out.push(self.b_gates[k].as_slice());
        }
        out.push(self.policy_w.data.as_slice());
        out.push(self.policy_b.as_slice());
        out.push(self.value_w.data.as_slice());
        out.push(self.value_b.as_slice());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(GATES * 2 + 4);
        for (w, b) in self.w_gates.iter_mut().zip(self.b_gates.iter_mut()) {
            out.push(w.data.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out.push(self.policy_w.data.as_mut_slice());
        out.push(self.policy_b.as_mut_slice());
        out.push(self.value_w.data.as_mut_slice());
        out.push(self.value_b.as_mut_slice());
        out
    }

    pub fn pack(&self, prefix: &str, ck: &mut AgentCheckpoint) {
        for k in 0..GATES {
            ck.arrays.insert(format!("{prefix}.w{k}"), self.w_gates[k].data.clone());
            ck.arrays.insert(format!("{prefix}.b{k}"), self.b_gates[k].clone());
        }
        ck.arrays.insert(format!("{prefix}.policy_w"), self.policy_w.data.clone());
        ck.arrays.insert(format!("{prefix}.policy_b"), self.policy_b.clone());
        ck.arrays.insert(format!("{prefix}.value_w"), self.value_w.data.clone());
        ck.arrays.insert(format!("{prefix}.value_b"), self.value_b.clone());
    }

    pub fn unpack_into(&mut self, prefix: &str, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        for k in 0..GATES {
            let w = ck.array(&format!("{prefix}.w{k}"), self.w_gates[k].data.len())?;
            self.w_gates[k].data.copy_from_slice(w);
            let b = ck.array(&format!("{prefix}.b{k}"), self.b_gates[k].len())?;
            self.b_gates[k].copy_from_slice(b);
        }
        let pw = ck.array(&format!("{prefix}.policy_w"), self.policy_w.data.len())?;
        self.policy_w.data.copy_from_slice(pw);
        self.policy_b
            .copy_from_slice(ck.array(&format!("{prefix}.policy_b"), 2)?);
        let vw = ck.array(&format!("{prefix}.value_w"), self.value_w.data.len())?;
        self.value_w.data.copy_from_slice(vw);
        self.value_b.copy_from_slice(ck.array(&format!("{prefix}.value_b"), 1)?);
        Ok(())
    }
}

impl LstmGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(GATES * 2 + 4);
        for k in 0..GATES {
            out.push(self.w_gates[k].data.as_slice());
            out.push(self.b_gates[k].as_slice());
        }
        out.push(self.policy_w.data.as_slice());
        out.push(self.policy_b.as_slice());
        out.push(self.value_w.data.as_slice());
        out.push(self.value_b.as_slice());
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in self.w_gates.iter_mut().zip(self.b_gates.iter_mut()) {
            w.data.iter_mut().for_each(|g| *g *= factor);
            b.iter_mut().for_each(|g| *g *= factor);
        }
        self.policy_w.data.iter_mut().for_each(|g| *g *= factor);
        self.policy_b.iter_mut().for_each(|g| *g *= factor);
        self.value_w.data.iter_mut().for_each(|g| *g *= factor);
        self.value_b.iter_mut().for_each(|g| *g *= factor);
    }
}

/// Actor-critic loss over one rollout with backprop through time.
///
/// Discounted returns bootstrap from nothing (rollouts end at terminal
/// steps). Advantages are detached from the policy-gradient term; pass
/// `fixed_advantages` to evaluate the same objective at frozen advantages
/// (used by the finite-difference tests).
pub fn a2c_loss_and_grads(
    net: &LstmPolicyNet,
    rollout: &[RolloutStep],
    h0: &[f64],
    c0: &[f64],
    gamma: f64,
    value_coef: f64,
    entropy_coef: f64,
    fixed_advantages: Option<&[f64]>,
) -> (A2cLoss, LstmGrads) {
    let mut grads = net.zero_grads();
    if rollout.is_empty() {
        return (A2cLoss { total: 0.0, policy: 0.0, value: 0.0, entropy: 0.0 }, grads);
    }

    // Forward pass, caching every step.
    let mut caches = Vec::with_capacity(rollout.len());
    let mut outs = Vec::with_capacity(rollout.len());
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    for step in rollout {
        let (out, cache) = net.lstm_step(&step.x, &h, &c);
        h = out.h.clone();
        c = out.c.clone();
        caches.push(cache);
        outs.push(out);
    }

    // Discounted returns.
    let mut returns = vec![0.0; rollout.len()];
    let mut acc = 0.0;
    for t in (0..rollout.len()).rev() {
        acc = rollout[t].reward + gamma * acc;
        returns[t] = acc;
    }

    let advantages: Vec<f64> = match fixed_advantages {
        Some(a) => a.to_vec(),
        None => returns.iter().zip(&outs).map(|(g, o)| g - o.value).collect(),
    };

    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy_total = 0.0;

    // Per-step head gradients.
    let mut dlogits_all = Vec::with_capacity(rollout.len());
    let mut dvalue_all = Vec::with_capacity(rollout.len());
    for (t, step) in rollout.iter().enumerate() {
        let pi = softmax_policy(outs[t].logits, 1.0);
        let a = step.action.index();
        let log_pi_a = pi[a].max(1e-300).ln();
        let entropy = -(pi[0] * pi[0].max(1e-300).ln() + pi[1] * pi[1].max(1e-300).ln());
        policy_loss += -log_pi_a * advantages[t];
        let verr = returns[t] - outs[t].value;
        value_loss += verr * verr;
        entropy_total += entropy;

        let mut dlogits = [0.0; 2];
        for k in 0..2 {
            let indicator = if k == a { 1.0 } else { 0.0 };
            dlogits[k] = advantages[t] * (pi[k] - indicator)
                + entropy_coef * pi[k] * (pi[k].max(1e-300).ln() + entropy);
        }
        dlogits_all.push(dlogits);
        dvalue_all.push(2.0 * value_coef * (outs[t].value - returns[t]));
    }

    // BPTT.
    let hidden = net.hidden;
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    for t in (0..rollout.len()).rev() {
        let cache = &caches[t];
        let mut dh = dh_next.clone();
        net.policy_w.matvec_transpose_acc(&dlogits_all[t], &mut dh);
        net.value_w.matvec_transpose_acc(&[dvalue_all[t]], &mut dh);
        grads.policy_w.outer_acc(&dlogits_all[t], &cache.h_new);
        grads.policy_b[0] += dlogits_all[t][0];
        grads.policy_b[1] += dlogits_all[t][1];
        grads.value_w.outer_acc(&[dvalue_all[t]], &cache.h_new);
        grads.value_b[0] += dvalue_all[t];

        let mut da: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; hidden]);
        let mut dc_prev = vec![0.0; hidden];
        for j in 0..hidden {
            let do_j = dh[j] * cache.tanh_c[j];
            let dc_j = dh[j] * cache.o[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]) + dc_next[j];
            let df_j = dc_j * cache.c_prev[j];
            let di_j = dc_j * cache.g[j];
            let dg_j = dc_j * cache.i[j];
            dc_prev[j] = dc_j * cache.f[j];
            da[0][j] = di_j * cache.i[j] * (1.0 - cache.i[j]);
            da[1][j] = df_j * cache.f[j] * (1.0 - cache.f[j]);
            da[2][j] = dg_j * (1.0 - cache.g[j] * cache.g[j]);
            da[3][j] = do_j * cache.o[j] * (1.0 - cache.o[j]);
        }
        let mut dz = vec![0.0; net.input_dim + hidden];
        for k in 0..GATES {
            grads.w_gates[k].outer_acc(&da[k], &cache.z);
            for (gb, d) in grads.b_gates[k].iter_mut().zip(&da[k]) {
                *gb += d;
            }
            net.w_gates[k].matvec_transpose_acc(&da[k], &mut dz);
        }
        dh_next.copy_from_slice(&dz[net.input_dim..]);
        dc_next = dc_prev;
    }

    let total = policy_loss + value_coef * value_loss - entropy_coef * entropy_total;
    (
        A2cLoss { total, policy: policy_loss, value: value_loss, entropy: entropy_total },
        grads,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_weight_lstm_gives_uniform_policy() {
        let mut r = rng::stream(1, &["lstm"]);
        let mut net = LstmPolicyNet::new(3, 4, &mut r);
        for k in 0..GATES {
            net.w_gates[k].data.iter_mut().for_each(|w| *w = 0.0);
            net.b_gates[k].iter_mut().for_each(|b| *b = 0.0);
        }
        net.policy_w.data.iter_mut().for_each(|w| *w = 0.0);
        net.value_w.data.iter_mut().for_each(|w| *w = 0.0);
        let (out, _) = net.lstm_step(&[1.0, 0.0, 1.0], &[0.0; 4], &[0.0; 4]);
        // Gates sit at sigmoid(0)=0.5, g at tanh(0)=0, so h stays 0.
        assert!(out.h.iter().all(|&v| v == 0.0));
        assert_eq!(out.logits, [0.0, 0.0]);
        let pi = softmax_policy(out.logits, 1.0);
        assert_eq!(pi, [0.5, 0.5]);
    }

    #[test]
    fn lstm_step_is_pure() {
        let mut r = rng::stream(2, &["lstm"]);
        let net = LstmPolicyNet::new(3, 5, &mut r);
        let x = [0.3, -0.2, 0.9];
        let h = vec![0.1; 5];
        let c = vec![-0.2; 5];
        let (a, _) = net.lstm_step(&x, &h, &c);
        let (b, _) = net.lstm_step(&x, &h, &c);
        assert_eq!(a.h, b.h);
        assert_eq!(a.c, b.c);
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn entropy_of_uniform_policy_is_ln_two() {
        let pi = softmax_policy([0.0, 0.0], 1.0);
        let entropy = -(pi[0] * pi[0].ln() + pi[1] * pi[1].ln());
        assert!((entropy - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_rollout_has_zero_policy_gradient_term() {
        let mut r = rng::stream(3, &["lstm"]);
        let net = LstmPolicyNet::new(2, 3, &mut r);
        let rollout = vec![
            RolloutStep { x: vec![1.0, 0.0], action: Action::Left, reward: 0.0 },
            RolloutStep { x: vec![0.0, 1.0], action: Action::Right, reward: 0.0 },
        ];
        let fixed = vec![0.0; 2];
        let (loss, _) = a2c_loss_and_grads(
            &net,
            &rollout,
            &[0.0; 3],
            &[0.0; 3],
            0.9,
            0.5,
            0.0,
            Some(&fixed),
        );
        assert_eq!(loss.policy, 0.0);
    }

    #[test]
    fn empty_rollout_is_noop() {
        let mut r = rng::stream(4, &["lstm"]);
        let net = LstmPolicyNet::new(2, 3, &mut r);
        let (loss, grads) = a2c_loss_and_grads(&net, &[], &[0.0; 3], &[0.0; 3], 0.9, 0.5, 0.05, None);
        assert_eq!(loss.total, 0.0);
        assert_eq!(grads.global_norm(), 0.0);
    }

    /// Central-difference check of the full A2C objective (advantages held
    /// fixed at their initial values, matching the detached implementation).
    #[test]
    fn a2c_gradients_match_finite_differences() {
        let mut r = rng::stream(5, &["lstm-fd"]);
        let mut net = LstmPolicyNet::new(3, 4, &mut r);
        let rollout: Vec<RolloutStep> = (0..3)
            .map(|i| RolloutStep {
                x: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                action: if i % 2 == 0 { Action::Left } else { Action::Right },
                reward: r.random_range(-1.0..1.0),
            })
            .collect();
        use rand::Rng;
        let h0: Vec<f64> = (0..4).map(|_| r.random_range(-0.5..0.5)).collect();
        let c0: Vec<f64> = (0..4).map(|_| r.random_range(-0.5..0.5)).collect();
        let (gamma, vc, ec) = (0.9, 0.5, 0.05);

        // Freeze advantages at the initial parameters.
        let (_, _) = a2c_loss_and_grads(&net, &rollout, &h0, &c0, gamma, vc, ec, None);
        let mut h = h0.clone();
        let mut c = c0.clone();
        let mut values = Vec::new();
        for step in &rollout {
            let (out, _) = net.lstm_step(&step.x, &h, &c);
            h = out.h.clone();
            c = out.c.clone();
            values.push(out.value);
        }
        let mut returns = vec![0.0; rollout.len()];
        let mut acc = 0.0;
        for t in (0..rollout.len()).rev() {
            acc = rollout[t].reward + gamma * acc;
            returns[t] = acc;
        }
        let fixed: Vec<f64> = returns.iter().zip(&values).map(|(g, v)| g - v).collect();

        let (_, grads) =
            a2c_loss_and_grads(&net, &rollout, &h0, &c0, gamma, vc, ec, Some(&fixed));
        let loss_at = |net: &LstmPolicyNet| {
            a2c_loss_and_grads(net, &rollout, &h0, &c0, gamma, vc, ec, Some(&fixed)).0.total
        };

        let probe = 1e-5;
        let grad_flat: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
        let mut gi = 0usize;
        let n_params = net.param_slices().len();
        for pi in 0..n_params {
            let len = net.param_slices()[pi].len();
            for j in 0..len {
                let orig = net.param_slices()[pi][j];
                net.param_slices_mut()[pi][j] = orig + probe;
                let up = loss_at(&net);
                net.param_slices_mut()[pi][j] = orig - probe;
                let down = loss_at(&net);
                net.param_slices_mut()[pi][j] = orig;
                let fd = (up - down) / (2.0 * probe);
                let an = grad_flat[gi];
                gi += 1;
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    ((fd - an) / denom).abs() < 1e-4,
                    "param {pi}[{j}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn grad_clip_scales_to_norm() {
        let mut r = rng::stream(6, &["lstm"]);
        let net = LstmPolicyNet::new(2, 3, &mut r);
        let rollout = vec![RolloutStep { x: vec![1.0, -1.0], action: Action::Left, reward: 5.0 }];
        let (_, mut grads) = a2c_loss_and_grads(&net, &rollout, &[0.0; 3], &[0.0; 3], 0.9, 0.5, 0.05, None);
        let norm = grads.global_norm();
        assert!(norm > 0.0);
        let clip = norm / 2.0;
        grads.scale(clip / norm);
        assert!((grads.global_norm() - clip).abs() < 1e-9);
    }
}
