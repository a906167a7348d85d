//! Double DQN over the (state, goal) one-hot observation space.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::agents::checkpoint::{hash_state, AgentCheckpoint};
use crate::agents::nets::{AdamState, DenseNet};
use crate::agents::tabular::softmax_policy;
use crate::agents::{ActionDist, Agent, AgentFamily, FreezeMode, Observation, StepRecord};
use crate::env::TaskGraph;
use crate::error::AgentError;
use crate::rng;

/// Double-DQN target: bootstrap action chosen by the online net, evaluated
/// by the target net.
pub fn ddqn_target(
    reward: f64,
    done: bool,
    gamma: f64,
    q_online_next: ActionDist,
    q_target_next: ActionDist,
) -> f64 {
    if done {
        return reward;
    }
    let best = usize::from(q_online_next[1] > q_online_next[0]);
    reward + gamma * q_target_next[best]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: u16,
    pub action: u8,
    pub reward: f64,
    pub next_obs: u16,
    pub done: bool,
}

/// Ring buffer with uniform without-replacement batch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer { capacity, storage: Vec::with_capacity(capacity.min(4096)), head: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Distinct uniform indices via a partial Fisher-Yates shuffle.
    pub fn sample<'a>(&'a self, rng: &mut ChaCha12Rng, batch: usize) -> Vec<&'a Transition> {
        let n = self.storage.len();
        assert!(batch <= n, "cannot sample {batch} from {n}");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..batch {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx[..batch].iter().map(|&i| &self.storage[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DdqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub target_tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub hidden: [usize; 2],
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the exploration horizon over which epsilon anneals.
    pub eps_anneal_frac: f64,
    /// Softmax inverse temperature applied to Q-values when acting frozen
    /// (replaced by the fitted temperature after policy matching).
    pub eval_inv_temp: f64,
}

impl Default for DdqnConfig {
    fn default() -> Self {
        DdqnConfig {
            gamma: 0.99,
            learning_rate: 0.001,
            target_tau: 0.001,
            batch_size: 32,
            replay_capacity: 10_000,
            hidden: [64, 64],
            eps_start: 1.0,
            eps_end: 0.1,
            eps_anneal_frac: 0.2,
            eval_inv_temp: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DdqnAgent {
    pub cfg: DdqnConfig,
    online: DenseNet,
    target: DenseNet,
    adam: AdamState,
    replay: ReplayBuffer,
    sample_rng: ChaCha12Rng,
    env_steps: u64,
    exploration_horizon: u64,
    inv_temp_fit: Option<f64>,
    freeze: FreezeMode,
    loss_accum: f64,
    loss_count: u64,
}

fn one_hot_obs(idx: usize) -> Vec<f64> {
    let mut x = vec![0.0; Observation::COUNT];
    x[idx] = 1.0;
    x
}

impl DdqnAgent {
    pub fn new(cfg: DdqnConfig, seed: u64) -> DdqnAgent {
        let mut init_rng = rng::stream(seed, &["ddqn", "init"]);
        let sizes = [Observation::COUNT, cfg.hidden[0], cfg.hidden[1], 2];
        let online = DenseNet::new(&sizes, &mut init_rng);
        let target = online.clone();
        let adam = AdamState::for_params(cfg.learning_rate, &online.param_slices());
        DdqnAgent {
            cfg,
            online,
            target,
            adam,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            sample_rng: rng::stream(seed, &["ddqn", "replay"]),
            env_steps: 0,
            exploration_horizon: 10_000,
            inv_temp_fit: None,
            freeze: FreezeMode::None,
            loss_accum: 0.0,
            loss_count: 0,
        }
    }

    /// Mean training loss since the last call (per-epoch curve column).
    pub fn take_mean_loss(&mut self) -> Option<f64> {
        if self.loss_count == 0 {
            return None;
        }
        let mean = self.loss_accum / self.loss_count as f64;
        self.loss_accum = 0.0;
        self.loss_count = 0;
        Some(mean)
    }

    /// Total expected env steps for this training run; epsilon anneals over
    /// the first `eps_anneal_frac` of them.
    pub fn set_exploration_horizon(&mut self, total_env_steps: u64) {
        self.exploration_horizon = total_env_steps.max(1);
    }

    pub fn epsilon(&self) -> f64 {
        let anneal_steps = (self.exploration_horizon as f64 * self.cfg.eps_anneal_frac).max(1.0);
        let progress = (self.env_steps as f64 / anneal_steps).min(1.0);
        self.cfg.eps_start + (self.cfg.eps_end - self.cfg.eps_start) * progress
    }

    pub fn q_values(&self, obs: Observation) -> ActionDist {
        let y = self.online.infer(&one_hot_obs(obs.index()));
        [y[0], y[1]]
    }

    pub fn set_fitted_inv_temp(&mut self, tau: f64) {
        self.inv_temp_fit = Some(tau);
    }

    pub fn fitted_inv_temp(&self) -> Option<f64> {
        self.inv_temp_fit
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    fn acting_inv_temp(&self) -> f64 {
        self.inv_temp_fit.unwrap_or(self.cfg.eval_inv_temp)
    }

    /// One optimization step on a sampled batch; returns the MSE loss, or
    /// None while the buffer is underfilled.
    pub fn train_step(&mut self) -> Option<f64> {
        if self.replay.len() < self.cfg.batch_size {
            return None;
        }
        let batch = self.replay.sample(&mut self.sample_rng, self.cfg.batch_size);
        let mut acc = self.online.zero_grads();
        let mut loss = 0.0;
        let scale = 1.0 / self.cfg.batch_size as f64;
        for t in batch {
            let x = one_hot_obs(t.obs as usize);
            let x_next = one_hot_obs(t.next_obs as usize);
            let q_online_next = self.online.infer(&x_next);
            let q_target_next = self.target.infer(&x_next);
            let y = ddqn_target(
                t.reward,
                t.done,
                self.cfg.gamma,
                [q_online_next[0], q_online_next[1]],
                [q_target_next[0], q_target_next[1]],
            );
            let (q, cache) = self.online.forward(&x);
            let a = t.action as usize;
            let err = q[a] - y;
            loss += err * err * scale;
            let mut dy = vec![0.0; 2];
            dy[a] = 2.0 * err * scale;
            let g = self.online.backward(&cache, &dy);
            DenseNet::accumulate(&mut acc, &g, 1.0);
        }
        let grads = DenseNet::grad_slices(&acc);
        let mut params = self.online.param_slices_mut();
        self.adam.step(&mut params, &grads);
        self.target.soft_update_from(&self.online, self.cfg.target_tau);
        Some(loss)
    }
}

impl Agent for DdqnAgent {
    fn family(&self) -> AgentFamily {
        AgentFamily::Ddqn
    }

    fn begin_session(&mut self, _graph: &TaskGraph) {}

    fn reset_episode(&mut self) {}

    fn policy(&mut self, obs: Observation) -> ActionDist {
        let q = self.q_values(obs);
        if self.freeze == FreezeMode::None {
            let eps = self.epsilon();
            let greedy = usize::from(q[1] > q[0]);
            let mut dist = [eps / 2.0, eps / 2.0];
            dist[greedy] += 1.0 - eps;
            dist
        } else {
            softmax_policy(q, self.acting_inv_temp())
        }
    }

    fn observe(&mut self, step: &StepRecord) {
        if self.freeze != FreezeMode::None {
            return;
        }
        self.env_steps += 1;
        let obs = step.obs.index() as u16;
        let next_obs = Observation { state: step.next_state, goal: step.obs.goal }.index() as u16;
        self.replay.push(Transition {
            obs,
            action: step.action.index() as u8,
            reward: step.reward,
            next_obs,
            done: step.terminal,
        });
        if let Some(loss) = self.train_step() {
            self.loss_accum += loss;
            self.loss_count += 1;
        }
    }

    fn set_freeze(&mut self, mode: FreezeMode) {
        self.freeze = mode;
    }

    fn freeze_mode(&self) -> FreezeMode {
        self.freeze
    }

    fn checkpoint(&self) -> AgentCheckpoint {
        let mut ck = AgentCheckpoint::new("ddqn");
        self.online.pack("online", &mut ck);
        self.target.pack("target", &mut ck);
        self.adam.pack("adam", &mut ck);
        ck.ints.insert("env_steps".into(), self.env_steps as i64);
        ck.ints
            .insert("exploration_horizon".into(), self.exploration_horizon as i64);
        if let Some(tau) = self.inv_temp_fit {
            ck.scalars.insert("inv_temp_fit".into(), tau);
        }
        ck.scalars.insert("cfg.gamma".into(), self.cfg.gamma);
        ck.scalars.insert("cfg.learning_rate".into(), self.cfg.learning_rate);
        ck.scalars.insert("cfg.target_tau".into(), self.cfg.target_tau);
        ck.ints.insert("cfg.batch_size".into(), self.cfg.batch_size as i64);
        ck
    }

    fn restore(&mut self, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        ck.expect_kind("ddqn")?;
        self.online.unpack_into("online", ck)?;
        self.target.unpack_into("target", ck)?;
        self.adam.unpack_into("adam", ck)?;
        self.env_steps = ck.int("env_steps")? as u64;
        self.exploration_horizon = ck.int("exploration_horizon")? as u64;
        self.inv_temp_fit = ck.scalars.get("inv_temp_fit").copied();
        self.cfg.gamma = ck.scalar("cfg.gamma")?;
        self.cfg.learning_rate = ck.scalar("cfg.learning_rate")?;
        self.cfg.target_tau = ck.scalar("cfg.target_tau")?;
        self.cfg.batch_size = ck.int("cfg.batch_size")? as usize;
        Ok(())
    }

    fn frozen_state_hash(&self) -> u64 {
        let mut parts: Vec<&[f64]> = self.online.param_slices();
        parts.extend(self.target.param_slices());
        let tau = [self.inv_temp_fit.unwrap_or(self.cfg.eval_inv_temp)];
        parts.push(&tau);
        hash_state(&parts)
    }

    fn reseed(&mut self, seed: u64) {
        self.sample_rng = rng::stream(seed, &["ddqn", "replay"]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GoalCondition, StateId};

    #[test]
    fn target_terminal_and_zero_gamma() {
        assert_eq!(ddqn_target(7.0, true, 0.99, [1.0, 2.0], [3.0, 4.0]), 7.0);
        assert_eq!(ddqn_target(7.0, false, 0.0, [1.0, 2.0], [3.0, 4.0]), 7.0);
    }

    #[test]
    fn target_hand_evaluated() {
        // online argmax is Right, evaluated on the target net.
        let y = ddqn_target(10.0, false, 0.99, [1.0, 2.0], [5.0, 20.0]);
        assert!((y - 29.8).abs() < 1e-12);
    }

    #[test]
    fn target_exhaustive_small_domain() {
        let rewards = [0.0, 10.0, 20.0, 40.0];
        let gammas = [0.0, 0.99];
        let qs = [[0.0, 1.0], [1.0, 0.0], [-2.0, 3.0], [5.0, 5.0]];
        for r in rewards {
            for done in [false, true] {
                for g in gammas {
                    for qo in qs {
                        for qt in qs {
                            let got = ddqn_target(r, done, g, qo, qt);
                            let expect = if done {
                                r
                            } else {
                                let a = usize::from(qo[1] > qo[0]);
                                r + g * qt[a]
                            };
                            assert_eq!(got, expect);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn soft_update_extremes() {
        let mut agent = DdqnAgent::new(DdqnConfig::default(), 3);
        let online = agent.online.clone();
        agent.target.soft_update_from(&online, 1.0);
        assert_eq!(agent.target, online);

        let mut agent2 = DdqnAgent::new(DdqnConfig::default(), 4);
        // Perturb online so the nets differ.
        agent2.online.layers[0].w.data[0] += 1.0;
        let before = agent2.target.clone();
        agent2.target.soft_update_from(&agent2.online.clone(), 0.0);
        assert_eq!(agent2.target, before);
    }

    #[test]
    fn repeated_transition_drives_loss_down() {
        let cfg = DdqnConfig { replay_capacity: 64, ..DdqnConfig::default() };
        let mut agent = DdqnAgent::new(cfg, 9);
        for _ in 0..64 {
            agent.replay.push(Transition { obs: 5, action: 1, reward: 10.0, next_obs: 6, done: true });
        }
        let mut first = 0.0;
        let mut last = 0.0;
        for i in 0..1000 {
            let loss = agent.train_step().unwrap();
            if i == 0 {
                first = loss;
            }
            last = loss;
        }
        assert!(last < first * 0.05, "loss did not trend down: {first} -> {last}");
    }

    #[test]
    fn replay_sampling_is_without_replacement() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..50u16 {
            buf.push(Transition { obs: i, action: 0, reward: 0.0, next_obs: i, done: false });
        }
        let mut rng = rng::stream(2, &["replay-test"]);
        for _ in 0..20 {
            let batch = buf.sample(&mut rng, 32);
            let mut seen = std::collections::BTreeSet::new();
            for t in batch {
                assert!(seen.insert(t.obs), "duplicate obs {} in batch", t.obs);
            }
        }
    }

    #[test]
    fn frozen_policy_is_softmax_and_training_policy_is_eps_greedy() {
        let mut agent = DdqnAgent::new(DdqnConfig::default(), 11);
        let obs = Observation { state: StateId(0), goal: GoalCondition::Flexible };
        agent.set_freeze(FreezeMode::WeightsOnly);
        let dist = agent.policy(obs);
        assert!((dist[0] + dist[1] - 1.0).abs() < 1e-12);
        agent.set_freeze(FreezeMode::None);
        agent.env_steps = 0;
        let dist = agent.policy(obs);
        // At step 0 epsilon = 1.0, so the distribution is uniform.
        assert!((dist[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_restores_q_values_bit_exactly() {
        let mut agent = DdqnAgent::new(DdqnConfig::default(), 21);
        for i in 0..40u16 {
            agent.replay.push(Transition {
                obs: i % 36,
                action: (i % 2) as u8,
                reward: f64::from(i % 4) * 10.0,
                next_obs: (i + 1) % 36,
                done: i % 2 == 0,
            });
        }
        for _ in 0..10 {
            agent.train_step();
        }
        let ck = agent.checkpoint();
        let mut other = DdqnAgent::new(DdqnConfig::default(), 999);
        other.restore(&ck).unwrap();
        let obs = Observation { state: StateId(2), goal: GoalCondition::Flexible };
        let a = agent.q_values(obs);
        let b = other.q_values(obs);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}
