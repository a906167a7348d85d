//! Meta-RL agent: LSTM advantage actor-critic over one-hot inputs.
//!
//! The input concatenates three one-hot groups: the (state, goal)
//! observation, the previous action, and the previous reward. The LSTM
//! hidden state carries across games within an episode; updates run per
//! game with truncated backprop.

use rand_chacha::ChaCha12Rng;

use crate::agents::checkpoint::{hash_state, AgentCheckpoint};
use crate::agents::lstm::{a2c_loss_and_grads, LstmPolicyNet, RolloutStep};
use crate::agents::nets::AdamState;
use crate::agents::tabular::softmax_policy;
use crate::agents::{ActionDist, Agent, AgentFamily, FreezeMode, Observation, StepRecord};
use crate::env::{Action, TaskGraph};
use crate::error::AgentError;
use crate::rng;

/// Input layout: observation one-hot + previous-action one-hot + previous
/// reward one-hot over the four-value reward alphabet.
pub const META_INPUT_DIM: usize = Observation::COUNT + 2 + 4;

fn reward_slot(reward: f64) -> Result<usize, AgentError> {
    for (i, v) in [0.0, 10.0, 20.0, 40.0].into_iter().enumerate() {
        if (reward - v).abs() < 1e-9 {
            return Ok(i);
        }
    }
    Err(AgentError::UnknownReward(reward))
}

/// Concatenated one-hot encoding; errors on rewards outside {0, 10, 20, 40}.
pub fn encode_obs(obs: Observation, prev_action: Action, prev_reward: f64) -> Result<Vec<f64>, AgentError> {
    let mut x = vec![0.0; META_INPUT_DIM];
    x[obs.index()] = 1.0;
    x[Observation::COUNT + prev_action.index()] = 1.0;
    x[Observation::COUNT + 2 + reward_slot(prev_reward)?] = 1.0;
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetaConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    pub learning_rate: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            hidden: 256,
            gamma: 0.9,
            value_coef: 0.5,
            entropy_coef: 0.05,
            grad_clip: 40.0,
            learning_rate: 0.001,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetaRlAgent {
    pub cfg: MetaConfig,
    net: LstmPolicyNet,
    adam: AdamState,
    h: Vec<f64>,
    c: Vec<f64>,
    prev_action: Action,
    prev_reward: f64,
    game_start_h: Vec<f64>,
    game_start_c: Vec<f64>,
    rollout: Vec<RolloutStep>,
    pending_x: Option<Vec<f64>>,
    freeze: FreezeMode,
    loss_accum: f64,
    loss_count: u64,
}

impl MetaRlAgent {
    pub fn new(cfg: MetaConfig, seed: u64) -> MetaRlAgent {
        let mut init_rng: ChaCha12Rng = rng::stream(seed, &["meta", "init"]);
        let net = LstmPolicyNet::new(META_INPUT_DIM, cfg.hidden, &mut init_rng);
        let adam = AdamState::for_params(cfg.learning_rate, &net.param_slices());
        MetaRlAgent {
            cfg,
            net,
            adam,
            h: vec![0.0; cfg.hidden],
            c: vec![0.0; cfg.hidden],
            prev_action: Action::Left,
            prev_reward: 0.0,
            game_start_h: vec![0.0; cfg.hidden],
            game_start_c: vec![0.0; cfg.hidden],
            rollout: Vec::new(),
            pending_x: None,
            freeze: FreezeMode::None,
            loss_accum: 0.0,
            loss_count: 0,
        }
    }

    /// Mean actor-critic loss since the last call.
    pub fn take_mean_loss(&mut self) -> Option<f64> {
        if self.loss_count == 0 {
            return None;
        }
        let mean = self.loss_accum / self.loss_count as f64;
        self.loss_accum = 0.0;
        self.loss_count = 0;
        Some(mean)
    }

    pub fn hidden_state(&self) -> (&[f64], &[f64]) {
        (&self.h, &self.c)
    }
}

impl Agent for MetaRlAgent {
    fn family(&self) -> AgentFamily {
        AgentFamily::MetaRl
    }

    fn begin_session(&mut self, _graph: &TaskGraph) {
        self.reset_episode();
    }

    fn reset_episode(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
        self.prev_action = Action::Left;
        self.prev_reward = 0.0;
        self.game_start_h.clone_from(&self.h);
        self.game_start_c.clone_from(&self.c);
        self.rollout.clear();
        self.pending_x = None;
    }

    fn policy(&mut self, obs: Observation) -> ActionDist {
        let x = encode_obs(obs, self.prev_action, self.prev_reward)
            .expect("reward alphabet is closed under the task and matching rewards");
        if self.freeze == FreezeMode::Everything {
            // Read-only: evaluate the heads without advancing the recurrent state.
            let (out, _) = self.net.lstm_step(&x, &self.h, &self.c);
            return softmax_policy(out.logits, 1.0);
        }
        let (out, _) = self.net.lstm_step(&x, &self.h, &self.c);
        self.h = out.h;
        self.c = out.c;
        self.pending_x = Some(x);
        softmax_policy(out.logits, 1.0)
    }

    fn observe(&mut self, step: &StepRecord) {
        if self.freeze == FreezeMode::Everything {
            return;
        }
        if let Some(x) = self.pending_x.take() {
            if self.freeze == FreezeMode::None {
                self.rollout.push(RolloutStep { x, action: step.action, reward: step.reward });
            }
        }
        self.prev_action = step.action;
        self.prev_reward = step.reward;
    }

    fn end_trial(&mut self) {
        if self.freeze == FreezeMode::None && !self.rollout.is_empty() {
            let (loss, mut grads) = a2c_loss_and_grads(
                &self.net,
                &self.rollout,
                &self.game_start_h,
                &self.game_start_c,
                self.cfg.gamma,
                self.cfg.value_coef,
                self.cfg.entropy_coef,
                None,
            );
            let norm = grads.global_norm();
            if norm > self.cfg.grad_clip {
                grads.scale(self.cfg.grad_clip / norm);
            }
            let slices = grads.slices();
            let mut params = self.net.param_slices_mut();
            self.adam.step(&mut params, &slices);
            self.loss_accum += loss.total;
            self.loss_count += 1;
        }
        self.rollout.clear();
        self.game_start_h.clone_from(&self.h);
        self.game_start_c.clone_from(&self.c);
    }

    fn set_freeze(&mut self, mode: FreezeMode) {
        self.freeze = mode;
    }

    fn freeze_mode(&self) -> FreezeMode {
        self.freeze
    }

    fn checkpoint(&self) -> AgentCheckpoint {
        let mut ck = AgentCheckpoint::new("meta_rl");
        self.net.pack("net", &mut ck);
        self.adam.pack("adam", &mut ck);
        ck.arrays.insert("hidden.h".into(), self.h.clone());
        ck.arrays.insert("hidden.c".into(), self.c.clone());
        ck.scalars.insert("prev_reward".into(), self.prev_reward);
        ck.ints.insert("prev_action".into(), self.prev_action.index() as i64);
        ck.ints.insert("hidden_size".into(), self.cfg.hidden as i64);
        ck
    }

    fn restore(&mut self, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        ck.expect_kind("meta_rl")?;
        let hidden = ck.int("hidden_size")? as usize;
        if hidden != self.cfg.hidden {
            return Err(AgentError::Checkpoint(format!(
                "checkpoint hidden size {hidden} != agent hidden size {}",
                self.cfg.hidden
            )));
        }
        self.net.unpack_into("net", ck)?;
        self.adam.unpack_into("adam", ck)?;
        self.h.copy_from_slice(ck.array("hidden.h", hidden)?);
        self.c.copy_from_slice(ck.array("hidden.c", hidden)?);
        self.prev_reward = ck.scalar("prev_reward")?;
        self.prev_action = Action::from_index(ck.int("prev_action")? as usize);
        self.game_start_h.clone_from(&self.h);
        self.game_start_c.clone_from(&self.c);
        self.rollout.clear();
        self.pending_x = None;
        Ok(())
    }

    fn frozen_state_hash(&self) -> u64 {
        hash_state(&self.net.param_slices())
    }
}
