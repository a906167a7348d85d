//! Agent contract and the agent families.

mod arbitration;
mod checkpoint;
mod ddqn;
mod lstm;
mod meta;
mod nets;
mod tabular;

pub use arbitration::{
    arbitration_step, categorize_pe, combine_q, trace_to_csv, ArbitrationState, MixtureEstimator,
    PeCategory, PfcAgent, PfcParams, PfcVariant, ThresholdEstimator, TraceRow,
};
pub use checkpoint::{AgentCheckpoint, CHECKPOINT_VERSION};
pub use ddqn::{ddqn_target, DdqnAgent, DdqnConfig, ReplayBuffer, Transition};
pub use lstm::{a2c_loss_and_grads, A2cLoss, LstmGrads, LstmPolicyNet, LstmStepOut, RolloutStep};
pub use meta::{encode_obs, MetaConfig, MetaRlAgent, META_INPUT_DIM};
pub use nets::{AdamState, DenseGrads, DenseNet, Mat};
pub use tabular::{
    forward_update, mb_values, sarsa_update, softmax_policy, QTable, RandomAgent,
    SarsaSoftmaxAgent, StateActionValues, TransitionModel,
};

use serde::{Deserialize, Serialize};

use crate::env::{Action, GoalCondition, Stage, StateId, TaskGraph, MAX_STATES, N_GOALS};
use crate::error::AgentError;

/// What an agent sees when it chooses: the task state plus the trial's goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Observation {
    pub state: StateId,
    pub goal: GoalCondition,
}

impl Observation {
    /// Size of the state x goal cross product (shared across graph layouts).
    pub const COUNT: usize = MAX_STATES * N_GOALS;

    /// Bijective index into the state x goal cross product.
    pub fn index(&self) -> usize {
        self.state.index() * N_GOALS + self.goal.index()
    }
}

/// A probability pair over (Left, Right).
pub type ActionDist = [f64; 2];

pub fn sample_action<R: rand::Rng>(dist: ActionDist, rng: &mut R) -> Action {
    let u: f64 = rng.random();
    if u < dist[0] {
        Action::Left
    } else {
        Action::Right
    }
}

/// One observed transition, fed back to the agent after each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub obs: Observation,
    pub action: Action,
    pub next_state: StateId,
    pub next_stage: Stage,
    /// Learning reward for this step (environment reward during GM, the
    /// terminal matching reward during PM). Nonzero only at terminal steps.
    pub reward: f64,
    pub terminal: bool,
}

/// Freezing policy for evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeMode {
    /// Everything learns (training).
    None,
    /// Slow state (network weights, fitted parameters) is immutable; fast
    /// state (LSTM hidden state, tabular values, arbitration weight) still
    /// evolves.
    WeightsOnly,
    /// No state mutation at all.
    Everything,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentFamily {
    Random,
    Ddqn,
    MetaRl,
    PfcRl1,
    PfcRl2,
    SarsaSoftmax,
}

impl AgentFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentFamily::Random => "random",
            AgentFamily::Ddqn => "ddqn",
            AgentFamily::MetaRl => "meta_rl",
            AgentFamily::PfcRl1 => "pfc_rl1",
            AgentFamily::PfcRl2 => "pfc_rl2",
            AgentFamily::SarsaSoftmax => "sarsa_softmax",
        }
    }
}

/// The seven-model roster used in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    Random,
    GmDdqn,
    PmDdqn,
    GmMetaRl,
    PmMetaRl,
    PmPfcRl1,
    PmPfcRl2,
}

impl ModelId {
    pub const ALL: [ModelId; 7] = [
        ModelId::Random,
        ModelId::GmDdqn,
        ModelId::PmDdqn,
        ModelId::GmMetaRl,
        ModelId::PmMetaRl,
        ModelId::PmPfcRl1,
        ModelId::PmPfcRl2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Random => "random",
            ModelId::GmDdqn => "GM-DDQN",
            ModelId::PmDdqn => "PM-DDQN",
            ModelId::GmMetaRl => "GM-metaRL",
            ModelId::PmMetaRl => "PM-metaRL",
            ModelId::PmPfcRl1 => "PM-pfcRL1",
            ModelId::PmPfcRl2 => "PM-pfcRL2",
        }
    }

    pub fn parse(s: &str) -> Option<ModelId> {
        ModelId::ALL.iter().copied().find(|m| m.as_str() == s)
    }

    pub fn family(self) -> AgentFamily {
        match self {
            ModelId::Random => AgentFamily::Random,
            ModelId::GmDdqn | ModelId::PmDdqn => AgentFamily::Ddqn,
            ModelId::GmMetaRl | ModelId::PmMetaRl => AgentFamily::MetaRl,
            ModelId::PmPfcRl1 => AgentFamily::PfcRl1,
            ModelId::PmPfcRl2 => AgentFamily::PfcRl2,
        }
    }

    /// Models trained per subject (policy matching) vs once per run.
    pub fn is_pm(self) -> bool {
        matches!(
            self,
            ModelId::PmDdqn | ModelId::PmMetaRl | ModelId::PmPfcRl1 | ModelId::PmPfcRl2
        )
    }
}

/// Common contract for every agent family.
///
/// Protocol per trial: `policy` is called exactly once per choice point and
/// returns the action distribution; the driver samples from it and feeds the
/// resulting transition back through `observe`. `end_trial` closes a game,
/// `reset_episode` clears fast state, and `begin_session` additionally binds
/// a (possibly new) task graph.
pub trait Agent {
    fn family(&self) -> AgentFamily;

    fn begin_session(&mut self, graph: &TaskGraph);

    fn reset_episode(&mut self);

    fn policy(&mut self, obs: Observation) -> ActionDist;

    fn observe(&mut self, step: &StepRecord);

    fn end_trial(&mut self) {}

    fn set_freeze(&mut self, mode: FreezeMode);

    fn freeze_mode(&self) -> FreezeMode;

    fn checkpoint(&self) -> AgentCheckpoint;

    fn restore(&mut self, ck: &AgentCheckpoint) -> Result<(), AgentError>;

    /// Stable hash of the slow (frozen-class) state only; constant across
    /// any evaluation run with freezing enabled.
    fn frozen_state_hash(&self) -> u64;

    /// Reseed agent-internal streams (replay sampling and the like).
    fn reseed(&mut self, _seed: u64) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TokenColor;

    #[test]
    fn observation_index_is_bijective() {
        use std::collections::BTreeSet;
        let mut seen = BTreeSet::new();
        for s in 0..MAX_STATES {
            for goal in GoalCondition::ALL {
                let obs = Observation { state: StateId(s as u8), goal };
                assert!(seen.insert(obs.index()));
                assert!(obs.index() < Observation::COUNT);
            }
        }
        assert_eq!(seen.len(), Observation::COUNT);
    }

    #[test]
    fn model_id_round_trip() {
        for m in ModelId::ALL {
            assert_eq!(ModelId::parse(m.as_str()), Some(m));
        }
    }

    #[test]
    fn goal_indices_cover_all_conditions() {
        let mut idx: Vec<usize> = GoalCondition::ALL.iter().map(|g| g.index()).collect();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(GoalCondition::Specific(TokenColor::Red).index(), 1);
    }
}
