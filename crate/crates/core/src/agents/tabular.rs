//! Tabular building blocks: SARSA values, the learned transition model with
//! its Bellman backup, softmax selection, and the two tabular agents
//! (random control and model-free softmax SARSA).

use std::collections::BTreeMap;

use crate::agents::checkpoint::{hash_state, AgentCheckpoint};
use crate::agents::{ActionDist, Agent, AgentFamily, FreezeMode, Observation, StepRecord};
use crate::env::{Action, GoalCondition, Stage, StateId, TaskGraph};
use crate::error::AgentError;

/// Sparse action-value table keyed by (observation index, action); missing
/// entries read as zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    values: BTreeMap<(u32, u8), f64>,
}

impl QTable {
    pub fn new() -> QTable {
        QTable::default()
    }

    pub fn get(&self, obs: usize, action: Action) -> f64 {
        self.values
            .get(&(obs as u32, action.index() as u8))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, obs: usize, action: Action, value: f64) {
        self.values.insert((obs as u32, action.index() as u8), value);
    }

    pub fn add(&mut self, obs: usize, action: Action, delta: f64) {
        *self.values.entry((obs as u32, action.index() as u8)).or_insert(0.0) += delta;
    }

    pub fn row(&self, obs: usize) -> ActionDist {
        [self.get(obs, Action::Left), self.get(obs, Action::Right)]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }

    /// Flatten to three parallel arrays for checkpointing.
    pub fn pack(&self, prefix: &str, ck: &mut AgentCheckpoint) {
        let mut obs = Vec::with_capacity(self.values.len());
        let mut act = Vec::with_capacity(self.values.len());
        let mut val = Vec::with_capacity(self.values.len());
        for (&(o, a), &v) in &self.values {
            obs.push(f64::from(o));
            act.push(f64::from(a));
            val.push(v);
        }
        ck.arrays.insert(format!("{prefix}.obs"), obs);
        ck.arrays.insert(format!("{prefix}.action"), act);
        ck.arrays.insert(format!("{prefix}.value"), val);
    }

    pub fn unpack(prefix: &str, ck: &AgentCheckpoint) -> Result<QTable, AgentError> {
        let obs = ck.array_any(&format!("{prefix}.obs"))?;
        let act = ck.array_any(&format!("{prefix}.action"))?;
        let val = ck.array_any(&format!("{prefix}.value"))?;
        if obs.len() != act.len() || obs.len() != val.len() {
            return Err(AgentError::Checkpoint(format!(
                "q-table arrays under {prefix:?} have mismatched lengths"
            )));
        }
        let mut values = BTreeMap::new();
        for i in 0..obs.len() {
            values.insert((obs[i] as u32, act[i] as u8), val[i]);
        }
        Ok(QTable { values })
    }

    pub fn state_hash(&self) -> u64 {
        let mut flat = Vec::with_capacity(self.values.len() * 3);
        for (&(o, a), &v) in &self.values {
            flat.push(f64::from(o));
            flat.push(f64::from(a));
            flat.push(v);
        }
        hash_state(&[&flat])
    }
}

/// SARSA update. `next` is the bootstrap pair (observation, action); pass
/// `None` at terminal steps. Returns the reward prediction error.
pub fn sarsa_update(
    q: &mut QTable,
    obs: usize,
    action: Action,
    reward: f64,
    next: Option<(usize, Action)>,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let bootstrap = next.map_or(0.0, |(o, a)| q.get(o, a));
    let delta = reward + gamma * bootstrap - q.get(obs, action);
    if alpha != 0.0 {
        q.add(obs, action, alpha * delta);
    }
    delta
}

/// Learned state-transition model, one probability row per (state, action).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    rows: BTreeMap<(StateId, Action), Vec<(StateId, f64)>>,
    pub eta: f64,
}

impl TransitionModel {
    /// Uniform rows over each (state, action)'s candidate pair.
    pub fn uniform_from_graph(graph: &TaskGraph, eta: f64) -> TransitionModel {
        let mut rows = BTreeMap::new();
        for s in graph.states() {
            if graph.stage_of(s) == Stage::Terminal {
                continue;
            }
            for a in Action::BOTH {
                if let Some(cands) = graph.successors(s, a) {
                    rows.insert((s, a), vec![(cands[0], 0.5), (cands[1], 0.5)]);
                }
            }
        }
        TransitionModel { rows, eta }
    }

    /// Rows with explicit probabilities (used to load the true model).
    pub fn from_rows(
        rows: BTreeMap<(StateId, Action), Vec<(StateId, f64)>>,
        eta: f64,
    ) -> TransitionModel {
        TransitionModel { rows, eta }
    }

    pub fn prob(&self, s: StateId, a: Action, next: StateId) -> f64 {
        self.rows
            .get(&(s, a))
            .and_then(|row| row.iter().find(|(t, _)| *t == next))
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn row(&self, s: StateId, a: Action) -> Option<&[(StateId, f64)]> {
        self.rows.get(&(s, a)).map(|r| r.as_slice())
    }

    pub fn rows(&self) -> impl Iterator<Item = (&(StateId, Action), &Vec<(StateId, f64)>)> {
        self.rows.iter()
    }

    pub fn pack(&self, prefix: &str, ck: &mut AgentCheckpoint) {
        let mut flat = Vec::new();
        for (&(s, a), row) in &self.rows {
            for &(t, p) in row {
                flat.push(f64::from(s.0));
                flat.push(a.index() as f64);
                flat.push(f64::from(t.0));
                flat.push(p);
            }
        }
        ck.arrays.insert(format!("{prefix}.rows"), flat);
        ck.scalars.insert(format!("{prefix}.eta"), self.eta);
    }

    pub fn unpack(prefix: &str, ck: &AgentCheckpoint) -> Result<TransitionModel, AgentError> {
        let flat = ck.array_any(&format!("{prefix}.rows"))?;
        if flat.len() % 4 != 0 {
            return Err(AgentError::Checkpoint(format!(
                "transition rows under {prefix:?} not a multiple of 4"
            )));
        }
        let mut rows: BTreeMap<(StateId, Action), Vec<(StateId, f64)>> = BTreeMap::new();
        for chunk in flat.chunks_exact(4) {
            let key = (StateId(chunk[0] as u8), Action::from_index(chunk[1] as usize));
            rows.entry(key).or_default().push((StateId(chunk[2] as u8), chunk[3]));
        }
        Ok(TransitionModel { rows, eta: ck.scalar(&format!("{prefix}.eta"))? })
    }

    pub fn state_hash(&self) -> u64 {
        let mut flat = Vec::new();
        for (&(s, a), row) in &self.rows {
            for &(t, p) in row {
                flat.push(f64::from(s.0));
                flat.push(a.index() as f64);
                flat.push(f64::from(t.0));
                flat.push(p);
            }
        }
        hash_state(&[&flat])
    }
}

/// State-prediction-error update of the learned transition row. The observed
/// successor gains `eta * (1 - p)`, the others shrink by `(1 - eta)`, and
/// the row is renormalized. An unseen successor joins the row at
/// probability `eta`. Returns the state prediction error.
pub fn forward_update(
    model: &mut TransitionModel,
    s: StateId,
    a: Action,
    observed: StateId,
) -> f64 {
    let eta = model.eta;
    let row = model.rows.entry((s, a)).or_default();
    let known = row.iter().any(|(t, _)| *t == observed);
    let p_obs = row
        .iter()
        .find(|(t, _)| *t == observed)
        .map_or(0.0, |(_, p)| *p);
    let spe = 1.0 - p_obs;
    if eta == 0.0 {
        return spe;
    }
    if known {
        for (t, p) in row.iter_mut() {
            if *t == observed {
                *p += eta * spe;
            } else {
                *p *= 1.0 - eta;
            }
        }
    } else {
        for (_, p) in row.iter_mut() {
            *p *= 1.0 - eta;
        }
        row.push((observed, eta));
    }
    let total: f64 = row.iter().map(|(_, p)| p).sum();
    if total > 0.0 {
        for (_, p) in row.iter_mut() {
            *p /= total;
        }
    }
    spe
}

/// Action values per state for one goal condition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateActionValues {
    values: BTreeMap<(StateId, Action), f64>,
}

impl StateActionValues {
    pub fn get(&self, s: StateId, a: Action) -> f64 {
        self.values.get(&(s, a)).copied().unwrap_or(0.0)
    }

    pub fn row(&self, s: StateId) -> ActionDist {
        [self.get(s, Action::Left), self.get(s, Action::Right)]
    }
}

/// Two-step Bellman backup over the LEARNED transition model with
/// goal-conditional terminal rewards.
pub fn mb_values(model: &TransitionModel, graph: &TaskGraph, goal: GoalCondition) -> StateActionValues {
    let mut out = StateActionValues::default();
    // Stage-2 rows first.
    for s in graph.states_of_stage(Stage::Two) {
        for a in Action::BOTH {
            let v = model.row(s, a).map_or(0.0, |row| {
                row.iter().map(|&(t, p)| p * graph.goal_reward(goal, t)).sum()
            });
            out.values.insert((s, a), v);
        }
    }
    for s in graph.states_of_stage(Stage::One) {
        for a in Action::BOTH {
            let v = model.row(s, a).map_or(0.0, |row| {
                row.iter()
                    .map(|&(s2, p)| {
                        let q = out.row(s2);
                        p * q[0].max(q[1])
                    })
                    .sum()
            });
            out.values.insert((s, a), v);
        }
    }
    out
}

/// Softmax with inverse temperature and max-subtraction.
pub fn softmax_policy(values: ActionDist, inv_temp: f64) -> ActionDist {
    let z = [values[0] * inv_temp, values[1] * inv_temp];
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let total = e[0] + e[1];
    [e[0] / total, e[1] / total]
}

/// The control-group agent: uniform over the two actions, stateless.
#[derive(Debug, Clone, Default)]
pub struct RandomAgent {
    freeze: Option<FreezeMode>,
}

impl RandomAgent {
    pub fn new() -> RandomAgent {
        RandomAgent { freeze: None }
    }
}

impl Agent for RandomAgent {
    fn family(&self) -> AgentFamily {
        AgentFamily::Random
    }

    fn begin_session(&mut self, _graph: &TaskGraph) {}

    fn reset_episode(&mut self) {}

    fn policy(&mut self, _obs: Observation) -> ActionDist {
        [0.5, 0.5]
    }

    fn observe(&mut self, _step: &StepRecord) {}

    fn set_freeze(&mut self, mode: FreezeMode) {
        self.freeze = Some(mode);
    }

    fn freeze_mode(&self) -> FreezeMode {
        self.freeze.unwrap_or(FreezeMode::None)
    }

    fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint::new("random")
    }

    fn restore(&mut self, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        ck.expect_kind("random")
    }

    fn frozen_state_hash(&self) -> u64 {
        hash_state(&[&[]])
    }
}

/// Model-free softmax SARSA agent. Used as a synthetic-subject generator and
/// as the recoverable-by-construction control in training tests; its table
/// counts as fast state (it relearns in every session), while (alpha, tau)
/// are the slow fitted parameters.
#[derive(Debug, Clone)]
pub struct SarsaSoftmaxAgent {
    pub alpha: f64,
    pub gamma: f64,
    pub inv_temp: f64,
    q: QTable,
    pending: Option<(usize, Action)>,
    freeze: FreezeMode,
}

impl SarsaSoftmaxAgent {
    pub fn new(alpha: f64, inv_temp: f64) -> SarsaSoftmaxAgent {
        SarsaSoftmaxAgent {
            alpha,
            gamma: 1.0,
            inv_temp,
            q: QTable::new(),
            pending: None,
            freeze: FreezeMode::None,
        }
    }

    pub fn q_table(&self) -> &QTable {
        &self.q
    }

    pub fn set_q_table(&mut self, q: QTable) {
        self.q = q;
    }
}

impl Agent for SarsaSoftmaxAgent {
    fn family(&self) -> AgentFamily {
        AgentFamily::SarsaSoftmax
    }

    fn begin_session(&mut self, _graph: &TaskGraph) {
        self.reset_episode();
    }

    fn reset_episode(&mut self) {
        self.q.clear();
        self.pending = None;
    }

    fn policy(&mut self, obs: Observation) -> ActionDist {
        softmax_policy(self.q.row(obs.index()), self.inv_temp)
    }

    fn observe(&mut self, step: &StepRecord) {
        if self.freeze == FreezeMode::Everything {
            return;
        }
        let obs = step.obs.index();
        if step.terminal {
            if let Some((o1, a1)) = self.pending.take() {
                let next_obs = Observation { state: step.obs.state, goal: step.obs.goal }.index();
                sarsa_update(
                    &mut self.q,
                    o1,
                    a1,
                    0.0,
                    Some((next_obs, step.action)),
                    self.alpha,
                    self.gamma,
                );
            }
            sarsa_update(&mut self.q, obs, step.action, step.reward, None, self.alpha, self.gamma);
        } else {
            self.pending = Some((obs, step.action));
        }
    }

    fn end_trial(&mut self) {
        self.pending = None;
    }

    fn set_freeze(&mut self, mode: FreezeMode) {
        self.freeze = mode;
    }

    fn freeze_mode(&self) -> FreezeMode {
        self.freeze
    }

    fn checkpoint(&self) -> AgentCheckpoint {
        let mut ck = AgentCheckpoint::new("sarsa_softmax");
        ck.scalars.insert("alpha".into(), self.alpha);
        ck.scalars.insert("gamma".into(), self.gamma);
        ck.scalars.insert("inv_temp".into(), self.inv_temp);
        self.q.pack("q", &mut ck);
        ck
    }

    fn restore(&mut self, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        ck.expect_kind("sarsa_softmax")?;
        self.alpha = ck.scalar("alpha")?;
        self.gamma = ck.scalar("gamma")?;
        self.inv_temp = ck.scalar("inv_temp")?;
        self.q = QTable::unpack("q", ck)?;
        self.pending = None;
        Ok(())
    }

    fn frozen_state_hash(&self) -> u64 {
        hash_state(&[&[self.alpha, self.gamma, self.inv_temp]])
    }
}
