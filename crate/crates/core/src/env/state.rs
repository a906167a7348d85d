//! The running environment: per-trial schedule, transitions, and the ideal
//! agent's value backup.
//!
//! All schedule randomness (goals, drift path, switch pattern) is
//! materialized at construction from streams derived from the env seed, so
//! the task-variable sequence is a pure function of (TaskSpec, env_seed)
//! and is identical for every agent evaluated under the same seed.
//! Transition draws consume a third, separate stream, so the schedule never
//! depends on the agent's actions.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::graph::{Action, GoalCondition, Stage, StateId, TaskGraph};
use crate::env::spec::{GoalSchedule, TaskSpec, UncertaintyDynamics};
use crate::error::EnvError;
use crate::rng;

/// Low/high transition-uncertainty label for a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    Low,
    High,
}

impl Uncertainty {
    /// A trial counts as high-uncertainty when p is close to 0.5.
    pub fn from_p(p: f64) -> Uncertainty {
        if (p - 0.5).abs() < 0.2 {
            Uncertainty::High
        } else {
            Uncertainty::Low
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Uncertainty::Low => "low",
            Uncertainty::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Uncertainty> {
        match s {
            "low" => Some(Uncertainty::Low),
            "high" => Some(Uncertainty::High),
            _ => None,
        }
    }
}

/// Outcome of a single environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: StateId,
    pub stage: Stage,
    pub reward: f64,
    pub trial_done: bool,
    pub token_color_collected: Option<crate::env::graph::TokenColor>,
}

/// Result of advancing to the next trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advance {
    Next,
    SessionComplete,
}

/// Materialized per-trial schedule; read-only view used by analysis oracles.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub goals: Vec<GoalCondition>,
    pub p: Vec<f64>,
    pub labels: Vec<Uncertainty>,
    pub blocks: Vec<u32>,
}

impl Schedule {
    fn materialize(spec: &TaskSpec) -> Schedule {
        let n = spec.n_trials;
        let mut goal_rng = rng::stream(spec.env_seed, &["env", "goals"]);
        let goals: Vec<GoalCondition> = match &spec.goal_schedule {
            GoalSchedule::Explicit { goals } => goals[..n].to_vec(),
            GoalSchedule::UniformIid => (0..n)
                .map(|_| GoalCondition::ALL[goal_rng.random_range(0..GoalCondition::ALL.len())])
                .collect(),
        };

        let mut p_rng = rng::stream(spec.env_seed, &["env", "p-path"]);
        let mut p = Vec::with_capacity(n);
        let mut blocks = Vec::with_capacity(n);
        match &spec.dynamics {
            UncertaintyDynamics::Fixed { p: fixed } => {
                for _ in 0..n {
                    p.push(*fixed);
                    blocks.push(0);
                }
            }
            UncertaintyDynamics::Drift { start, sigma, bounds } => {
                let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                let mut cur = *start;
                for _ in 0..n {
                    p.push(cur);
                    blocks.push(0);
                    cur = reflect(cur + normal.sample(&mut p_rng), bounds[0], bounds[1]);
                }
            }
            UncertaintyDynamics::Switch { low, high, block } => {
                for t in 0..n {
                    let b = t / block;
                    p.push(if b % 2 == 0 { *low } else { *high });
                    blocks.push(b as u32);
                }
            }
            UncertaintyDynamics::DriftSwitch {
                low_anchor,
                high_anchor,
                sigma,
                bounds,
                block,
            } => {
                let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                let mut cur = *low_anchor;
                for t in 0..n {
                    let b = t / block;
                    if t % block == 0 {
                        cur = if b % 2 == 0 { *low_anchor } else { *high_anchor };
                    }
                    p.push(cur);
                    blocks.push(b as u32);
                    cur = reflect(cur + normal.sample(&mut p_rng), bounds[0], bounds[1]);
                }
            }
        }

        let labels = p.iter().map(|&v| Uncertainty::from_p(v)).collect();
        Schedule { goals, p, labels, blocks }
    }
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    // A single reflection suffices for small sigma, but loop to be total.
    for _ in 0..64 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
    x.clamp(lo, hi)
}

/// The two-stage task as a running state machine.
#[derive(Debug, Clone)]
pub struct Env {
    spec: TaskSpec,
    graph: TaskGraph,
    schedule: Schedule,
    trial: usize,
    state: StateId,
    trial_done: bool,
    session_done: bool,
    transition_rng: ChaCha12Rng,
}

impl Env {
    pub fn new(spec: &TaskSpec) -> Result<Env, EnvError> {
        spec.validate()?;
        let graph = TaskGraph::builtin(spec.structure.graph_name())?;
        let schedule = Schedule::materialize(spec);
        Ok(Env {
            spec: spec.clone(),
            state: graph_root(&graph),
            graph,
            schedule,
            trial: 0,
            trial_done: false,
            session_done: false,
            transition_rng: rng::stream(spec.env_seed, &["env", "transitions"]),
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn trial_index(&self) -> usize {
        self.trial
    }

    pub fn current_state(&self) -> StateId {
        self.state
    }

    pub fn current_goal(&self) -> GoalCondition {
        self.schedule.goals[self.trial]
    }

    pub fn current_p(&self) -> f64 {
        self.schedule.p[self.trial]
    }

    pub fn current_uncertainty(&self) -> Uncertainty {
        self.schedule.labels[self.trial]
    }

    pub fn current_block(&self) -> u32 {
        self.schedule.blocks[self.trial]
    }

    pub fn trial_done(&self) -> bool {
        self.trial_done
    }

    pub fn session_done(&self) -> bool {
        self.session_done
    }

    /// Transition probabilities over the candidate pair for (state, action)
    /// on the current trial.
    pub fn transition_row(&self, s: StateId, a: Action) -> Option<[f64; 2]> {
        self.graph.successors(s, a)?;
        let p = self.schedule.p[self.trial];
        Some([p, 1.0 - p])
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.session_done {
            return Err(EnvError::Protocol("step after session completed".into()));
        }
        if self.trial_done {
            return Err(EnvError::Protocol(
                "step on a finished trial; call advance_trial first".into(),
            ));
        }
        let stage = self.graph.stage_of(self.state);
        if stage == Stage::Terminal {
            return Err(EnvError::Protocol(format!(
                "step from terminal state {}",
                self.state
            )));
        }
        let candidates = self
            .graph
            .successors(self.state, action)
            .ok_or_else(|| EnvError::Protocol(format!("no successors for {}", self.state)))?;
        let p = self.schedule.p[self.trial];
        let u: f64 = self.transition_rng.random();
        let next = if u < p { candidates[0] } else { candidates[1] };
        let next_stage = self.graph.stage_of(next);
        self.state = next;
        if next_stage == Stage::Terminal {
            self.trial_done = true;
            let goal = self.schedule.goals[self.trial];
            let reward = self.graph.goal_reward(goal, next);
            Ok(StepResult {
                next_state: next,
                stage: next_stage,
                reward,
                trial_done: true,
                token_color_collected: self.graph.token_color(next),
            })
        } else {
            Ok(StepResult {
                next_state: next,
                stage: next_stage,
                reward: 0.0,
                trial_done: false,
                token_color_collected: None,
            })
        }
    }

    pub fn advance_trial(&mut self) -> Result<Advance, EnvError> {
        if !self.trial_done {
            return Err(EnvError::Protocol("advance_trial before trial finished".into()));
        }
        if self.session_done {
            return Ok(Advance::SessionComplete);
        }
        self.trial += 1;
        if self.trial >= self.spec.n_trials {
            self.trial = self.spec.n_trials - 1; // keep schedule accessors valid
            self.session_done = true;
            return Ok(Advance::SessionComplete);
        }
        self.state = graph_root(&self.graph);
        self.trial_done = false;
        Ok(Advance::Next)
    }

    /// Action-value pair at `state` under the TRUE transition probability and
    /// the current goal-conditional reward; ties break toward Left.
    pub fn ideal_action(&self, state: StateId) -> (Action, [f64; 2]) {
        ideal_action_at(
            &self.graph,
            self.schedule.p[self.trial],
            self.schedule.goals[self.trial],
            state,
        )
    }

    /// Expected value of the ideal policy from the root for the current trial.
    pub fn max_trial_value(&self) -> f64 {
        let (_, q) = self.ideal_action(self.graph.root());
        q[0].max(q[1])
    }
}

fn graph_root(graph: &TaskGraph) -> StateId {
    graph.root()
}

/// Finite-horizon value backup over the true transition scalar `p`.
///
/// Stage-2 values back up the goal-conditional terminal reward; the stage-1
/// value backs up the stage-2 maxima.
pub fn ideal_action_at(
    graph: &TaskGraph,
    p: f64,
    goal: GoalCondition,
    state: StateId,
) -> (Action, [f64; 2]) {
    let stage = graph.stage_of(state);
    let q = match stage {
        Stage::Terminal => [0.0, 0.0],
        Stage::Two => stage_two_values(graph, p, goal, state),
        Stage::One => {
            let mut q = [0.0, 0.0];
            for a in Action::BOTH {
                let cands = graph.successors(state, a).expect("validated graph");
                let probs = [p, 1.0 - p];
                let mut v = 0.0;
                for (i, &s2) in cands.iter().enumerate() {
                    let q2 = stage_two_values(graph, p, goal, s2);
                    v += probs[i] * q2[0].max(q2[1]);
                }
                q[a.index()] = v;
            }
            q
        }
    };
    let action = if q[1] > q[0] { Action::Right } else { Action::Left };
    (action, q)
}

fn stage_two_values(graph: &TaskGraph, p: f64, goal: GoalCondition, s2: StateId) -> [f64; 2] {
    let mut q = [0.0, 0.0];
    for a in Action::BOTH {
        let cands = graph.successors(s2, a).expect("validated graph");
        let probs = [p, 1.0 - p];
        q[a.index()] = cands
            .iter()
            .zip(probs)
            .map(|(&t, pr)| pr * graph.goal_reward(goal, t))
            .sum();
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::graph::TokenColor;
    use crate::env::spec::{canonical_suite, GoalSchedule, Structure, TaskSpec};

    fn fixed_spec(p: f64, n_trials: usize, seed: u64) -> TaskSpec {
        TaskSpec::new(
            "test",
            Structure::Tree,
            UncertaintyDynamics::Fixed { p },
            n_trials,
            seed,
        )
    }

    #[test]
    fn same_seed_same_schedule() {
        let spec = TaskSpec::new(
            "t",
            Structure::Tree,
            UncertaintyDynamics::default_drift_switch(),
            200,
            99,
        );
        let a = Env::new(&spec).unwrap();
        let b = Env::new(&spec).unwrap();
        assert_eq!(a.schedule().goals, b.schedule().goals);
        assert_eq!(a.schedule().p, b.schedule().p);
    }

    #[test]
    fn degenerate_probability_always_first_successor() {
        let spec = fixed_spec(1.0, 50, 7);
        let mut env = Env::new(&spec).unwrap();
        for _ in 0..50 {
            let s = env.current_state();
            let first = env.graph().successors(s, Action::Left).unwrap()[0];
            let r = env.step(Action::Left).unwrap();
            assert_eq!(r.next_state, first);
            if r.trial_done {
                if env.advance_trial().unwrap() == Advance::SessionComplete {
                    break;
                }
            }
        }
    }

    #[test]
    fn flexible_goal_pays_token_value() {
        // p = 1.0 makes the path deterministic: S1 -L-> S2 -L-> S6 (40, red).
        let mut spec = fixed_spec(1.0, 5, 11);
        spec.goal_schedule = GoalSchedule::Explicit {
            goals: vec![GoalCondition::Flexible; 5],
        };
        let mut env = Env::new(&spec).unwrap();
        env.step(Action::Left).unwrap();
        let r = env.step(Action::Left).unwrap();
        assert_eq!(r.reward, 40.0);
        assert_eq!(r.token_color_collected, Some(TokenColor::Red));
        assert!(r.trial_done);
    }

    #[test]
    fn specific_goal_pays_only_matching_color() {
        let mut spec = fixed_spec(1.0, 5, 11);
        spec.goal_schedule = GoalSchedule::Explicit {
            goals: vec![GoalCondition::Specific(TokenColor::Blue); 5],
        };
        let mut env = Env::new(&spec).unwrap();
        env.step(Action::Left).unwrap();
        let r = env.step(Action::Left).unwrap(); // lands on S6 (red)
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn step_on_terminal_is_protocol_error() {
        let spec = fixed_spec(1.0, 5, 3);
        let mut env = Env::new(&spec).unwrap();
        env.step(Action::Left).unwrap();
        env.step(Action::Left).unwrap();
        assert!(env.step(Action::Left).is_err());
    }

    #[test]
    fn transition_frequency_matches_p() {
        let spec = fixed_spec(0.9, 100_000, 12345);
        let mut env = Env::new(&spec).unwrap();
        let mut firsts = 0usize;
        let mut draws = 0usize;
        loop {
            let s = env.current_state();
            let first = env.graph().successors(s, Action::Left).unwrap()[0];
            let r = env.step(Action::Left).unwrap();
            draws += 1;
            if r.next_state == first {
                firsts += 1;
            }
            if r.trial_done {
                if env.advance_trial().unwrap() == Advance::SessionComplete {
                    break;
                }
            }
            if draws >= 100_000 {
                break;
            }
        }
        let freq = firsts as f64 / draws as f64;
        assert!((freq - 0.9).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn switch_toggles_exactly_at_block_boundaries() {
        let spec = TaskSpec::new(
            "t",
            Structure::Tree,
            UncertaintyDynamics::Switch { low: 0.9, high: 0.5, block: 20 },
            100,
            5,
        );
        let env = Env::new(&spec).unwrap();
        for (t, &p) in env.schedule().p.iter().enumerate() {
            let expected = if (t / 20) % 2 == 0 { 0.9 } else { 0.5 };
            assert_eq!(p, expected, "trial {t}");
        }
    }

    #[test]
    fn drift_stays_within_bounds() {
        let spec = TaskSpec::new(
            "t",
            Structure::Tree,
            UncertaintyDynamics::Drift { start: 0.7, sigma: 0.025, bounds: [0.2, 0.8] },
            10_000,
            21,
        );
        let env = Env::new(&spec).unwrap();
        for &p in &env.schedule().p {
            assert!((0.2..=0.8).contains(&p), "p = {p}");
        }
    }

    #[test]
    fn fixed_dynamics_matrix_constant() {
        let spec = fixed_spec(0.8, 300, 9);
        let env = Env::new(&spec).unwrap();
        assert!(env.schedule().p.iter().all(|&p| p == 0.8));
    }

    #[test]
    fn transition_rows_sum_to_one() {
        let spec = TaskSpec::new(
            "t",
            Structure::Tree,
            UncertaintyDynamics::default_drift(),
            500,
            17,
        );
        let env = Env::new(&spec).unwrap();
        for s in env.graph().states() {
            for a in Action::BOTH {
                if let Some(row) = env.transition_row(s, a) {
                    assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ideal_action_symmetric_case_breaks_left() {
        let mut spec = fixed_spec(0.5, 5, 2);
        spec.goal_schedule = GoalSchedule::Explicit {
            goals: vec![GoalCondition::Flexible; 5],
        };
        let env = Env::new(&spec).unwrap();
        // With p = 0.5 stage-2 value maxima may differ between subtrees, so
        // only assert the tie rule where values match.
        let (a, q) = env.ideal_action(env.graph().root());
        if (q[0] - q[1]).abs() < 1e-12 {
            assert_eq!(a, Action::Left);
        }
    }

    #[test]
    fn ideal_action_matches_policy_enumeration() {
        // Enumerate all stage-1 x stage-2 deterministic policies and compute
        // the exact expected reward of each; the best must equal the backup.
        let mut spec = fixed_spec(0.9, 5, 2);
        spec.goal_schedule = GoalSchedule::Explicit {
            goals: vec![GoalCondition::Specific(TokenColor::Blue); 5],
        };
        let env = Env::new(&spec).unwrap();
        let graph = env.graph();
        let p = 0.9;
        let goal = GoalCondition::Specific(TokenColor::Blue);

        // Policy = root action + an action per stage-2 state.
        let stage2 = graph.states_of_stage(Stage::Two);
        let mut best = f64::NEG_INFINITY;
        for root_a in Action::BOTH {
            let n_assignments = 1usize << stage2.len();
            for mask in 0..n_assignments {
                let mut value = 0.0;
                let cands = graph.successors(graph.root(), root_a).unwrap();
                for (ci, &s2) in cands.iter().enumerate() {
                    let pr = if ci == 0 { p } else { 1.0 - p };
                    let idx = stage2.iter().position(|s| *s == s2).unwrap();
                    let a2 = Action::from_index((mask >> idx) & 1);
                    let t_cands = graph.successors(s2, a2).unwrap();
                    let mut v2 = 0.0;
                    for (ti, &t) in t_cands.iter().enumerate() {
                        let tp = if ti == 0 { p } else { 1.0 - p };
                        v2 += tp * graph.goal_reward(goal, t);
                    }
                    value += pr * v2;
                }
                best = best.max(value);
            }
        }
        let root_value = env.max_trial_value();
        assert!((best - root_value).abs() < 1e-12, "{best} vs {root_value}");
    }

    #[test]
    fn max_trial_value_deterministic_flexible_is_forty() {
        let mut spec = fixed_spec(1.0, 5, 2);
        spec.goal_schedule = GoalSchedule::Explicit {
            goals: vec![GoalCondition::Flexible; 5],
        };
        let env = Env::new(&spec).unwrap();
        assert_eq!(env.max_trial_value(), 40.0);
    }

    #[test]
    fn suite_specs_all_construct() {
        for spec in canonical_suite() {
            Env::new(&spec).unwrap();
        }
    }

    #[test]
    fn advancing_past_end_signals_completion() {
        let spec = fixed_spec(1.0, 2, 1);
        let mut env = Env::new(&spec).unwrap();
        for _ in 0..2 {
            env.step(Action::Left).unwrap();
            env.step(Action::Left).unwrap();
            let _ = env.advance_trial().unwrap();
        }
        assert!(env.session_done());
        assert!(env.step(Action::Left).is_err());
    }
}
