//! Two-stage Markov decision task environment.

mod graph;
mod spec;
mod state;

pub use graph::{
    Action, GoalCondition, Stage, StateId, TaskGraph, TokenColor, MAX_STATES, N_GOALS, REWARD_SET,
};
pub use spec::{
    canonical_suite, original_task, GoalSchedule, Structure, TaskSpec, UncertaintyDynamics,
    SUITE_TRIALS, TASK_SPEC_VERSION,
};
pub use state::{ideal_action_at, Advance, Env, Schedule, StepResult, Uncertainty};
