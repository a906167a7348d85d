//! Declarative task specifications and the canonical 10-task suite.

use serde::{Deserialize, Serialize};

use crate::env::graph::GoalCondition;
use crate::error::EnvError;

pub const TASK_SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Ladder,
    Tree,
}

impl Structure {
    pub fn graph_name(self) -> &'static str {
        match self {
            Structure::Ladder => "ladder",
            Structure::Tree => "tree",
        }
    }
}

/// How the state-transition probability evolves across trials.
///
/// A single scalar `p` applies to every (state, action) pair of the trial:
/// the first candidate successor is reached with probability `p`, the second
/// with `1 - p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintyDynamics {
    /// Constant transition probability.
    Fixed { p: f64 },
    /// Bounded random walk with reflection at the bounds.
    Drift {
        start: f64,
        sigma: f64,
        bounds: [f64; 2],
    },
    /// Alternate between a low-uncertainty regime (`low` vs `1-low`) and a
    /// high-uncertainty regime every `block` trials, starting low.
    Switch { low: f64, high: f64, block: usize },
    /// Switch regimes whose anchors seed a random walk inside each block.
    DriftSwitch {
        low_anchor: f64,
        high_anchor: f64,
        sigma: f64,
        bounds: [f64; 2],
        block: usize,
    },
}

impl UncertaintyDynamics {
    pub fn default_drift() -> Self {
        UncertaintyDynamics::Drift {
            start: 0.7,
            sigma: 0.025,
            bounds: [0.2, 0.8],
        }
    }

    pub fn default_switch() -> Self {
        UncertaintyDynamics::Switch {
            low: 0.9,
            high: 0.5,
            block: 20,
        }
    }

    pub fn default_drift_switch() -> Self {
        UncertaintyDynamics::DriftSwitch {
            low_anchor: 0.8,
            high_anchor: 0.5,
            sigma: 0.025,
            bounds: [0.2, 0.8],
            block: 20,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let check_p = |p: f64, what: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(EnvError::InvalidSpec(format!("{what} = {p} outside [0, 1]")))
            }
        };
        match self {
            UncertaintyDynamics::Fixed { p } => check_p(*p, "fixed p"),
            UncertaintyDynamics::Drift { start, sigma, bounds } => {
                check_p(*start, "drift start")?;
                check_p(bounds[0], "drift lower bound")?;
                check_p(bounds[1], "drift upper bound")?;
                if bounds[0] >= bounds[1] {
                    return Err(EnvError::InvalidSpec("drift bounds must satisfy lo < hi".into()));
                }
                if !(bounds[0]..=bounds[1]).contains(start) {
                    return Err(EnvError::InvalidSpec("drift start outside bounds".into()));
                }
                if *sigma < 0.0 {
                    return Err(EnvError::InvalidSpec("drift sigma must be >= 0".into()));
                }
                Ok(())
            }
            UncertaintyDynamics::Switch { low, high, block } => {
                check_p(*low, "switch low")?;
                check_p(*high, "switch high")?;
                if *block == 0 {
                    return Err(EnvError::InvalidSpec("switch block must be > 0".into()));
                }
                Ok(())
            }
            UncertaintyDynamics::DriftSwitch {
                low_anchor,
                high_anchor,
                sigma,
                bounds,
                block,
            } => {
                check_p(*low_anchor, "low anchor")?;
                check_p(*high_anchor, "high anchor")?;
                check_p(bounds[0], "drift lower bound")?;
                check_p(bounds[1], "drift upper bound")?;
                if bounds[0] >= bounds[1] {
                    return Err(EnvError::InvalidSpec("drift bounds must satisfy lo < hi".into()));
                }
                for (name, a) in [("low", low_anchor), ("high", high_anchor)] {
                    if !(bounds[0]..=bounds[1]).contains(a) {
                        return Err(EnvError::InvalidSpec(format!(
                            "{name} anchor {a} outside drift bounds"
                        )));
                    }
                }
                if *sigma < 0.0 {
                    return Err(EnvError::InvalidSpec("drift sigma must be >= 0".into()));
                }
                if *block == 0 {
                    return Err(EnvError::InvalidSpec("switch block must be > 0".into()));
                }
                Ok(())
            }
        }
    }
}

/// Goal sequence: drawn i.i.d. uniform over the four conditions from the
/// environment's schedule stream, or given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalSchedule {
    UniformIid,
    Explicit { goals: Vec<GoalCondition> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub version: u32,
    pub name: String,
    pub structure: Structure,
    pub dynamics: UncertaintyDynamics,
    pub goal_schedule: GoalSchedule,
    pub n_trials: usize,
    pub env_seed: u64,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        structure: Structure,
        dynamics: UncertaintyDynamics,
        n_trials: usize,
        env_seed: u64,
    ) -> TaskSpec {
        TaskSpec {
            version: TASK_SPEC_VERSION,
            name: name.into(),
            structure,
            dynamics,
            goal_schedule: GoalSchedule::UniformIid,
            n_trials,
            env_seed,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.version != TASK_SPEC_VERSION {
            return Err(EnvError::InvalidSpec(format!(
                "unsupported task spec version {}",
                self.version
            )));
        }
        if self.n_trials == 0 {
            return Err(EnvError::InvalidSpec("n_trials must be > 0".into()));
        }
        self.dynamics.validate()?;
        if let GoalSchedule::Explicit { goals } = &self.goal_schedule {
            if goals.len() < self.n_trials {
                return Err(EnvError::InvalidSpec(format!(
                    "explicit goal schedule has {} entries, need >= {}",
                    goals.len(),
                    self.n_trials
                )));
            }
            if goals
                .iter()
                .any(|g| matches!(g, GoalCondition::Specific(super::graph::TokenColor::None)))
            {
                return Err(EnvError::InvalidSpec(
                    "specific goal may not target the colorless token".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn with_env_seed(&self, seed: u64) -> TaskSpec {
        let mut spec = self.clone();
        spec.env_seed = seed;
        spec
    }

    pub fn with_trials(&self, n_trials: usize) -> TaskSpec {
        let mut spec = self.clone();
        spec.n_trials = n_trials;
        spec
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("task spec serializes")
    }

    pub fn from_json(s: &str) -> Result<TaskSpec, EnvError> {
        let spec: TaskSpec =
            serde_json::from_str(s).map_err(|e| EnvError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Default trial count for the canonical suite.
pub const SUITE_TRIALS: usize = 400;

/// The ten-task battery: every structure x dynamics combination plus two
/// anchor tasks. T1 follows the earlier two-step paradigm (ladder, fixed
/// 0.7 transitions); T10 is the original two-stage task (tree, switching
/// 0.9/0.5 regimes every 20 trials).
pub fn canonical_suite() -> Vec<TaskSpec> {
    let fixed = |p: f64| UncertaintyDynamics::Fixed { p };
    let specs = vec![
        ("T01", Structure::Ladder, fixed(0.7)),
        ("T02", Structure::Ladder, fixed(0.9)),
        ("T03", Structure::Ladder, UncertaintyDynamics::default_drift()),
        ("T04", Structure::Ladder, UncertaintyDynamics::default_switch()),
        ("T05", Structure::Ladder, UncertaintyDynamics::default_drift_switch()),
        ("T06", Structure::Tree, fixed(0.9)),
        ("T07", Structure::Tree, UncertaintyDynamics::default_drift()),
        (
            "T08",
            Structure::Tree,
            UncertaintyDynamics::Switch { low: 0.9, high: 0.5, block: 40 },
        ),
        ("T09", Structure::Tree, UncertaintyDynamics::default_drift_switch()),
        ("T10", Structure::Tree, UncertaintyDynamics::default_switch()),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (name, structure, dynamics))| {
            TaskSpec::new(name, structure, dynamics, SUITE_TRIALS, 1_000 + i as u64)
        })
        .collect()
}

/// The original two-stage task used for training and corpus generation.
pub fn original_task() -> TaskSpec {
    canonical_suite().pop().expect("suite is nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_has_ten_tasks() {
        assert_eq!(canonical_suite().len(), 10);
    }

    #[test]
    fn t10_is_tree_switch() {
        let suite = canonical_suite();
        let t10 = &suite[9];
        assert_eq!(t10.name, "T10");
        assert_eq!(t10.structure, Structure::Tree);
        assert_eq!(
            t10.dynamics,
            UncertaintyDynamics::Switch { low: 0.9, high: 0.5, block: 20 }
        );
    }

    #[test]
    fn suite_covers_full_grid() {
        use std::collections::BTreeSet;
        let mut combos = BTreeSet::new();
        for spec in canonical_suite() {
            let dyn_kind = match spec.dynamics {
                UncertaintyDynamics::Fixed { .. } => "fixed",
                UncertaintyDynamics::Drift { .. } => "drift",
                UncertaintyDynamics::Switch { .. } => "switch",
                UncertaintyDynamics::DriftSwitch { .. } => "drift_switch",
            };
            combos.insert((spec.structure, dyn_kind));
        }
        assert_eq!(combos.len(), 8, "all structure x dynamics combinations present");
    }

    #[test]
    fn spec_json_round_trip() {
        for spec in canonical_suite() {
            let json = spec.to_json();
            let back = TaskSpec::from_json(&json).unwrap();
            assert_eq!(spec, back);
        }
    }

    #[test]
    fn short_explicit_schedule_is_rejected() {
        let mut spec = original_task();
        spec.goal_schedule = GoalSchedule::Explicit { goals: vec![GoalCondition::Flexible; 3] };
        spec.n_trials = 10;
        assert!(spec.validate().is_err());
    }
}
