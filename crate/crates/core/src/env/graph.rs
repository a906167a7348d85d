//! Task graph: states, stages, candidate successors, and tokens.
//!
//! The two default layouts (tree and ladder) are loaded from an embedded
//! data file, `assets/graphs.json`. Both are two-stage tasks: a single root
//! state, a layer of intermediate states, and a terminal layer of token
//! states worth 0/10/20/40 units of money. The tree layout gives each root
//! action a disjoint pair of intermediate states; the ladder layout makes
//! the two root actions share one intermediate state.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::EnvError;

/// Hard cap on the state count; also the width of one-hot state encodings,
/// so graphs of different sizes share an input space.
pub const MAX_STATES: usize = 9;

/// Reward alphabet for terminal tokens.
pub const REWARD_SET: [u32; 4] = [0, 10, 20, 40];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub u8);

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Parse "S1".."S9" (1-based display names).
    pub fn parse(name: &str) -> Option<StateId> {
        let n: u8 = name.strip_prefix('S')?.parse().ok()?;
        if (1..=MAX_STATES as u8).contains(&n) {
            Some(StateId(n - 1))
        } else {
            None
        }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0 + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub const BOTH: [Action; 2] = [Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Action {
        if i == 0 {
            Action::Left
        } else {
            Action::Right
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Left => "L",
            Action::Right => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        match s {
            "L" => Some(Action::Left),
            "R" => Some(Action::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    One,
    Two,
    Terminal,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Terminal => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenColor {
    None,
    Red,
    Blue,
    Yellow,
}

impl TokenColor {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenColor::None => "none",
            TokenColor::Red => "red",
            TokenColor::Blue => "blue",
            TokenColor::Yellow => "yellow",
        }
    }

    pub fn parse(s: &str) -> Option<TokenColor> {
        match s {
            "none" => Some(TokenColor::None),
            "red" => Some(TokenColor::Red),
            "blue" => Some(TokenColor::Blue),
            "yellow" => Some(TokenColor::Yellow),
            _ => None,
        }
    }
}

/// Per-trial goal condition: any token pays, or only one color pays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalCondition {
    Flexible,
    Specific(TokenColor),
}

/// Number of distinct goal conditions (flexible + three specific colors).
pub const N_GOALS: usize = 4;

impl GoalCondition {
    pub const ALL: [GoalCondition; N_GOALS] = [
        GoalCondition::Flexible,
        GoalCondition::Specific(TokenColor::Red),
        GoalCondition::Specific(TokenColor::Blue),
        GoalCondition::Specific(TokenColor::Yellow),
    ];

    pub fn index(self) -> usize {
        match self {
            GoalCondition::Flexible => 0,
            GoalCondition::Specific(TokenColor::Red) => 1,
            GoalCondition::Specific(TokenColor::Blue) => 2,
            GoalCondition::Specific(TokenColor::Yellow) => 3,
            GoalCondition::Specific(TokenColor::None) => 0, // rejected at validation
        }
    }

    pub fn is_specific(self) -> bool {
        matches!(self, GoalCondition::Specific(_))
    }

    pub fn label(self) -> String {
        match self {
            GoalCondition::Flexible => "flexible".to_string(),
            GoalCondition::Specific(c) => format!("specific:{}", c.as_str()),
        }
    }

    pub fn parse(s: &str) -> Option<GoalCondition> {
        if s == "flexible" {
            return Some(GoalCondition::Flexible);
        }
        let color = TokenColor::parse(s.strip_prefix("specific:")?)?;
        if color == TokenColor::None {
            None
        } else {
            Some(GoalCondition::Specific(color))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    n_states: usize,
    stages: Vec<Stage>,
    successors: BTreeMap<(StateId, Action), [StateId; 2]>,
    token_value: BTreeMap<StateId, u32>,
    token_color: BTreeMap<StateId, TokenColor>,
    root: StateId,
}

#[derive(Deserialize)]
struct GraphFile {
    version: u32,
    graphs: BTreeMap<String, RawGraph>,
}

#[derive(Deserialize)]
struct RawGraph {
    states: Vec<String>,
    stages: BTreeMap<String, u8>,
    edges: Vec<RawEdge>,
    tokens: BTreeMap<String, RawToken>,
}

#[derive(Deserialize)]
struct RawEdge {
    from: String,
    action: String,
    candidates: Vec<String>,
}

#[derive(Deserialize)]
struct RawToken {
    value: u32,
    color: String,
}

const GRAPHS_JSON: &str = include_str!("../../assets/graphs.json");

impl TaskGraph {
    /// Load one of the embedded layouts ("tree" or "ladder").
    pub fn builtin(name: &str) -> Result<TaskGraph, EnvError> {
        let file: GraphFile = serde_json::from_str(GRAPHS_JSON)
            .map_err(|e| EnvError::InvalidGraph(format!("embedded graph file: {e}")))?;
        if file.version != 1 {
            return Err(EnvError::InvalidGraph(format!(
                "unsupported graph file version {}",
                file.version
            )));
        }
        let raw = file
            .graphs
            .get(name)
            .ok_or_else(|| EnvError::InvalidGraph(format!("no builtin graph named {name:?}")))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: &RawGraph) -> Result<TaskGraph, EnvError> {
        let n_states = raw.states.len();
        if n_states == 0 || n_states > MAX_STATES {
            return Err(EnvError::InvalidGraph(format!(
                "state count {n_states} out of range 1..={MAX_STATES}"
            )));
        }
        let mut stages = Vec::with_capacity(n_states);
        for name in &raw.states {
            let id = StateId::parse(name)
                .ok_or_else(|| EnvError::InvalidGraph(format!("bad state name {name:?}")))?;
            if id.index() != stages.len() {
                return Err(EnvError::InvalidGraph(format!(
                    "state {name} out of order (expected S{})",
                    stages.len() + 1
                )));
            }
            let stage = match raw.stages.get(name) {
                Some(1) => Stage::One,
                Some(2) => Stage::Two,
                Some(3) => Stage::Terminal,
                other => {
                    return Err(EnvError::InvalidGraph(format!(
                        "state {name} has invalid stage {other:?}"
                    )))
                }
            };
            stages.push(stage);
        }

        let mut successors = BTreeMap::new();
        for edge in &raw.edges {
            let from = StateId::parse(&edge.from)
                .ok_or_else(|| EnvError::InvalidGraph(format!("bad edge source {:?}", edge.from)))?;
            let action = Action::parse(&edge.action)
                .ok_or_else(|| EnvError::InvalidGraph(format!("bad action {:?}", edge.action)))?;
            if edge.candidates.len() != 2 {
                return Err(EnvError::InvalidGraph(format!(
                    "({from}, {}) has {} candidate successors, expected exactly 2",
                    action.as_str(),
                    edge.candidates.len()
                )));
            }
            let c0 = StateId::parse(&edge.candidates[0]).ok_or_else(|| {
                EnvError::InvalidGraph(format!("bad candidate {:?}", edge.candidates[0]))
            })?;
            let c1 = StateId::parse(&edge.candidates[1]).ok_or_else(|| {
                EnvError::InvalidGraph(format!("bad candidate {:?}", edge.candidates[1]))
            })?;
            if successors.insert((from, action), [c0, c1]).is_some() {
                return Err(EnvError::InvalidGraph(format!(
                    "duplicate edge ({from}, {})",
                    action.as_str()
                )));
            }
        }

        let mut token_value = BTreeMap::new();
        let mut token_color = BTreeMap::new();
        for (name, tok) in &raw.tokens {
            let id = StateId::parse(name)
                .ok_or_else(|| EnvError::InvalidGraph(format!("bad token state {name:?}")))?;
            let color = TokenColor::parse(&tok.color)
                .ok_or_else(|| EnvError::InvalidGraph(format!("bad token color {:?}", tok.color)))?;
            token_value.insert(id, tok.value);
            token_color.insert(id, color);
        }

        let graph = TaskGraph {
            n_states,
            stages,
            successors,
            token_value,
            token_color,
            root: StateId(0),
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Check the structural invariants; errors name the offending state/action.
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.stages[self.root.index()] != Stage::One {
            return Err(EnvError::InvalidGraph("root state is not stage 1".into()));
        }
        for (idx, &stage) in self.stages.iter().enumerate() {
            let state = StateId(idx as u8);
            match stage {
                Stage::One | Stage::Two => {
                    let want = if stage == Stage::One { Stage::Two } else { Stage::Terminal };
                    for action in Action::BOTH {
                        let cands = self.successors.get(&(state, action)).ok_or_else(|| {
                            EnvError::InvalidGraph(format!(
                                "missing successor pair for ({state}, {})",
                                action.as_str()
                            ))
                        })?;
                        for &c in cands {
                            if c.index() >= self.n_states {
                                return Err(EnvError::InvalidGraph(format!(
                                    "({state}, {}) points at out-of-range state {c}",
                                    action.as_str()
                                )));
                            }
                            if self.stages[c.index()] != want {
                                return Err(EnvError::InvalidGraph(format!(
                                    "({state}, {}) successor {c} is not stage {}",
                                    action.as_str(),
                                    want.number()
                                )));
                            }
                        }
                    }
                }
                Stage::Terminal => {
                    let value = self.token_value.get(&state).ok_or_else(|| {
                        EnvError::InvalidGraph(format!("terminal {state} has no token value"))
                    })?;
                    if !REWARD_SET.contains(value) {
                        return Err(EnvError::InvalidGraph(format!(
                            "terminal {state} token value {value} outside reward set"
                        )));
                    }
                    let color = self.token_color.get(&state).ok_or_else(|| {
                        EnvError::InvalidGraph(format!("terminal {state} has no token color"))
                    })?;
                    match (*value, color) {
                        (0, TokenColor::None) => {}
                        (0, _) | (_, TokenColor::None) => {
                            return Err(EnvError::InvalidGraph(format!(
                                "terminal {state}: zero tokens must be colorless and vice versa"
                            )));
                        }
                        _ => {}
                    }
                    for action in Action::BOTH {
                        if self.successors.contains_key(&(state, action)) {
                            return Err(EnvError::InvalidGraph(format!(
                                "terminal {state} must not have successors"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn root(&self) -> StateId {
        self.root
    }

    pub fn stage_of(&self, s: StateId) -> Stage {
        self.stages[s.index()]
    }

    pub fn successors(&self, s: StateId, a: Action) -> Option<[StateId; 2]> {
        self.successors.get(&(s, a)).copied()
    }

    pub fn token_value(&self, s: StateId) -> Option<u32> {
        self.token_value.get(&s).copied()
    }

    pub fn token_color(&self, s: StateId) -> Option<TokenColor> {
        self.token_color.get(&s).copied()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.n_states).map(|i| StateId(i as u8))
    }

    pub fn states_of_stage(&self, stage: Stage) -> Vec<StateId> {
        self.states().filter(|s| self.stage_of(*s) == stage).collect()
    }

    /// Reward paid for landing on `terminal` under `goal`: specific goals pay
    /// only the matching color, flexible goals pay any token value.
    pub fn goal_reward(&self, goal: GoalCondition, terminal: StateId) -> f64 {
        let value = self.token_value.get(&terminal).copied().unwrap_or(0);
        match goal {
            GoalCondition::Flexible => f64::from(value),
            GoalCondition::Specific(color) => {
                if self.token_color.get(&terminal) == Some(&color) {
                    f64::from(value)
                } else {
                    0.0
                }
            }
        }
    }
}
