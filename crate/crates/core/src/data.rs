//! Behavioral data model: per-trial records, the versioned CSV schema,
//! synthetic-subject generation, and structural validation against a task.
//!
//! Files carry a `# mdt-behavior-csv v1` marker line and a few `# key=value`
//! metadata lines before the header. Fields never contain commas or quotes,
//! so rows are plain comma joins; readers report schema problems with the
//! 1-based row number of the offending line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, PfcAgent, PfcParams, PfcVariant, RandomAgent, SarsaSoftmaxAgent};
use crate::env::{Action, Env, GoalCondition, Stage, StateId, Structure, TaskSpec, Uncertainty};
use crate::error::DataError;
use crate::rng;

pub const DATA_SCHEMA_MARKER: &str = "# mdt-behavior-csv v1";
const HEADER: &str = "subject_id,trial_index,goal,uncertainty,s1,a1,s2,a2,s3,reward,block";

/// One trial: the full state/action trajectory plus the trial's conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorRecord {
    pub subject_id: String,
    pub trial_index: usize,
    pub goal: GoalCondition,
    pub uncertainty: Uncertainty,
    pub s1: StateId,
    pub a1: Action,
    pub s2: StateId,
    pub a2: Action,
    pub s3: StateId,
    pub reward: u32,
    pub block: u32,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { family: String, master_seed: u64 },
    External { file_hash: String },
}

/// Reference to the task a dataset was recorded on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRef {
    pub name: String,
    pub structure: Structure,
    pub env_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    pub subject_id: String,
    pub records: Vec<BehaviorRecord>,
    pub task: TaskRef,
    pub provenance: Provenance,
}

impl SubjectDataset {
    pub fn n_trials(&self) -> usize {
        self.records.len()
    }

    /// Serialize to the versioned CSV text.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{DATA_SCHEMA_MARKER}");
        let _ = writeln!(out, "# subject={}", self.subject_id);
        let _ = writeln!(out, "# task={}", self.task.name);
        let structure = match self.task.structure {
            Structure::Ladder => "ladder",
            Structure::Tree => "tree",
        };
        let _ = writeln!(out, "# structure={structure}");
        let _ = writeln!(out, "# env_seed={}", self.task.env_seed);
        match &self.provenance {
            Provenance::Synthetic { family, master_seed } => {
                let _ = writeln!(
                    out,
                    "# provenance=synthetic family={family} master_seed={master_seed}"
                );
            }
            Provenance::External { file_hash } => {
                let _ = writeln!(out, "# provenance=external hash={file_hash}");
            }
        }
        let _ = writeln!(out, "{HEADER}");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.subject_id,
                r.trial_index,
                r.goal.label(),
                r.uncertainty.as_str(),
                r.s1.0 + 1,
                r.a1.as_str(),
                r.s2.0 + 1,
                r.a2.as_str(),
                r.s3.0 + 1,
                r.reward,
                r.block,
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<SubjectDataset, DataError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(DataError::Empty)?;
        if first.trim() != DATA_SCHEMA_MARKER {
            return Err(DataError::Schema {
                row: 1,
                message: format!("expected marker {DATA_SCHEMA_MARKER:?}, found {first:?}"),
            });
        }
        let mut meta: BTreeMap<String, String> = BTreeMap::new();
        let mut header_seen = false;
        let mut records = Vec::new();
        for (idx, line) in lines {
            let row = idx + 1;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for token in rest.split_whitespace() {
                    if let Some((k, v)) = token.split_once('=') {
                        meta.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            if !header_seen {
                if line != HEADER {
                    return Err(DataError::Schema { row, message: format!("bad header: {line:?}") });
                }
                header_seen = true;
                continue;
            }
            records.push(parse_record(line, row)?);
        }
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, r) in records.iter().enumerate() {
            if r.trial_index != i {
                return Err(DataError::Schema {
                    row: 0,
                    message: format!(
                        "non-dense trial index: expected {i}, found {} for subject {}",
                        r.trial_index, r.subject_id
                    ),
                });
            }
        }
        let subject_id = records[0].subject_id.clone();
        let structure = match meta.get("structure").map(String::as_str) {
            Some("ladder") => Structure::Ladder,
            Some("tree") | None => Structure::Tree,
            Some(other) => {
                return Err(DataError::Schema {
                    row: 0,
                    message: format!("unknown structure {other:?}"),
                })
            }
        };
        let provenance = match meta.get("provenance").map(String::as_str) {
            Some("synthetic") => Provenance::Synthetic {
                family: meta.get("family").cloned().unwrap_or_default(),
                master_seed: meta.get("master_seed").and_then(|s| s.parse().ok()).unwrap_or(0),
            },
            _ => Provenance::External { file_hash: meta.get("hash").cloned().unwrap_or_default() },
        };
        Ok(SubjectDataset {
            subject_id,
            records,
            task: TaskRef {
                name: meta.get("task").cloned().unwrap_or_default(),
                structure,
                env_seed: meta.get("env_seed").and_then(|s| s.parse().ok()).unwrap_or(0),
            },
            provenance,
        })
    }
}

fn parse_record(line: &str, row: usize) -> Result<BehaviorRecord, DataError> {
    let err = |message: String| DataError::Schema { row, message };
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 11 {
        return Err(err(format!("expected 11 fields, found {}", fields.len())));
    }
    let state = |s: &str, what: &str| -> Result<StateId, DataError> {
        let n: u8 = s.parse().map_err(|_| err(format!("{what}: bad state {s:?}")))?;
        if n == 0 || n as usize > crate::env::MAX_STATES {
            return Err(err(format!("{what}: state {n} out of range")));
        }
        Ok(StateId(n - 1))
    };
    let action = |s: &str, what: &str| -> Result<Action, DataError> {
        Action::parse(s).ok_or_else(|| err(format!("{what}: bad action {s:?}")))
    };
    let reward: u32 = fields[9].parse().map_err(|_| err(format!("bad reward {:?}", fields[9])))?;
    if !crate::env::REWARD_SET.contains(&reward) {
        return Err(err(format!("reward {reward} outside the reward set")));
    }
    Ok(BehaviorRecord {
        subject_id: fields[0].to_string(),
        trial_index: fields[1].parse().map_err(|_| err(format!("bad trial index {:?}", fields[1])))?,
        goal: GoalCondition::parse(fields[2]).ok_or_else(|| err(format!("bad goal {:?}", fields[2])))?,
        uncertainty: Uncertainty::parse(fields[3])
            .ok_or_else(|| err(format!("bad uncertainty {:?}", fields[3])))?,
        s1: state(fields[4], "s1")?,
        a1: action(fields[5], "a1")?,
        s2: state(fields[6], "s2")?,
        a2: action(fields[7], "a2")?,
        s3: state(fields[8], "s3")?,
        reward,
        block: fields[10].parse().map_err(|_| err(format!("bad block {:?}", fields[10])))?,
    })
}

pub fn save_dataset(ds: &SubjectDataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, ds.to_csv())
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

pub fn load_dataset(path: &Path) -> Result<SubjectDataset, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    SubjectDataset::from_csv(&text)
}

/// Stable content hash of a dataset file (FNV-1a over bytes, hex).
pub fn file_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

// ---------------------------------------------------------------------------
// Synthetic subjects
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorFamily {
    PfcRl1,
    SarsaSoftmax,
    Random,
    /// One third arbitration subjects, one third SARSA-only, one third random.
    Mixed,
}

impl GeneratorFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorFamily::PfcRl1 => "pfc_rl1",
            GeneratorFamily::SarsaSoftmax => "sarsa_softmax",
            GeneratorFamily::Random => "random",
            GeneratorFamily::Mixed => "mixed",
        }
    }
}

/// Uniform prior range for one generator parameter.
pub type PriorRange = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectGeneratorConfig {
    pub n_subjects: usize,
    pub family: GeneratorFamily,
    /// Uniform priors per parameter name; missing names use the family
    /// defaults.
    pub priors: BTreeMap<String, PriorRange>,
    pub session_trials: usize,
    pub master_seed: u64,
    pub base_task: TaskSpec,
}

impl SubjectGeneratorConfig {
    pub fn new(family: GeneratorFamily, master_seed: u64) -> SubjectGeneratorConfig {
        SubjectGeneratorConfig {
            n_subjects: 82,
            family,
            priors: default_priors(),
            session_trials: 400,
            master_seed,
            base_task: crate::env::original_task(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_subjects == 0 {
            return Err(DataError::InvalidConfig("n_subjects must be > 0".into()));
        }
        if self.session_trials == 0 {
            return Err(DataError::InvalidConfig("session_trials must be > 0".into()));
        }
        for (name, (lo, hi)) in &self.priors {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(DataError::InvalidConfig(format!(
                    "prior for {name}: [{lo}, {hi}] is not a valid range"
                )));
            }
            if *lo < 0.0 {
                return Err(DataError::InvalidConfig(format!(
                    "prior for {name} goes below its domain (negative values)"
                )));
            }
        }
        self.base_task.validate()?;
        Ok(())
    }
}

/// Dispersed defaults: wide enough that subjects differ visibly in their
/// model-based lean, decisiveness, and learning speed.
pub fn default_priors() -> BTreeMap<String, PriorRange> {
    BTreeMap::from([
        ("sarsa_alpha".to_string(), (0.05, 0.5)),
        ("forward_eta".to_string(), (0.1, 0.7)),
        ("inv_temp".to_string(), (0.08, 0.35)),
        ("a_alpha".to_string(), (0.2, 3.0)),
        ("a_beta".to_string(), (0.2, 3.0)),
        ("rpe_threshold".to_string(), (2.0, 8.0)),
        ("spe_threshold".to_string(), (0.05, 0.3)),
    ])
}

/// Hidden true parameters of a generated subject, stored separately from
/// the behavioral files so fitting code can never see them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub subject_id: String,
    pub family: String,
    pub params: BTreeMap<String, f64>,
}

fn draw(
    priors: &BTreeMap<String, PriorRange>,
    name: &str,
    default: f64,
    rng: &mut impl rand::Rng,
) -> f64 {
    match priors.get(name) {
        Some(&(lo, hi)) if hi > lo => rng.random_range(lo..hi),
        Some(&(lo, _)) => lo,
        None => default,
    }
}

/// Generate the synthetic corpus: each subject's parameters are drawn from
/// the priors, and the generating agent plays the base task for a full
/// session.
pub fn generate_subjects(
    cfg: &SubjectGeneratorConfig,
) -> Result<Vec<(SubjectDataset, GroundTruth)>, DataError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_subjects);
    for i in 0..cfg.n_subjects {
        let subject_id = format!("subj_{i:03}");
        let family = match cfg.family {
            GeneratorFamily::Mixed => match i % 3 {
                0 => GeneratorFamily::PfcRl1,
                1 => GeneratorFamily::SarsaSoftmax,
                _ => GeneratorFamily::Random,
            },
            f => f,
        };
        let mut param_rng = rng::stream(cfg.master_seed, &["gen", "params", &subject_id]);
        let defaults = PfcParams::default();
        let (mut agent, truth): (Box<dyn Agent>, GroundTruth) = match family {
            GeneratorFamily::PfcRl1 => {
                let mut params = defaults;
                params.sarsa_alpha =
                    draw(&cfg.priors, "sarsa_alpha", defaults.sarsa_alpha, &mut param_rng);
                params.forward_eta =
                    draw(&cfg.priors, "forward_eta", defaults.forward_eta, &mut param_rng);
                params.inv_temp = draw(&cfg.priors, "inv_temp", defaults.inv_temp, &mut param_rng);
                params.a_alpha = draw(&cfg.priors, "a_alpha", defaults.a_alpha, &mut param_rng);
                params.b_alpha = draw(&cfg.priors, "b_alpha", defaults.b_alpha, &mut param_rng);
                params.a_beta = draw(&cfg.priors, "a_beta", defaults.a_beta, &mut param_rng);
                params.b_beta = draw(&cfg.priors, "b_beta", defaults.b_beta, &mut param_rng);
                params.rpe_threshold =
                    draw(&cfg.priors, "rpe_threshold", defaults.rpe_threshold, &mut param_rng);
                params.spe_threshold =
                    draw(&cfg.priors, "spe_threshold", defaults.spe_threshold, &mut param_rng);
                let truth = GroundTruth {
                    subject_id: subject_id.clone(),
                    family: family.as_str().to_string(),
                    params: params.to_map(),
                };
                (
                    Box::new(PfcAgent::new(PfcVariant::Threshold, params)) as Box<dyn Agent>,
                    truth,
                )
            }
            GeneratorFamily::SarsaSoftmax => {
                let alpha = draw(&cfg.priors, "sarsa_alpha", 0.15, &mut param_rng);
                let tau = draw(&cfg.priors, "inv_temp", 0.2, &mut param_rng);
                let truth = GroundTruth {
                    subject_id: subject_id.clone(),
                    family: family.as_str().to_string(),
                    params: BTreeMap::from([
                        ("sarsa_alpha".to_string(), alpha),
                        ("inv_temp".to_string(), tau),
                    ]),
                };
                (Box::new(SarsaSoftmaxAgent::new(alpha, tau)) as Box<dyn Agent>, truth)
            }
            GeneratorFamily::Random => {
                let truth = GroundTruth {
                    subject_id: subject_id.clone(),
                    family: family.as_str().to_string(),
                    params: BTreeMap::new(),
                };
                (Box::new(RandomAgent::new()) as Box<dyn Agent>, truth)
            }
            GeneratorFamily::Mixed => unreachable!("resolved above"),
        };

        let env_seed = rng::stable_hash(cfg.master_seed, &["gen", "env", &subject_id]);
        let spec = cfg.base_task.with_env_seed(env_seed).with_trials(cfg.session_trials);
        let mut env = Env::new(&spec)?;
        let mut act_rng = rng::stream(cfg.master_seed, &["gen", "act", &subject_id]);
        let records =
            crate::training::run_session(agent.as_mut(), &mut env, &mut act_rng, &subject_id)
                .map_err(|e| DataError::InvalidConfig(e.to_string()))?
                .records;
        let dataset = SubjectDataset {
            subject_id: subject_id.clone(),
            records,
            task: TaskRef { name: spec.name.clone(), structure: spec.structure, env_seed },
            provenance: Provenance::Synthetic {
                family: family.as_str().to_string(),
                master_seed: cfg.master_seed,
            },
        };
        out.push((dataset, truth));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Validation against a task
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub row: usize,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural check of every record against the task graph: stages, legal
/// successor candidates, reward alphabet, and dense trial indices.
pub fn validate_against_task(ds: &SubjectDataset, spec: &TaskSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let graph = match crate::env::TaskGraph::builtin(spec.structure.graph_name()) {
        Ok(g) => g,
        Err(e) => {
            report.violations.push(Violation { row: 0, kind: "graph", message: e.to_string() });
            return report;
        }
    };
    for (i, r) in ds.records.iter().enumerate() {
        let row = i + 1;
        let mut push = |kind: &'static str, message: String| {
            report.violations.push(Violation { row, kind, message });
        };
        if r.trial_index != i {
            push("non-dense index", format!("expected trial {i}, found {}", r.trial_index));
        }
        for (state, want, what) in [
            (r.s1, Stage::One, "s1"),
            (r.s2, Stage::Two, "s2"),
            (r.s3, Stage::Terminal, "s3"),
        ] {
            if state.index() >= graph.n_states() {
                push("unknown state", format!("{what}={state} not in graph"));
            } else if graph.stage_of(state) != want {
                push(
                    "stage mismatch",
                    format!(
                        "{what}={state} is stage {}, expected {}",
                        graph.stage_of(state).number(),
                        want.number()
                    ),
                );
            }
        }
        if r.s1.index() < graph.n_states() && r.s2.index() < graph.n_states() {
            if let Some(c) = graph.successors(r.s1, r.a1) {
                if !c.contains(&r.s2) {
                    push("illegal transition", format!("s2={} not a candidate of (s1, a1)", r.s2));
                }
            }
        }
        if r.s2.index() < graph.n_states() && r.s3.index() < graph.n_states() {
            if let Some(c) = graph.successors(r.s2, r.a2) {
                if !c.contains(&r.s3) {
                    push("illegal transition", format!("s3={} not a candidate of (s2, a2)", r.s3));
                }
            }
        }
        if !crate::env::REWARD_SET.contains(&r.reward) {
            push("bad reward", format!("reward {} outside the reward set", r.reward));
        } else if r.s3.index() < graph.n_states() && graph.stage_of(r.s3) == Stage::Terminal {
            let expected = graph.goal_reward(r.goal, r.s3) as u32;
            if r.reward != expected {
                push(
                    "reward mismatch",
                    format!(
                        "reward {} but goal-conditional value of {} is {expected}",
                        r.reward, r.s3
                    ),
                );
            }
        }
    }
    report
}
