//! Experiment manifest: one JSON file that fully reconstructs a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mdt_core::data::{GeneratorFamily, PriorRange};
use mdt_core::env::TaskSpec;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic {
        n_subjects: usize,
        family: GeneratorFamily,
        session_trials: usize,
        #[serde(default)]
        priors: BTreeMap<String, PriorRange>,
    },
    External {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSource {
    Canonical,
    Files { paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSection {
    pub ddqn_epochs: usize,
    pub meta_epochs: usize,
    pub games_min: usize,
    pub games_max: usize,
    pub pm_k: f64,
    pub pm_n: f64,
    /// Stop PM-DDQN once its likelihood sum beats the fitted PM-pfcRL1
    /// reference for the same subject.
    pub early_stop_from_pfc: bool,
    pub fit_restarts: usize,
    pub fit_sweeps: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            ddqn_epochs: 1_000,
            meta_epochs: 8_000,
            games_min: 200,
            games_max: 400,
            pm_k: 10.0,
            pm_n: 10.0,
            early_stop_from_pfc: true,
            fit_restarts: 3,
            fit_sweeps: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub version: u32,
    pub master_seed: u64,
    pub corpus: CorpusSource,
    pub models: Vec<String>,
    pub tasks: TaskSource,
    /// Trials per frozen evaluation session; None keeps each task's count.
    pub eval_trials: Option<usize>,
    /// Simulation repetitions averaged into each model-side profile of the
    /// recovery analysis.
    pub recovery_reps: usize,
    pub training: TrainingSection,
    pub jobs: usize,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        ExperimentManifest {
            version: MANIFEST_VERSION,
            master_seed: 42,
            corpus: CorpusSource::Synthetic {
                n_subjects: 82,
                family: GeneratorFamily::PfcRl1,
                session_trials: 400,
                priors: BTreeMap::new(),
            },
            models: vec![
                "random".into(),
                "GM-DDQN".into(),
                "PM-DDQN".into(),
                "GM-metaRL".into(),
                "PM-metaRL".into(),
                "PM-pfcRL1".into(),
                "PM-pfcRL2".into(),
            ],
            tasks: TaskSource::Canonical,
            eval_trials: None,
            recovery_reps: 5,
            training: TrainingSection::default(),
            jobs: 1,
        }
    }
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<ExperimentManifest> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: ExperimentManifest =
            serde_json::from_str(&text).with_context(|| "parsing manifest JSON")?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            bail!("unsupported manifest version {}", self.version);
        }
        if self.models.is_empty() {
            bail!("manifest lists no models");
        }
        for m in &self.models {
            if mdt_core::agents::ModelId::parse(m).is_none() {
                bail!(
                    "unknown model {m:?} (expected one of {:?})",
                    mdt_core::agents::ModelId::ALL.map(|m| m.as_str())
                );
            }
        }
        match &self.corpus {
            CorpusSource::Synthetic { n_subjects, session_trials, .. } => {
                if *n_subjects == 0 {
                    bail!("corpus n_subjects must be > 0");
                }
                if *session_trials == 0 {
                    bail!("corpus session_trials must be > 0");
                }
            }
            CorpusSource::External { path } => {
                if path.as_os_str().is_empty() {
                    bail!("external corpus path is empty");
                }
            }
        }
        if self.recovery_reps == 0 {
            bail!("recovery_reps must be > 0");
        }
        if self.training.games_min == 0 || self.training.games_max < self.training.games_min {
            bail!("training games range must satisfy 0 < min <= max");
        }
        Ok(())
    }

    /// Apply the documented desk-scale shrink factors: 8 subjects, 300-trial
    /// sessions, 40 training epochs, 40-80 games per episode, 150-trial
    /// evaluations, and a 2-restart/3-sweep fit budget.
    pub fn apply_desk_scale(&mut self) {
        if let CorpusSource::Synthetic { n_subjects, session_trials, .. } = &mut self.corpus {
            *n_subjects = (*n_subjects).min(8);
            *session_trials = (*session_trials).min(300);
        }
        self.training.ddqn_epochs = self.training.ddqn_epochs.min(40);
        self.training.meta_epochs = self.training.meta_epochs.min(40);
        self.training.games_min = self.training.games_min.min(40);
        self.training.games_max = self.training.games_max.min(80);
        self.training.fit_restarts = self.training.fit_restarts.min(2);
        self.training.fit_sweeps = self.training.fit_sweeps.min(3);
        self.eval_trials = Some(self.eval_trials.unwrap_or(150).min(150));
        self.recovery_reps = self.recovery_reps.min(3);
    }

    /// The task list this manifest runs on.
    pub fn task_specs(&self) -> Result<Vec<TaskSpec>> {
        match &self.tasks {
            TaskSource::Canonical => Ok(mdt_core::env::canonical_suite()),
            TaskSource::Files { paths } => {
                let mut specs = Vec::with_capacity(paths.len());
                for p in paths {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading task spec {}", p.display()))?;
                    specs.push(
                        TaskSpec::from_json(&text)
                            .with_context(|| format!("parsing task spec {}", p.display()))?,
                    );
                }
                if specs.is_empty() {
                    bail!("task file list is empty");
                }
                Ok(specs)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_manifest_is_valid_and_round_trips() {
        let m = ExperimentManifest::default();
        m.validate().unwrap();
        let text = m.to_json();
        let back: ExperimentManifest = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn unknown_model_is_rejected() {
        let mut m = ExperimentManifest::default();
        m.models = vec!["GPT-9000".into()];
        assert!(m.validate().is_err());
    }

    #[test]
    fn desk_scale_shrinks_knobs() {
        let mut m = ExperimentManifest::default();
        m.apply_desk_scale();
        if let CorpusSource::Synthetic { n_subjects, session_trials, .. } = &m.corpus {
            assert_eq!(*n_subjects, 8);
            assert_eq!(*session_trials, 300);
        } else {
            panic!("default corpus is synthetic");
        }
        assert_eq!(m.training.ddqn_epochs, 40);
        assert_eq!(m.eval_trials, Some(150));
    }
}
