//! Output directory layout and small CSV/JSON helpers.
//!
//! Float formatting goes through `{}` (shortest round-trip), so report files
//! are byte-stable for identical inputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Layout {
        Layout { root: root.to_path_buf() }
    }

    pub fn manifest_echo(&self) -> PathBuf {
        self.root.join("manifest_echo.json")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn subject_file(&self, subject_id: &str) -> PathBuf {
        self.corpus_dir().join(format!("{subject_id}.csv"))
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.corpus_dir().join("ground_truth.json")
    }

    pub fn corpus_manifest(&self) -> PathBuf {
        self.corpus_dir().join("corpus_manifest.json")
    }

    pub fn tasks_dir(&self) -> PathBuf {
        self.root.join("tasks")
    }

    pub fn task_file(&self, name: &str) -> PathBuf {
        self.tasks_dir().join(format!("{name}.json"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn bundle_dir(&self, model: &str, subject: Option<&str>) -> PathBuf {
        match subject {
            Some(s) => self.models_dir().join(model).join(s),
            None => self.models_dir().join(model),
        }
    }

    pub fn bundle_file(&self, model: &str, subject: Option<&str>) -> PathBuf {
        self.bundle_dir(model, subject).join("bundle.json")
    }

    pub fn curve_file(&self, model: &str, subject: Option<&str>) -> PathBuf {
        self.bundle_dir(model, subject).join("curve.csv")
    }

    pub fn pfc_reference_file(&self) -> PathBuf {
        self.models_dir().join("pfc_reference.json")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn eval_file(&self, task: &str, model: &str, subject: &str) -> PathBuf {
        self.eval_dir().join(task).join(model).join(format!("{subject}.csv"))
    }

    pub fn recovery_sim_file(&self, model: &str, subject: &str, rep: usize) -> PathBuf {
        self.root
            .join("recovery_sim")
            .join(model)
            .join(format!("{subject}_rep{rep}.csv"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report_file(&self, name: &str) -> PathBuf {
        self.reports_dir().join(name)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Format an optional float; empty cell for undefined markers.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
