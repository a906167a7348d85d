//! `report`: aggregate the battery reports into figure-shaped CSVs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::agents_io::load_bundle;
use crate::layout::{write_text, Layout};
use crate::manifest::ExperimentManifest;

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading report {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| anyhow::anyhow!("{} is empty", path.display()))?
        .split(',')
        .map(String::from)
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    Ok((header, rows))
}

fn col(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow::anyhow!("column {name:?} missing"))
}

pub fn run(manifest: &ExperimentManifest, out: &Path) -> Result<()> {
    let layout = Layout::new(out);
    if !layout.reports_dir().exists() {
        bail!("no reports directory under {} (run `battery` first)", out.display());
    }

    let (bh, brows) = read_csv(&layout.report_file("behavior_metrics.csv"))?;
    if brows.is_empty() {
        bail!("behavior_metrics.csv has no rows");
    }
    let (task_i, model_i) = (col(&bh, "task")?, col(&bh, "model")?);
    let nr_i = col(&bh, "normalized_reward")?;
    let cons_i = col(&bh, "choice_consistency")?;

    let mut tasks: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    for r in &brows {
        if !tasks.contains(&r[task_i]) {
            tasks.push(r[task_i].clone());
        }
        if !models.contains(&r[model_i]) {
            models.push(r[model_i].clone());
        }
    }

    // FAIL flags per (task, model) from the t-test table.
    let mut fails: BTreeMap<(String, String), String> = BTreeMap::new();
    if layout.report_file("ttests.csv").exists() {
        let (th, trows) = read_csv(&layout.report_file("ttests.csv"))?;
        let (t_task, t_model, t_fail) = (col(&th, "task")?, col(&th, "model")?, col(&th, "fail")?);
        for r in &trows {
            fails.insert((r[t_task].clone(), r[t_model].clone()), r[t_fail].clone());
        }
    }

    let grid = |value_idx: usize, with_fail: bool| -> String {
        let mut header = String::from("task");
        for m in &models {
            header.push_str(&format!(",{m}"));
            if with_fail {
                header.push_str(&format!(",{m}_fail"));
            }
        }
        header.push('\n');
        let mut body = String::new();
        for t in &tasks {
            body.push_str(t);
            for m in &models {
                let cells: Vec<f64> = brows
                    .iter()
                    .filter(|r| &r[task_i] == t && &r[model_i] == m)
                    .filter_map(|r| r[value_idx].parse::<f64>().ok())
                    .collect();
                if cells.is_empty() {
                    body.push(',');
                } else {
                    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
                    body.push_str(&format!(",{mean}"));
                }
                if with_fail {
                    let flag = fails
                        .get(&(t.clone(), m.clone()))
                        .map(|f| if f == "true" { "FAIL" } else { "" })
                        .unwrap_or("");
                    body.push_str(&format!(",{flag}"));
                }
            }
            body.push('\n');
        }
        header + &body
    };

    write_text(&layout.report_file("normalized_reward_grid.csv"), &grid(nr_i, true))?;
    write_text(&layout.report_file("consistency_grid.csv"), &grid(cons_i, false))?;

    // MI plane: one point per (task, model, subject).
    let (mh, mrows) = read_csv(&layout.report_file("mi_reports.csv"))?;
    let (m_task, m_model, m_subject) = (col(&mh, "task")?, col(&mh, "model")?, col(&mh, "subject")?);
    let (m_ifa, m_iaa) = (col(&mh, "i_fa_bits")?, col(&mh, "i_aa_bits")?);
    let mut out = String::from("task,model,subject,i_fa_bits,i_aa_bits\n");
    for r in &mrows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r[m_task], r[m_model], r[m_subject], r[m_ifa], r[m_iaa]
        ));
    }
    write_text(&layout.report_file("mi_plane.csv"), &out)?;

    // Recovery scatter: human vs model betas per subject and regressor.
    let (gh, grows) = read_csv(&layout.report_file("glm_profiles.csv"))?;
    let (g_source, g_model, g_subject) =
        (col(&gh, "source")?, col(&gh, "model")?, col(&gh, "subject")?);
    let beta_cols = [
        ("uncertainty", col(&gh, "beta_uncertainty")?),
        ("goal", col(&gh, "beta_goal")?),
        ("prev_action", col(&gh, "beta_prev_action")?),
        ("prev_state", col(&gh, "beta_prev_state")?),
    ];
    let mut human: BTreeMap<(String, String), String> = BTreeMap::new();
    for r in grows.iter().filter(|r| r[g_source] == "human") {
        for (name, idx) in beta_cols {
            human.insert((r[g_subject].clone(), name.to_string()), r[idx].clone());
        }
    }
    let mut out = String::from("model,regressor,subject,human_beta,model_beta\n");
    for r in grows.iter().filter(|r| r[g_source] == "model") {
        for (name, idx) in beta_cols {
            let h = human
                .get(&(r[g_subject].clone(), name.to_string()))
                .cloned()
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r[g_model], name, r[g_subject], h, r[idx]
            ));
        }
    }
    write_text(&layout.report_file("recovery_scatter.csv"), &out)?;

    // Training curves from the bundles.
    let mut out = String::from("model,subject,epoch,metric\n");
    for model in &manifest.models {
        let model_dir = layout.bundle_dir(model, None);
        if !model_dir.exists() {
            continue;
        }
        let top_bundle = layout.bundle_file(model, None);
        if top_bundle.exists() {
            let b = load_bundle(&top_bundle)?;
            for p in &b.curve {
                out.push_str(&format!("{model},-,{},{}\n", p.epoch, p.metric));
            }
        } else {
            let mut subject_dirs: Vec<_> = std::fs::read_dir(&model_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            subject_dirs.sort();
            for dir in subject_dirs {
                let bundle_path = dir.join("bundle.json");
                if !bundle_path.exists() {
                    continue;
                }
                let b = load_bundle(&bundle_path)?;
                let sid = b.subject_id.clone().unwrap_or_else(|| "-".into());
                for p in &b.curve {
                    out.push_str(&format!("{model},{sid},{},{}\n", p.epoch, p.metric));
                }
            }
        }
    }
    write_text(&layout.report_file("training_curves.csv"), &out)?;
    println!("report: figure data written to {}", layout.reports_dir().display());
    Ok(())
}
