//! Bundle loading and agent instantiation from checkpoints.

use anyhow::{bail, Context, Result};
use std::path::Path;

use mdt_core::agents::{
    Agent, DdqnAgent, DdqnConfig, MetaConfig, MetaRlAgent, PfcAgent, PfcParams, PfcVariant,
    RandomAgent, SarsaSoftmaxAgent,
};
use mdt_core::training::TrainedModel;

pub fn save_bundle(bundle: &TrainedModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(bundle).context("serializing bundle")?;
    crate::layout::write_text(path, &text)
}

pub fn load_bundle(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading bundle {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing bundle {}", path.display()))
}

/// Rebuild the agent a bundle describes and restore its checkpoint.
pub fn instantiate(bundle: &TrainedModel) -> Result<Box<dyn Agent>> {
    let ck = &bundle.checkpoint;
    let mut agent: Box<dyn Agent> = match ck.agent_kind.as_str() {
        "random" => Box::new(RandomAgent::new()),
        "ddqn" => Box::new(DdqnAgent::new(DdqnConfig::default(), 0)),
        "meta_rl" => {
            let hidden = ck.int("hidden_size").context("meta checkpoint hidden size")? as usize;
            Box::new(MetaRlAgent::new(MetaConfig { hidden, ..MetaConfig::default() }, 0))
        }
        "pfc_rl1" => Box::new(PfcAgent::new(PfcVariant::Threshold, PfcParams::default())),
        "pfc_rl2" => Box::new(PfcAgent::new(PfcVariant::Mixture, PfcParams::default())),
        "sarsa_softmax" => Box::new(SarsaSoftmaxAgent::new(0.1, 0.2)),
        other => bail!("unknown agent kind {other:?} in bundle"),
    };
    agent.restore(ck).context("restoring checkpoint")?;
    Ok(agent)
}

pub fn curve_csv(bundle: &TrainedModel) -> String {
    use mdt_core::training::Regime;
    let mut out = String::from("epoch,loss,mean_reward,mean_likelihood\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &bundle.curve {
        let likelihood = match bundle.config.regime {
            Regime::Pm => p.metric.to_string(),
            Regime::Gm => String::new(),
        };
        let mean_reward = match bundle.config.regime {
            // GM curves headline normalized reward; PM rows carry the raw
            // per-game matching reward in mean_reward.
            Regime::Gm => p.metric.to_string(),
            Regime::Pm => opt(p.mean_reward),
        };
        out.push_str(&format!("{},{},{},{}\n", p.epoch, opt(p.loss), mean_reward, likelihood));
    }
    out
}
