//! Prefrontal arbitration agents: Bayesian reliability estimation over the
//! model-based (FORWARD) and model-free (SARSA) learners, two-rate
//! arbitration dynamics for the mixing weight w, and combined-value softmax
//! control.
//!
//! Two reliability estimators are provided. The threshold estimator
//! categorizes prediction errors against a fixed threshold and tracks
//! decayed category counts under a symmetric Dirichlet prior. The mixture
//! estimator keeps a window of recent prediction errors, refits a truncated
//! Dirichlet-process Gaussian mixture by sequential assignment, and reads
//! reliability off the cluster nearest zero.

use std::collections::VecDeque;

use crate::agents::checkpoint::{hash_state, AgentCheckpoint};
use crate::agents::tabular::{
    forward_update, mb_values, sarsa_update, softmax_policy, QTable, TransitionModel,
};
use crate::agents::{ActionDist, Agent, AgentFamily, FreezeMode, Observation, StepRecord};
use crate::env::{Action, TaskGraph};
use crate::error::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeCategory {
    Negative,
    Zero,
    Positive,
}

/// Zero iff |pe| <= threshold (closed interval), else the sign category.
pub fn categorize_pe(pe: f64, threshold: f64) -> PeCategory {
    if pe.abs() <= threshold {
        PeCategory::Zero
    } else if pe < 0.0 {
        PeCategory::Negative
    } else {
        PeCategory::Positive
    }
}

/// Decayed category counts with a symmetric Dirichlet prior; reliability is
/// the posterior mean probability of the zero category.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEstimator {
    pub threshold: f64,
    pub forgetting: f64,
    pub pseudo_count: f64,
    counts: [f64; 3],
}

impl ThresholdEstimator {
    pub fn new(threshold: f64, forgetting: f64, pseudo_count: f64) -> ThresholdEstimator {
        ThresholdEstimator { threshold, forgetting, pseudo_count, counts: [0.0; 3] }
    }

    pub fn observe(&mut self, pe: f64) -> f64 {
        for c in &mut self.counts {
            *c *= self.forgetting;
        }
        let idx = match categorize_pe(pe, self.threshold) {
            PeCategory::Negative => 0,
            PeCategory::Zero => 1,
            PeCategory::Positive => 2,
        };
        self.counts[idx] += 1.0;
        self.reliability()
    }

    pub fn reliability(&self) -> f64 {
        let total: f64 = self.counts.iter().sum();
        (self.pseudo_count + self.counts[1]) / (3.0 * self.pseudo_count + total)
    }

    pub fn reset(&mut self) {
        self.counts = [0.0; 3];
    }

    fn pack(&self, prefix: &str, ck: &mut AgentCheckpoint) {
        ck.arrays.insert(format!("{prefix}.counts"), self.counts.to_vec());
        ck.scalars.insert(format!("{prefix}.threshold"), self.threshold);
        ck.scalars.insert(format!("{prefix}.forgetting"), self.forgetting);
        ck.scalars.insert(format!("{prefix}.pseudo"), self.pseudo_count);
    }

    fn unpack(prefix: &str, ck: &AgentCheckpoint) -> Result<ThresholdEstimator, AgentError> {
        let counts = ck.array(&format!("{prefix}.counts"), 3)?;
        Ok(ThresholdEstimator {
            threshold: ck.scalar(&format!("{prefix}.threshold"))?,
            forgetting: ck.scalar(&format!("{prefix}.forgetting"))?,
            pseudo_count: ck.scalar(&format!("{prefix}.pseudo"))?,
            counts: [counts[0], counts[1], counts[2]],
        })
    }
}

const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
struct Cluster {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Cluster {
    fn variance(&self, prior_var: f64) -> f64 {
        // Posterior mean of the variance under a normal-inverse-gamma base
        // with a0 = 2, b0 = prior_var.
        let a0 = 2.0;
        let var = (prior_var + 0.5 * self.m2) / (a0 + 0.5 * self.n - 1.0);
        var.max(VARIANCE_FLOOR)
    }
}

/// Windowed DP-Gaussian-mixture reliability estimator (sequential
/// variational assignment with hard responsibilities, truncation K).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEstimator {
    pub window_size: usize,
    pub truncation: usize,
    pub concentration: f64,
    pub prior_var: f64,
    window: VecDeque<f64>,
    clusters: Vec<Cluster>,
}

impl MixtureEstimator {
    pub fn new(window_size: usize, truncation: usize, concentration: f64, prior_var: f64) -> Self {
        MixtureEstimator {
            window_size,
            truncation,
            concentration,
            prior_var,
            window: VecDeque::new(),
            clusters: Vec::new(),
        }
    }

    pub fn observe(&mut self, pe: f64) -> f64 {
        if self.window.len() == self.window_size {
            self.window.pop_front();
        }
        self.window.push_back(pe);
        self.refit();
        self.reliability()
    }

    fn refit(&mut self) {
        self.clusters.clear();
        let mut seen = 0.0f64;
        let items: Vec<f64> = self.window.iter().copied().collect();
        for x in items {
            let mut best_idx = None;
            let mut best_score = f64::NEG_INFINITY;
            for (k, c) in self.clusters.iter().enumerate() {
                let var = c.variance(self.prior_var);
                let score = (c.n / (seen + self.concentration)).ln() + log_normal_pdf(x, c.mean, var);
                if score > best_score {
                    best_score = score;
                    best_idx = Some(k);
                }
            }
            if self.clusters.len() < self.truncation {
                let new_score = (self.concentration / (seen + self.concentration)).ln()
                    + log_normal_pdf(x, 0.0, self.prior_var);
                if new_score > best_score {
                    best_idx = None;
                }
            }
            match best_idx {
                Some(k) => {
                    let c = &mut self.clusters[k];
                    c.n += 1.0;
                    let delta = x - c.mean;
                    c.mean += delta / c.n;
                    c.m2 += delta * (x - c.mean);
                }
                None => {
                    self.clusters.push(Cluster { n: 1.0, mean: x, m2: 0.0 });
                }
            }
            seen += 1.0;
        }
    }

    /// Posterior mass of the cluster nearest zero, weighted by how much of
    /// that cluster's density sits at zero; 1/3 with no data.
    pub fn reliability(&self) -> f64 {
        if self.clusters.is_empty() {
            return 1.0 / 3.0;
        }
        let total: f64 = self.clusters.iter().map(|c| c.n).sum();
        let nearest = self
            .clusters
            .iter()
            .min_by(|a, b| a.mean.abs().partial_cmp(&b.mean.abs()).expect("finite means"))
            .expect("nonempty");
        let var = nearest.variance(self.prior_var);
        let weight = nearest.n / total;
        (weight * (-nearest.mean * nearest.mean / (2.0 * var)).exp()).clamp(0.0, 1.0)
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.clusters.clear();
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_stats(&self) -> Vec<(f64, f64, f64)> {
        let total: f64 = self.clusters.iter().map(|c| c.n).sum();
        self.clusters
            .iter()
            .map(|c| (c.n / total.max(1.0), c.mean, c.variance(self.prior_var)))
            .collect()
    }

    fn pack(&self, prefix: &str, ck: &mut AgentCheckpoint) {
        ck.scalars.insert(format!("{prefix}.concentration"), self.concentration);
        ck.scalars.insert(format!("{prefix}.prior_var"), self.prior_var);
        ck.ints.insert(format!("{prefix}.window_size"), self.window_size as i64);
        ck.ints.insert(format!("{prefix}.truncation"), self.truncation as i64);
        ck.arrays
            .insert(format!("{prefix}.window"), self.window.iter().copied().collect());
    }

    fn unpack(prefix: &str, ck: &AgentCheckpoint) -> Result<MixtureEstimator, AgentError> {
        let mut est = MixtureEstimator::new(
            ck.int(&format!("{prefix}.window_size"))? as usize,
            ck.int(&format!("{prefix}.truncation"))? as usize,
            ck.scalar(&format!("{prefix}.concentration"))?,
            ck.scalar(&format!("{prefix}.prior_var"))?,
        );
        est.window = ck.array_any(&format!("{prefix}.window"))?.iter().copied().collect();
        est.refit();
        Ok(est)
    }
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (var * 2.0 * std::f64::consts::PI).ln() - d * d / (2.0 * var)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReliabilityEstimator {
    Threshold(ThresholdEstimator),
    Mixture(MixtureEstimator),
}

impl ReliabilityEstimator {
    pub fn observe(&mut self, pe: f64) -> f64 {
        match self {
            ReliabilityEstimator::Threshold(e) => e.observe(pe),
            ReliabilityEstimator::Mixture(e) => e.observe(pe),
        }
    }

}

/// Two-rate arbitration dynamics for the model-based weight w.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArbitrationState {
    pub w: f64,
    pub chi_mb: f64,
    pub chi_mf: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_beta: f64,
    pub b_beta: f64,
}

impl ArbitrationState {
    pub fn new(a_alpha: f64, b_alpha: f64, a_beta: f64, b_beta: f64, w0: f64) -> Self {
        ArbitrationState {
            w: w0.clamp(0.0, 1.0),
            chi_mb: 1.0 / 3.0,
            chi_mf: 1.0 / 3.0,
            a_alpha,
            b_alpha,
            a_beta,
            b_beta,
        }
    }
}

/// One arbitration update: the MF->MB rate falls with MF reliability, the
/// MB->MF rate falls with MB reliability, and w moves by the net flow.
pub fn arbitration_step(st: &mut ArbitrationState, chi_mb: f64, chi_mf: f64) {
    st.chi_mb = chi_mb;
    st.chi_mf = chi_mf;
    let alpha_rate = st.a_alpha / (1.0 + (st.b_alpha * chi_mf).exp());
    let beta_rate = st.a_beta / (1.0 + (st.b_beta * chi_mb).exp());
    st.w += alpha_rate * (1.0 - st.w) - beta_rate * st.w;
    st.w = st.w.clamp(0.0, 1.0);
}

/// Elementwise mixture of the two controllers' values.
pub fn combine_q(w: f64, q_mb: ActionDist, q_mf: ActionDist) -> ActionDist {
    [
        w * q_mb[0] + (1.0 - w) * q_mf[0],
        w * q_mb[1] + (1.0 - w) * q_mf[1],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfcVariant {
    /// PE categorization against fixed thresholds (baseline model).
    Threshold,
    /// DP-Gaussian-mixture reliability on both PE channels (adaptive model).
    Mixture,
}

/// Fitted constants of a prefrontal agent. These are the slow state: policy
/// matching estimates them, and they are immutable during simulation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PfcParams {
    pub sarsa_alpha: f64,
    pub forward_eta: f64,
    pub inv_temp: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_beta: f64,
    pub b_beta: f64,
    pub rpe_threshold: f64,
    pub spe_threshold: f64,
    pub forgetting: f64,
    pub pseudo_count: f64,
    pub w_init: f64,
}

impl Default for PfcParams {
    fn default() -> Self {
        PfcParams {
            sarsa_alpha: 0.1,
            forward_eta: 0.2,
            inv_temp: 0.2,
            a_alpha: 1.0,
            b_alpha: 10.0,
            a_beta: 1.0,
            b_beta: 10.0,
            rpe_threshold: 4.0, // 0.1 x max token value
            spe_threshold: 0.1,
            forgetting: 0.9,
            pseudo_count: 1.0,
            w_init: 0.5,
        }
    }
}

impl PfcParams {
    pub fn to_map(&self) -> std::collections::BTreeMap<String, f64> {
        let mut m = std::collections::BTreeMap::new();
        m.insert("sarsa_alpha".into(), self.sarsa_alpha);
        m.insert("forward_eta".into(), self.forward_eta);
        m.insert("inv_temp".into(), self.inv_temp);
        m.insert("a_alpha".into(), self.a_alpha);
        m.insert("b_alpha".into(), self.b_alpha);
        m.insert("a_beta".into(), self.a_beta);
        m.insert("b_beta".into(), self.b_beta);
        m.insert("rpe_threshold".into(), self.rpe_threshold);
        m.insert("spe_threshold".into(), self.spe_threshold);
        m.insert("forgetting".into(), self.forgetting);
        m.insert("pseudo_count".into(), self.pseudo_count);
        m.insert("w_init".into(), self.w_init);
        m
    }

    pub fn set(&mut self, name: &str, value: f64) -> bool {
        match name {
            "sarsa_alpha" => self.sarsa_alpha = value,
            "forward_eta" => self.forward_eta = value,
            "inv_temp" => self.inv_temp = value,
            "a_alpha" => self.a_alpha = value,
            "b_alpha" => self.b_alpha = value,
            "a_beta" => self.a_beta = value,
            "b_beta" => self.b_beta = value,
            "rpe_threshold" => self.rpe_threshold = value,
            "spe_threshold" => self.spe_threshold = value,
            "forgetting" => self.forgetting = value,
            "pseudo_count" => self.pseudo_count = value,
            "w_init" => self.w_init = value,
            _ => return false,
        }
        true
    }

    fn as_vec(&self) -> Vec<f64> {
        vec![
            self.sarsa_alpha,
            self.forward_eta,
            self.inv_temp,
            self.a_alpha,
            self.b_alpha,
            self.a_beta,
            self.b_beta,
            self.rpe_threshold,
            self.spe_threshold,
            self.forgetting,
            self.pseudo_count,
            self.w_init,
        ]
    }
}

/// Per-trial arbitration trace row (for the CSV debug log).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub trial: usize,
    pub chi_mb: f64,
    pub chi_mf: f64,
    pub w: f64,
    pub rpe: f64,
    pub spe: f64,
}

/// Render an arbitration trace as CSV (trial, chi_mb, chi_mf, w, rpe, spe).
pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("trial,chi_mb,chi_mf,w,rpe,spe\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.trial, r.chi_mb, r.chi_mf, r.w, r.rpe, r.spe
        ));
    }
    out
}

/// The arbitration agent. Fast state (tables, reliabilities, w) relearns in
/// every session; `PfcParams` is the frozen-class slow state.
#[derive(Debug, Clone)]
pub struct PfcAgent {
    pub variant: PfcVariant,
    pub params: PfcParams,
    graph: Option<TaskGraph>,
    q_mf: QTable,
    t_model: Option<TransitionModel>,
    rel_mb: ReliabilityEstimator,
    rel_mf: ReliabilityEstimator,
    arb: ArbitrationState,
    pending_stage1: Option<(usize, Action)>,
    last_rpe: f64,
    last_spe: f64,
    trial_counter: usize,
    trace: Option<Vec<TraceRow>>,
    freeze: FreezeMode,
    gamma: f64,
}

const MIXTURE_WINDOW: usize = 50;
const MIXTURE_TRUNCATION: usize = 10;
const MIXTURE_CONCENTRATION: f64 = 1.0;

impl PfcAgent {
    pub fn new(variant: PfcVariant, params: PfcParams) -> PfcAgent {
        let (rel_mb, rel_mf) = Self::estimators(variant, &params);
        PfcAgent {
            variant,
            params,
            graph: None,
            q_mf: QTable::new(),
            t_model: None,
            rel_mb,
            rel_mf,
            arb: ArbitrationState::new(
                params.a_alpha,
                params.b_alpha,
                params.a_beta,
                params.b_beta,
                params.w_init,
            ),
            pending_stage1: None,
            last_rpe: 0.0,
            last_spe: 0.0,
            trial_counter: 0,
            trace: None,
            freeze: FreezeMode::None,
            gamma: 1.0,
        }
    }

    fn estimators(
        variant: PfcVariant,
        params: &PfcParams,
    ) -> (ReliabilityEstimator, ReliabilityEstimator) {
        match variant {
            PfcVariant::Threshold => (
                ReliabilityEstimator::Threshold(ThresholdEstimator::new(
                    params.spe_threshold,
                    params.forgetting,
                    params.pseudo_count,
                )),
                ReliabilityEstimator::Threshold(ThresholdEstimator::new(
                    params.rpe_threshold,
                    params.forgetting,
                    params.pseudo_count,
                )),
            ),
            PfcVariant::Mixture => (
                // Prior variance scaled to each channel's PE magnitude.
                ReliabilityEstimator::Mixture(MixtureEstimator::new(
                    MIXTURE_WINDOW,
                    MIXTURE_TRUNCATION,
                    MIXTURE_CONCENTRATION,
                    (2.0 * params.spe_threshold).powi(2),
                )),
                ReliabilityEstimator::Mixture(MixtureEstimator::new(
                    MIXTURE_WINDOW,
                    MIXTURE_TRUNCATION,
                    MIXTURE_CONCENTRATION,
                    (2.0 * params.rpe_threshold).powi(2),
                )),
            ),
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        self.trace.take().unwrap_or_default()
    }

    pub fn arbitration(&self) -> &ArbitrationState {
        &self.arb
    }

    pub fn agent_kind(&self) -> &'static str {
        match self.variant {
            PfcVariant::Threshold => "pfc_rl1",
            PfcVariant::Mixture => "pfc_rl2",
        }
    }

    fn combined_values(&self, obs: Observation) -> ActionDist {
        let q_mf = self.q_mf.row(obs.index());
        let q_mb = match (&self.t_model, &self.graph) {
            (Some(model), Some(graph)) => mb_values(model, graph, obs.goal).row(obs.state),
            _ => [0.0, 0.0],
        };
        combine_q(self.arb.w, q_mb, q_mf)
    }
}

impl Agent for PfcAgent {
    fn family(&self) -> AgentFamily {
        match self.variant {
            PfcVariant::Threshold => AgentFamily::PfcRl1,
            PfcVariant::Mixture => AgentFamily::PfcRl2,
        }
    }

    fn begin_session(&mut self, graph: &TaskGraph) {
        self.graph = Some(graph.clone());
        self.t_model = Some(TransitionModel::uniform_from_graph(graph, self.params.forward_eta));
        self.reset_episode();
    }

    fn reset_episode(&mut self) {
        self.q_mf.clear();
        if let (Some(graph), true) = (&self.graph, self.t_model.is_some()) {
            self.t_model = Some(TransitionModel::uniform_from_graph(graph, self.params.forward_eta));
        }
        let (rel_mb, rel_mf) = Self::estimators(self.variant, &self.params);
        self.rel_mb = rel_mb;
        self.rel_mf = rel_mf;
        self.arb = ArbitrationState::new(
            self.params.a_alpha,
            self.params.b_alpha,
            self.params.a_beta,
            self.params.b_beta,
            self.params.w_init,
        );
        self.pending_stage1 = None;
        self.last_rpe = 0.0;
        self.last_spe = 0.0;
        self.trial_counter = 0;
        if let Some(t) = &mut self.trace {
            t.clear();
        }
    }

    fn policy(&mut self, obs: Observation) -> ActionDist {
        softmax_policy(self.combined_values(obs), self.params.inv_temp)
    }

    fn observe(&mut self, step: &StepRecord) {
        if self.freeze == FreezeMode::Everything {
            return;
        }
        let model = match &mut self.t_model {
            Some(m) => m,
            None => return,
        };
        let obs_idx = step.obs.index();
        // Model-based channel: SPE from the observed transition.
        let spe = forward_update(model, step.obs.state, step.action, step.next_state);
        let chi_mb = self.rel_mb.observe(spe);
        self.last_spe = spe;
        let mut chi_mf = self.arb.chi_mf;
        if step.terminal {
            // Complete the buffered stage-1 SARSA update now that the
            // stage-2 action is known (on-policy bootstrap).
            let next_obs = Observation { state: step.obs.state, goal: step.obs.goal }.index();
            if let Some((o1, a1)) = self.pending_stage1.take() {
                let rpe1 = sarsa_update(
                    &mut self.q_mf,
                    o1,
                    a1,
                    0.0,
                    Some((next_obs, step.action)),
                    self.params.sarsa_alpha,
                    self.gamma,
                );
                self.rel_mf.observe(rpe1);
                self.last_rpe = rpe1;
            }
            let rpe2 = sarsa_update(
                &mut self.q_mf,
                obs_idx,
                step.action,
                step.reward,
                None,
                self.params.sarsa_alpha,
                self.gamma,
            );
            chi_mf = self.rel_mf.observe(rpe2);
            self.last_rpe = rpe2;
        } else {
            self.pending_stage1 = Some((obs_idx, step.action));
        }
        arbitration_step(&mut self.arb, chi_mb, chi_mf);
    }

    fn end_trial(&mut self) {
        self.pending_stage1 = None;
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRow {
                trial: self.trial_counter,
                chi_mb: self.arb.chi_mb,
                chi_mf: self.arb.chi_mf,
                w: self.arb.w,
                rpe: self.last_rpe,
                spe: self.last_spe,
            });
        }
        self.trial_counter += 1;
    }

    fn set_freeze(&mut self, mode: FreezeMode) {
        self.freeze = mode;
    }

    fn freeze_mode(&self) -> FreezeMode {
        self.freeze
    }

    fn checkpoint(&self) -> AgentCheckpoint {
        let mut ck = AgentCheckpoint::new(self.agent_kind());
        for (name, value) in self.params.to_map() {
            ck.scalars.insert(format!("params.{name}"), value);
        }
        ck.scalars.insert("arb.w".into(), self.arb.w);
        ck.scalars.insert("arb.chi_mb".into(), self.arb.chi_mb);
        ck.scalars.insert("arb.chi_mf".into(), self.arb.chi_mf);
        self.q_mf.pack("q_mf", &mut ck);
        if let Some(model) = &self.t_model {
            model.pack("t_model", &mut ck);
        }
        match (&self.rel_mb, &self.rel_mf) {
            (ReliabilityEstimator::Threshold(mb), ReliabilityEstimator::Threshold(mf)) => {
                mb.pack("rel_mb", &mut ck);
                mf.pack("rel_mf", &mut ck);
            }
            (ReliabilityEstimator::Mixture(mb), ReliabilityEstimator::Mixture(mf)) => {
                mb.pack("rel_mb", &mut ck);
                mf.pack("rel_mf", &mut ck);
            }
            _ => unreachable!("estimator channels always share a variant"),
        }
        ck
    }

    fn restore(&mut self, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        ck.expect_kind(self.agent_kind())?;
        let mut params = self.params;
        for (name, _) in params.to_map() {
            let v = ck.scalar(&format!("params.{name}"))?;
            params.set(&name, v);
        }
        self.params = params;
        self.q_mf = QTable::unpack("q_mf", ck)?;
        self.t_model = if ck.arrays.contains_key("t_model.rows") {
            Some(TransitionModel::unpack("t_model", ck)?)
        } else {
            None
        };
        match self.variant {
            PfcVariant::Threshold => {
                self.rel_mb = ReliabilityEstimator::Threshold(ThresholdEstimator::unpack("rel_mb", ck)?);
                self.rel_mf = ReliabilityEstimator::Threshold(ThresholdEstimator::unpack("rel_mf", ck)?);
            }
            PfcVariant::Mixture => {
                self.rel_mb = ReliabilityEstimator::Mixture(MixtureEstimator::unpack("rel_mb", ck)?);
                self.rel_mf = ReliabilityEstimator::Mixture(MixtureEstimator::unpack("rel_mf", ck)?);
            }
        }
        self.arb = ArbitrationState::new(
            params.a_alpha,
            params.b_alpha,
            params.a_beta,
            params.b_beta,
            ck.scalar("arb.w")?,
        );
        self.arb.chi_mb = ck.scalar("arb.chi_mb")?;
        self.arb.chi_mf = ck.scalar("arb.chi_mf")?;
        self.pending_stage1 = None;
        Ok(())
    }

    fn frozen_state_hash(&self) -> u64 {
        hash_state(&[&self.params.as_vec()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorize_boundary_and_signs() {
        assert_eq!(categorize_pe(0.0, 0.1), PeCategory::Zero);
        assert_eq!(categorize_pe(-0.9, 0.1), PeCategory::Negative);
        assert_eq!(categorize_pe(0.1, 0.1), PeCategory::Zero); // closed interval
        assert_eq!(categorize_pe(0.100001, 0.1), PeCategory::Positive);
    }

    #[test]
    fn threshold_estimator_prior_and_posterior() {
        let est = ThresholdEstimator::new(0.1, 1.0, 1.0);
        assert!((est.reliability() - 1.0 / 3.0).abs() < 1e-12);

        let mut est = ThresholdEstimator::new(0.1, 1.0, 1.0);
        let mut chi = 0.0;
        for _ in 0..100 {
            chi = est.observe(0.0);
        }
        assert!((chi - 101.0 / 103.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_estimator_matches_closed_form_under_decay() {
        // Oracle: recompute the decayed counts directly for an arbitrary
        // category sequence and compare the posterior mean.
        let lam = 0.83;
        let pseudo = 1.0;
        let threshold = 0.5;
        let pes = [0.0, 2.0, -3.0, 0.2, 0.6, -0.1, 0.0, 5.0, -0.4, 0.51];
        let mut est = ThresholdEstimator::new(threshold, lam, pseudo);
        let mut counts = [0.0f64; 3];
        for &pe in &pes {
            let chi = est.observe(pe);
            for c in &mut counts {
                *c *= lam;
            }
            let idx = match categorize_pe(pe, threshold) {
                PeCategory::Negative => 0,
                PeCategory::Zero => 1,
                PeCategory::Positive => 2,
            };
            counts[idx] += 1.0;
            let expect = (pseudo + counts[1]) / (3.0 * pseudo + counts.iter().sum::<f64>());
            assert!((chi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_signs_drive_reliability_down() {
        let mut est = ThresholdEstimator::new(0.1, 1.0, 1.0);
        let mut last = 1.0 / 3.0;
        for i in 0..50 {
            let pe = if i % 2 == 0 { 1.0 } else { -1.0 };
            let chi = est.observe(pe);
            assert!(chi < 1.0 / 3.0 + 1e-12);
            assert!(chi <= last + 1e-12);
            last = chi;
        }
    }

    #[test]
    fn mixture_all_zero_pes_saturates() {
        let mut est = MixtureEstimator::new(50, 10, 1.0, 1.0);
        let mut chi = 0.0;
        for _ in 0..20 {
            chi = est.observe(0.0);
        }
        assert_eq!(est.n_clusters(), 1);
        assert!(chi > 0.99, "chi = {chi}");
    }

    #[test]
    fn mixture_empty_window_is_prior() {
        let est = MixtureEstimator::new(50, 10, 1.0, 1.0);
        assert!((est.reliability() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_two_lobes_low_reliability() {
        // Synthetic two-lobe sample at +-1 with nothing near zero.
        use rand::Rng;
        let mut rng = crate::rng::stream(13, &["lobes"]);
        let mut est = MixtureEstimator::new(50, 10, 1.0, 1.0);
        let mut sample = Vec::new();
        let mut chi = 1.0;
        for i in 0..50 {
            let center = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = center + 0.05 * (rng.random::<f64>() - 0.5);
            sample.push(x);
            chi = est.observe(x);
        }
        assert!(chi < 0.2, "chi = {chi}");

        // Full-batch oracle: 2-component EM on the same sample must agree
        // that no mass sits at zero.
        let oracle_chi = batch_two_component_chi(&sample);
        assert!(oracle_chi < 0.2, "oracle chi = {oracle_chi}");
    }

    /// Test-only full-batch EM for a two-component Gaussian mixture,
    /// evaluated with the same reliability functional.
    fn batch_two_component_chi(xs: &[f64]) -> f64 {
        let mut mu = [-0.5f64, 0.5];
        let mut var = [0.5f64, 0.5];
        let mut pi = [0.5f64, 0.5];
        for _ in 0..200 {
            let mut resp = vec![[0.0f64; 2]; xs.len()];
            for (i, &x) in xs.iter().enumerate() {
                let mut total = 0.0;
                for k in 0..2 {
                    let d = x - mu[k];
                    let p = pi[k] / var[k].sqrt() * (-d * d / (2.0 * var[k])).exp();
                    resp[i][k] = p;
                    total += p;
                }
                for k in 0..2 {
                    resp[i][k] /= total;
                }
            }
            for k in 0..2 {
                let nk: f64 = resp.iter().map(|r| r[k]).sum();
                mu[k] = resp.iter().zip(xs).map(|(r, &x)| r[k] * x).sum::<f64>() / nk;
                var[k] = (resp.iter().zip(xs).map(|(r, &x)| r[k] * (x - mu[k]).powi(2)).sum::<f64>()
                    / nk)
                    .max(1e-6);
                pi[k] = nk / xs.len() as f64;
            }
        }
        let k = if mu[0].abs() < mu[1].abs() { 0 } else { 1 };
        pi[k] * (-mu[k] * mu[k] / (2.0 * var[k])).exp()
    }

    #[test]
    fn mixture_beats_threshold_on_zero_stream() {
        let params = PfcParams::default();
        let mut thr = ThresholdEstimator::new(params.spe_threshold, params.forgetting, 1.0);
        let mut mix = MixtureEstimator::new(50, 10, 1.0, (2.0 * params.spe_threshold).powi(2));
        let mut chi_t = 0.0;
        let mut chi_m = 0.0;
        for i in 0..40 {
            chi_t = thr.observe(0.0);
            chi_m = mix.observe(0.0);
            if i >= 10 {
                assert!(chi_m > chi_t, "at {i}: mixture {chi_m} <= threshold {chi_t}");
            }
        }
        assert!(chi_m > 0.99 && chi_t < 0.9);
    }

    #[test]
    fn arbitration_symmetric_fixed_point() {
        let mut st = ArbitrationState::new(1.0, 10.0, 1.0, 10.0, 0.5);
        for _ in 0..1000 {
            arbitration_step(&mut st, 0.4, 0.4);
        }
        assert!((st.w - 0.5).abs() < 1e-9, "w = {}", st.w);
    }

    #[test]
    fn arbitration_one_way_flow_is_monotone() {
        let mut st = ArbitrationState::new(1.0, 10.0, 0.0, 10.0, 0.1);
        let mut last = st.w;
        for _ in 0..200 {
            arbitration_step(&mut st, 0.2, 0.7);
            assert!(st.w >= last - 1e-15);
            last = st.w;
        }
    }

    #[test]
    fn arbitration_converges_to_rate_ratio() {
        let (a_alpha, b_alpha, a_beta, b_beta) = (0.8, 6.0, 1.3, 4.0);
        let (chi_mb, chi_mf) = (0.7, 0.3);
        let mut st = ArbitrationState::new(a_alpha, b_alpha, a_beta, b_beta, 0.0);
        for _ in 0..10_000 {
            arbitration_step(&mut st, chi_mb, chi_mf);
        }
        let alpha = a_alpha / (1.0 + (b_alpha * chi_mf).exp());
        let beta = a_beta / (1.0 + (b_beta * chi_mb).exp());
        let fixed_point = alpha / (alpha + beta);
        assert!((st.w - fixed_point).abs() < 1e-6, "w = {} vs {}", st.w, fixed_point);
    }

    #[test]
    fn arbitration_w_stays_in_unit_interval_under_fuzz() {
        use rand::Rng;
        let mut rng = crate::rng::stream(77, &["arb-fuzz"]);
        for _ in 0..200 {
            let mut st = ArbitrationState::new(
                rng.random_range(0.0..5.0),
                rng.random_range(0.0..20.0),
                rng.random_range(0.0..5.0),
                rng.random_range(0.0..20.0),
                rng.random_range(0.0..1.0),
            );
            for _ in 0..100 {
                arbitration_step(&mut st, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                assert!((0.0..=1.0).contains(&st.w));
            }
        }
    }

    #[test]
    fn combine_q_endpoints_and_mixture() {
        let q_mb = [10.0, 0.0];
        let q_mf = [0.0, 10.0];
        assert_eq!(combine_q(1.0, q_mb, q_mf), q_mb);
        assert_eq!(combine_q(0.0, q_mb, q_mf), q_mf);
        let mixed = combine_q(0.3, q_mb, q_mf);
        assert!((mixed[0] - 3.0).abs() < 1e-12);
        assert!((mixed[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn trace_log_captures_per_trial_arbitration() {
        use crate::agents::StepRecord;
        use crate::env::{Stage, StateId, TaskGraph};
        let graph = TaskGraph::builtin("tree").unwrap();
        let mut agent = PfcAgent::new(PfcVariant::Threshold, PfcParams::default());
        agent.begin_session(&graph);
        agent.enable_trace();
        for trial in 0..5 {
            let goal = crate::env::GoalCondition::Flexible;
            let obs1 = crate::agents::Observation { state: StateId(0), goal };
            let _ = agent.policy(obs1);
            agent.observe(&StepRecord {
                obs: obs1,
                action: crate::env::Action::Left,
                next_state: StateId(1),
                next_stage: Stage::Two,
                reward: 0.0,
                terminal: false,
            });
            let obs2 = crate::agents::Observation { state: StateId(1), goal };
            let _ = agent.policy(obs2);
            agent.observe(&StepRecord {
                obs: obs2,
                action: crate::env::Action::Left,
                next_state: StateId(5),
                next_stage: Stage::Terminal,
                reward: if trial % 2 == 0 { 40.0 } else { 0.0 },
                terminal: true,
            });
            agent.end_trial();
        }
        let rows = agent.take_trace();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.w)));
        let csv = trace_to_csv(&rows);
        assert!(csv.starts_with("trial,chi_mb,chi_mf,w,rpe,spe"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn combine_q_argmax_invariant_under_common_rescale() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, &["rescale"]);
        for _ in 0..500 {
            let w: f64 = rng.random();
            let q_mb = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let q_mf = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let scale: f64 = rng.random_range(0.01..10.0);
            let base = combine_q(w, q_mb, q_mf);
            let scaled = combine_q(
                w,
                [q_mb[0] * scale, q_mb[1] * scale],
                [q_mf[0] * scale, q_mf[1] * scale],
            );
            let argmax = |q: ActionDist| usize::from(q[1] > q[0]);
            assert_eq!(argmax(base), argmax(scaled));
        }
    }
}
