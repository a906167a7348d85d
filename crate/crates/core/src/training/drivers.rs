//! Session drivers shared by training, corpus generation, and evaluation.

use rand_chacha::ChaCha12Rng;

use crate::agents::{sample_action, Agent, Observation, StepRecord};
use crate::data::BehaviorRecord;
use crate::env::{Advance, Env, Stage};
use crate::error::TrainingError;
use crate::training::pm_terminal_reward;

#[derive(Debug, Clone, Default)]
pub struct SessionOutcome {
    pub records: Vec<BehaviorRecord>,
    /// Environment reward per trial.
    pub rewards: Vec<f64>,
    /// Ideal-policy expected value per trial (normalization denominator).
    pub max_values: Vec<f64>,
}

impl SessionOutcome {
    /// Mean of reward / ideal value over trials with a positive denominator.
    pub fn mean_normalized_reward(&self) -> Option<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for (r, m) in self.rewards.iter().zip(&self.max_values) {
            if *m > 0.0 {
                total += r / m;
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(total / n as f64)
        }
    }
}

/// Run the remainder of an environment session with the agent interacting
/// freely. Binds the agent to the env's graph, samples actions from the
/// driver stream, and records one row per trial.
pub fn run_session(
    agent: &mut dyn Agent,
    env: &mut Env,
    act_rng: &mut ChaCha12Rng,
    subject_id: &str,
) -> Result<SessionOutcome, TrainingError> {
    agent.begin_session(env.graph());
    let mut outcome = SessionOutcome::default();
    if env.session_done() {
        return Ok(outcome);
    }
    loop {
        let trial = env.trial_index();
        let goal = env.current_goal();
        let uncertainty = env.current_uncertainty();
        let block = env.current_block();
        let max_value = env.max_trial_value();

        let s1 = env.current_state();
        let obs1 = Observation { state: s1, goal };
        let a1 = sample_action(agent.policy(obs1), act_rng);
        let step1 = env.step(a1)?;
        agent.observe(&StepRecord {
            obs: obs1,
            action: a1,
            next_state: step1.next_state,
            next_stage: step1.stage,
            reward: step1.reward,
            terminal: step1.trial_done,
        });
        debug_assert_eq!(step1.stage, Stage::Two);

        let s2 = step1.next_state;
        let obs2 = Observation { state: s2, goal };
        let a2 = sample_action(agent.policy(obs2), act_rng);
        let step2 = env.step(a2)?;
        agent.observe(&StepRecord {
            obs: obs2,
            action: a2,
            next_state: step2.next_state,
            next_stage: step2.stage,
            reward: step2.reward,
            terminal: step2.trial_done,
        });
        agent.end_trial();

        outcome.records.push(BehaviorRecord {
            subject_id: subject_id.to_string(),
            trial_index: trial,
            goal,
            uncertainty,
            s1,
            a1,
            s2,
            a2,
            s3: step2.next_state,
            reward: step2.reward as u32,
            block,
        });
        outcome.rewards.push(step2.reward);
        outcome.max_values.push(max_value);

        if env.advance_trial()? == Advance::SessionComplete {
            break;
        }
    }
    Ok(outcome)
}

/// One policy-matching episode: the agent replays the subject's games with
/// teacher-forced transitions. The agent picks its own actions, the next
/// state is always the subject's recorded state, and the terminal reward is
/// the matching reward against the subject's action pair.
///
/// Returns the per-game matching rewards.
pub fn run_pm_epoch(
    agent: &mut dyn Agent,
    records: &[crate::data::BehaviorRecord],
    games: usize,
    k: f64,
    n: f64,
    act_rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>, TrainingError> {
    if records.is_empty() {
        return Err(TrainingError::TrialCountMismatch { data: 0, schedule: games });
    }
    let mut rewards = Vec::with_capacity(games);
    for g in 0..games {
        let rec = &records[g % records.len()];
        let obs1 = Observation { state: rec.s1, goal: rec.goal };
        let a1 = sample_action(agent.policy(obs1), act_rng);
        agent.observe(&StepRecord {
            obs: obs1,
            action: a1,
            next_state: rec.s2,
            next_stage: Stage::Two,
            reward: 0.0,
            terminal: false,
        });
        let obs2 = Observation { state: rec.s2, goal: rec.goal };
        let a2 = sample_action(agent.policy(obs2), act_rng);
        let r_omega = pm_terminal_reward((a1, a2), (rec.a1, rec.a2), k, n);
        agent.observe(&StepRecord {
            obs: obs2,
            action: a2,
            next_state: rec.s3,
            next_stage: Stage::Terminal,
            reward: r_omega,
            terminal: true,
        });
        agent.end_trial();
        rewards.push(r_omega);
    }
    Ok(rewards)
}
