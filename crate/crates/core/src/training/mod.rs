//! Training regimes (goal matching and policy matching), the matching
//! terminal reward, likelihood measurement, maximum-likelihood fitting for
//! the tabular agent families, and frozen evaluation.

mod drivers;
mod fit;
mod likelihood;
mod loops;

pub use drivers::{run_pm_epoch, run_session, SessionOutcome};
pub use fit::{fit_pfc, fit_sarsa_softmax, FitBound, FitOptions, FitResult};
pub use likelihood::{episode_likelihood, fit_ddqn_inv_temp, LikelihoodReport};
pub use loops::{
    freeze_and_evaluate, train_gm_ddqn, train_gm_meta, train_pm_ddqn, train_pm_meta,
    train_pm_pfc, train_pm_sarsa, EvalStats,
};

use serde::{Deserialize, Serialize};

use crate::agents::AgentCheckpoint;
use crate::error::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Gm,
    Pm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub regime: Regime,
    pub epochs: usize,
    /// One training episode plays this many games, drawn uniformly per epoch.
    pub games_min: usize,
    pub games_max: usize,
    pub pm_k: f64,
    pub pm_n: f64,
    /// Stop early once the per-episode likelihood sum reaches this reference.
    pub early_stop: Option<f64>,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn gm(epochs: usize, seed: u64) -> TrainingConfig {
        TrainingConfig {
            regime: Regime::Gm,
            epochs,
            games_min: 200,
            games_max: 400,
            pm_k: 10.0,
            pm_n: 10.0,
            early_stop: None,
            seed,
        }
    }

    /// Paper-scale policy-matching defaults: 1,000 epochs for the DDQN.
    pub fn pm_ddqn(seed: u64) -> TrainingConfig {
        TrainingConfig { regime: Regime::Pm, epochs: 1_000, ..TrainingConfig::gm(0, seed) }
    }

    /// Paper-scale policy-matching defaults: 8,000 epochs for meta-RL.
    pub fn pm_meta(seed: u64) -> TrainingConfig {
        TrainingConfig { regime: Regime::Pm, epochs: 8_000, ..TrainingConfig::gm(0, seed) }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.epochs == 0 {
            return Err(TrainingError::InvalidConfig("epochs must be > 0".into()));
        }
        if self.games_min == 0 || self.games_max < self.games_min {
            return Err(TrainingError::InvalidConfig(
                "games range must satisfy 0 < min <= max".into(),
            ));
        }
        if self.pm_k <= 0.0 {
            return Err(TrainingError::InvalidConfig("pm_k must be > 0".into()));
        }
        if self.pm_n < 0.0 {
            return Err(TrainingError::InvalidConfig("pm_n must be >= 0".into()));
        }
        Ok(())
    }
}

/// One row of a training curve. `metric` is the regime's headline number
/// (mean normalized reward for GM, mean per-choice likelihood for PM);
/// `loss` and `mean_reward` carry the optimization loss and raw per-game
/// reward where the trainer produces them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub metric: f64,
    #[serde(default)]
    pub loss: Option<f64>,
    #[serde(default)]
    pub mean_reward: Option<f64>,
}

impl CurvePoint {
    pub fn new(epoch: usize, metric: f64) -> CurvePoint {
        CurvePoint { epoch, metric, loss: None, mean_reward: None }
    }
}

/// A trained agent bundle: checkpoint, training curve, and the config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model_id: String,
    pub subject_id: Option<String>,
    pub checkpoint: AgentCheckpoint,
    pub curve: Vec<CurvePoint>,
    pub config: TrainingConfig,
    pub frozen: bool,
}

/// The behavior-matching terminal reward: `k+n` when both stage actions
/// match the subject's, `k-n` when both differ, `k` otherwise.
pub fn pm_terminal_reward(
    agent_actions: (crate::env::Action, crate::env::Action),
    human_actions: (crate::env::Action, crate::env::Action),
    k: f64,
    n: f64,
) -> f64 {
    let m1 = agent_actions.0 == human_actions.0;
    let m2 = agent_actions.1 == human_actions.1;
    if m1 && m2 {
        k + n
    } else if !m1 && !m2 {
        k - n
    } else {
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action::{Left as L, Right as R};

    #[test]
    fn terminal_reward_three_named_cases() {
        assert_eq!(pm_terminal_reward((L, R), (L, R), 10.0, 10.0), 20.0);
        assert_eq!(pm_terminal_reward((L, R), (R, L), 10.0, 10.0), 0.0);
        assert_eq!(pm_terminal_reward((L, R), (L, L), 10.0, 10.0), 10.0);
    }

    #[test]
    fn terminal_reward_exhaustive_sixteen_cases() {
        let (k, n) = (7.0, 3.0);
        for a1 in [L, R] {
            for a2 in [L, R] {
                for h1 in [L, R] {
                    for h2 in [L, R] {
                        let got = pm_terminal_reward((a1, a2), (h1, h2), k, n);
                        let expect = match (a1 == h1, a2 == h2) {
                            (true, true) => k + n,
                            (false, false) => k - n,
                            _ => k,
                        };
                        assert_eq!(got, expect);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_n_collapses_to_constant() {
        for a1 in [L, R] {
            for a2 in [L, R] {
                assert_eq!(pm_terminal_reward((a1, a2), (L, R), 10.0, 0.0), 10.0);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::gm(10, 1).validate().is_ok());
        let mut bad = TrainingConfig::gm(10, 1);
        bad.pm_k = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = TrainingConfig::gm(10, 1);
        bad.games_max = bad.games_min - 1;
        assert!(bad.validate().is_err());
    }
}
