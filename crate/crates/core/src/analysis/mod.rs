//! Behavioral analyses: GLM profiling and recovery, behavior metrics,
//! mutual-information measures, and the paired t-test.

mod glm;
mod metrics;
mod mi;
mod ols;
mod special;
mod ttest;

pub use glm::{
    glm_profile, glm_profile_with, ideal_oracle, recovery_test, GlmProfile, IdealOracle,
    IdealTrial, OptimalityStage, ProfileSource, RecoveryReport, RegressorRecovery,
    REGRESSOR_NAMES,
};
pub use metrics::{
    choice_consistency, choice_optimality, choice_optimality_stage2, normalized_reward,
    TrialFilter,
};
pub use mi::{
    empirical_entropy, encoding_efficacy, episode_mi, episode_symbol, plugin_mi,
    EfficacyRegression, EfficacyReport, MiReport,
};
pub use ols::{ols_fit, OlsFit};
pub use special::{betai, ln_gamma, pearson, student_t_two_sided_p};
pub use ttest::{paired_ttest, PairedTTest};
