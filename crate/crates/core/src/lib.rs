//! Desk-scale policy-optimization laboratory.
//!
//! Group-normalized policy gradients (with symmetric or clip-higher bounds)
//! and an entropy-controlled variant that adds difficulty-gated tempered
//! exploration plus an advantage-filtered replay stabilizer, all on synthetic
//! verifiable-reward sequence tasks small enough that every statistic has a
//! brute-force oracle. A companion module verifies the two entropy results
//! (first-order covariance identity, replay-driven stabilization) on exactly
//! solvable softmax bandits.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod objective;
pub mod policy;
pub mod rollout;
pub mod seeding;
pub mod tasks;
pub mod theory;
pub mod trainer;
pub mod uec;

pub use config::{Algorithm, EvalSpec, PolicyKindConfig, PolicySpec, TrainConfig};
pub use error::{LabError, Result};
pub use metrics::{EvalRates, ExperimentManifest, MetricsRecord};
pub use objective::{
    clipped_term, group_advantages, importance_ratios, kl_exact, kl_k3, objective_and_gradient,
    KlMode, ObjectiveConfig,
};
pub use policy::{token_entropy, ContextKey, Featurizer, Gradient, PolicyKind, PolicyParams};
pub use rollout::{rollout_group, snapshot, RolloutGroup, Trajectory, TrajectorySource};
pub use tasks::{
    make_combination_lock, make_curriculum, make_mod_chain, make_multipath_tree, Curriculum,
    CurriculumSpec, Difficulty, TaskInstance,
};
pub use theory::{
    entropy_cov, finite_diff_entropy, npg_update, run_finite_diff_suite, run_theorem1_suite,
    run_theorem2_suite, verify_theorem1, verify_theorem2, BanditInstance, EntropyReport,
    VerificationRow,
};
pub use trainer::{
    evaluate, pass_at_k, run_sweep, train, train_with_sinks, EvalReport, RunSinks, SweepCell,
    TrainState,
};
pub use uec::{
    explore, filter_exploratory, filter_regular, is_difficult, uec_step, ReplayBuffer, UecConfig,
};
