//! A desk-scale laboratory for offline policy selection on finite layered
//! episodic MDPs.
//!
//! The crate provides exact dynamic programming over layered MDPs
//! ([`mdp`]), offline dataset generation with density ratios and coverage
//! constants ([`data`]), finite candidate classes with prescreening and
//! misspecification errors ([`spaces`]), the pessimistic constrained and
//! Lagrangian selectors with their stated hyperparameter prescriptions
//! ([`solver`]), a doubling procedure with online Monte-Carlo evaluation for
//! unknown action gaps ([`online`]), bundled and randomly generated
//! instances with independent brute-force oracles ([`bench`]), file schemas
//! ([`io`]), and a seeded statistical trial harness ([`experiment`]).

// Index-based loops over (timestep, state, action) tables mirror the
// backup and expectation formulas; iterator rewrites obscure them.
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod data;
pub mod experiment;
pub mod io;
pub mod mdp;
pub mod online;
pub mod solver;
pub mod spaces;
pub mod table;

pub use bench::{
    brute_force_eps, brute_force_optimal, build_counterexample, build_table1_example,
    random_instance, NamedInstance, RandomSpec,
};
pub use data::{
    class_bound_c, concentrability, density_ratio, derive_seed, sample_dataset, DataDistribution,
    Dataset, DensityRatio, Transition,
};
pub use experiment::{run_experiment, sweep, ExperimentConfig, TrialReport};
pub use mdp::{
    gap_of_function, greedy_policy, occupancy, optimal_q, policy_disagreement, policy_value,
    LayeredMdp, Policy, TieRule, ValidationReport,
};
pub use online::{mc_sample_count, monte_carlo_eval, pabc_oa, OaOptions, OaTranscript, OnlineRollout};
pub use solver::{
    avg_bellman_error, consistency_filters, empirical_loss, eps_stat, feasible_set,
    hyperparameters, pabc, pabc_l, population_loss, GuaranteeMode, LossSource, PabcConfig,
    Selection,
};
pub use spaces::{
    eps_f, eps_f_inf, eps_w, prescreen, regularity_check, FunctionClass, WeightClass,
};
pub use table::{TableRole, TableStack};
