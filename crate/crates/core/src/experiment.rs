//! Seeded statistical trial sweeps: configuration, assumption validation,
//! per-trial scoring against exact oracle values, and aggregate reports.
//!
//! A trial samples a fresh dataset from its derived seed, runs the selected
//! algorithm, and scores the output against the instance's exact optimal
//! return (for estimates) and exact policy evaluation (for policies).
//! Trials run in parallel over seeds and are reassembled in seed order, so
//! reports are byte-identical across runs of the same configuration.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{build_counterexample, build_table1_example, random_instance, BenchError, NamedInstance, RandomSpec};
use crate::data::{class_bound_c, density_ratio, derive_seed, sample_dataset, DataError, DensityRatio};
use crate::io::{load_json, IoError, InstanceBundle};
use crate::mdp::{greedy_policy, optimal_q, policy_value, MdpError, TieRule, DEFAULT_TIE_TOLERANCE};
use crate::online::{pabc_oa, InitialGuess, OaError, OaOptions};
use crate::solver::{
    eps_stat, hyperparameters, pabc, pabc_l, GuaranteeMode, HyperInputs, LossSource, MemberTieRule,
    PabcConfig, SolverError,
};
use crate::spaces::{eps_f, eps_f_inf, eps_w, prescreen, ClassError};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceSource {
    /// A bundled instance: `counterexample` or `coverage-comparison`
    /// (alias `table1`).
    Named { name: String },
    /// An instance bundle on disk.
    File { path: PathBuf },
    /// Freshly generated from a seed.
    Random { spec: RandomSpec },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Algorithm {
    Pabc,
    PabcL,
    PopulationPabc,
    PopulationPabcL,
    PabcOa { iteration_cap: u32, initial_guess: InitialGuess },
}

impl Algorithm {
    pub fn is_population(&self) -> bool {
        matches!(self, Algorithm::PopulationPabc | Algorithm::PopulationPabcL)
    }
}

/// Threshold selection for explicit-hyperparameter runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", content = "value")]
pub enum AlphaChoice {
    Fixed(f64),
    /// Track the concentration width at the configured dataset size.
    EpsStat,
    /// No threshold (Lagrangian algorithms).
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessMetric {
    /// `|estimate - v*| <= threshold`.
    EstimateWithinEps,
    /// `v* - v^policy <= threshold`.
    PolicyWithinEps,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HyperSpec {
    /// Derive everything from a guarantee mode's stated formulas.
    Guarantee {
        mode: GuaranteeMode,
        eps: f64,
        delta: f64,
        /// Prescreening threshold for the robust policy mode (which takes
        /// it as a user choice rather than deriving it).
        c_gap: Option<f64>,
    },
    /// Caller-specified knobs.
    Explicit {
        alpha: AlphaChoice,
        c_gap: f64,
        n: usize,
        delta: f64,
        success_metric: SuccessMetric,
        /// Success threshold; omitted means trials always count as success.
        success_eps: Option<f64>,
    },
}

/// Which instance-level preconditions to verify before any trial runs.
/// Each check is individually toggleable.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AssumptionToggles {
    /// The optimal action-value table must be a member of the value class.
    pub value_realizability: bool,
    /// The optimal density ratio must exist and be a member of the weight
    /// class.
    pub weight_realizability: bool,
    /// Every value member must stay inside the per-timestep range
    /// `[0, H - h]`.
    pub value_range: bool,
    /// The weight class must have a finite positive sup-norm bound.
    pub weight_bound: bool,
    /// The optimal values must have a positive, finite action gap (only
    /// meaningful for gap-based modes).
    pub positive_gap: bool,
}

impl Default for AssumptionToggles {
    fn default() -> Self {
        Self {
            value_realizability: true,
            weight_realizability: true,
            value_range: true,
            weight_bound: true,
            positive_gap: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub description: String,
    pub enabled: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_enabled_pass(&self) -> bool {
        self.checks.iter().all(|c| !c.enabled || c.passed)
    }
}

/// Tie handling for a whole experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TieSettings {
    /// Use the instance's bundled adversarial ties when it has them.
    pub adversarial: bool,
    pub greedy: TieRule,
    pub member: MemberTieRule,
    pub tolerance: f64,
}

impl Default for TieSettings {
    fn default() -> Self {
        Self {
            adversarial: false,
            greedy: TieRule::FirstIndex,
            member: MemberTieRule::LowestIndex,
            tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub algorithm: Algorithm,
    pub hyper: HyperSpec,
    pub trials: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub assumptions: AssumptionToggles,
    #[serde(default)]
    pub ties: TieSettings,
}

/// Hyperparameters after resolution: what each trial actually runs with.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolvedHyper {
    pub alpha: Option<f64>,
    pub c_gap: f64,
    pub n: usize,
    pub delta: f64,
    pub success_metric: SuccessMetric,
    /// Success threshold, including misspecification terms for robust modes.
    pub success_eps: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrialRow {
    pub seed: u64,
    pub success: bool,
    pub chosen: Option<String>,
    pub estimate: Option<f64>,
    pub estimate_error: Option<f64>,
    pub policy_suboptimality: Option<f64>,
    pub prescreen_count: Option<usize>,
    pub feasible_count: Option<usize>,
    pub oa_iterations: Option<u32>,
    pub oa_online_samples: Option<u64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub successes: usize,
    pub success_frequency: f64,
    /// `1 - delta`, when the run has a statistical target.
    pub target_frequency: Option<f64>,
    pub met_target: Option<bool>,
    pub median_estimate_error: Option<f64>,
    pub median_policy_suboptimality: Option<f64>,
    pub error_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialReport {
    pub instance_name: String,
    pub algorithm: Algorithm,
    pub hyper: ResolvedHyper,
    pub v_star: f64,
    pub assumptions: AssumptionReport,
    pub rows: Vec<TrialRow>,
    pub aggregate: Aggregate,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown named instance '{0}' (try 'counterexample' or 'coverage-comparison')")]
    UnknownInstance(String),
    #[error("assumption checks failed:\n{0}")]
    AssumptionsFailed(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("sweep grid has {cells} cells, cap is {cap}")]
    GridTooLarge { cells: usize, cap: usize },
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn resolve_instance(source: &InstanceSource) -> Result<NamedInstance, ExperimentError> {
    match source {
        InstanceSource::Named { name } => match name.as_str() {
            "counterexample" => Ok(build_counterexample()),
            "coverage-comparison" | "table1" => Ok(build_table1_example()),
            other => Err(ExperimentError::UnknownInstance(other.to_string())),
        },
        InstanceSource::File { path } => {
            let bundle: InstanceBundle = load_json(path)?;
            Ok(bundle.to_instance()?)
        }
        InstanceSource::Random { spec } => Ok(random_instance(spec)?),
    }
}

/// Runs the enabled assumption checks against an instance. Descriptions are
/// included so diagnostics are self-explanatory.
pub fn check_assumptions(
    instance: &NamedInstance,
    toggles: &AssumptionToggles,
    gap_required: bool,
) -> Result<AssumptionReport, ExperimentError> {
    let mdp = &instance.mdp;
    let q_star = optimal_q(mdp)?;
    let mut checks = Vec::new();

    let q_member = instance.functions.members().iter().position(|f| {
        f.iter_entries().all(|(h, x, a, v)| (v - q_star.get(h, x, a)).abs() <= 1e-12)
    });
    checks.push(AssumptionCheck {
        name: "value-realizability".into(),
        description: "the optimal action-value table is a member of the value class".into(),
        enabled: toggles.value_realizability,
        passed: q_member.is_some(),
        detail: match q_member {
            Some(i) => format!("member '{}' matches the optimal values", instance.functions.name(i)),
            None => "no member matches the optimal values".into(),
        },
    });

    let pi_star = greedy_policy(&q_star, &TieRule::FirstIndex, DEFAULT_TIE_TOLERANCE);
    let ratio = density_ratio(mdp, &pi_star, &instance.data)?;
    let (w_passed, w_detail) = match &ratio {
        DensityRatio::Exists { table } => {
            let found = instance.weights.members().iter().position(|w| {
                w.iter_entries().all(|(h, x, a, v)| (v - table.get(h, x, a)).abs() <= 1e-12)
            });
            match found {
                Some(i) => (true, format!("member '{}' matches the optimal ratio", instance.weights.name(i))),
                None => (false, "the optimal ratio exists but no member matches it".into()),
            }
        }
        DensityRatio::Undefined { h, state, action } => (
            false,
            format!(
                "the optimal ratio does not exist: the data gives no mass to ({}, {}) at timestep {h}",
                mdp.state_name(*h, *state),
                mdp.action_name(*h, *state, *action)
            ),
        ),
    };
    checks.push(AssumptionCheck {
        name: "weight-realizability".into(),
        description: "the optimal density ratio exists and is a member of the weight class".into(),
        enabled: toggles.weight_realizability,
        passed: w_passed,
        detail: w_detail,
    });

    let range_violations = instance.functions.value_range_violations(mdp);
    checks.push(AssumptionCheck {
        name: "value-range".into(),
        description: "every value member stays inside the per-timestep range [0, H - h]".into(),
        enabled: toggles.value_range,
        passed: range_violations.is_empty(),
        detail: if range_violations.is_empty() {
            "all members in range".into()
        } else {
            format!("{} out-of-range entries, first in member '{}'", range_violations.len(), range_violations[0].0)
        },
    });

    let c_bound = class_bound_c(&instance.weights);
    checks.push(AssumptionCheck {
        name: "weight-bound".into(),
        description: "the weight class has a finite positive sup-norm bound".into(),
        enabled: toggles.weight_bound,
        passed: c_bound.is_finite() && c_bound > 0.0,
        detail: format!("bound = {c_bound}"),
    });

    let gap = instance.annotations.gap_q_star;
    checks.push(AssumptionCheck {
        name: "positive-gap".into(),
        description: "the optimal values have a positive finite action gap".into(),
        enabled: toggles.positive_gap && gap_required,
        passed: gap > 0.0 && gap.is_finite(),
        detail: format!("gap = {gap}"),
    });

    Ok(AssumptionReport { checks })
}

fn resolve_hyper(
    config: &ExperimentConfig,
    instance: &NamedInstance,
) -> Result<ResolvedHyper, ExperimentError> {
    let mdp = &instance.mdp;
    let horizon = mdp.horizon();
    let c_bound = class_bound_c(&instance.weights);
    let size_f = instance.functions.len();
    let size_w = instance.weights.len();
    match &config.hyper {
        HyperSpec::Guarantee { mode, eps, delta, c_gap } => {
            let gap = instance.annotations.gap_q_star;
            // Misspecification terms, computed exactly when the mode needs them.
            let (eps_f_val, eps_f_inf_val, eps_w_val) = match mode {
                GuaranteeMode::VstarRobust => {
                    let ef = eps_f(&instance.functions, &instance.weights, mdp, &instance.data)?;
                    let ew = eps_w(&instance.functions, &instance.weights, mdp, &instance.data)?;
                    (Some(ef.value), None, Some(ew.value))
                }
                GuaranteeMode::PolicyGapRobust => {
                    let threshold = c_gap.ok_or_else(|| {
                        ExperimentError::BadConfig("robust policy mode needs an explicit c_gap".into())
                    })?;
                    let screened = prescreen(&instance.functions, threshold, config.ties.tolerance)?;
                    let ef = eps_f(&screened, &instance.weights, mdp, &instance.data)?;
                    let ew = eps_w(&instance.functions, &instance.weights, mdp, &instance.data)?;
                    (Some(ef.value), None, Some(ew.value))
                }
                GuaranteeMode::PolicyGapInfNorm => {
                    let einf = eps_f_inf(&instance.functions, mdp)?;
                    let ew = eps_w(&instance.functions, &instance.weights, mdp, &instance.data)?;
                    (None, Some(einf.value), Some(ew.value))
                }
                _ => (None, None, None),
            };
            let inputs = HyperInputs {
                eps: *eps,
                delta: *delta,
                horizon,
                c_bound,
                size_f,
                size_w,
                gap: if gap.is_finite() { Some(gap) } else { None },
                c_gap: *c_gap,
                eps_f: eps_f_val,
                eps_f_inf: eps_f_inf_val,
            };
            let params = hyperparameters(*mode, &inputs)?;
            let h = horizon as f64;
            let (metric, success_eps) = match mode {
                GuaranteeMode::VstarExact | GuaranteeMode::VstarLagrangian => {
                    (SuccessMetric::EstimateWithinEps, *eps)
                }
                GuaranteeMode::VstarRobust => (
                    SuccessMetric::EstimateWithinEps,
                    eps + h * eps_f_val.unwrap_or(0.0) + h * eps_w_val.unwrap_or(0.0),
                ),
                GuaranteeMode::PolicyGapExact | GuaranteeMode::PolicyGapLagrangian => {
                    (SuccessMetric::PolicyWithinEps, *eps)
                }
                GuaranteeMode::PolicyGapRobust => (
                    SuccessMetric::PolicyWithinEps,
                    eps + ((h * h + h) * eps_f_val.unwrap_or(0.0) + h * h * eps_w_val.unwrap_or(0.0))
                        / params.c_gap,
                ),
                GuaranteeMode::PolicyGapInfNorm => (
                    SuccessMetric::PolicyWithinEps,
                    eps + ((2.0 * h * h + h) * eps_f_inf_val.unwrap_or(0.0)
                        + h * h * eps_w_val.unwrap_or(0.0))
                        / params.c_gap,
                ),
            };
            Ok(ResolvedHyper {
                alpha: params.alpha,
                c_gap: params.c_gap,
                n: params.n,
                delta: *delta,
                success_metric: metric,
                success_eps: Some(success_eps),
            })
        }
        HyperSpec::Explicit { alpha, c_gap, n, delta, success_metric, success_eps } => {
            let alpha = match alpha {
                AlphaChoice::Fixed(a) => Some(*a),
                AlphaChoice::EpsStat => {
                    Some(eps_stat(*n, c_bound, horizon, size_f, size_w, *delta)?)
                }
                AlphaChoice::None => None,
            };
            Ok(ResolvedHyper {
                alpha,
                c_gap: *c_gap,
                n: *n,
                delta: *delta,
                success_metric: *success_metric,
                success_eps: *success_eps,
            })
        }
    }
}

fn effective_ties(config: &ExperimentConfig, instance: &NamedInstance) -> TieSettings {
    if config.ties.adversarial {
        if let Some(adv) = &instance.adversarial {
            return TieSettings {
                adversarial: true,
                greedy: adv.greedy.clone(),
                member: adv.member.clone(),
                tolerance: config.ties.tolerance,
            };
        }
    }
    config.ties.clone()
}

fn run_trial(
    instance: &NamedInstance,
    algorithm: &Algorithm,
    hyper: &ResolvedHyper,
    ties: &TieSettings,
    v_star: f64,
    seed: u64,
) -> TrialRow {
    let mut row = TrialRow { seed, ..TrialRow::default() };
    let mdp = &instance.mdp;

    let score_policy = |row: &mut TrialRow, policy: &crate::mdp::Policy| {
        if let Ok(eval) = policy_value(mdp, policy) {
            row.policy_suboptimality = Some(v_star - eval.value);
        }
    };

    let outcome: Result<(), String> = (|| {
        match algorithm {
            Algorithm::Pabc | Algorithm::PopulationPabc => {
                let config = PabcConfig {
                    alpha: hyper.alpha.unwrap_or(0.0),
                    c_gap: hyper.c_gap,
                    greedy_tie: ties.greedy.clone(),
                    member_tie: ties.member.clone(),
                    tie_tolerance: ties.tolerance,
                };
                let dataset;
                let source = if matches!(algorithm, Algorithm::PopulationPabc) {
                    LossSource::Population(&instance.data)
                } else {
                    dataset = sample_dataset(mdp, &instance.data, hyper.n, seed)
                        .map_err(|e| e.to_string())?;
                    LossSource::Empirical(&dataset)
                };
                let sel = pabc(mdp, &instance.functions, &instance.weights, source, &config)
                    .map_err(|e| e.to_string())?;
                row.chosen = Some(sel.chosen_name.clone());
                row.estimate = Some(sel.estimate);
                row.estimate_error = Some((sel.estimate - v_star).abs());
                row.prescreen_count =
                    Some(sel.feasibility.iter().filter(|m| m.prescreen_passed).count());
                row.feasible_count = Some(sel.feasibility.iter().filter(|m| m.feasible).count());
                score_policy(&mut row, &sel.policy);
                Ok(())
            }
            Algorithm::PabcL | Algorithm::PopulationPabcL => {
                let dataset;
                let source = if matches!(algorithm, Algorithm::PopulationPabcL) {
                    LossSource::Population(&instance.data)
                } else {
                    dataset = sample_dataset(mdp, &instance.data, hyper.n, seed)
                        .map_err(|e| e.to_string())?;
                    LossSource::Empirical(&dataset)
                };
                let sel = pabc_l(
                    mdp,
                    &instance.functions,
                    &instance.weights,
                    source,
                    hyper.c_gap,
                    &ties.greedy,
                    &ties.member,
                    ties.tolerance,
                )
                .map_err(|e| e.to_string())?;
                row.chosen = Some(sel.chosen_name.clone());
                row.estimate = Some(sel.estimate);
                row.estimate_error = Some((sel.estimate - v_star).abs());
                row.prescreen_count =
                    Some(sel.feasibility.iter().filter(|m| m.prescreen_passed).count());
                row.feasible_count = Some(sel.feasibility.iter().filter(|m| m.feasible).count());
                score_policy(&mut row, &sel.policy);
                Ok(())
            }
            Algorithm::PabcOa { iteration_cap, initial_guess } => {
                let dataset = sample_dataset(mdp, &instance.data, hyper.n, seed)
                    .map_err(|e| e.to_string())?;
                let options = OaOptions {
                    delta: hyper.delta,
                    seed: derive_seed(seed, 0xB00),
                    iteration_cap: *iteration_cap,
                    initial_guess: *initial_guess,
                    greedy_tie: ties.greedy.clone(),
                    member_tie: ties.member.clone(),
                    tie_tolerance: ties.tolerance,
                };
                match pabc_oa(mdp, &instance.functions, &instance.weights, &dataset, mdp, &options) {
                    Ok((policy, transcript)) => {
                        let last = transcript.iterations.last().expect("stopped run has iterations");
                        row.estimate = last.v_star_estimate;
                        row.estimate_error = last.v_star_estimate.map(|v| (v - v_star).abs());
                        row.oa_iterations = transcript.stopped_at.map(|t| t + 1);
                        row.oa_online_samples = Some(transcript.total_online_samples);
                        score_policy(&mut row, &policy);
                        Ok(())
                    }
                    Err(OaError::IterationCap { transcript, .. }) => {
                        row.oa_iterations = Some(transcript.iterations.len() as u32);
                        row.oa_online_samples = Some(transcript.total_online_samples);
                        Err("iteration cap reached".into())
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
        }
    })();

    if let Err(e) = outcome {
        row.error = Some(e);
        row.success = false;
        return row;
    }

    row.success = match hyper.success_eps {
        None => true,
        Some(threshold) => match hyper.success_metric {
            SuccessMetric::EstimateWithinEps => {
                row.estimate_error.is_some_and(|err| err <= threshold)
            }
            SuccessMetric::PolicyWithinEps => {
                row.policy_suboptimality.is_some_and(|gap| gap <= threshold)
            }
        },
    };
    row
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

/// Aggregates are always derived from the per-trial rows, never accumulated
/// separately.
pub fn aggregate_from_rows(rows: &[TrialRow], target: Option<f64>) -> Aggregate {
    let successes = rows.iter().filter(|r| r.success).count();
    let frequency = if rows.is_empty() { 0.0 } else { successes as f64 / rows.len() as f64 };
    let mut est: Vec<f64> = rows.iter().filter_map(|r| r.estimate_error).collect();
    let mut pol: Vec<f64> = rows.iter().filter_map(|r| r.policy_suboptimality).collect();
    Aggregate {
        trials: rows.len(),
        successes,
        success_frequency: frequency,
        target_frequency: target,
        met_target: target.map(|t| frequency >= t),
        median_estimate_error: median(&mut est),
        median_policy_suboptimality: median(&mut pol),
        error_count: rows.iter().filter(|r| r.error.is_some()).count(),
    }
}

/// Validates the instance, resolves hyperparameters, runs all trials in
/// parallel over derived seeds, and assembles the report in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<TrialReport, ExperimentError> {
    if config.trials == 0 {
        return Err(ExperimentError::BadConfig("need at least one trial".into()));
    }
    let instance = resolve_instance(&config.instance)?;
    let hyper = resolve_hyper(config, &instance)?;
    let gap_required = matches!(
        &config.hyper,
        HyperSpec::Guarantee {
            mode: GuaranteeMode::PolicyGapExact
                | GuaranteeMode::PolicyGapLagrangian
                | GuaranteeMode::PolicyGapInfNorm,
            ..
        }
    );
    let assumptions = check_assumptions(&instance, &config.assumptions, gap_required)?;
    if !assumptions.all_enabled_pass() {
        let failing: Vec<String> = assumptions
            .checks
            .iter()
            .filter(|c| c.enabled && !c.passed)
            .map(|c| format!("- {} ({}): {}", c.name, c.description, c.detail))
            .collect();
        return Err(ExperimentError::AssumptionsFailed(failing.join("\n")));
    }

    let ties = effective_ties(config, &instance);
    let v_star = instance.annotations.v_star;
    let mut rows: Vec<TrialRow> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(config.base_seed, i as u64);
            run_trial(&instance, &config.algorithm, &hyper, &ties, v_star, seed)
        })
        .collect();
    rows.sort_by_key(|r| r.seed);
    let aggregate = aggregate_from_rows(&rows, Some(1.0 - hyper.delta));
    Ok(TrialReport {
        instance_name: instance.name.clone(),
        algorithm: config.algorithm.clone(),
        hyper,
        v_star,
        assumptions,
        rows,
        aggregate,
    })
}

/// Cartesian sweep grid. Empty dimensions inherit the base configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub c_gap: Vec<f64>,
    #[serde(default = "default_cell_cap")]
    pub max_cells: usize,
}

fn default_cell_cap() -> usize {
    512
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: Option<usize>,
    pub eps: Option<f64>,
    pub c_gap: Option<f64>,
    pub resolved_alpha: Option<f64>,
    /// Members surviving prescreening in the first trial of the cell.
    pub prescreen_count: Option<usize>,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Runs one experiment per grid cell, overriding the base configuration
/// with the cell's values, and emits one aggregate row per cell.
pub fn sweep(config: &ExperimentConfig, grid: &SweepGrid) -> Result<SweepTable, ExperimentError> {
    let n_axis: Vec<Option<usize>> =
        if grid.n.is_empty() { vec![None] } else { grid.n.iter().copied().map(Some).collect() };
    let eps_axis: Vec<Option<f64>> =
        if grid.eps.is_empty() { vec![None] } else { grid.eps.iter().copied().map(Some).collect() };
    let c_gap_axis: Vec<Option<f64>> =
        if grid.c_gap.is_empty() { vec![None] } else { grid.c_gap.iter().copied().map(Some).collect() };
    if grid.n.is_empty() && grid.eps.is_empty() && grid.c_gap.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    let cells = n_axis.len() * eps_axis.len() * c_gap_axis.len();
    if cells > grid.max_cells {
        return Err(ExperimentError::GridTooLarge { cells, cap: grid.max_cells });
    }

    let mut rows = Vec::with_capacity(cells);
    for &n in &n_axis {
        for &eps in &eps_axis {
            for &c_gap in &c_gap_axis {
                let mut cell = config.clone();
                cell.hyper = override_hyper(&config.hyper, n, eps, c_gap)?;
                let report = run_experiment(&cell)?;
                rows.push(SweepRow {
                    n,
                    eps,
                    c_gap,
                    resolved_alpha: report.hyper.alpha,
                    prescreen_count: report.rows.first().and_then(|r| r.prescreen_count),
                    aggregate: report.aggregate,
                });
            }
        }
    }
    Ok(SweepTable { rows })
}

fn override_hyper(
    base: &HyperSpec,
    n: Option<usize>,
    eps: Option<f64>,
    c_gap: Option<f64>,
) -> Result<HyperSpec, ExperimentError> {
    match base {
        HyperSpec::Guarantee { mode, eps: base_eps, delta, c_gap: base_c_gap } => {
            if n.is_some() {
                return Err(ExperimentError::BadConfig(
                    "guarantee modes derive n; sweep n with explicit hyperparameters".into(),
                ));
            }
            Ok(HyperSpec::Guarantee {
                mode: *mode,
                eps: eps.unwrap_or(*base_eps),
                delta: *delta,
                c_gap: c_gap.or(*base_c_gap),
            })
        }
        HyperSpec::Explicit { alpha, c_gap: base_c_gap, n: base_n, delta, success_metric, success_eps } => {
            if eps.is_some() {
                return Err(ExperimentError::BadConfig(
                    "explicit hyperparameters have no eps axis; sweep n or c_gap".into(),
                ));
            }
            Ok(HyperSpec::Explicit {
                alpha: *alpha,
                c_gap: c_gap.unwrap_or(*base_c_gap),
                n: n.unwrap_or(*base_n),
                delta: *delta,
                success_metric: *success_metric,
                success_eps: *success_eps,
            })
        }
    }
}

/// Writes per-trial rows as CSV.
pub fn write_trial_csv(report: &TrialReport, path: &Path) -> Result<(), ExperimentError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "seed",
        "success",
        "chosen",
        "estimate",
        "estimate_error",
        "policy_suboptimality",
        "prescreen_count",
        "feasible_count",
        "oa_iterations",
        "oa_online_samples",
        "error",
    ])?;
    let fmt_f = |v: Option<f64>| v.map(|x| format!("{x:.17}")).unwrap_or_default();
    for row in &report.rows {
        writer.write_record([
            row.seed.to_string(),
            row.success.to_string(),
            row.chosen.clone().unwrap_or_default(),
            fmt_f(row.estimate),
            fmt_f(row.estimate_error),
            fmt_f(row.policy_suboptimality),
            row.prescreen_count.map(|v| v.to_string()).unwrap_or_default(),
            row.feasible_count.map(|v| v.to_string()).unwrap_or_default(),
            row.oa_iterations.map(|v| v.to_string()).unwrap_or_default(),
            row.oa_online_samples.map(|v| v.to_string()).unwrap_or_default(),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush().map_err(|e| ExperimentError::Io(IoError::Io(e)))?;
    Ok(())
}

/// Writes sweep aggregates as CSV, one row per cell.
pub fn write_sweep_csv(table: &SweepTable, path: &Path) -> Result<(), ExperimentError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "n",
        "eps",
        "c_gap",
        "resolved_alpha",
        "prescreen_count",
        "trials",
        "successes",
        "success_frequency",
        "median_estimate_error",
        "median_policy_suboptimality",
        "error_count",
    ])?;
    let fmt_f = |v: Option<f64>| v.map(|x| format!("{x:.17}")).unwrap_or_default();
    for row in &table.rows {
        writer.write_record([
            row.n.map(|v| v.to_string()).unwrap_or_default(),
            fmt_f(row.eps),
            fmt_f(row.c_gap),
            fmt_f(row.resolved_alpha),
            row.prescreen_count.map(|v| v.to_string()).unwrap_or_default(),
            row.aggregate.trials.to_string(),
            row.aggregate.successes.to_string(),
            format!("{:.6}", row.aggregate.success_frequency),
            fmt_f(row.aggregate.median_estimate_error),
            fmt_f(row.aggregate.median_policy_suboptimality),
            row.aggregate.error_count.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| ExperimentError::Io(IoError::Io(e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn population_counterexample_config(adversarial: bool, c_gap: f64) -> ExperimentConfig {
        ExperimentConfig {
            instance: InstanceSource::Named { name: "counterexample".into() },
            algorithm: Algorithm::PopulationPabc,
            hyper: HyperSpec::Explicit {
                alpha: AlphaChoice::Fixed(0.0),
                c_gap,
                n: 1,
                delta: 0.1,
                success_metric: SuccessMetric::PolicyWithinEps,
                success_eps: Some(0.5),
            },
            trials: 1,
            base_seed: 7,
            assumptions: AssumptionToggles::default(),
            ties: TieSettings { adversarial, ..TieSettings::default() },
        }
    }

    #[test]
    fn adversarial_population_run_fails_and_prescreened_run_succeeds() {
        let report = run_experiment(&population_counterexample_config(true, 0.0)).unwrap();
        assert_eq!(report.rows[0].chosen.as_deref(), Some("f_bad"));
        assert_eq!(report.rows[0].policy_suboptimality, Some(1.0));
        assert!(!report.rows[0].success);

        let report = run_experiment(&population_counterexample_config(true, 1.0)).unwrap();
        assert_eq!(report.rows[0].chosen.as_deref(), Some("q_star"));
        assert_eq!(report.rows[0].policy_suboptimality, Some(0.0));
        assert!(report.rows[0].success);
    }

    #[test]
    fn reports_are_deterministic() {
        let config = population_counterexample_config(true, 1.0);
        let a = serde_json::to_string(&run_experiment(&config).unwrap()).unwrap();
        let b = serde_json::to_string(&run_experiment(&config).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assumption_failure_blocks_trials() {
        let mut config = population_counterexample_config(false, 0.0);
        // The coverage-comparison instance has no optimal density ratio, so
        // weight realizability must fail before any trial runs.
        config.instance = InstanceSource::Named { name: "coverage-comparison".into() };
        match run_experiment(&config) {
            Err(ExperimentError::AssumptionsFailed(msg)) => {
                assert!(msg.contains("weight-realizability"));
            }
            other => panic!("expected assumption failure, got {other:?}"),
        }
        // Disabling the check lets the run proceed.
        config.assumptions.weight_realizability = false;
        assert!(run_experiment(&config).is_ok());
    }

    #[test]
    fn empty_grid_rejected() {
        let config = population_counterexample_config(false, 0.0);
        let grid = SweepGrid { n: vec![], eps: vec![], c_gap: vec![], max_cells: 10 };
        assert!(matches!(sweep(&config, &grid), Err(ExperimentError::EmptyGrid)));
    }

    #[test]
    fn c_gap_sweep_traces_prescreen_size() {
        let config = population_counterexample_config(true, 0.0);
        let grid = SweepGrid { n: vec![], eps: vec![], c_gap: vec![0.0, 0.5, 1.5], max_cells: 10 };
        let table = sweep(&config, &grid).unwrap();
        assert_eq!(table.rows[0].prescreen_count, Some(2));
        assert_eq!(table.rows[1].prescreen_count, Some(1));
        // c_gap = 1.5 exceeds every member's gap: the run errors per trial.
        assert_eq!(table.rows[2].aggregate.error_count, 1);
    }
}
