//! Pessimistic selection under average-Bellman-error constraints.
//!
//! The constrained selector prescreens the candidate class by action gap,
//! keeps the members whose worst-case weighted Bellman loss stays within a
//! threshold `alpha`, and returns the surviving member with the smallest
//! initial-state value. The Lagrangian variant drops the threshold and
//! instead penalizes the objective by `H` times the worst-case loss.
//!
//! Both selectors run in two data modes: empirical (losses averaged over an
//! offline dataset) and population-exact (losses summed against the data
//! distribution itself). The population mode is a first-class variant used
//! for infinite-data studies, not a testing shortcut.

use serde::{Deserialize, Serialize};

use crate::data::{DataDistribution, Dataset};
use crate::mdp::{
    gap_of_function, greedy_policy, occupancy, LayeredMdp, MdpError, Policy, TieRule,
    DEFAULT_TIE_TOLERANCE,
};
use crate::spaces::{bellman_residuals, ClassError, FunctionClass, WeightClass};
use crate::table::TableStack;

/// Where the selector's losses come from.
#[derive(Clone, Copy, Debug)]
pub enum LossSource<'a> {
    /// Sample averages over an offline dataset.
    Empirical(&'a Dataset),
    /// Exact expectations against the data distribution (infinite data).
    Population(&'a DataDistribution),
}

impl LossSource<'_> {
    pub fn is_population(&self) -> bool {
        matches!(self, LossSource::Population(_))
    }
}

/// How to break ties among members with equal objective values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemberTieRule {
    /// Deterministic default: the earliest member in class order.
    #[default]
    LowestIndex,
    /// Pick the named member whenever it is tied with the minimum;
    /// otherwise fall back to lowest index. Exists to make adversarial
    /// tie-breaking reproducible.
    Preferred(String),
}

/// Selector configuration. `alpha` is the loss threshold (ignored by the
/// Lagrangian variant) and `c_gap` the prescreening threshold.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PabcConfig {
    pub alpha: f64,
    pub c_gap: f64,
    #[serde(default)]
    pub greedy_tie: TieRule,
    #[serde(default)]
    pub member_tie: MemberTieRule,
    pub tie_tolerance: f64,
}

impl Default for PabcConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            c_gap: 0.0,
            greedy_tie: TieRule::FirstIndex,
            member_tie: MemberTieRule::LowestIndex,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }
}

/// Which selector produced a [`Selection`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverVariant {
    Pabc,
    PabcL,
    PopulationPabc,
    PopulationPabcL,
}

/// Per-member diagnostics recorded by every selector run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemberDiagnostics {
    pub name: String,
    pub gap: f64,
    pub prescreen_passed: bool,
    /// Loss per weight member and timestep, indexed `[w][h]`.
    pub losses: Vec<Vec<f64>>,
    pub max_abs_loss: f64,
    /// Within threshold (constrained variant) or simply retained by
    /// prescreening (Lagrangian variant).
    pub feasible: bool,
    /// Value of the member's greedy action at the initial state.
    pub initial_value: f64,
    /// What the selector minimized for this member.
    pub objective: f64,
}

/// Output of a selector run: the chosen member, its greedy policy, the
/// return estimate, and the full feasibility matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Selection {
    pub variant: SolverVariant,
    pub chosen_index: usize,
    pub chosen_name: String,
    pub policy: Policy,
    pub estimate: f64,
    /// Threshold used by the constrained variant; absent for Lagrangian runs.
    pub alpha: Option<f64>,
    pub c_gap: f64,
    pub feasibility: Vec<MemberDiagnostics>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("dataset has no tuples at timestep {h}")]
    EmptyDataset { h: usize },
    #[error("no member satisfies the loss constraints at alpha = {alpha}; closest is '{closest}' with max |loss| = {closest_loss} (binding weight '{binding_weight}', timestep {binding_h})")]
    EmptyFeasibleSet {
        alpha: f64,
        closest: String,
        closest_loss: f64,
        binding_weight: String,
        binding_h: usize,
    },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Statistical deviation bound for the empirical losses: with probability at
/// least `1 - delta`, every (member, weight, timestep) empirical loss lies
/// within this distance of its expectation.
pub fn eps_stat(
    n: usize,
    c_bound: f64,
    horizon: usize,
    size_f: usize,
    size_w: usize,
    delta: f64,
) -> Result<f64, SolverError> {
    if n == 0 || horizon == 0 || size_f == 0 || size_w == 0 {
        return Err(SolverError::BadParameter(
            "n, horizon, and class sizes must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(SolverError::BadParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if c_bound <= 0.0 {
        return Err(SolverError::BadParameter(format!("weight bound must be positive, got {c_bound}")));
    }
    let h = horizon as f64;
    let log_term = (2.0 * size_f as f64 * size_w as f64 * h / delta).ln();
    Ok(2.0 * c_bound * h * (log_term / (2.0 * n as f64)).sqrt())
}

/// Per-member greedy next-step values: `next[h][x'] = f_{h+1}(x', pi_f(x'))`,
/// with zeros at `h = H - 1`.
fn greedy_next_values(f: &TableStack, policy: &Policy) -> Vec<Vec<f64>> {
    let horizon = f.horizon();
    (0..horizon)
        .map(|h| {
            if h + 1 < horizon {
                f.layer(h + 1)
                    .iter()
                    .enumerate()
                    .map(|(x, _)| {
                        let a = policy.action(h + 1, x).expect("greedy policy is deterministic");
                        f.get(h + 1, x, a)
                    })
                    .collect()
            } else {
                Vec::new() // terminal layer: value identically zero
            }
        })
        .collect()
}

/// Sample-average loss of `(f, w)` at timestep `h`:
/// `(1/n) sum_i w(x_i, a_i) (f(x_i, a_i) - r_i - f_{h+1}(x'_i, pi_f(x'_i)))`,
/// with the terminal value taken as zero.
pub fn empirical_loss(
    f: &TableStack,
    w: &TableStack,
    h: usize,
    data: &Dataset,
    greedy_tie: &TieRule,
    tie_tolerance: f64,
) -> Result<f64, SolverError> {
    let tuples = &data.tuples[h];
    if tuples.is_empty() {
        return Err(SolverError::EmptyDataset { h });
    }
    let policy = greedy_policy(f, greedy_tie, tie_tolerance);
    let next = greedy_next_values(f, &policy);
    let mut sum = 0.0;
    for t in tuples {
        let continuation = if next[h].is_empty() { 0.0 } else { next[h][t.next_state] };
        sum += w.get(h, t.state, t.action) * (f.get(h, t.state, t.action) - t.reward - continuation);
    }
    Ok(sum / tuples.len() as f64)
}

/// Exact expectation of the empirical loss: the data-distribution-weighted
/// Bellman residual `E_dD[w_h (f_h - T_h f_{h+1})]`.
pub fn population_loss(
    f: &TableStack,
    w: &TableStack,
    h: usize,
    mdp: &LayeredMdp,
    data_dist: &DataDistribution,
) -> f64 {
    let res = bellman_residuals(mdp, f);
    let mut sum = 0.0;
    for x in 0..mdp.num_states(h) {
        for a in 0..mdp.num_actions(h, x) {
            sum += data_dist.get(h, x, a) * w.get(h, x, a) * res.get(h, x, a);
        }
    }
    sum
}

/// Average Bellman error of `f` along `policy` at timestep `h`: the expected
/// residual of `f` under the policy's timestep-`h` occupancy, with the next
/// action chosen greedily by `f`.
pub fn avg_bellman_error(
    f: &TableStack,
    policy: &Policy,
    h: usize,
    mdp: &LayeredMdp,
) -> Result<f64, SolverError> {
    let occ = occupancy(mdp, policy)?;
    let res = bellman_residuals(mdp, f);
    let mut sum = 0.0;
    for x in 0..mdp.num_states(h) {
        for a in 0..mdp.num_actions(h, x) {
            sum += occ.get(h, x, a) * res.get(h, x, a);
        }
    }
    Ok(sum)
}

/// Everything the selectors need about one member.
struct MemberEval {
    gap: f64,
    losses: Vec<Vec<f64>>,
    max_abs_loss: f64,
    initial_value: f64,
}

fn evaluate_members(
    mdp: &LayeredMdp,
    functions: &FunctionClass,
    weights: &WeightClass,
    source: LossSource<'_>,
    greedy_tie: &TieRule,
    tie_tolerance: f64,
) -> Result<Vec<MemberEval>, SolverError> {
    if let LossSource::Empirical(data) = source {
        for (h, layer) in data.tuples.iter().enumerate() {
            if layer.is_empty() {
                return Err(SolverError::EmptyDataset { h });
            }
        }
    }
    let horizon = mdp.horizon();
    let x0 = mdp.initial_state();
    let mut out = Vec::with_capacity(functions.len());
    for fi in 0..functions.len() {
        let f = functions.member(fi);
        let policy = greedy_policy(f, greedy_tie, tie_tolerance);
        let initial_value = f.get(0, x0, policy.action(0, x0).expect("deterministic"));
        let losses: Vec<Vec<f64>> = match source {
            LossSource::Empirical(data) => {
                let next = greedy_next_values(f, &policy);
                (0..weights.len())
                    .map(|wi| {
                        let w = weights.member(wi);
                        (0..horizon)
                            .map(|h| {
                                let tuples = &data.tuples[h];
                                let sum: f64 = tuples
                                    .iter()
                                    .map(|t| {
                                        let cont = if next[h].is_empty() {
                                            0.0
                                        } else {
                                            next[h][t.next_state]
                                        };
                                        w.get(h, t.state, t.action)
                                            * (f.get(h, t.state, t.action) - t.reward - cont)
                                    })
                                    .sum();
                                sum / tuples.len() as f64
                            })
                            .collect()
                    })
                    .collect()
            }
            LossSource::Population(data_dist) => {
                let res = bellman_residuals(mdp, f);
                (0..weights.len())
                    .map(|wi| {
                        let w = weights.member(wi);
                        (0..horizon)
                            .map(|h| {
                                let mut sum = 0.0;
                                for x in 0..mdp.num_states(h) {
                                    for a in 0..mdp.num_actions(h, x) {
                                        sum += data_dist.get(h, x, a)
                                            * w.get(h, x, a)
                                            * res.get(h, x, a);
                                    }
                                }
                                sum
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        let max_abs_loss = losses
            .iter()
            .flatten()
            .map(|l| l.abs())
            .fold(0.0, f64::max);
        out.push(MemberEval {
            gap: gap_of_function(f, tie_tolerance),
            losses,
            max_abs_loss,
            initial_value,
        });
    }
    Ok(out)
}

/// Survivors of the loss constraints at threshold `alpha`, with the full
/// per-(member, weight, timestep) loss matrix. No prescreening is applied;
/// pass an already-prescreened class when that step is wanted. An empty
/// survivor list is a legal value here.
pub fn feasible_set(
    mdp: &LayeredMdp,
    functions: &FunctionClass,
    weights: &WeightClass,
    source: LossSource<'_>,
    alpha: f64,
    greedy_tie: &TieRule,
    tie_tolerance: f64,
) -> Result<(Vec<usize>, Vec<MemberDiagnostics>), SolverError> {
    let evals = evaluate_members(mdp, functions, weights, source, greedy_tie, tie_tolerance)?;
    let mut survivors = Vec::new();
    let mut diagnostics = Vec::with_capacity(evals.len());
    for (i, eval) in evals.into_iter().enumerate() {
        let feasible = eval.max_abs_loss <= alpha;
        if feasible {
            survivors.push(i);
        }
        diagnostics.push(MemberDiagnostics {
            name: functions.name(i).to_string(),
            gap: eval.gap,
            prescreen_passed: true,
            losses: eval.losses,
            max_abs_loss: eval.max_abs_loss,
            feasible,
            initial_value: eval.initial_value,
            objective: eval.initial_value,
        });
    }
    Ok((survivors, diagnostics))
}

/// Lowest-index argmin over `candidates` (index, objective) pairs, with the
/// preferred-member override when it is tied within `tie_tolerance`.
fn select_member(
    candidates: &[(usize, f64)],
    member_tie: &MemberTieRule,
    tie_tolerance: f64,
    name_of: impl Fn(usize) -> String,
) -> usize {
    let min = candidates
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = candidates
        .iter()
        .filter(|&&(_, v)| v - min <= tie_tolerance)
        .map(|&(i, _)| i)
        .collect();
    match member_tie {
        MemberTieRule::LowestIndex => tied[0],
        MemberTieRule::Preferred(name) => tied
            .iter()
            .copied()
            .find(|&i| name_of(i) == *name)
            .unwrap_or(tied[0]),
    }
}

/// Constrained pessimistic selector: prescreen by gap, keep members whose
/// worst-case loss is within `alpha`, return the survivor with the smallest
/// initial-state value. The estimate is that member's initial-state value.
pub fn pabc(
    mdp: &LayeredMdp,
    functions: &FunctionClass,
    weights: &WeightClass,
    source: LossSource<'_>,
    config: &PabcConfig,
) -> Result<Selection, SolverError> {
    if config.alpha < 0.0 || config.c_gap < 0.0 {
        return Err(SolverError::BadParameter(
            "alpha and c_gap must be nonnegative".into(),
        ));
    }
    let evals = evaluate_members(mdp, functions, weights, source, &config.greedy_tie, config.tie_tolerance)?;

    let mut rejected = Vec::new();
    let mut diagnostics = Vec::with_capacity(evals.len());
    let mut candidates = Vec::new();
    for (i, eval) in evals.iter().enumerate() {
        let prescreen_passed = eval.gap >= config.c_gap;
        let feasible = prescreen_passed && eval.max_abs_loss <= config.alpha;
        if !prescreen_passed {
            rejected.push((functions.name(i).to_string(), eval.gap));
        }
        if feasible {
            candidates.push((i, eval.initial_value));
        }
        diagnostics.push(MemberDiagnostics {
            name: functions.name(i).to_string(),
            gap: eval.gap,
            prescreen_passed,
            losses: eval.losses.clone(),
            max_abs_loss: eval.max_abs_loss,
            feasible,
            initial_value: eval.initial_value,
            objective: eval.initial_value,
        });
    }
    if rejected.len() == functions.len() {
        return Err(SolverError::Class(ClassError::EmptyVersionSpace {
            threshold: config.c_gap,
            rejected,
        }));
    }
    if candidates.is_empty() {
        // Name the member closest to feasibility and its binding constraint.
        let (ci, eval) = evals
            .iter()
            .enumerate()
            .filter(|(_, e)| e.gap >= config.c_gap)
            .min_by(|(_, a), (_, b)| a.max_abs_loss.total_cmp(&b.max_abs_loss))
            .expect("at least one member passed prescreening");
        let (wi, h) = eval
            .losses
            .iter()
            .enumerate()
            .flat_map(|(wi, row)| row.iter().enumerate().map(move |(h, l)| (wi, h, l.abs())))
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(wi, h, _)| (wi, h))
            .expect("loss matrix is nonempty");
        return Err(SolverError::EmptyFeasibleSet {
            alpha: config.alpha,
            closest: functions.name(ci).to_string(),
            closest_loss: eval.max_abs_loss,
            binding_weight: weights.name(wi).to_string(),
            binding_h: h,
        });
    }
    let chosen_index = select_member(&candidates, &config.member_tie, config.tie_tolerance, |i| {
        functions.name(i).to_string()
    });
    let chosen = functions.member(chosen_index);
    let policy = greedy_policy(chosen, &config.greedy_tie, config.tie_tolerance);
    let variant = if source.is_population() { SolverVariant::PopulationPabc } else { SolverVariant::Pabc };
    Ok(Selection {
        variant,
        chosen_index,
        chosen_name: functions.name(chosen_index).to_string(),
        estimate: diagnostics[chosen_index].initial_value,
        policy,
        alpha: Some(config.alpha),
        c_gap: config.c_gap,
        feasibility: diagnostics,
    })
}

/// Lagrangian pessimistic selector: prescreen by gap, then minimize the
/// initial-state value plus `H` times the worst-case loss. No threshold is
/// taken; the estimate includes the penalty term.
#[allow(clippy::too_many_arguments)]
pub fn pabc_l(
    mdp: &LayeredMdp,
    functions: &FunctionClass,
    weights: &WeightClass,
    source: LossSource<'_>,
    c_gap: f64,
    greedy_tie: &TieRule,
    member_tie: &MemberTieRule,
    tie_tolerance: f64,
) -> Result<Selection, SolverError> {
    if c_gap < 0.0 {
        return Err(SolverError::BadParameter("c_gap must be nonnegative".into()));
    }
    let evals = evaluate_members(mdp, functions, weights, source, greedy_tie, tie_tolerance)?;
    let horizon = mdp.horizon() as f64;

    let mut rejected = Vec::new();
    let mut diagnostics = Vec::with_capacity(evals.len());
    let mut candidates = Vec::new();
    for (i, eval) in evals.iter().enumerate() {
        let prescreen_passed = eval.gap >= c_gap;
        let objective = eval.initial_value + horizon * eval.max_abs_loss;
        if prescreen_passed {
            candidates.push((i, objective));
        } else {
            rejected.push((functions.name(i).to_string(), eval.gap));
        }
        diagnostics.push(MemberDiagnostics {
            name: functions.name(i).to_string(),
            gap: eval.gap,
            prescreen_passed,
            losses: eval.losses.clone(),
            max_abs_loss: eval.max_abs_loss,
            feasible: prescreen_passed,
            initial_value: eval.initial_value,
            objective,
        });
    }
    if candidates.is_empty() {
        return Err(SolverError::Class(ClassError::EmptyVersionSpace { threshold: c_gap, rejected }));
    }
    let chosen_index = select_member(&candidates, member_tie, tie_tolerance, |i| {
        functions.name(i).to_string()
    });
    let chosen = functions.member(chosen_index);
    let policy = greedy_policy(chosen, greedy_tie, tie_tolerance);
    let variant = if source.is_population() { SolverVariant::PopulationPabcL } else { SolverVariant::PabcL };
    Ok(Selection {
        variant,
        chosen_index,
        chosen_name: functions.name(chosen_index).to_string(),
        estimate: diagnostics[chosen_index].objective,
        policy,
        alpha: None,
        c_gap,
        feasibility: diagnostics,
    })
}

/// Sample-size / threshold prescriptions, one per guarantee mode. Numbers
/// come straight from the stated formulas with no constant tuning; total
/// sample bounds are converted to a per-timestep count by dividing by the
/// horizon and rounding up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuaranteeMode {
    /// Identify the optimal return; no gap needed.
    VstarExact,
    /// Learn a near-optimal policy under a known positive gap.
    PolicyGapExact,
    /// Identify the optimal return under misspecification (needs the value
    /// class's approximation error).
    VstarRobust,
    /// Learn a near-optimal policy with a user-chosen gap threshold under
    /// misspecification.
    PolicyGapRobust,
    /// Learn a near-optimal policy given the gap and the sup-norm
    /// approximation error of the value class.
    PolicyGapInfNorm,
    /// Lagrangian variant of `VstarExact` (no threshold input).
    VstarLagrangian,
    /// Lagrangian variant of `PolicyGapExact` (no threshold input).
    PolicyGapLagrangian,
}

/// Inputs consumed by [`hyperparameters`]; mode-specific fields are optional.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HyperInputs {
    pub eps: f64,
    pub delta: f64,
    pub horizon: usize,
    /// Weight-class boundedness constant.
    pub c_bound: f64,
    pub size_f: usize,
    pub size_w: usize,
    /// Gap of the optimal values (modes that assume it known).
    pub gap: Option<f64>,
    /// User-chosen prescreening threshold (robust policy mode).
    pub c_gap: Option<f64>,
    /// Value-class approximation error (robust modes).
    pub eps_f: Option<f64>,
    /// Sup-norm value-class approximation error (inf-norm mode).
    pub eps_f_inf: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Loss threshold; absent for Lagrangian modes.
    pub alpha: Option<f64>,
    pub c_gap: f64,
    /// Required dataset size per timestep.
    pub n: usize,
    /// The raw bound on total samples (n times horizon) before rounding.
    pub total_samples: f64,
}

pub fn hyperparameters(mode: GuaranteeMode, inputs: &HyperInputs) -> Result<HyperParams, SolverError> {
    let HyperInputs { eps, delta, horizon, c_bound, size_f, size_w, .. } = *inputs;
    if eps <= 0.0 || !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(SolverError::BadParameter("need eps > 0 and delta in (0, 1)".into()));
    }
    if horizon == 0 || size_f == 0 || size_w == 0 || c_bound <= 0.0 {
        return Err(SolverError::BadParameter("horizon, class sizes, and weight bound must be positive".into()));
    }
    let h = horizon as f64;
    let log_term = (2.0 * size_f as f64 * size_w as f64 * h / delta).ln();
    let c2 = c_bound * c_bound;
    let require = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| SolverError::BadParameter(format!("mode requires {name}")))
    };
    let (alpha, c_gap, total) = match mode {
        GuaranteeMode::VstarExact => {
            let total = 8.0 * c2 * h.powi(5) * log_term / (eps * eps);
            (Some(eps / (2.0 * h)), 0.0, total)
        }
        GuaranteeMode::PolicyGapExact => {
            let gap = require("gap", inputs.gap)?;
            if gap <= 0.0 {
                return Err(SolverError::BadParameter("gap must be positive".into()));
            }
            let total = 8.0 * c2 * h.powi(7) * log_term / (eps * eps * gap * gap);
            (Some(eps * gap / (2.0 * h * h)), gap, total)
        }
        GuaranteeMode::VstarRobust => {
            let eps_f = require("eps_f", inputs.eps_f)?;
            let total = 8.0 * c2 * h.powi(5) * log_term / (eps * eps);
            (Some(eps / (2.0 * h) + eps_f), 0.0, total)
        }
        GuaranteeMode::PolicyGapRobust => {
            let c_gap = require("c_gap", inputs.c_gap)?;
            let eps_f = require("eps_f (for the prescreened class)", inputs.eps_f)?;
            if c_gap <= 0.0 {
                return Err(SolverError::BadParameter("c_gap must be positive".into()));
            }
            let total = 8.0 * c2 * h.powi(7) * log_term / (eps * eps * c_gap * c_gap);
            (Some(eps * c_gap / (2.0 * h * h) + eps_f), c_gap, total)
        }
        GuaranteeMode::PolicyGapInfNorm => {
            let gap = require("gap", inputs.gap)?;
            let eps_inf = require("eps_f_inf", inputs.eps_f_inf)?;
            if 2.0 * eps_inf >= gap {
                return Err(SolverError::BadParameter(format!(
                    "inf-norm mode needs 2 * eps_f_inf < gap (got eps_f_inf = {eps_inf}, gap = {gap})"
                )));
            }
            let c_gap = gap - 2.0 * eps_inf;
            let total = 8.0 * c2 * h.powi(7) * log_term / (eps * eps * c_gap * c_gap);
            (Some(eps * c_gap / (2.0 * h * h) + 2.0 * eps_inf), c_gap, total)
        }
        GuaranteeMode::VstarLagrangian => {
            let total = 8.0 * c2 * h.powi(5) * log_term / (eps * eps);
            (None, 0.0, total)
        }
        GuaranteeMode::PolicyGapLagrangian => {
            let gap = require("gap", inputs.gap)?;
            if gap <= 0.0 {
                return Err(SolverError::BadParameter("gap must be positive".into()));
            }
            let total = 32.0 * c2 * h.powi(7) * log_term / (eps * eps * gap * gap);
            (None, gap, total)
        }
    };
    Ok(HyperParams { alpha, c_gap, n: (total / h).ceil() as usize, total_samples: total })
}

/// Per-function row of the consistency report: which weights give mass only
/// to the function's greedy actions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionConsistency {
    pub name: String,
    pub consistent_weights: Vec<String>,
    pub has_consistent_weight: bool,
}

/// Per-weight row: the data-weighted total reward against the supplied
/// optimal-return estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightReturnCheck {
    pub name: String,
    pub weighted_return: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub v_star_estimate: f64,
    pub tolerance: f64,
    pub functions: Vec<FunctionConsistency>,
    pub weights: Vec<WeightReturnCheck>,
}

impl ConsistencyReport {
    /// Indices of functions having at least one consistent weight.
    pub fn surviving_functions(&self) -> Vec<usize> {
        self.functions
            .iter()
            .enumerate()
            .filter(|(_, f)| f.has_consistent_weight)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of weights passing the return check.
    pub fn surviving_weights(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| w.passes)
            .map(|(i, _)| i)
            .collect()
    }

    /// True when the checks would remove nothing.
    pub fn changes_nothing(&self) -> bool {
        self.functions.iter().all(|f| f.has_consistent_weight)
            && self.weights.iter().all(|w| w.passes)
    }
}

/// Extra sanity constraints: a candidate function should have some weight
/// supported only on its greedy actions, and a weight reweighting the data
/// rewards should reproduce the optimal return. Reports violations without
/// removing anyone; callers may filter on the surviving indices.
#[allow(clippy::too_many_arguments)]
pub fn consistency_filters(
    mdp: &LayeredMdp,
    functions: &FunctionClass,
    weights: &WeightClass,
    source: LossSource<'_>,
    v_star_estimate: f64,
    tolerance: f64,
    greedy_tie: &TieRule,
    tie_tolerance: f64,
) -> Result<ConsistencyReport, SolverError> {
    let mut function_rows = Vec::with_capacity(functions.len());
    for fi in 0..functions.len() {
        let f = functions.member(fi);
        let policy = greedy_policy(f, greedy_tie, tie_tolerance);
        let mut consistent = Vec::new();
        for wi in 0..weights.len() {
            let w = weights.member(wi);
            let ok = w.iter_entries().all(|(h, x, a, v)| {
                v == 0.0 || policy.action(h, x) == Some(a)
            });
            if ok {
                consistent.push(weights.name(wi).to_string());
            }
        }
        function_rows.push(FunctionConsistency {
            name: functions.name(fi).to_string(),
            has_consistent_weight: !consistent.is_empty(),
            consistent_weights: consistent,
        });
    }

    let mut weight_rows = Vec::with_capacity(weights.len());
    for wi in 0..weights.len() {
        let w = weights.member(wi);
        let weighted_return = match source {
            LossSource::Population(data_dist) => {
                let mut total = 0.0;
                for h in 0..mdp.horizon() {
                    for x in 0..mdp.num_states(h) {
                        for a in 0..mdp.num_actions(h, x) {
                            total += data_dist.get(h, x, a) * w.get(h, x, a) * mdp.reward(h, x, a);
                        }
                    }
                }
                total
            }
            LossSource::Empirical(data) => {
                let mut total = 0.0;
                for (h, tuples) in data.tuples.iter().enumerate() {
                    if tuples.is_empty() {
                        return Err(SolverError::EmptyDataset { h });
                    }
                    let sum: f64 = tuples
                        .iter()
                        .map(|t| w.get(h, t.state, t.action) * t.reward)
                        .sum();
                    total += sum / tuples.len() as f64;
                }
                total
            }
        };
        weight_rows.push(WeightReturnCheck {
            name: weights.name(wi).to_string(),
            weighted_return,
            passes: (weighted_return - v_star_estimate).abs() <= tolerance,
        });
    }

    Ok(ConsistencyReport {
        v_star_estimate,
        tolerance,
        functions: function_rows,
        weights: weight_rows,
    })
}
