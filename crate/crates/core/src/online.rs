//! Monte-Carlo policy evaluation through online rollouts, and the doubling
//! procedure that learns a near-optimal policy when the action gap of the
//! optimal values is unknown.
//!
//! The doubling procedure halves a gap guess each iteration, runs the
//! constrained selector twice per iteration (once threshold-only to estimate
//! the optimal return, once with gap prescreening to propose a policy),
//! evaluates the proposed policy by seeded rollouts, and stops as soon as
//! the rollout estimate certifies near-optimality. Online access is behind a
//! trait so the sample budget stays countable and substitutable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{class_bound_c, derive_seed, Dataset};
use crate::mdp::{gap_of_function, LayeredMdp, Policy, TieRule, DEFAULT_TIE_TOLERANCE};
use crate::solver::{pabc, LossSource, MemberTieRule, PabcConfig, SolverError};
use crate::spaces::{FunctionClass, WeightClass};

/// One episode of online access: run `policy` from the initial state and
/// report the per-timestep rewards. Implementations must be deterministic
/// given the seed.
pub trait OnlineRollout {
    fn rollout_rewards(&self, policy: &Policy, seed: u64) -> Vec<f64>;

    /// Online samples consumed by one rollout (one per timestep).
    fn samples_per_rollout(&self) -> u64;
}

impl OnlineRollout for LayeredMdp {
    fn rollout_rewards(&self, policy: &Policy, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut rewards = Vec::with_capacity(self.horizon());
        let mut state = self.initial_state();
        for h in 0..self.horizon() {
            let action = match policy.action(h, state) {
                Some(a) => a,
                None => {
                    // Stochastic policy: inverse-CDF draw over the action row.
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut chosen = self.num_actions(h, state) - 1;
                    for a in 0..self.num_actions(h, state) {
                        acc += policy.prob(h, state, a);
                        if u < acc {
                            chosen = a;
                            break;
                        }
                    }
                    chosen
                }
            };
            rewards.push(self.reward(h, state, action));
            let u: f64 = rng.gen();
            let row = self.transition(h, state, action);
            let mut acc = 0.0;
            let mut next = row.len() - 1;
            for (xn, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = xn;
                    break;
                }
            }
            state = next;
        }
        rewards
    }

    fn samples_per_rollout(&self) -> u64 {
        self.horizon() as u64
    }
}

/// Mean return of `m` seeded rollouts. Per-rollout seeds are derived from
/// (`seed`, rollout index), so rollouts are independent and the whole
/// estimate is reproducible.
pub fn monte_carlo_eval(
    online: &impl OnlineRollout,
    policy: &Policy,
    m: u64,
    seed: u64,
) -> f64 {
    assert!(m > 0, "need at least one rollout");
    let total: f64 = (0..m)
        .map(|i| {
            online
                .rollout_rewards(policy, derive_seed(seed, i))
                .iter()
                .sum::<f64>()
        })
        .sum();
    total / m as f64
}

/// Online sample budget (total steps, not episodes) sufficient for the
/// iteration-`t` rollout estimate to land within `eps_t` of the true return
/// with the doubling schedule's per-iteration failure share:
/// `ceil(2 H^3 ln(12 * 2^t / delta) / eps_t^2)`.
pub fn mc_sample_count(eps_t: f64, horizon: usize, delta: f64, t: u32) -> Result<u64, SolverError> {
    if eps_t <= 0.0 || horizon == 0 {
        return Err(SolverError::BadParameter("need eps_t > 0 and horizon > 0".into()));
    }
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(SolverError::BadParameter("delta must lie in (0, 1)".into()));
    }
    let h = horizon as f64;
    let log_term = (12.0 / delta).ln() + t as f64 * std::f64::consts::LN_2;
    Ok((2.0 * h.powi(3) * log_term / (eps_t * eps_t)).ceil() as u64)
}

/// Where the doubling schedule starts its gap guess.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    /// Start at the horizon, the largest value any gap can take under the
    /// value-range assumption.
    Horizon,
    /// Start at the largest member gap of the candidate class (tighter).
    /// Clamped to the horizon when some member's gap is vacuously infinite.
    ClassMaxGap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OaOptions {
    pub delta: f64,
    pub seed: u64,
    pub iteration_cap: u32,
    pub initial_guess: InitialGuess,
    pub greedy_tie: TieRule,
    pub member_tie: MemberTieRule,
    pub tie_tolerance: f64,
}

impl Default for OaOptions {
    fn default() -> Self {
        Self {
            delta: 0.1,
            seed: 0,
            iteration_cap: 40,
            initial_guess: InitialGuess::Horizon,
            greedy_tie: TieRule::FirstIndex,
            member_tie: MemberTieRule::LowestIndex,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }
}

/// Record of one doubling iteration. Selector failures (for instance a gap
/// guess still above every member's gap) are recorded, not fatal: the
/// schedule proceeds to the next halving.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OaIteration {
    pub t: u32,
    pub gap_guess: f64,
    pub iota: f64,
    pub eps: f64,
    pub v_star_estimate: Option<f64>,
    pub v_star_error: Option<String>,
    pub policy_member: Option<String>,
    pub policy_error: Option<String>,
    pub mc_rollouts: u64,
    pub mc_samples: u64,
    pub mc_estimate: Option<f64>,
    pub stopped: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OaTranscript {
    pub delta: f64,
    pub n: usize,
    pub c_bound: f64,
    pub initial_guess: f64,
    pub iterations: Vec<OaIteration>,
    pub total_online_samples: u64,
    pub stopped_at: Option<u32>,
    pub capped: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum OaError {
    #[error("iteration cap {cap} reached without certifying a policy")]
    IterationCap { cap: u32, transcript: Box<OaTranscript> },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Doubling procedure for an unknown optimal-action gap.
///
/// Iteration `t` guesses `gap_guess_t = g0 / 2^t`, sets
/// `eps_t = sqrt(8 C^2 H^6 iota(t) / (n * gap_guess_t^2))` with
/// `iota(t) = ln(24 |F| |W| H 2^t / delta)`, estimates the optimal return by
/// the threshold-only selector at `alpha = eps_t / (2H)`, proposes a policy
/// by the gap-prescreened selector at `alpha = eps_t * gap_guess_t / (2H^2)`
/// and `c_gap = gap_guess_t`, and stops when the rollout estimate satisfies
/// `mc >= v_star_hat - 3 eps_t`.
pub fn pabc_oa(
    mdp: &LayeredMdp,
    functions: &FunctionClass,
    weights: &WeightClass,
    data: &Dataset,
    online: &impl OnlineRollout,
    options: &OaOptions,
) -> Result<(Policy, OaTranscript), OaError> {
    if !(0.0..1.0).contains(&options.delta) || options.delta == 0.0 {
        return Err(SolverError::BadParameter("delta must lie in (0, 1)".into()).into());
    }
    let horizon = mdp.horizon() as f64;
    let n = data.n;
    let c_bound = class_bound_c(weights);
    let sizes = (functions.len() * weights.len()) as f64;
    let g0 = match options.initial_guess {
        InitialGuess::Horizon => horizon,
        InitialGuess::ClassMaxGap => {
            let max_gap = functions
                .members()
                .iter()
                .map(|f| gap_of_function(f, options.tie_tolerance))
                .fold(0.0, f64::max);
            if max_gap.is_finite() && max_gap > 0.0 {
                max_gap.min(horizon)
            } else {
                horizon
            }
        }
    };

    let mut transcript = OaTranscript {
        delta: options.delta,
        n,
        c_bound,
        initial_guess: g0,
        iterations: Vec::new(),
        total_online_samples: 0,
        stopped_at: None,
        capped: false,
    };

    for t in 0..=options.iteration_cap {
        let gap_guess = g0 / 2f64.powi(t as i32);
        let iota = (24.0 * sizes * horizon / options.delta).ln() + t as f64 * std::f64::consts::LN_2;
        let eps = (8.0 * c_bound * c_bound * horizon.powi(6) * iota
            / (n as f64 * gap_guess * gap_guess))
            .sqrt();

        let mut row = OaIteration {
            t,
            gap_guess,
            iota,
            eps,
            v_star_estimate: None,
            v_star_error: None,
            policy_member: None,
            policy_error: None,
            mc_rollouts: 0,
            mc_samples: 0,
            mc_estimate: None,
            stopped: false,
        };

        let estimate_config = PabcConfig {
            alpha: eps / (2.0 * horizon),
            c_gap: 0.0,
            greedy_tie: options.greedy_tie.clone(),
            member_tie: options.member_tie.clone(),
            tie_tolerance: options.tie_tolerance,
        };
        let v_star_hat = match pabc(mdp, functions, weights, LossSource::Empirical(data), &estimate_config) {
            Ok(sel) => {
                row.v_star_estimate = Some(sel.estimate);
                Some(sel.estimate)
            }
            Err(e) => {
                row.v_star_error = Some(e.to_string());
                None
            }
        };

        let policy_config = PabcConfig {
            alpha: eps * gap_guess / (2.0 * horizon * horizon),
            c_gap: gap_guess,
            greedy_tie: options.greedy_tie.clone(),
            member_tie: options.member_tie.clone(),
            tie_tolerance: options.tie_tolerance,
        };
        let proposal = match pabc(mdp, functions, weights, LossSource::Empirical(data), &policy_config) {
            Ok(sel) => {
                row.policy_member = Some(sel.chosen_name.clone());
                Some(sel)
            }
            Err(e) => {
                row.policy_error = Some(e.to_string());
                None
            }
        };

        if let (Some(v_star), Some(sel)) = (v_star_hat, proposal) {
            let budget = mc_sample_count(eps, mdp.horizon(), options.delta, t)?;
            let per_rollout = online.samples_per_rollout().max(1);
            let rollouts = budget.div_ceil(per_rollout).max(1);
            let mc = monte_carlo_eval(online, &sel.policy, rollouts, derive_seed(options.seed, t as u64));
            row.mc_rollouts = rollouts;
            row.mc_samples = rollouts * per_rollout;
            row.mc_estimate = Some(mc);
            transcript.total_online_samples += row.mc_samples;
            if mc >= v_star - 3.0 * eps {
                row.stopped = true;
                transcript.stopped_at = Some(t);
                transcript.iterations.push(row);
                return Ok((sel.policy, transcript));
            }
        }
        transcript.iterations.push(row);
    }
    transcript.capped = true;
    Err(OaError::IterationCap { cap: options.iteration_cap, transcript: Box::new(transcript) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::test_fixtures::two_layer_chain;
    use crate::mdp::{greedy_policy, optimal_q, policy_value};

    #[test]
    fn deterministic_rollout_matches_exact_value() {
        let mdp = two_layer_chain();
        let q = optimal_q(&mdp).unwrap();
        let pi = greedy_policy(&q, &TieRule::FirstIndex, DEFAULT_TIE_TOLERANCE);
        let exact = policy_value(&mdp, &pi).unwrap().value;
        for m in [1, 3, 10] {
            assert_eq!(monte_carlo_eval(&mdp, &pi, m, 5), exact);
        }
    }

    #[test]
    fn mc_count_hand_value_and_scaling() {
        // ceil(2 * ln(120) / 0.25) = 39 at horizon 1, delta 0.1, t = 0.
        assert_eq!(mc_sample_count(0.5, 1, 0.1, 0).unwrap(), 39);
        let base = mc_sample_count(0.5, 2, 0.1, 0).unwrap();
        let halved_eps = mc_sample_count(0.25, 2, 0.1, 0).unwrap();
        // Halving eps quadruples the count, up to the ceilings.
        assert!(halved_eps >= 4 * (base - 1) && halved_eps <= 4 * base);
        // t enters only through the log term.
        assert!(mc_sample_count(0.5, 2, 0.1, 1).unwrap() > base);
    }

    #[test]
    fn rollout_is_seed_deterministic() {
        let mdp = two_layer_chain();
        let pi = Policy::uniform(&mdp);
        let a = mdp.rollout_rewards(&pi, 99);
        let b = mdp.rollout_rewards(&pi, 99);
        assert_eq!(a, b);
    }

    fn chain_bundle() -> (
        crate::mdp::LayeredMdp,
        crate::spaces::FunctionClass,
        crate::spaces::WeightClass,
        crate::data::DataDistribution,
    ) {
        use crate::table::{TableRole, TableStack};
        let mdp = two_layer_chain();
        let q = optimal_q(&mdp).unwrap();
        let functions = crate::spaces::FunctionClass::new(
            vec![("q".into(), q.clone())],
            &mdp,
            DEFAULT_TIE_TOLERANCE,
        )
        .unwrap();
        let ones =
            TableStack::new(TableRole::Weight, vec![vec![vec![1.0, 1.0]], vec![vec![1.0]]]);
        let weights =
            crate::spaces::WeightClass::new(vec![("ones".into(), ones)], &mdp).unwrap();
        let pi = greedy_policy(&q, &TieRule::FirstIndex, DEFAULT_TIE_TOLERANCE);
        let data = crate::data::DataDistribution::from_policy(&mdp, &pi).unwrap();
        (mdp, functions, weights, data)
    }

    #[test]
    fn transcript_schedule_matches_formulas_bitwise() {
        let (mdp, functions, weights, data_dist) = chain_bundle();
        let data = crate::data::sample_dataset(&mdp, &data_dist, 100, 3).unwrap();
        let options = OaOptions { delta: 0.1, seed: 5, ..OaOptions::default() };
        let (_, transcript) =
            pabc_oa(&mdp, &functions, &weights, &data, &mdp, &options).unwrap();
        let horizon = mdp.horizon() as f64;
        let sizes = (functions.len() * weights.len()) as f64;
        let c = crate::data::class_bound_c(&weights);
        for row in &transcript.iterations {
            assert_eq!(row.gap_guess, horizon / 2f64.powi(row.t as i32));
            let iota = (24.0 * sizes * horizon / options.delta).ln()
                + row.t as f64 * std::f64::consts::LN_2;
            assert_eq!(row.iota, iota);
            let eps = (8.0 * c * c * horizon.powi(6) * iota
                / (data.n as f64 * row.gap_guess * row.gap_guess))
                .sqrt();
            assert_eq!(row.eps, eps);
        }
        // The chain's optimal gap is 0.5, so the schedule passes through
        // guesses 2, 1, 0.5 and can stop only at the third.
        assert_eq!(transcript.stopped_at, Some(2));
        let last = transcript.iterations.last().unwrap();
        assert!(last.stopped);
        assert!(last.mc_estimate.unwrap() >= last.v_star_estimate.unwrap() - 3.0 * last.eps);
    }

    #[test]
    fn class_max_initial_guess_skips_vacuous_iterations() {
        let (mdp, functions, weights, data_dist) = chain_bundle();
        let data = crate::data::sample_dataset(&mdp, &data_dist, 100, 3).unwrap();
        let options = OaOptions {
            delta: 0.1,
            seed: 5,
            initial_guess: InitialGuess::ClassMaxGap,
            ..OaOptions::default()
        };
        let (_, transcript) =
            pabc_oa(&mdp, &functions, &weights, &data, &mdp, &options).unwrap();
        assert_eq!(transcript.initial_guess, 0.5);
        assert_eq!(transcript.stopped_at, Some(0));
    }
}
