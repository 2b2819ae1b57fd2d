//! Named instances, random instance generation, and independent brute-force
//! oracles.
//!
//! Every bundled instance carries annotations (optimal return, action gap,
//! coverage constant, misspecification errors) that are recomputed from
//! scratch by the oracles here whenever the instance is built or loaded; a
//! mismatch is a construction bug, not a tolerance issue.
//!
//! The brute-force routines deliberately share no computation path with the
//! dynamic-programming and class-error code they are used to check: policies
//! are enumerated and evaluated by direct trajectory-tree summation, and the
//! class errors are recomputed with straight-line loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{concentrability, density_ratio, derive_seed, DataDistribution, DataError, DensityRatio};
use crate::mdp::{
    gap_of_function, greedy_policy, optimal_q, LayeredMdp, MdpError, Policy, TieRule,
    DEFAULT_TIE_TOLERANCE,
};
use crate::solver::MemberTieRule;
use crate::spaces::{ClassError, FunctionClass, WeightClass};
use crate::table::{TableRole, TableStack};

/// Tie-breaking choices that reproduce an instance's designed failure mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdversarialTies {
    /// Greedy tie rule steering tied argmax states toward the bad branch.
    pub greedy: TieRule,
    /// Member preferred whenever objectives tie.
    pub member: MemberTieRule,
}

/// Oracle-checked facts about a bundled instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Annotations {
    pub v_star: f64,
    #[serde(with = "crate::io::ext_real")]
    pub gap_q_star: f64,
    /// Worst-case occupancy-to-data ratio of the optimal policy; infinite
    /// when the data misses an optimal pair.
    #[serde(with = "crate::io::ext_real")]
    pub optimal_concentrability: f64,
    pub w_star_exists: bool,
    /// Return of the designed bad policy, for instances that have one.
    pub adversarial_value: Option<f64>,
    /// Weight-class error computed by the brute-force oracle at build time.
    pub eps_w_oracle: Option<f64>,
    /// Weight-class error the construction was designed to exhibit, when
    /// that differs from what direct evaluation gives. Reported side by
    /// side with the oracle value, never substituted for it.
    pub intended_eps_w: Option<f64>,
    pub notes: Vec<String>,
}

/// A complete experiment bundle: environment, data distribution, candidate
/// classes, and oracle-checked annotations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedInstance {
    pub name: String,
    pub mdp: LayeredMdp,
    pub data: DataDistribution,
    pub functions: FunctionClass,
    pub weights: WeightClass,
    pub annotations: Annotations,
    pub adversarial: Option<AdversarialTies>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("policy enumeration needs {needed} policies, budget is {budget}")]
    EnumerationBudget { needed: u128, budget: u64 },
    #[error("gave up after {attempts} resamples looking for gap >= {floor}")]
    ResampleBudget { attempts: usize, floor: f64 },
    #[error("annotation mismatch on '{field}': recorded {recorded}, oracle got {oracle}")]
    AnnotationMismatch { field: String, recorded: f64, oracle: f64 },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Exhaustive search for the optimal return: enumerate every deterministic
/// policy and evaluate each by direct trajectory-tree summation. This is the
/// independent oracle for the backward-induction path, so it must not call
/// into it.
pub fn brute_force_optimal(
    mdp: &LayeredMdp,
    budget: u64,
) -> Result<(f64, Policy), BenchError> {
    // Decision slots in a fixed order: (h, state) pairs with their arity.
    let mut slots = Vec::new();
    let mut count: u128 = 1;
    for h in 0..mdp.horizon() {
        for x in 0..mdp.num_states(h) {
            let k = mdp.num_actions(h, x);
            slots.push((h, x, k));
            count = count.saturating_mul(k as u128);
            if count > budget as u128 {
                return Err(BenchError::EnumerationBudget { needed: count, budget });
            }
        }
    }

    fn tree_value(mdp: &LayeredMdp, actions: &[Vec<usize>], h: usize, x: usize) -> f64 {
        if h == mdp.horizon() {
            return 0.0;
        }
        let a = actions[h][x];
        let mut value = mdp.reward(h, x, a);
        for (xn, &p) in mdp.transition(h, x, a).iter().enumerate() {
            if p > 0.0 {
                value += p * tree_value(mdp, actions, h + 1, xn);
            }
        }
        value
    }

    let mut assignment: Vec<usize> = vec![0; slots.len()];
    let mut best_value = f64::NEG_INFINITY;
    let mut best_actions: Vec<Vec<usize>> = Vec::new();
    loop {
        let mut actions: Vec<Vec<usize>> =
            (0..mdp.horizon()).map(|h| vec![0; mdp.num_states(h)]).collect();
        for (slot, &a) in slots.iter().zip(&assignment) {
            actions[slot.0][slot.1] = a;
        }
        let value = tree_value(mdp, &actions, 0, mdp.initial_state());
        if value > best_value {
            best_value = value;
            best_actions = actions;
        }
        // Mixed-radix increment over the decision slots.
        let mut i = 0;
        loop {
            if i == slots.len() {
                return Ok((best_value, Policy::deterministic(best_actions)));
            }
            assignment[i] += 1;
            if assignment[i] < slots[i].2 {
                break;
            }
            assignment[i] = 0;
            i += 1;
        }
    }
}

/// Brute-force optimal action values by plain recursion (no memoization, no
/// shared code with the iterative induction).
fn brute_force_q(mdp: &LayeredMdp, h: usize, x: usize, a: usize) -> f64 {
    let mut value = mdp.reward(h, x, a);
    if h + 1 == mdp.horizon() {
        return value;
    }
    for (xn, &p) in mdp.transition(h, x, a).iter().enumerate() {
        if p > 0.0 {
            let best = (0..mdp.num_actions(h + 1, xn))
                .map(|an| brute_force_q(mdp, h + 1, xn, an))
                .fold(f64::NEG_INFINITY, f64::max);
            value += p * best;
        }
    }
    value
}

/// Occupancy of a deterministic policy by a local forward pass (kept inline
/// so the class-error oracle does not lean on the main occupancy code).
fn forward_occupancy(mdp: &LayeredMdp, policy: &Policy) -> Vec<Vec<Vec<f64>>> {
    let mut occ: Vec<Vec<Vec<f64>>> = (0..mdp.horizon())
        .map(|h| (0..mdp.num_states(h)).map(|x| vec![0.0; mdp.num_actions(h, x)]).collect())
        .collect();
    let mut mass = vec![0.0; mdp.num_states(0)];
    mass[mdp.initial_state()] = 1.0;
    for h in 0..mdp.horizon() {
        let mut next = vec![0.0; mdp.num_states(h + 1)];
        for x in 0..mdp.num_states(h) {
            if mass[x] == 0.0 {
                continue;
            }
            let a = policy.action(h, x).expect("deterministic policy");
            occ[h][x][a] = mass[x];
            for (xn, &p) in mdp.transition(h, x, a).iter().enumerate() {
                next[xn] += mass[x] * p;
            }
        }
        mass = next;
    }
    occ
}

/// Straight-line recomputation of the three class errors, sharing no code
/// with the class-error implementations. Values must agree to 1e-12.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BruteForceEps {
    pub eps_w: f64,
    pub eps_f: f64,
    pub eps_f_inf: f64,
}

pub fn brute_force_eps(
    functions: &FunctionClass,
    weights: &WeightClass,
    mdp: &LayeredMdp,
    data: &DataDistribution,
) -> Result<BruteForceEps, BenchError> {
    let horizon = mdp.horizon();
    let (v_star, pi_star) = brute_force_optimal(mdp, 1_000_000)?;
    let occ_star = forward_occupancy(mdp, &pi_star);

    // Residuals per member by direct summation.
    let residual = |f: &TableStack, h: usize, x: usize, a: usize| -> f64 {
        let mut backed = mdp.reward(h, x, a);
        if h + 1 < horizon {
            for (xn, &p) in mdp.transition(h, x, a).iter().enumerate() {
                if p > 0.0 {
                    let best = f.row(h + 1, xn).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    backed += p * best;
                }
            }
        }
        f.get(h, x, a) - backed
    };

    let mut eps_w = f64::INFINITY;
    for w in weights.members() {
        let mut worst = 0.0_f64;
        for f in functions.members() {
            for h in 0..horizon {
                let mut reweighted = 0.0;
                let mut on_optimal = 0.0;
                for x in 0..mdp.num_states(h) {
                    for a in 0..mdp.num_actions(h, x) {
                        let r = residual(f, h, x, a);
                        reweighted += data.get(h, x, a) * w.get(h, x, a) * r;
                        on_optimal += occ_star[h][x][a] * r;
                    }
                }
                worst = worst.max((reweighted - on_optimal).abs());
            }
        }
        eps_w = eps_w.min(worst);
    }

    let mut eps_f = f64::INFINITY;
    for f in functions.members() {
        let initial = f.row(0, mdp.initial_state()).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let initial_diff = (initial - v_star).abs();
        let mut worst = 0.0_f64;
        for w in weights.members() {
            for h in 0..horizon {
                let mut loss = 0.0;
                for x in 0..mdp.num_states(h) {
                    for a in 0..mdp.num_actions(h, x) {
                        loss += data.get(h, x, a) * w.get(h, x, a) * residual(f, h, x, a);
                    }
                }
                worst = worst.max(loss.abs());
            }
        }
        eps_f = eps_f.min(worst + initial_diff);
    }

    let mut eps_f_inf = f64::INFINITY;
    for f in functions.members() {
        let mut err = 0.0_f64;
        for h in 0..horizon {
            for x in 0..mdp.num_states(h) {
                for a in 0..mdp.num_actions(h, x) {
                    err = err.max((f.get(h, x, a) - brute_force_q(mdp, h, x, a)).abs());
                }
            }
        }
        eps_f_inf = eps_f_inf.min(err);
    }

    Ok(BruteForceEps { eps_w, eps_f, eps_f_inf })
}

impl NamedInstance {
    /// Recomputes every annotation from scratch and fails on any mismatch.
    pub fn verify_annotations(&self) -> Result<(), BenchError> {
        let (v_star, pi_star) = brute_force_optimal(&self.mdp, 1_000_000)?;
        if (v_star - self.annotations.v_star).abs() > 1e-10 {
            return Err(BenchError::AnnotationMismatch {
                field: "v_star".into(),
                recorded: self.annotations.v_star,
                oracle: v_star,
            });
        }
        let q = optimal_q(&self.mdp)?;
        let gap = gap_of_function(&q, DEFAULT_TIE_TOLERANCE);
        if gap != self.annotations.gap_q_star
            && (gap - self.annotations.gap_q_star).abs() > 1e-12
        {
            return Err(BenchError::AnnotationMismatch {
                field: "gap_q_star".into(),
                recorded: self.annotations.gap_q_star,
                oracle: gap,
            });
        }
        let conc = concentrability(&self.mdp, &pi_star, &self.data)?;
        let conc_matches = if conc.is_finite() {
            (conc - self.annotations.optimal_concentrability).abs() <= 1e-10
        } else {
            self.annotations.optimal_concentrability.is_infinite()
        };
        if !conc_matches {
            return Err(BenchError::AnnotationMismatch {
                field: "optimal_concentrability".into(),
                recorded: self.annotations.optimal_concentrability,
                oracle: conc,
            });
        }
        let exists = matches!(
            density_ratio(&self.mdp, &pi_star, &self.data)?,
            DensityRatio::Exists { .. }
        );
        if exists != self.annotations.w_star_exists {
            return Err(BenchError::AnnotationMismatch {
                field: "w_star_exists".into(),
                recorded: self.annotations.w_star_exists as u8 as f64,
                oracle: exists as u8 as f64,
            });
        }
        if let Some(recorded) = self.annotations.eps_w_oracle {
            let brute = brute_force_eps(&self.functions, &self.weights, &self.mdp, &self.data)?;
            if (brute.eps_w - recorded).abs() > 1e-12 {
                return Err(BenchError::AnnotationMismatch {
                    field: "eps_w_oracle".into(),
                    recorded,
                    oracle: brute.eps_w,
                });
            }
        }
        Ok(())
    }
}

/// Three-timestep instance on which the constrained selector provably fails
/// without gap prescreening: a bad candidate ties with the optimal values at
/// the initial state, carries zero weighted Bellman loss under both bundled
/// weights, yet its greedy policy (under adversarial tie-breaking) walks
/// into an uncovered zero-reward branch.
///
/// Topology: the initial state offers `L1` (to `xA`, then forced `L2` to the
/// rewarding `xC`) and `R1` (to `xB`, whose only action leads to a
/// zero-reward sink). The data distribution is a point mass per timestep on
/// the optimal path `(x0, L1)`, `(xA, L2)`, `(xC, null)`. The bad candidate
/// deviates from the optimal values only at `(x0, R1)` and `(xB, null)`,
/// both raised to 1. The second bundled weight moves the initial-timestep
/// mass to `(x0, R1)`, a pair the data never covers, which is exactly why
/// the loss constraints cannot see the deviation.
pub fn build_counterexample() -> NamedInstance {
    let mdp = LayeredMdp::new(
        3,
        vec![
            vec!["x0".into()],
            vec!["xA".into(), "xB".into()],
            vec!["xC".into(), "xB2".into()],
            vec!["end".into()],
        ],
        vec![
            vec![vec!["L1".into(), "R1".into()]],
            vec![vec!["L2".into()], vec!["null".into()]],
            vec![vec!["null".into()], vec!["null".into()]],
        ],
        vec![
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![vec![1.0]], vec![vec![1.0]]],
        ],
        vec![
            vec![vec![0.0, 0.0]],
            vec![vec![0.0], vec![0.0]],
            vec![vec![1.0], vec![0.0]],
        ],
        0,
    )
    .expect("static instance is well-formed");

    let q_star = optimal_q(&mdp).expect("valid instance");
    let mut f_bad = q_star.clone();
    f_bad.set(0, 0, 1, 1.0); // (x0, R1)
    f_bad.set(1, 1, 0, 1.0); // (xB, null)

    let data = DataDistribution::new(
        TableStack::new(
            TableRole::DataDistribution,
            vec![
                vec![vec![1.0, 0.0]],
                vec![vec![1.0], vec![0.0]],
                vec![vec![1.0], vec![0.0]],
            ],
        ),
        &mdp,
    )
    .expect("point-mass data distribution");

    let mut w_star = TableStack::zeros(&mdp, TableRole::Weight);
    w_star.set(0, 0, 0, 1.0); // (x0, L1)
    w_star.set(1, 0, 0, 1.0); // (xA, L2)
    w_star.set(2, 0, 0, 1.0); // (xC, null)
    let mut w_bad = TableStack::zeros(&mdp, TableRole::Weight);
    w_bad.set(0, 0, 1, 1.0); // (x0, R1): no data mass here
    w_bad.set(1, 0, 0, 1.0); // (xA, L2)
    w_bad.set(2, 0, 0, 1.0); // (xC, null)

    let functions = FunctionClass::new(
        vec![("q_star".into(), q_star), ("f_bad".into(), f_bad)],
        &mdp,
        DEFAULT_TIE_TOLERANCE,
    )
    .expect("two members");
    let weights = WeightClass::new(
        vec![("w_star".into(), w_star), ("w_bad".into(), w_bad)],
        &mdp,
    )
    .expect("two members");

    // Break the x0 tie toward R1.
    let choices = vec![crate::mdp::ExplicitTie { h: 0, state: 0, action: 1 }];

    let instance = NamedInstance {
        name: "counterexample".into(),
        mdp,
        data,
        functions,
        weights,
        annotations: Annotations {
            v_star: 1.0,
            gap_q_star: 1.0,
            optimal_concentrability: 1.0,
            w_star_exists: true,
            adversarial_value: Some(0.0),
            eps_w_oracle: None,
            intended_eps_w: None,
            notes: vec![
                "Both candidates have zero population loss under every bundled weight, and both value the initial state at 1; only gap prescreening separates them.".into(),
            ],
        },
        adversarial: Some(AdversarialTies {
            greedy: TieRule::ExplicitChoice(choices),
            member: MemberTieRule::Preferred("f_bad".into()),
        }),
    };
    instance.verify_annotations().expect("construction matches its annotations");
    instance
}

/// One-timestep, three-action instance contrasting raw-ratio coverage with
/// discriminator-based coverage: the data gives zero mass to the optimal
/// action, so the optimal density ratio does not exist and the worst-case
/// ratio is infinite, yet the weight-class error stays finite.
///
/// The construction is designed around a zero weight-class error, but direct
/// evaluation over the bundled weight table (0, 1, 1) yields 0.2; the
/// annotations record both values (a weight table of (0, 1, 0.2) would
/// attain 0) and the discrepancy is surfaced in reports rather than
/// resolved.
pub fn build_table1_example() -> NamedInstance {
    let mdp = LayeredMdp::new(
        1,
        vec![vec!["x0".into()], vec!["terminal".into()]],
        vec![vec![vec!["L".into(), "M".into(), "R".into()]]],
        vec![vec![vec![vec![1.0], vec![1.0], vec![1.0]]]],
        vec![vec![vec![0.8, 0.6, 0.3]]],
        0,
    )
    .expect("static instance is well-formed");

    let q_star = optimal_q(&mdp).expect("valid instance");
    let f = TableStack::new(TableRole::Value, vec![vec![vec![0.7, 0.3, 0.8]]]);
    let w = TableStack::new(TableRole::Weight, vec![vec![vec![0.0, 1.0, 1.0]]]);

    let data = DataDistribution::new(
        TableStack::new(TableRole::DataDistribution, vec![vec![vec![0.0, 0.5, 0.5]]]),
        &mdp,
    )
    .expect("distribution");

    let functions = FunctionClass::new(
        vec![("q_star".into(), q_star), ("f".into(), f)],
        &mdp,
        DEFAULT_TIE_TOLERANCE,
    )
    .expect("two members");
    let weights = WeightClass::new(vec![("w".into(), w)], &mdp).expect("one member");

    let eps_w_oracle = brute_force_eps(&functions, &weights, &mdp, &data)
        .expect("small instance")
        .eps_w;

    let instance = NamedInstance {
        name: "coverage-comparison".into(),
        mdp,
        data,
        functions,
        weights,
        annotations: Annotations {
            v_star: 0.8,
            gap_q_star: 0.2,
            optimal_concentrability: f64::INFINITY,
            w_star_exists: false,
            adversarial_value: None,
            eps_w_oracle: Some(eps_w_oracle),
            intended_eps_w: Some(0.0),
            notes: vec![
                "Designed to exhibit a zero weight-class error alongside an infinite raw density ratio; direct evaluation over the bundled weight (0, 1, 1) gives 0.2 instead.".into(),
                "A weight table of (0, 1, 0.2) would attain 0. Both the intended and the computed value are reported; the discrepancy is never silently resolved.".into(),
            ],
        },
        adversarial: None,
    };
    instance.verify_annotations().expect("construction matches its annotations");
    instance
}

/// Size limits for random instances.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShapeLimits {
    /// Maximum number of decision timesteps.
    pub max_horizon: usize,
    pub max_states: usize,
    pub max_actions: usize,
}

impl Default for ShapeLimits {
    fn default() -> Self {
        Self { max_horizon: 3, max_states: 4, max_actions: 3 }
    }
}

/// Support of the generated data distribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSupport {
    /// Mixture of the optimal occupancy with the uniform distribution over
    /// legal pairs; `uniform_share` in (0, 1] keeps full support and bounds
    /// the optimal density ratio by `1 / (1 - uniform_share)` from below.
    Full { uniform_share: f64 },
    /// Exactly the optimal occupancy: covers the optimal policy and nothing
    /// else, with unit density ratio on its support.
    OptimalTrajectory,
    /// Caller-supplied distribution (the optimal ratio may not exist).
    Custom(TableStack),
}

/// How value-class distractors are generated.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistractorKind {
    /// Entrywise uniform noise around the optimal values, clipped to the
    /// per-timestep range `[0, H - h]`.
    Noise { count: usize, scale: f64 },
    /// Downward shifts of the initial-timestep table by `step, 2*step, ...`:
    /// each member undervalues the initial state by a known amount while
    /// keeping the greedy policy and every later-timestep table intact.
    Ladder { count: usize, step: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassOptions {
    pub f_distractors: DistractorKind,
    /// Number of extra weight members blended between the optimal ratio and
    /// the data-normalized all-ones table. Ignored when the ratio does not
    /// exist.
    pub w_distractors: usize,
}

impl Default for ClassOptions {
    fn default() -> Self {
        Self { f_distractors: DistractorKind::Noise { count: 2, scale: 0.1 }, w_distractors: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomSpec {
    pub seed: u64,
    pub shape: ShapeLimits,
    pub data: DataSupport,
    pub classes: ClassOptions,
    /// Reject-and-resample until the optimal gap reaches this floor.
    pub gap_floor: Option<f64>,
    pub max_resamples: usize,
    /// Keep the deterministic-policy count enumerable by the oracle.
    pub enumeration_budget: u64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            shape: ShapeLimits::default(),
            data: DataSupport::Full { uniform_share: 0.5 },
            classes: ClassOptions::default(),
            gap_floor: None,
            max_resamples: 500,
            enumeration_budget: 20_000,
        }
    }
}

fn random_mdp(rng: &mut ChaCha12Rng, shape: &ShapeLimits, enumeration_budget: u64) -> LayeredMdp {
    loop {
        let horizon = rng.gen_range(1..=shape.max_horizon);
        let mut layers = Vec::with_capacity(horizon + 1);
        for h in 0..=horizon {
            let size = rng.gen_range(1..=shape.max_states);
            layers.push((0..size).map(|i| format!("s{h}_{i}")).collect::<Vec<_>>());
        }
        let mut actions = Vec::with_capacity(horizon);
        let mut policy_count: u128 = 1;
        for (h, layer) in layers.iter().take(horizon).enumerate() {
            let mut layer_actions = Vec::with_capacity(layer.len());
            for x in 0..layer.len() {
                // Keep the initial state nontrivial so instances always pose
                // an actual decision.
                let lo = if h == 0 && x == 0 && shape.max_actions >= 2 { 2 } else { 1 };
                let k = rng.gen_range(lo..=shape.max_actions.max(lo));
                policy_count = policy_count.saturating_mul(k as u128);
                layer_actions.push((0..k).map(|i| format!("a{i}")).collect::<Vec<_>>());
            }
            actions.push(layer_actions);
        }
        if policy_count > enumeration_budget as u128 {
            continue;
        }
        let mut transitions = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let next_size = layers[h + 1].len();
            let mut t_layer = Vec::new();
            let mut r_layer = Vec::new();
            for x in 0..layers[h].len() {
                let mut t_rows = Vec::new();
                let mut r_row = Vec::new();
                for _ in 0..actions[h][x].len() {
                    let raw: Vec<f64> = (0..next_size).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let total: f64 = raw.iter().sum();
                    t_rows.push(raw.into_iter().map(|v| v / total).collect::<Vec<_>>());
                    r_row.push(rng.gen_range(0.0..1.0));
                }
                t_layer.push(t_rows);
                r_layer.push(r_row);
            }
            transitions.push(t_layer);
            rewards.push(r_layer);
        }
        let mdp = LayeredMdp::new(horizon, layers, actions, transitions, rewards, 0)
            .expect("generated arrays are consistent");
        debug_assert!(mdp.validate().is_valid());
        return mdp;
    }
}

/// Generates a random instance bundle: a valid MDP (optionally resampled
/// until the optimal gap clears a floor), a data distribution with the
/// requested support, a value class containing the optimal values plus
/// distractors, and a weight class containing the optimal ratio (when it
/// exists) plus blended distractors. All annotations are oracle-computed.
pub fn random_instance(spec: &RandomSpec) -> Result<NamedInstance, BenchError> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut attempts = 0;
    let (mdp, q_star) = loop {
        attempts += 1;
        if attempts > spec.max_resamples {
            return Err(BenchError::ResampleBudget {
                attempts: spec.max_resamples,
                floor: spec.gap_floor.unwrap_or(0.0),
            });
        }
        let mdp = random_mdp(&mut rng, &spec.shape, spec.enumeration_budget);
        let q_star = optimal_q(&mdp)?;
        match spec.gap_floor {
            Some(floor) if gap_of_function(&q_star, DEFAULT_TIE_TOLERANCE) < floor => continue,
            _ => break (mdp, q_star),
        }
    };

    let pi_star = greedy_policy(&q_star, &TieRule::FirstIndex, DEFAULT_TIE_TOLERANCE);
    let occ_star = crate::mdp::occupancy(&mdp, &pi_star)?;

    let data = match &spec.data {
        DataSupport::Full { uniform_share } => {
            let beta = uniform_share.clamp(0.0, 1.0);
            let mut stack = TableStack::zeros(&mdp, TableRole::DataDistribution);
            for h in 0..mdp.horizon() {
                let pairs: usize = (0..mdp.num_states(h)).map(|x| mdp.num_actions(h, x)).sum();
                for x in 0..mdp.num_states(h) {
                    for a in 0..mdp.num_actions(h, x) {
                        let v = (1.0 - beta) * occ_star.get(h, x, a) + beta / pairs as f64;
                        stack.set(h, x, a, v);
                    }
                }
            }
            DataDistribution::new(stack, &mdp)?
        }
        DataSupport::OptimalTrajectory => {
            DataDistribution::new(occ_star.clone().with_role(TableRole::DataDistribution), &mdp)?
        }
        DataSupport::Custom(stack) => DataDistribution::new(stack.clone(), &mdp)?,
    };

    // Value class: optimal member first, then distractors.
    let mut f_members = vec![("q_star".to_string(), q_star.clone())];
    match &spec.classes.f_distractors {
        DistractorKind::Noise { count, scale } => {
            for k in 0..*count {
                let mut member = q_star.clone();
                for h in 0..mdp.horizon() {
                    let hi = (mdp.horizon() - h) as f64;
                    for x in 0..mdp.num_states(h) {
                        for a in 0..mdp.num_actions(h, x) {
                            let noisy =
                                member.get(h, x, a) + rng.gen_range(-*scale..=*scale);
                            member.set(h, x, a, noisy.clamp(0.0, hi));
                        }
                    }
                }
                f_members.push((format!("noise_{k}"), member));
            }
        }
        DistractorKind::Ladder { count, step } => {
            for k in 1..=*count {
                let shift = *step * k as f64;
                let mut member = q_star.clone();
                for x in 0..mdp.num_states(0) {
                    for a in 0..mdp.num_actions(0, x) {
                        member.set(0, x, a, (member.get(0, x, a) - shift).max(0.0));
                    }
                }
                f_members.push((format!("ladder_{k}"), member));
            }
        }
    }
    let functions = FunctionClass::new(f_members, &mdp, DEFAULT_TIE_TOLERANCE)?;

    // Weight class: optimal ratio when it exists, plus blends toward the
    // data-normalized all-ones table (which keeps nonnegativity and unit
    // data-expectation, and never raises the sup-norm above the ratio's).
    let ratio = density_ratio(&mdp, &pi_star, &data)?;
    let w_star_exists = matches!(ratio, DensityRatio::Exists { .. });
    let mut w_members: Vec<(String, TableStack)> = Vec::new();
    let ones = {
        let mut t = TableStack::zeros(&mdp, TableRole::Weight);
        for h in 0..mdp.horizon() {
            for x in 0..mdp.num_states(h) {
                for a in 0..mdp.num_actions(h, x) {
                    t.set(h, x, a, 1.0);
                }
            }
        }
        t
    };
    match &ratio {
        DensityRatio::Exists { table } => {
            w_members.push(("w_star".into(), table.clone()));
            for k in 0..spec.classes.w_distractors {
                let lambda = (k + 1) as f64 / (spec.classes.w_distractors + 1) as f64;
                let mut blend = TableStack::zeros(&mdp, TableRole::Weight);
                for (h, x, a, v) in table.iter_entries() {
                    blend.set(h, x, a, (1.0 - lambda) * v + lambda * ones.get(h, x, a));
                }
                w_members.push((format!("w_blend_{k}"), blend));
            }
        }
        DensityRatio::Undefined { .. } => {
            w_members.push(("w_ones".into(), ones.clone()));
            for k in 0..spec.classes.w_distractors {
                let mut raw = TableStack::zeros(&mdp, TableRole::Weight);
                for h in 0..mdp.horizon() {
                    for x in 0..mdp.num_states(h) {
                        for a in 0..mdp.num_actions(h, x) {
                            raw.set(h, x, a, rng.gen_range(0.1..1.0));
                        }
                    }
                }
                // Normalize to unit data-expectation per timestep.
                for h in 0..mdp.horizon() {
                    let e = data.expect(&raw, h);
                    if e > 0.0 {
                        for x in 0..mdp.num_states(h) {
                            for a in 0..mdp.num_actions(h, x) {
                                raw.set(h, x, a, raw.get(h, x, a) / e);
                            }
                        }
                    }
                }
                w_members.push((format!("w_rand_{k}"), raw));
            }
        }
    }
    let weights = WeightClass::new(w_members, &mdp)?;

    let (v_star, pi_star_bf) = brute_force_optimal(&mdp, spec.enumeration_budget)?;
    let gap_q_star = gap_of_function(&q_star, DEFAULT_TIE_TOLERANCE);
    let conc = concentrability(&mdp, &pi_star_bf, &data)?;
    let instance = NamedInstance {
        name: format!("random-{}", spec.seed),
        mdp,
        data,
        functions,
        weights,
        annotations: Annotations {
            v_star,
            gap_q_star,
            optimal_concentrability: conc,
            w_star_exists,
            adversarial_value: None,
            eps_w_oracle: None,
            intended_eps_w: None,
            notes: Vec::new(),
        },
        adversarial: None,
    };
    instance.verify_annotations()?;
    Ok(instance)
}

/// Distinct seeds for a sweep of random instances.
pub fn seeded_specs(base: &RandomSpec, count: usize) -> Vec<RandomSpec> {
    (0..count)
        .map(|i| RandomSpec { seed: derive_seed(base.seed, i as u64), ..base.clone() })
        .collect()
}
