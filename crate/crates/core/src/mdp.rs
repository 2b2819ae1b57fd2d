//! Finite layered episodic MDPs and exact dynamic programming.
//!
//! States are partitioned into per-timestep layers `X_0, ..., X_{H-1}` plus a
//! terminal layer `X_H`; a state index is only meaningful together with its
//! timestep. Rewards lie in `[0, 1]`, transitions are row-stochastic, and the
//! initial state is fixed. Everything here is exact double-precision
//! computation: backward induction for optimal and policy-specific Q-values,
//! forward recursion for occupancy measures, and action-gap calculations.

use serde::{Deserialize, Serialize};

use crate::table::{TableRole, TableStack, DISTRIBUTION_TOL};

/// Row-sum tolerance for transition matrices and stochastic policies.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default tolerance under which two action values count as tied.
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-9;

/// A finite layered episodic MDP with fixed initial state and deterministic
/// rewards in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredMdp {
    horizon: usize,
    /// `horizon + 1` layers of state names; the last is terminal.
    layers: Vec<Vec<String>>,
    /// `actions[h][state]` is the ordered action-name list, `h` in `0..H`.
    actions: Vec<Vec<Vec<String>>>,
    /// `transitions[h][state][action]` is a probability vector over layer `h+1`.
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `rewards[h][state][action]` in `[0, 1]`.
    rewards: Vec<Vec<Vec<f64>>>,
    /// Index of the initial state within layer 0.
    initial_state: usize,
}

impl LayeredMdp {
    /// Builds an MDP after checking structural consistency (array lengths,
    /// index ranges, nonempty action sets). Numeric invariants such as row
    /// sums and reward ranges are reported by [`LayeredMdp::validate`], so
    /// that deliberately broken instances can still be constructed and
    /// examined.
    pub fn new(
        horizon: usize,
        layers: Vec<Vec<String>>,
        actions: Vec<Vec<Vec<String>>>,
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        rewards: Vec<Vec<Vec<f64>>>,
        initial_state: usize,
    ) -> Result<Self, MdpError> {
        if horizon == 0 {
            return Err(MdpError::Structure("horizon must be positive".into()));
        }
        if layers.len() != horizon + 1 {
            return Err(MdpError::Structure(format!(
                "expected {} layers (including terminal), found {}",
                horizon + 1,
                layers.len()
            )));
        }
        for (h, layer) in layers.iter().enumerate() {
            if layer.is_empty() {
                return Err(MdpError::Structure(format!("layer {h} is empty")));
            }
            let mut seen = std::collections::BTreeSet::new();
            for name in layer {
                if !seen.insert(name) {
                    return Err(MdpError::Structure(format!(
                        "duplicate state name '{name}' in layer {h}"
                    )));
                }
            }
        }
        for (name, field) in [("actions", actions.len()), ("transitions", transitions.len()), ("rewards", rewards.len())] {
            if field != horizon {
                return Err(MdpError::Structure(format!(
                    "{name} must cover {horizon} timesteps, found {field}"
                )));
            }
        }
        for h in 0..horizon {
            let n_states = layers[h].len();
            let n_next = layers[h + 1].len();
            if actions[h].len() != n_states || transitions[h].len() != n_states || rewards[h].len() != n_states {
                return Err(MdpError::Structure(format!(
                    "timestep {h}: per-state arrays do not match layer size {n_states}"
                )));
            }
            for x in 0..n_states {
                let n_actions = actions[h][x].len();
                if n_actions == 0 {
                    return Err(MdpError::Structure(format!(
                        "state '{}' at timestep {h} has no actions",
                        layers[h][x]
                    )));
                }
                if transitions[h][x].len() != n_actions || rewards[h][x].len() != n_actions {
                    return Err(MdpError::Structure(format!(
                        "state '{}' at timestep {h}: transition/reward rows do not match {n_actions} actions",
                        layers[h][x]
                    )));
                }
                for a in 0..n_actions {
                    if transitions[h][x][a].len() != n_next {
                        return Err(MdpError::Structure(format!(
                            "state '{}' action '{}' at timestep {h}: transition row has {} entries, layer {} has {n_next} states",
                            layers[h][x], actions[h][x][a], transitions[h][x][a].len(), h + 1
                        )));
                    }
                }
            }
        }
        if initial_state >= layers[0].len() {
            return Err(MdpError::Structure(format!(
                "initial state index {initial_state} out of range for layer 0 of size {}",
                layers[0].len()
            )));
        }
        Ok(Self { horizon, layers, actions, transitions, rewards, initial_state })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of states in layer `h` (`h` may be the terminal layer `H`).
    pub fn num_states(&self, h: usize) -> usize {
        self.layers[h].len()
    }

    pub fn num_actions(&self, h: usize, state: usize) -> usize {
        self.actions[h][state].len()
    }

    pub fn state_name(&self, h: usize, state: usize) -> &str {
        &self.layers[h][state]
    }

    pub fn action_name(&self, h: usize, state: usize, action: usize) -> &str {
        &self.actions[h][state][action]
    }

    pub fn state_index(&self, h: usize, name: &str) -> Option<usize> {
        self.layers[h].iter().position(|s| s == name)
    }

    pub fn action_index(&self, h: usize, state: usize, name: &str) -> Option<usize> {
        self.actions[h][state].iter().position(|a| a == name)
    }

    /// Transition probabilities over layer `h+1` for (h, state, action).
    pub fn transition(&self, h: usize, state: usize, action: usize) -> &[f64] {
        &self.transitions[h][state][action]
    }

    pub fn reward(&self, h: usize, state: usize, action: usize) -> f64 {
        self.rewards[h][state][action]
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn layers(&self) -> &[Vec<String>] {
        &self.layers
    }

    pub fn action_names(&self) -> &[Vec<Vec<String>>] {
        &self.actions
    }

    /// Checks every numeric invariant and lists all violations; an empty
    /// report means the instance is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for h in 0..self.horizon {
            for x in 0..self.num_states(h) {
                for a in 0..self.num_actions(h, x) {
                    let row = &self.transitions[h][x][a];
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        violations.push(Violation::RowSum {
                            h,
                            state: self.state_name(h, x).to_string(),
                            action: self.action_name(h, x, a).to_string(),
                            sum,
                        });
                    }
                    if let Some(&p) = row.iter().find(|&&p| p < 0.0) {
                        violations.push(Violation::NegativeProbability {
                            h,
                            state: self.state_name(h, x).to_string(),
                            action: self.action_name(h, x, a).to_string(),
                            value: p,
                        });
                    }
                    let r = self.rewards[h][x][a];
                    if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                        violations.push(Violation::RewardRange {
                            h,
                            state: self.state_name(h, x).to_string(),
                            action: self.action_name(h, x, a).to_string(),
                            value: r,
                        });
                    }
                }
            }
        }
        ValidationReport { violations }
    }
}

/// A single violated MDP invariant, located by timestep/state/action names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    RowSum { h: usize, state: String, action: String, sum: f64 },
    NegativeProbability { h: usize, state: String, action: String, value: f64 },
    RewardRange { h: usize, state: String, action: String, value: f64 },
    /// A transition names a state absent from the next layer. Only arises
    /// when loading from files; indexed instances cannot express it.
    DanglingTarget { h: usize, state: String, action: String, target: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::RowSum { h, state, action, sum } => {
                write!(f, "transition row at (h={h}, {state}, {action}) sums to {sum}")
            }
            Violation::NegativeProbability { h, state, action, value } => {
                write!(f, "negative transition probability {value} at (h={h}, {state}, {action})")
            }
            Violation::RewardRange { h, state, action, value } => {
                write!(f, "reward {value} outside [0, 1] at (h={h}, {state}, {action})")
            }
            Violation::DanglingTarget { h, state, action, target } => {
                write!(f, "transition at (h={h}, {state}, {action}) targets unknown state '{target}'")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_valid() {
            writeln!(f, "valid")
        } else {
            for v in &self.violations {
                writeln!(f, "- {v}")?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum MdpError {
    #[error("malformed MDP: {0}")]
    Structure(String),
    #[error("invalid MDP:\n{0}")]
    Invalid(ValidationReport),
    #[error("operation requires a deterministic policy")]
    StochasticPolicy,
    #[error("policy does not match MDP shape: {0}")]
    PolicyShape(String),
}

/// A designated tie-break at one state: prefer `action` at (h, state).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitTie {
    pub h: usize,
    pub state: usize,
    pub action: usize,
}

/// How to break ties among argmax actions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Pick the lowest-index action among those tied at the maximum.
    #[default]
    FirstIndex,
    /// Pick the highest-index action among those tied at the maximum.
    LastIndex,
    /// Pick a designated action at listed (h, state) pairs when it is tied
    /// at the maximum; elsewhere (or when not tied) fall back to first-index.
    ExplicitChoice(Vec<ExplicitTie>),
}

/// Per-timestep decision rule: one action per state, or a distribution
/// over actions per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySteps {
    Deterministic(Vec<Vec<usize>>),
    Stochastic(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    steps: PolicySteps,
    /// Tie rule used to derive this policy, when it came from a greedy step.
    pub tie_rule: Option<TieRule>,
}

impl Policy {
    pub fn deterministic(actions: Vec<Vec<usize>>) -> Self {
        Self { steps: PolicySteps::Deterministic(actions), tie_rule: None }
    }

    pub fn stochastic(probs: Vec<Vec<Vec<f64>>>) -> Self {
        Self { steps: PolicySteps::Stochastic(probs), tie_rule: None }
    }

    /// Uniform distribution over each state's action set.
    pub fn uniform(mdp: &LayeredMdp) -> Self {
        let probs = (0..mdp.horizon())
            .map(|h| {
                (0..mdp.num_states(h))
                    .map(|x| {
                        let k = mdp.num_actions(h, x);
                        vec![1.0 / k as f64; k]
                    })
                    .collect()
            })
            .collect();
        Self::stochastic(probs)
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.steps, PolicySteps::Deterministic(_))
    }

    /// The chosen action at (h, state) for deterministic policies.
    pub fn action(&self, h: usize, state: usize) -> Option<usize> {
        match &self.steps {
            PolicySteps::Deterministic(acts) => Some(acts[h][state]),
            PolicySteps::Stochastic(_) => None,
        }
    }

    /// Probability of taking `action` at (h, state).
    pub fn prob(&self, h: usize, state: usize, action: usize) -> f64 {
        match &self.steps {
            PolicySteps::Deterministic(acts) => {
                if acts[h][state] == action {
                    1.0
                } else {
                    0.0
                }
            }
            PolicySteps::Stochastic(p) => p[h][state][action],
        }
    }

    pub fn steps(&self) -> &PolicySteps {
        &self.steps
    }

    /// Checks action indices are in range and stochastic rows normalize.
    pub fn validate_for(&self, mdp: &LayeredMdp) -> Result<(), MdpError> {
        match &self.steps {
            PolicySteps::Deterministic(acts) => {
                if acts.len() != mdp.horizon() {
                    return Err(MdpError::PolicyShape(format!(
                        "policy covers {} timesteps, horizon is {}",
                        acts.len(),
                        mdp.horizon()
                    )));
                }
                for (h, layer) in acts.iter().enumerate() {
                    if layer.len() != mdp.num_states(h) {
                        return Err(MdpError::PolicyShape(format!("timestep {h}: wrong state count")));
                    }
                    for (x, &a) in layer.iter().enumerate() {
                        if a >= mdp.num_actions(h, x) {
                            return Err(MdpError::PolicyShape(format!(
                                "action index {a} out of range at (h={h}, state={x})"
                            )));
                        }
                    }
                }
            }
            PolicySteps::Stochastic(probs) => {
                if probs.len() != mdp.horizon() {
                    return Err(MdpError::PolicyShape("wrong horizon".into()));
                }
                for (h, layer) in probs.iter().enumerate() {
                    if layer.len() != mdp.num_states(h) {
                        return Err(MdpError::PolicyShape(format!("timestep {h}: wrong state count")));
                    }
                    for (x, row) in layer.iter().enumerate() {
                        if row.len() != mdp.num_actions(h, x) {
                            return Err(MdpError::PolicyShape(format!(
                                "action row mismatch at (h={h}, state={x})"
                            )));
                        }
                        let sum: f64 = row.iter().sum();
                        if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
                            return Err(MdpError::PolicyShape(format!(
                                "policy row at (h={h}, state={x}) is not a distribution (sum {sum})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Argmax index of `row` under the tie rule, treating values within
/// `tie_tolerance` of the maximum as tied.
fn argmax_with_rule(row: &[f64], h: usize, state: usize, tie: &TieRule, tie_tolerance: f64) -> usize {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = row
        .iter()
        .enumerate()
        .filter(|(_, &v)| max - v <= tie_tolerance)
        .map(|(a, _)| a)
        .collect();
    match tie {
        TieRule::FirstIndex => tied[0],
        TieRule::LastIndex => *tied.last().expect("nonempty action set"),
        TieRule::ExplicitChoice(choices) => {
            match choices.iter().find(|c| c.h == h && c.state == state) {
                Some(c) if tied.contains(&c.action) => c.action,
                _ => tied[0],
            }
        }
    }
}

/// Greedy deterministic policy of a value stack: an argmax action per state,
/// ties broken by `tie`. The applied rule is recorded on the returned policy.
pub fn greedy_policy(f: &TableStack, tie: &TieRule, tie_tolerance: f64) -> Policy {
    let actions = f
        .values()
        .iter()
        .enumerate()
        .map(|(h, layer)| {
            layer
                .iter()
                .enumerate()
                .map(|(x, row)| argmax_with_rule(row, h, x, tie, tie_tolerance))
                .collect()
        })
        .collect();
    Policy { steps: PolicySteps::Deterministic(actions), tie_rule: Some(tie.clone()) }
}

/// Optimal Q-values by backward induction, with the terminal value
/// identically zero. Rejects instances that fail [`LayeredMdp::validate`].
pub fn optimal_q(mdp: &LayeredMdp) -> Result<TableStack, MdpError> {
    let report = mdp.validate();
    if !report.is_valid() {
        return Err(MdpError::Invalid(report));
    }
    let mut q = TableStack::zeros(mdp, TableRole::Value);
    // next_v[x'] = max_a Q_{h+1}(x', a); zeros at the terminal layer.
    let mut next_v = vec![0.0; mdp.num_states(mdp.horizon())];
    for h in (0..mdp.horizon()).rev() {
        let mut layer_v = vec![0.0; mdp.num_states(h)];
        for x in 0..mdp.num_states(h) {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions(h, x) {
                let expected: f64 = mdp
                    .transition(h, x, a)
                    .iter()
                    .zip(&next_v)
                    .map(|(p, v)| p * v)
                    .sum();
                let value = mdp.reward(h, x, a) + expected;
                q.set(h, x, a, value);
                best = best.max(value);
            }
            layer_v[x] = best;
        }
        next_v = layer_v;
    }
    Ok(q)
}

/// Applies the optimality backup to `next` (a layer-`h+1` value table, or
/// `None` at the terminal layer), returning the implied layer-`h` table.
pub fn bellman_backup(mdp: &LayeredMdp, h: usize, next: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let next_v: Vec<f64> = match next {
        Some(layer) => layer
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        None => vec![0.0; mdp.num_states(h + 1)],
    };
    (0..mdp.num_states(h))
        .map(|x| {
            (0..mdp.num_actions(h, x))
                .map(|a| {
                    let expected: f64 = mdp
                        .transition(h, x, a)
                        .iter()
                        .zip(&next_v)
                        .map(|(p, v)| p * v)
                        .sum();
                    mdp.reward(h, x, a) + expected
                })
                .collect()
        })
        .collect()
}

/// Exact policy evaluation output: the return from the initial state plus the
/// full state- and action-value tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyEval {
    /// Expected return from the initial state.
    pub value: f64,
    /// `v[h][state]`, `h` in `0..H`.
    pub state_values: Vec<Vec<f64>>,
    /// Action values under the policy.
    pub q: TableStack,
}

/// Evaluates a policy by backward induction. Works for deterministic and
/// stochastic policies.
pub fn policy_value(mdp: &LayeredMdp, policy: &Policy) -> Result<PolicyEval, MdpError> {
    policy.validate_for(mdp)?;
    let mut q = TableStack::zeros(mdp, TableRole::Value);
    let mut state_values = vec![Vec::new(); mdp.horizon()];
    let mut next_v = vec![0.0; mdp.num_states(mdp.horizon())];
    for h in (0..mdp.horizon()).rev() {
        let mut layer_v = vec![0.0; mdp.num_states(h)];
        for x in 0..mdp.num_states(h) {
            let mut v = 0.0;
            for a in 0..mdp.num_actions(h, x) {
                let expected: f64 = mdp
                    .transition(h, x, a)
                    .iter()
                    .zip(&next_v)
                    .map(|(p, nv)| p * nv)
                    .sum();
                let qv = mdp.reward(h, x, a) + expected;
                q.set(h, x, a, qv);
                v += policy.prob(h, x, a) * qv;
            }
            layer_v[x] = v;
        }
        state_values[h] = layer_v.clone();
        next_v = layer_v;
    }
    let value = state_values[0][mdp.initial_state()];
    Ok(PolicyEval { value, state_values, q })
}

/// State-action occupancy of a policy: the probability of visiting each
/// (state, action) pair at each timestep, by forward recursion from the
/// point mass at the initial state.
pub fn occupancy(mdp: &LayeredMdp, policy: &Policy) -> Result<TableStack, MdpError> {
    policy.validate_for(mdp)?;
    let mut occ = TableStack::zeros(mdp, TableRole::Occupancy);
    let mut state_mass = vec![0.0; mdp.num_states(0)];
    state_mass[mdp.initial_state()] = 1.0;
    for h in 0..mdp.horizon() {
        let mut next_mass = vec![0.0; mdp.num_states(h + 1)];
        for x in 0..mdp.num_states(h) {
            if state_mass[x] == 0.0 {
                continue;
            }
            for a in 0..mdp.num_actions(h, x) {
                let mass = state_mass[x] * policy.prob(h, x, a);
                if mass == 0.0 {
                    continue;
                }
                occ.set(h, x, a, mass);
                for (xn, p) in mdp.transition(h, x, a).iter().enumerate() {
                    next_mass[xn] += mass * p;
                }
            }
        }
        state_mass = next_mass;
    }
    debug_assert!((0..mdp.horizon()).all(|h| (occ.layer_sum(h) - 1.0).abs() <= DISTRIBUTION_TOL * 16.0));
    Ok(occ)
}

/// Smallest per-state action gap of a value stack.
///
/// The gap at (h, state) is the margin between the best and second-best
/// action values when the argmax is unique; it is zero when two actions sit
/// within `tie_tolerance` of the maximum, and positive infinity when the
/// state offers a single action (there is no competing action to tie with).
/// The function gap is the minimum over all states and timesteps.
pub fn gap_of_function(f: &TableStack, tie_tolerance: f64) -> f64 {
    let mut overall = f64::INFINITY;
    for layer in f.values() {
        for row in layer {
            overall = overall.min(state_gap(row, tie_tolerance));
        }
    }
    overall
}

pub(crate) fn state_gap(row: &[f64], tie_tolerance: f64) -> f64 {
    if row.len() == 1 {
        return f64::INFINITY;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied = row.iter().filter(|&&v| max - v <= tie_tolerance).count();
    if tied >= 2 {
        return 0.0;
    }
    let second = row
        .iter()
        .copied()
        .filter(|&v| v < max)
        .fold(f64::NEG_INFINITY, f64::max);
    max - second
}

/// Expected number of timesteps at which two deterministic policies disagree,
/// along the state distribution induced by `reference`.
pub fn policy_disagreement(
    mdp: &LayeredMdp,
    candidate: &Policy,
    reference: &Policy,
) -> Result<f64, MdpError> {
    if !candidate.is_deterministic() || !reference.is_deterministic() {
        return Err(MdpError::StochasticPolicy);
    }
    let occ = occupancy(mdp, reference)?;
    let mut total = 0.0;
    for h in 0..mdp.horizon() {
        for x in 0..mdp.num_states(h) {
            let state_mass: f64 = occ.row(h, x).iter().sum();
            if state_mass > 0.0 && candidate.action(h, x) != reference.action(h, x) {
                total += state_mass;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
pub mod test_fixtures {
    use super::*;

    /// Two-timestep chain: one state per layer, two actions at the first.
    pub fn two_layer_chain() -> LayeredMdp {
        LayeredMdp::new(
            2,
            vec![vec!["s0".into()], vec!["s1".into()], vec!["end".into()]],
            vec![
                vec![vec!["a".into(), "b".into()]],
                vec![vec!["go".into()]],
            ],
            vec![
                vec![vec![vec![1.0], vec![1.0]]],
                vec![vec![vec![1.0]]],
            ],
            vec![vec![vec![0.25, 0.75]], vec![vec![0.5]]],
            0,
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use test_fixtures::two_layer_chain;

    fn zero_reward_mdp() -> LayeredMdp {
        let mut mdp = two_layer_chain();
        mdp.rewards = vec![vec![vec![0.0, 0.0]], vec![vec![0.0]]];
        mdp
    }

    #[test]
    fn well_formed_chain_validates_clean() {
        assert!(two_layer_chain().validate().is_valid());
    }

    #[test]
    fn row_sum_violation_reported() {
        let mut mdp = two_layer_chain();
        mdp.transitions[0][0][0] = vec![0.9];
        let report = mdp.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::RowSum { .. }));
    }

    #[test]
    fn reward_range_violation_reported() {
        let mut mdp = two_layer_chain();
        mdp.rewards[0][0][1] = 1.5;
        let report = mdp.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::RewardRange { .. }));
    }

    #[test]
    fn optimal_q_zero_mdp_is_zero() {
        let q = optimal_q(&zero_reward_mdp()).unwrap();
        assert_eq!(q.max_abs(), 0.0);
    }

    #[test]
    fn optimal_q_rejects_invalid() {
        let mut mdp = two_layer_chain();
        mdp.rewards[0][0][0] = -0.5;
        assert!(matches!(optimal_q(&mdp), Err(MdpError::Invalid(_))));
    }

    #[test]
    fn optimal_q_chain_values() {
        let mdp = two_layer_chain();
        let q = optimal_q(&mdp).unwrap();
        assert_eq!(q.get(1, 0, 0), 0.5);
        assert_eq!(q.get(0, 0, 0), 0.75);
        assert_eq!(q.get(0, 0, 1), 1.25);
    }

    #[test]
    fn greedy_tie_rules() {
        let mdp = two_layer_chain();
        let mut f = TableStack::zeros(&mdp, TableRole::Value);
        f.set(0, 0, 0, 1.0);
        f.set(0, 0, 1, 1.0);
        let first = greedy_policy(&f, &TieRule::FirstIndex, DEFAULT_TIE_TOLERANCE);
        assert_eq!(first.action(0, 0), Some(0));
        let last = greedy_policy(&f, &TieRule::LastIndex, DEFAULT_TIE_TOLERANCE);
        assert_eq!(last.action(0, 0), Some(1));
        let choices = vec![ExplicitTie { h: 0, state: 0, action: 1 }];
        let explicit = greedy_policy(&f, &TieRule::ExplicitChoice(choices), DEFAULT_TIE_TOLERANCE);
        assert_eq!(explicit.action(0, 0), Some(1));
        assert!(explicit.tie_rule.is_some());
    }

    #[test]
    fn explicit_choice_ignored_when_not_tied() {
        let mdp = two_layer_chain();
        let mut f = TableStack::zeros(&mdp, TableRole::Value);
        f.set(0, 0, 0, 1.0);
        f.set(0, 0, 1, 0.2);
        let choices = vec![ExplicitTie { h: 0, state: 0, action: 1 }];
        let pi = greedy_policy(&f, &TieRule::ExplicitChoice(choices), DEFAULT_TIE_TOLERANCE);
        assert_eq!(pi.action(0, 0), Some(0));
    }

    #[test]
    fn policy_value_zero_mdp() {
        let mdp = zero_reward_mdp();
        let pi = Policy::deterministic(vec![vec![1], vec![0]]);
        assert_eq!(policy_value(&mdp, &pi).unwrap().value, 0.0);
    }

    #[test]
    fn uniform_policy_occupancy_splits_evenly() {
        let mdp = two_layer_chain();
        let occ = occupancy(&mdp, &Policy::uniform(&mdp)).unwrap();
        assert!((occ.get(0, 0, 0) - 0.5).abs() < 1e-15);
        assert!((occ.get(0, 0, 1) - 0.5).abs() < 1e-15);
        assert!((occ.layer_sum(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gap_single_action_state_is_vacuous() {
        let mdp = two_layer_chain();
        let mut f = TableStack::zeros(&mdp, TableRole::Value);
        f.set(0, 0, 0, 0.8);
        f.set(0, 0, 1, 0.6);
        // Layer 1 has a single action: it must not drag the gap to zero.
        assert!((gap_of_function(&f, 0.0) - 0.2).abs() < 1e-15);
        assert!((gap_of_function(&f, DEFAULT_TIE_TOLERANCE) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn gap_tie_is_zero() {
        let mdp = two_layer_chain();
        let mut f = TableStack::zeros(&mdp, TableRole::Value);
        f.set(0, 0, 0, 1.0);
        f.set(0, 0, 1, 1.0);
        assert_eq!(gap_of_function(&f, DEFAULT_TIE_TOLERANCE), 0.0);
    }

    #[test]
    fn disagreement_of_identical_policies_is_zero() {
        let mdp = two_layer_chain();
        let pi = Policy::deterministic(vec![vec![0], vec![0]]);
        assert_eq!(policy_disagreement(&mdp, &pi, &pi).unwrap(), 0.0);
    }
}
