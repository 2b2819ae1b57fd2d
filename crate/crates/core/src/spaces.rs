//! Finite candidate classes for value and weight functions, prescreening,
//! and exact misspecification errors.
//!
//! Classes are ordered name/table lists; every argmin or argmax over members
//! breaks ties toward the lowest index so that selections are reproducible.
//! The misspecification errors below are population quantities: all
//! expectations are exact sums over tables, never sample estimates.

use serde::{Deserialize, Serialize};

use crate::data::DataDistribution;
use crate::mdp::{
    gap_of_function, greedy_policy, occupancy, optimal_q, LayeredMdp, MdpError, TieRule,
};
use crate::table::{ShapeMismatch, TableRole, TableStack};

/// Tolerance for the weight-regularity normalization check.
pub const REGULARITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ClassError {
    #[error("class must contain at least one member")]
    Empty,
    #[error("member '{name}': {source}")]
    Shape { name: String, source: ShapeMismatch },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("prescreening at threshold {threshold} removed every member: {}",
        rejected.iter().map(|(n, g)| format!("{n} (gap {g})")).collect::<Vec<_>>().join(", "))]
    EmptyVersionSpace { threshold: f64, rejected: Vec<(String, f64)> },
}

/// An ordered, finite class of candidate value functions, with each member's
/// action gap cached at construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionClass {
    names: Vec<String>,
    members: Vec<TableStack>,
    gaps: Vec<f64>,
    gap_tie_tolerance: f64,
}

impl FunctionClass {
    pub fn new(
        named: Vec<(String, TableStack)>,
        mdp: &LayeredMdp,
        tie_tolerance: f64,
    ) -> Result<Self, ClassError> {
        if named.is_empty() {
            return Err(ClassError::Empty);
        }
        let mut names = Vec::with_capacity(named.len());
        let mut members = Vec::with_capacity(named.len());
        let mut gaps = Vec::with_capacity(named.len());
        for (name, stack) in named {
            let stack = stack.with_role(TableRole::Value);
            stack
                .validate_shape(mdp)
                .map_err(|source| ClassError::Shape { name: name.clone(), source })?;
            gaps.push(gap_of_function(&stack, tie_tolerance));
            names.push(name);
            members.push(stack);
        }
        Ok(Self { names, members, gaps, gap_tie_tolerance: tie_tolerance })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, index: usize) -> &TableStack {
        &self.members[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn members(&self) -> &[TableStack] {
        &self.members
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Gap of member `index`, cached from construction.
    pub fn member_gap(&self, index: usize) -> f64 {
        self.gaps[index]
    }

    pub fn gap_tie_tolerance(&self) -> f64 {
        self.gap_tie_tolerance
    }

    /// Smallest member gap; the class is nonempty so this always exists.
    pub fn class_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Lists entries violating the per-timestep value range `[0, H - h]`.
    /// This is a validator, not a construction constraint: deliberately
    /// out-of-range probes are allowed as members.
    pub fn value_range_violations(&self, mdp: &LayeredMdp) -> Vec<(String, usize, usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, stack) in self.members.iter().enumerate() {
            for (h, x, a, v) in stack.iter_entries() {
                let hi = (mdp.horizon() - h) as f64;
                if !(0.0..=hi).contains(&v) {
                    out.push((self.names[i].clone(), h, x, a, v));
                }
            }
        }
        out
    }
}

/// An ordered, finite class of candidate importance-weight functions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightClass {
    names: Vec<String>,
    members: Vec<TableStack>,
}

impl WeightClass {
    pub fn new(named: Vec<(String, TableStack)>, mdp: &LayeredMdp) -> Result<Self, ClassError> {
        if named.is_empty() {
            return Err(ClassError::Empty);
        }
        let mut names = Vec::with_capacity(named.len());
        let mut members = Vec::with_capacity(named.len());
        for (name, stack) in named {
            let stack = stack.with_role(TableRole::Weight);
            stack
                .validate_shape(mdp)
                .map_err(|source| ClassError::Shape { name: name.clone(), source })?;
            names.push(name);
            members.push(stack);
        }
        Ok(Self { names, members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, index: usize) -> &TableStack {
        &self.members[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn members(&self) -> &[TableStack] {
        &self.members
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Keeps the members whose gap meets `c_gap`, preserving order. A zero
/// threshold returns the class unchanged. Removing every member is an error
/// that lists each rejected member with its gap.
pub fn prescreen(
    class: &FunctionClass,
    c_gap: f64,
    tie_tolerance: f64,
) -> Result<FunctionClass, ClassError> {
    if c_gap == 0.0 {
        return Ok(class.clone());
    }
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for i in 0..class.len() {
        let gap = gap_of_function(class.member(i), tie_tolerance);
        if gap >= c_gap {
            kept.push((class.name(i).to_string(), class.member(i).clone(), gap));
        } else {
            rejected.push((class.name(i).to_string(), gap));
        }
    }
    if kept.is_empty() {
        return Err(ClassError::EmptyVersionSpace { threshold: c_gap, rejected });
    }
    let (names, rest): (Vec<_>, Vec<_>) = kept.into_iter().map(|(n, m, g)| (n, (m, g))).unzip();
    let (members, gaps): (Vec<_>, Vec<_>) = rest.into_iter().unzip();
    Ok(FunctionClass { names, members, gaps, gap_tie_tolerance: tie_tolerance })
}

/// Result of a misspecification-error minimization: the value and the
/// achieving member (lowest index on ties).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsResult {
    pub value: f64,
    pub argmin_index: usize,
    pub argmin_name: String,
}

/// Bellman residuals `f_h - (T_h f_{h+1})` for every timestep, with the
/// terminal value taken as zero.
pub fn bellman_residuals(mdp: &LayeredMdp, f: &TableStack) -> TableStack {
    let mut res = TableStack::zeros(mdp, TableRole::Value);
    for h in 0..mdp.horizon() {
        let next = if h + 1 < mdp.horizon() { Some(f.layer(h + 1)) } else { None };
        let backed_up = crate::mdp::bellman_backup(mdp, h, next);
        for x in 0..mdp.num_states(h) {
            for a in 0..mdp.num_actions(h, x) {
                res.set(h, x, a, f.get(h, x, a) - backed_up[x][a]);
            }
        }
    }
    res
}

fn optimal_occupancy(mdp: &LayeredMdp) -> Result<(TableStack, TableStack), ClassError> {
    let q_opt = optimal_q(mdp)?;
    let pi_opt = greedy_policy(&q_opt, &TieRule::FirstIndex, crate::mdp::DEFAULT_TIE_TOLERANCE);
    let occ = occupancy(mdp, &pi_opt)?;
    Ok((q_opt, occ))
}

/// How well the weight class can mimic the optimal occupancy against the
/// data distribution, judged through the value class's Bellman residuals as
/// discriminators: the best member minimizes the worst-case difference
/// between the reweighted-data expectation and the optimal-occupancy
/// expectation of each residual.
pub fn eps_w(
    functions: &FunctionClass,
    weights: &WeightClass,
    mdp: &LayeredMdp,
    data_dist: &DataDistribution,
) -> Result<EpsResult, ClassError> {
    let (_, occ_opt) = optimal_occupancy(mdp)?;
    let residuals: Vec<TableStack> = functions
        .members()
        .iter()
        .map(|f| bellman_residuals(mdp, f))
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for wi in 0..weights.len() {
        let w = weights.member(wi);
        let mut worst = 0.0_f64;
        for res in &residuals {
            for h in 0..mdp.horizon() {
                let mut reweighted = 0.0;
                let mut on_optimal = 0.0;
                for x in 0..mdp.num_states(h) {
                    for a in 0..mdp.num_actions(h, x) {
                        let r = res.get(h, x, a);
                        reweighted += data_dist.get(h, x, a) * w.get(h, x, a) * r;
                        on_optimal += occ_opt.get(h, x, a) * r;
                    }
                }
                worst = worst.max((reweighted - on_optimal).abs());
            }
        }
        if best.is_none_or(|(v, _)| worst < v) {
            best = Some((worst, wi));
        }
    }
    let (value, argmin_index) = best.expect("weight class is nonempty");
    Ok(EpsResult { value, argmin_index, argmin_name: weights.name(argmin_index).to_string() })
}

/// How well the value class approximates the optimal action-value function,
/// judged through the weight class as discriminators plus the initial-state
/// value difference.
pub fn eps_f(
    functions: &FunctionClass,
    weights: &WeightClass,
    mdp: &LayeredMdp,
    data_dist: &DataDistribution,
) -> Result<EpsResult, ClassError> {
    let (q_opt, _) = optimal_occupancy(mdp)?;
    let tie = TieRule::FirstIndex;
    let tol = crate::mdp::DEFAULT_TIE_TOLERANCE;
    let x0 = mdp.initial_state();
    let pi_opt = greedy_policy(&q_opt, &tie, tol);
    let opt_initial = q_opt.get(0, x0, pi_opt.action(0, x0).expect("deterministic"));
    let mut best: Option<(f64, usize)> = None;
    for fi in 0..functions.len() {
        let f = functions.member(fi);
        let res = bellman_residuals(mdp, f);
        let pi_f = greedy_policy(f, &tie, tol);
        let initial_diff =
            (f.get(0, x0, pi_f.action(0, x0).expect("deterministic")) - opt_initial).abs();
        let mut worst_loss = 0.0_f64;
        for w in weights.members() {
            for h in 0..mdp.horizon() {
                let mut loss = 0.0;
                for x in 0..mdp.num_states(h) {
                    for a in 0..mdp.num_actions(h, x) {
                        loss += data_dist.get(h, x, a) * w.get(h, x, a) * res.get(h, x, a);
                    }
                }
                worst_loss = worst_loss.max(loss.abs());
            }
        }
        let objective = worst_loss + initial_diff;
        if best.is_none_or(|(v, _)| objective < v) {
            best = Some((objective, fi));
        }
    }
    let (value, argmin_index) = best.expect("function class is nonempty");
    Ok(EpsResult { value, argmin_index, argmin_name: functions.name(argmin_index).to_string() })
}

/// Best sup-norm approximation of the optimal action-value function within
/// the class: `min_f max_h ||f_h - Q*_h||_inf`.
pub fn eps_f_inf(functions: &FunctionClass, mdp: &LayeredMdp) -> Result<EpsResult, ClassError> {
    let q_opt = optimal_q(mdp)?;
    let mut best: Option<(f64, usize)> = None;
    for fi in 0..functions.len() {
        let f = functions.member(fi);
        let err = f
            .iter_entries()
            .map(|(h, x, a, v)| (v - q_opt.get(h, x, a)).abs())
            .fold(0.0, f64::max);
        if best.is_none_or(|(v, _)| err < v) {
            best = Some((err, fi));
        }
    }
    let (value, argmin_index) = best.expect("function class is nonempty");
    Ok(EpsResult { value, argmin_index, argmin_name: functions.name(argmin_index).to_string() })
}

/// Regularity status of one weight-class member: pointwise nonnegative and
/// unit expectation under the data distribution at every timestep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemberRegularity {
    pub name: String,
    pub nonnegative: bool,
    /// First negative entry, when one exists.
    pub negative_witness: Option<(usize, usize, usize, f64)>,
    /// Per-timestep expectations `E_dD[w_h]`.
    pub expectations: Vec<f64>,
    pub normalized: bool,
}

impl MemberRegularity {
    pub fn passes(&self) -> bool {
        self.nonnegative && self.normalized
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityReport {
    pub tolerance: f64,
    pub members: Vec<MemberRegularity>,
}

impl RegularityReport {
    pub fn all_pass(&self) -> bool {
        self.members.iter().all(MemberRegularity::passes)
    }
}

/// Checks each weight member for nonnegativity and unit data-expectation per
/// timestep, within [`REGULARITY_TOL`].
pub fn regularity_check(weights: &WeightClass, data_dist: &DataDistribution) -> RegularityReport {
    let horizon = data_dist.table().horizon();
    let members = (0..weights.len())
        .map(|wi| {
            let w = weights.member(wi);
            let negative_witness = w.iter_entries().find(|&(_, _, _, v)| v < 0.0);
            let expectations: Vec<f64> = (0..horizon).map(|h| data_dist.expect(w, h)).collect();
            let normalized = expectations.iter().all(|e| (e - 1.0).abs() <= REGULARITY_TOL);
            MemberRegularity {
                name: weights.name(wi).to_string(),
                nonnegative: negative_witness.is_none(),
                negative_witness,
                expectations,
                normalized,
            }
        })
        .collect();
    RegularityReport { tolerance: REGULARITY_TOL, members }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::test_fixtures::two_layer_chain;
    use crate::mdp::DEFAULT_TIE_TOLERANCE;

    fn chain_setup() -> (LayeredMdp, TableStack, DataDistribution) {
        let mdp = two_layer_chain();
        let q = optimal_q(&mdp).unwrap();
        let dist = DataDistribution::new(
            TableStack::new(
                TableRole::DataDistribution,
                vec![vec![vec![0.5, 0.5]], vec![vec![1.0]]],
            ),
            &mdp,
        )
        .unwrap();
        (mdp, q, dist)
    }

    #[test]
    fn empty_class_rejected() {
        let mdp = two_layer_chain();
        assert!(matches!(
            FunctionClass::new(vec![], &mdp, DEFAULT_TIE_TOLERANCE),
            Err(ClassError::Empty)
        ));
    }

    #[test]
    fn prescreen_zero_threshold_is_identity() {
        let (mdp, q, _) = chain_setup();
        let class =
            FunctionClass::new(vec![("q".into(), q)], &mdp, DEFAULT_TIE_TOLERANCE).unwrap();
        let kept = prescreen(&class, 0.0, DEFAULT_TIE_TOLERANCE).unwrap();
        assert_eq!(kept.len(), class.len());
        assert_eq!(kept.names(), class.names());
    }

    #[test]
    fn prescreen_empty_result_lists_gaps() {
        let (mdp, q, _) = chain_setup();
        let flat = TableStack::zeros(&mdp, TableRole::Value);
        let class = FunctionClass::new(
            vec![("q".into(), q), ("flat".into(), flat)],
            &mdp,
            DEFAULT_TIE_TOLERANCE,
        )
        .unwrap();
        let err = prescreen(&class, 100.0, DEFAULT_TIE_TOLERANCE).unwrap_err();
        match err {
            ClassError::EmptyVersionSpace { threshold, rejected } => {
                assert_eq!(threshold, 100.0);
                assert_eq!(rejected.len(), 2);
                assert_eq!(rejected[1].1, 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn class_gap_is_minimum_over_members() {
        let (mdp, q, _) = chain_setup();
        let flat = TableStack::zeros(&mdp, TableRole::Value);
        let class = FunctionClass::new(
            vec![("q".into(), q.clone()), ("flat".into(), flat)],
            &mdp,
            DEFAULT_TIE_TOLERANCE,
        )
        .unwrap();
        assert_eq!(class.class_gap(), 0.0);
        let single =
            FunctionClass::new(vec![("q".into(), q)], &mdp, DEFAULT_TIE_TOLERANCE).unwrap();
        assert!((single.class_gap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eps_f_zero_when_optimal_in_class() {
        let (mdp, q, dist) = chain_setup();
        let functions =
            FunctionClass::new(vec![("q".into(), q)], &mdp, DEFAULT_TIE_TOLERANCE).unwrap();
        let ones = TableStack::new(TableRole::Weight, vec![vec![vec![1.0, 1.0]], vec![vec![1.0]]]);
        let weights = WeightClass::new(vec![("ones".into(), ones)], &mdp).unwrap();
        let result = eps_f(&functions, &weights, &mdp, &dist).unwrap();
        assert!(result.value.abs() < 1e-12);
        assert_eq!(result.argmin_name, "q");
        let inf = eps_f_inf(&functions, &mdp).unwrap();
        assert_eq!(inf.value, 0.0);
    }

    #[test]
    fn eps_w_zero_when_only_residual_free_functions() {
        // With the optimal values as the only member, every discriminator
        // residual vanishes identically, so any weight class scores zero.
        let (mdp, q, dist) = chain_setup();
        let functions =
            FunctionClass::new(vec![("q".into(), q)], &mdp, DEFAULT_TIE_TOLERANCE).unwrap();
        let mut junk = TableStack::zeros(&mdp, TableRole::Weight);
        junk.set(0, 0, 0, 17.0);
        let weights = WeightClass::new(vec![("junk".into(), junk)], &mdp).unwrap();
        let result = eps_w(&functions, &weights, &mdp, &dist).unwrap();
        assert_eq!(result.value, 0.0);
    }

    #[test]
    fn regularity_flags_negative_and_unnormalized() {
        let (mdp, _, dist) = chain_setup();
        let mut neg = TableStack::zeros(&mdp, TableRole::Weight);
        neg.set(0, 0, 0, -1.0);
        let ones = TableStack::new(TableRole::Weight, vec![vec![vec![1.0, 1.0]], vec![vec![1.0]]]);
        let weights = WeightClass::new(
            vec![("neg".into(), neg), ("ones".into(), ones)],
            &mdp,
        )
        .unwrap();
        let report = regularity_check(&weights, &dist);
        assert!(!report.members[0].passes());
        assert!(!report.members[0].nonnegative);
        assert!(report.members[1].passes());
        assert!((report.members[1].expectations[0] - 1.0).abs() <= REGULARITY_TOL);
    }
}
