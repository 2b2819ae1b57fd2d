//! Per-timestep tables over (state, action) pairs.
//!
//! A [`TableStack`] holds one real-valued table per timestep `h` in `0..H`,
//! shaped like the MDP's layers: `values[h][state][action]`. The same
//! container represents Q-functions, importance weights, occupancies, and
//! data distributions; the [`TableRole`] tag records which. Value stacks
//! never store a layer-`H` table: the terminal value is identically zero.

use serde::{Deserialize, Serialize};

use crate::mdp::LayeredMdp;

/// What a table stack represents. Roles carry different invariants:
/// occupancies and data distributions are per-timestep probability
/// distributions, weights are pointwise nonnegative when regularity is
/// asserted, and value tables are only required to be finite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableRole {
    Value,
    Weight,
    Occupancy,
    DataDistribution,
}

impl std::fmt::Display for TableRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TableRole::Value => "value",
            TableRole::Weight => "weight",
            TableRole::Occupancy => "occupancy",
            TableRole::DataDistribution => "data-distribution",
        };
        f.write_str(s)
    }
}

/// Normalization tolerance for occupancy / data-distribution rows.
pub const DISTRIBUTION_TOL: f64 = 1e-12;

/// A stack of `H` tables, one per timestep, indexed `[h][state][action]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableStack {
    role: TableRole,
    values: Vec<Vec<Vec<f64>>>,
}

impl TableStack {
    /// Wraps raw values without shape checks; use [`TableStack::validate_shape`]
    /// or the class constructors to verify against an MDP.
    pub fn new(role: TableRole, values: Vec<Vec<Vec<f64>>>) -> Self {
        Self { role, values }
    }

    /// All-zero stack shaped like `mdp`.
    pub fn zeros(mdp: &LayeredMdp, role: TableRole) -> Self {
        let values = (0..mdp.horizon())
            .map(|h| {
                (0..mdp.num_states(h))
                    .map(|x| vec![0.0; mdp.num_actions(h, x)])
                    .collect()
            })
            .collect();
        Self { role, values }
    }

    pub fn role(&self) -> TableRole {
        self.role
    }

    pub fn with_role(mut self, role: TableRole) -> Self {
        self.role = role;
        self
    }

    /// Number of timesteps (the MDP horizon).
    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, h: usize, state: usize, action: usize) -> f64 {
        self.values[h][state][action]
    }

    pub fn set(&mut self, h: usize, state: usize, action: usize, value: f64) {
        self.values[h][state][action] = value;
    }

    /// Row of action values at (h, state).
    pub fn row(&self, h: usize, state: usize) -> &[f64] {
        &self.values[h][state]
    }

    pub fn layer(&self, h: usize) -> &[Vec<f64>] {
        &self.values[h]
    }

    pub fn values(&self) -> &[Vec<Vec<f64>>] {
        &self.values
    }

    /// Entry iterator yielding `(h, state, action, value)`.
    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.values.iter().enumerate().flat_map(|(h, layer)| {
            layer.iter().enumerate().flat_map(move |(x, row)| {
                row.iter().enumerate().map(move |(a, &v)| (h, x, a, v))
            })
        })
    }

    /// Largest absolute entry over the whole stack. Zero for an empty stack.
    pub fn max_abs(&self) -> f64 {
        self.iter_entries()
            .map(|(_, _, _, v)| v.abs())
            .fold(0.0, f64::max)
    }

    /// Sum of entries at timestep `h`.
    pub fn layer_sum(&self, h: usize) -> f64 {
        self.values[h].iter().flatten().sum()
    }

    /// Checks that the stack has one table per timestep and each row matches
    /// the MDP's per-state action count.
    pub fn validate_shape(&self, mdp: &LayeredMdp) -> Result<(), ShapeMismatch> {
        if self.values.len() != mdp.horizon() {
            return Err(ShapeMismatch::Horizon {
                expected: mdp.horizon(),
                found: self.values.len(),
            });
        }
        for (h, layer) in self.values.iter().enumerate() {
            if layer.len() != mdp.num_states(h) {
                return Err(ShapeMismatch::States {
                    h,
                    expected: mdp.num_states(h),
                    found: layer.len(),
                });
            }
            for (x, row) in layer.iter().enumerate() {
                if row.len() != mdp.num_actions(h, x) {
                    return Err(ShapeMismatch::Actions {
                        h,
                        state: x,
                        expected: mdp.num_actions(h, x),
                        found: row.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Role-specific numeric invariants: distributions must be nonnegative
    /// and sum to one per timestep; all roles must be finite.
    pub fn validate_role(&self) -> Result<(), RoleViolation> {
        for (h, x, a, v) in self.iter_entries() {
            if !v.is_finite() {
                return Err(RoleViolation::NonFinite { h, state: x, action: a });
            }
        }
        match self.role {
            TableRole::Occupancy | TableRole::DataDistribution => {
                for (h, x, a, v) in self.iter_entries() {
                    if v < 0.0 {
                        return Err(RoleViolation::Negative { h, state: x, action: a, value: v });
                    }
                }
                for h in 0..self.horizon() {
                    let sum = self.layer_sum(h);
                    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
                        return Err(RoleViolation::NotNormalized { h, sum });
                    }
                }
            }
            TableRole::Weight | TableRole::Value => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ShapeMismatch {
    #[error("stack has {found} timesteps, MDP horizon is {expected}")]
    Horizon { expected: usize, found: usize },
    #[error("timestep {h}: stack has {found} states, layer has {expected}")]
    States { h: usize, expected: usize, found: usize },
    #[error("timestep {h}, state {state}: stack row has {found} actions, MDP has {expected}")]
    Actions { h: usize, state: usize, expected: usize, found: usize },
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum RoleViolation {
    #[error("non-finite entry at (h={h}, state={state}, action={action})")]
    NonFinite { h: usize, state: usize, action: usize },
    #[error("negative entry {value} at (h={h}, state={state}, action={action})")]
    Negative { h: usize, state: usize, action: usize, value: f64 },
    #[error("timestep {h} sums to {sum}, expected 1")]
    NotNormalized { h: usize, sum: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::test_fixtures::two_layer_chain;

    #[test]
    fn zeros_match_mdp_shape() {
        let mdp = two_layer_chain();
        let stack = TableStack::zeros(&mdp, TableRole::Value);
        assert_eq!(stack.horizon(), mdp.horizon());
        stack.validate_shape(&mdp).unwrap();
        assert_eq!(stack.max_abs(), 0.0);
    }

    #[test]
    fn distribution_role_rejects_unnormalized() {
        let mdp = two_layer_chain();
        let stack = TableStack::zeros(&mdp, TableRole::DataDistribution);
        let err = stack.validate_role().unwrap_err();
        assert!(matches!(err, RoleViolation::NotNormalized { h: 0, .. }));
    }

    #[test]
    fn shape_mismatch_reports_location() {
        let mdp = two_layer_chain();
        let bad = TableStack::new(TableRole::Value, vec![vec![vec![0.0]]; mdp.horizon()]);
        let err = bad.validate_shape(&mdp).unwrap_err();
        assert!(matches!(err, ShapeMismatch::Actions { h: 0, state: 0, .. }));
    }
}
