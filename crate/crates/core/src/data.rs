//! Offline data: behavior distributions, i.i.d. tuple datasets, density
//! ratios, and coverage constants.
//!
//! A dataset holds `n` independent tuples `(x_h, a_h, r_h, x_{h+1})` per
//! timestep, drawn from a per-timestep distribution over (state, action)
//! pairs; rewards and next states follow the MDP. Tuples at different
//! timesteps are drawn independently, never stitched into trajectories.
//!
//! Sampling is reproducible: the generator is ChaCha12 keyed by the dataset
//! seed, with the per-timestep substream selected by the ChaCha stream index
//! `h`. Equal seeds therefore produce bit-identical datasets, and parallel
//! sweeps stay independent as long as they use distinct seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{occupancy, LayeredMdp, MdpError, Policy};
use crate::spaces::WeightClass;
use crate::table::{RoleViolation, ShapeMismatch, TableRole, TableStack};

/// Derives an independent stream seed from a base seed and a tag (trial
/// index, rollout index, iteration number). Splitmix64 finalizer over the
/// combined words, so nearby tags land far apart.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A per-timestep distribution over (state, action) pairs, i.e. the
/// generating distribution of the offline data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataDistribution(TableStack);

impl DataDistribution {
    /// Validates shape against the MDP and the distribution invariants
    /// (nonnegative, sums to one per timestep).
    pub fn new(stack: TableStack, mdp: &LayeredMdp) -> Result<Self, DataError> {
        let stack = stack.with_role(TableRole::DataDistribution);
        stack.validate_shape(mdp)?;
        stack.validate_role()?;
        Ok(Self(stack))
    }

    /// The occupancy of a policy, reinterpreted as a data distribution.
    pub fn from_policy(mdp: &LayeredMdp, policy: &Policy) -> Result<Self, DataError> {
        let occ = occupancy(mdp, policy)?;
        Ok(Self(occ.with_role(TableRole::DataDistribution)))
    }

    pub fn table(&self) -> &TableStack {
        &self.0
    }

    pub fn get(&self, h: usize, state: usize, action: usize) -> f64 {
        self.0.get(h, state, action)
    }

    /// Expectation of a table `g` under the timestep-`h` marginal.
    pub fn expect(&self, g: &TableStack, h: usize) -> f64 {
        self.0
            .layer(h)
            .iter()
            .enumerate()
            .flat_map(|(x, row)| row.iter().enumerate().map(move |(a, &d)| d * g.get(h, x, a)))
            .sum()
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum DataError {
    #[error("distribution shape mismatch: {0}")]
    Shape(#[from] ShapeMismatch),
    #[error("not a valid distribution: {0}")]
    Distribution(#[from] RoleViolation),
    #[error("dataset size must be positive")]
    EmptySize,
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// One offline transition tuple at a fixed timestep. `next_state` indexes
/// into the next layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Offline dataset: `n` i.i.d. tuples per timestep, plus the seed it was
/// generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub seed: u64,
    pub n: usize,
    /// `tuples[h]` has exactly `n` entries.
    pub tuples: Vec<Vec<Transition>>,
}

impl Dataset {
    pub fn horizon(&self) -> usize {
        self.tuples.len()
    }
}

/// Inverse-CDF draw from `cumulative` (a nondecreasing scan ending at ~1).
fn draw_index(cumulative: &[f64], u: f64) -> usize {
    match cumulative.binary_search_by(|c| c.partial_cmp(&u).expect("finite cdf")) {
        Ok(i) => (i + 1).min(cumulative.len() - 1),
        Err(i) => i.min(cumulative.len() - 1),
    }
}

/// Draws `n` tuples per timestep from the generative process
/// `(x, a) ~ d_h`, `r = R_h(x, a)`, `x' ~ P_h(.|x, a)`.
pub fn sample_dataset(
    mdp: &LayeredMdp,
    data_dist: &DataDistribution,
    n: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n == 0 {
        return Err(DataError::EmptySize);
    }
    let mut tuples = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        // Flattened (state, action) support in canonical order with its CDF;
        // zero-mass pairs are skipped so no draw can land on them.
        let mut pairs = Vec::new();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for x in 0..mdp.num_states(h) {
            for a in 0..mdp.num_actions(h, x) {
                let p = data_dist.get(h, x, a);
                if p > 0.0 {
                    acc += p;
                    pairs.push((x, a));
                    cdf.push(acc);
                }
            }
        }
        // Per-pair transition CDFs, built lazily since most pairs are never drawn.
        let mut trans_cdf: Vec<Option<(Vec<usize>, Vec<f64>)>> = vec![None; pairs.len()];

        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(h as u64);
        let mut layer = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = draw_index(&cdf, rng.gen::<f64>() * acc);
            let (x, a) = pairs[idx];
            let (targets, row_cdf) = trans_cdf[idx].get_or_insert_with(|| {
                let mut s = 0.0;
                let mut targets = Vec::new();
                let mut cum = Vec::new();
                for (xn, &p) in mdp.transition(h, x, a).iter().enumerate() {
                    if p > 0.0 {
                        s += p;
                        targets.push(xn);
                        cum.push(s);
                    }
                }
                (targets, cum)
            });
            let total = *row_cdf.last().expect("transition row has positive mass");
            let next_state = targets[draw_index(row_cdf, rng.gen::<f64>() * total)];
            layer.push(Transition { state: x, action: a, reward: mdp.reward(h, x, a), next_state });
        }
        tuples.push(layer);
    }
    Ok(Dataset { seed, n, tuples })
}

/// The density ratio of a policy against a data distribution, when it exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum DensityRatio {
    /// Ratio table, with the zero-over-zero convention: pairs carrying no
    /// occupancy and no data mass get ratio 0 (they never enter any
    /// expectation under either distribution).
    Exists { table: TableStack },
    /// The policy visits a pair the data never covers; no reweighting of the
    /// data can reproduce the policy's occupancy. The witness locates one
    /// such pair.
    Undefined { h: usize, state: usize, action: usize },
}

/// Computes `d^pi / d^data` per timestep, or reports the stack undefined when
/// the policy occupies a pair with zero data mass.
pub fn density_ratio(
    mdp: &LayeredMdp,
    policy: &Policy,
    data_dist: &DataDistribution,
) -> Result<DensityRatio, DataError> {
    let occ = occupancy(mdp, policy)?;
    let mut table = TableStack::zeros(mdp, TableRole::Weight);
    for (h, x, a, d_pi) in occ.iter_entries() {
        let d_data = data_dist.get(h, x, a);
        if d_data > 0.0 {
            table.set(h, x, a, d_pi / d_data);
        } else if d_pi > 0.0 {
            return Ok(DensityRatio::Undefined { h, state: x, action: a });
        }
        // both zero: leave the ratio at 0
    }
    Ok(DensityRatio::Exists { table })
}

/// Worst-case coverage of `policy` by the data: the largest occupancy-to-data
/// ratio over all pairs, infinite when the ratio is undefined.
pub fn concentrability(
    mdp: &LayeredMdp,
    policy: &Policy,
    data_dist: &DataDistribution,
) -> Result<f64, DataError> {
    match density_ratio(mdp, policy, data_dist)? {
        DensityRatio::Exists { table } => Ok(table
            .iter_entries()
            .map(|(_, _, _, v)| v)
            .fold(0.0, f64::max)),
        DensityRatio::Undefined { .. } => Ok(f64::INFINITY),
    }
}

/// The boundedness constant of a weight class: the largest absolute entry
/// over all members, timesteps, and pairs. This is the `C` that enters every
/// sample-size formula.
pub fn class_bound_c(weights: &WeightClass) -> f64 {
    weights
        .members()
        .iter()
        .map(TableStack::max_abs)
        .fold(0.0, f64::max)
}
