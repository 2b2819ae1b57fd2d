//! File schemas and (de)serialization.
//!
//! Everything is JSON. The MDP schema is name-keyed and nested by timestep:
//!
//! ```json
//! {
//!   "horizon": 2,
//!   "layers": [["s0"], ["s1a", "s1b"], ["end"]],
//!   "actions": {"0": {"s0": ["left", "right"]}, "1": {"s1a": ["go"], "s1b": ["go"]}},
//!   "transitions": {"0": {"s0": {"left": {"s1a": 1.0}, "right": {"s1b": 1.0}}}, ...},
//!   "rewards": {"0": {"s0": {"left": 0.0, "right": 0.5}}, ...},
//!   "initial_state": "s0"
//! }
//! ```
//!
//! Transition rows may omit zero-probability targets; doubles round-trip
//! losslessly. Table stacks, classes, datasets (row and columnar variants),
//! and whole instance bundles follow the same conventions. Loading a bundle
//! re-verifies its annotations against the oracles.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::bench::{AdversarialTies, Annotations, BenchError, NamedInstance};
use crate::data::{DataDistribution, DataError, Dataset, Transition};
use crate::mdp::{LayeredMdp, MdpError, ValidationReport, Violation, DEFAULT_TIE_TOLERANCE};
use crate::spaces::{ClassError, FunctionClass, WeightClass};
use crate::table::{TableRole, TableStack};

/// Serde adapter for reals that may be infinite (plain JSON numbers cannot
/// express them): finite values stay numbers, non-finite become strings.
pub mod ext_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a real: '{other}'"))),
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("file fails validation:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

type PerTimestep<T> = BTreeMap<String, BTreeMap<String, T>>;

/// On-disk MDP schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpFile {
    pub horizon: usize,
    pub layers: Vec<Vec<String>>,
    pub actions: PerTimestep<Vec<String>>,
    pub transitions: PerTimestep<BTreeMap<String, BTreeMap<String, f64>>>,
    pub rewards: PerTimestep<BTreeMap<String, f64>>,
    pub initial_state: String,
}

impl MdpFile {
    pub fn from_mdp(mdp: &LayeredMdp) -> Self {
        let mut actions = BTreeMap::new();
        let mut transitions = BTreeMap::new();
        let mut rewards = BTreeMap::new();
        for h in 0..mdp.horizon() {
            let mut a_layer = BTreeMap::new();
            let mut t_layer = BTreeMap::new();
            let mut r_layer = BTreeMap::new();
            for x in 0..mdp.num_states(h) {
                let state = mdp.state_name(h, x).to_string();
                let names: Vec<String> =
                    (0..mdp.num_actions(h, x)).map(|a| mdp.action_name(h, x, a).to_string()).collect();
                let mut t_state = BTreeMap::new();
                let mut r_state = BTreeMap::new();
                for (a, name) in names.iter().enumerate() {
                    let mut row = BTreeMap::new();
                    for (xn, &p) in mdp.transition(h, x, a).iter().enumerate() {
                        if p != 0.0 {
                            row.insert(mdp.state_name(h + 1, xn).to_string(), p);
                        }
                    }
                    t_state.insert(name.clone(), row);
                    r_state.insert(name.clone(), mdp.reward(h, x, a));
                }
                a_layer.insert(state.clone(), names);
                t_layer.insert(state.clone(), t_state);
                r_layer.insert(state, r_state);
            }
            actions.insert(h.to_string(), a_layer);
            transitions.insert(h.to_string(), t_layer);
            rewards.insert(h.to_string(), r_layer);
        }
        Self {
            horizon: mdp.horizon(),
            layers: mdp.layers().to_vec(),
            actions,
            transitions,
            rewards,
            initial_state: mdp.state_name(0, mdp.initial_state()).to_string(),
        }
    }

    /// Schema-level validation: reports dangling transition targets plus the
    /// numeric invariants, without requiring the file to be convertible.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for h in 0..self.horizon {
            let Some(layer_states) = self.layers.get(h) else { continue };
            let next: Vec<&String> =
                self.layers.get(h + 1).map(|l| l.iter().collect()).unwrap_or_default();
            let key = h.to_string();
            for state in layer_states {
                let acts = self
                    .actions
                    .get(&key)
                    .and_then(|m| m.get(state))
                    .cloned()
                    .unwrap_or_default();
                for action in &acts {
                    if let Some(row) = self
                        .transitions
                        .get(&key)
                        .and_then(|m| m.get(state))
                        .and_then(|m| m.get(action))
                    {
                        let mut sum = 0.0;
                        for (target, &p) in row {
                            sum += p;
                            if p < 0.0 {
                                violations.push(Violation::NegativeProbability {
                                    h,
                                    state: state.clone(),
                                    action: action.clone(),
                                    value: p,
                                });
                            }
                            if !next.contains(&target) {
                                violations.push(Violation::DanglingTarget {
                                    h,
                                    state: state.clone(),
                                    action: action.clone(),
                                    target: target.clone(),
                                });
                            }
                        }
                        if (sum - 1.0).abs() > crate::mdp::ROW_SUM_TOL {
                            violations.push(Violation::RowSum {
                                h,
                                state: state.clone(),
                                action: action.clone(),
                                sum,
                            });
                        }
                    }
                    if let Some(&r) = self
                        .rewards
                        .get(&key)
                        .and_then(|m| m.get(state))
                        .and_then(|m| m.get(action))
                    {
                        if !(0.0..=1.0).contains(&r) {
                            violations.push(Violation::RewardRange {
                                h,
                                state: state.clone(),
                                action: action.clone(),
                                value: r,
                            });
                        }
                    }
                }
            }
        }
        ValidationReport { violations }
    }

    /// Converts to the indexed representation. Structural problems (missing
    /// entries, dangling targets) are errors; numeric invariants are left to
    /// [`LayeredMdp::validate`].
    pub fn to_mdp(&self) -> Result<LayeredMdp, IoError> {
        if self.layers.len() != self.horizon + 1 {
            return Err(IoError::Schema(format!(
                "expected {} layers for horizon {}, found {}",
                self.horizon + 1,
                self.horizon,
                self.layers.len()
            )));
        }
        let dangling: Vec<Violation> = self
            .validate()
            .violations
            .into_iter()
            .filter(|v| matches!(v, Violation::DanglingTarget { .. }))
            .collect();
        if !dangling.is_empty() {
            return Err(IoError::Invalid(ValidationReport { violations: dangling }));
        }
        let mut actions = Vec::with_capacity(self.horizon);
        let mut transitions = Vec::with_capacity(self.horizon);
        let mut rewards = Vec::with_capacity(self.horizon);
        for h in 0..self.horizon {
            let key = h.to_string();
            let next_index: BTreeMap<&str, usize> = self.layers[h + 1]
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            let mut a_layer = Vec::new();
            let mut t_layer = Vec::new();
            let mut r_layer = Vec::new();
            for state in &self.layers[h] {
                let acts = self
                    .actions
                    .get(&key)
                    .and_then(|m| m.get(state))
                    .ok_or_else(|| IoError::Schema(format!("missing actions for '{state}' at timestep {h}")))?
                    .clone();
                if acts.is_empty() {
                    return Err(IoError::Schema(format!("state '{state}' at timestep {h} has no actions")));
                }
                let mut t_state = Vec::new();
                let mut r_state = Vec::new();
                for action in &acts {
                    let row_map = self
                        .transitions
                        .get(&key)
                        .and_then(|m| m.get(state))
                        .and_then(|m| m.get(action))
                        .ok_or_else(|| {
                            IoError::Schema(format!(
                                "missing transitions for ('{state}', '{action}') at timestep {h}"
                            ))
                        })?;
                    let mut row = vec![0.0; self.layers[h + 1].len()];
                    for (target, &p) in row_map {
                        let idx = next_index[target.as_str()];
                        row[idx] = p;
                    }
                    t_state.push(row);
                    let r = self
                        .rewards
                        .get(&key)
                        .and_then(|m| m.get(state))
                        .and_then(|m| m.get(action))
                        .copied()
                        .ok_or_else(|| {
                            IoError::Schema(format!(
                                "missing reward for ('{state}', '{action}') at timestep {h}"
                            ))
                        })?;
                    r_state.push(r);
                }
                a_layer.push(acts);
                t_layer.push(t_state);
                r_layer.push(r_state);
            }
            actions.push(a_layer);
            transitions.push(t_layer);
            rewards.push(r_layer);
        }
        let initial = self.layers[0]
            .iter()
            .position(|s| *s == self.initial_state)
            .ok_or_else(|| {
                IoError::Schema(format!("initial state '{}' is not in layer 0", self.initial_state))
            })?;
        Ok(LayeredMdp::new(self.horizon, self.layers.clone(), actions, transitions, rewards, initial)?)
    }
}

/// On-disk table stack: per timestep, `state -> action -> value`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableFile {
    pub role: TableRole,
    pub tables: Vec<PerTimestep<f64>>,
}

impl TableFile {
    pub fn from_stack(stack: &TableStack, mdp: &LayeredMdp) -> Self {
        let tables = (0..stack.horizon())
            .map(|h| {
                let mut by_state: PerTimestep<f64> = BTreeMap::new();
                for x in 0..mdp.num_states(h) {
                    let mut row = BTreeMap::new();
                    for a in 0..mdp.num_actions(h, x) {
                        row.insert(mdp.action_name(h, x, a).to_string(), stack.get(h, x, a));
                    }
                    by_state.insert(mdp.state_name(h, x).to_string(), row);
                }
                by_state
            })
            .collect();
        Self { role: stack.role(), tables }
    }

    /// Rebuilds the indexed stack; missing entries default to zero, unknown
    /// state or action names are schema errors.
    pub fn to_stack(&self, mdp: &LayeredMdp) -> Result<TableStack, IoError> {
        if self.tables.len() != mdp.horizon() {
            return Err(IoError::Schema(format!(
                "table has {} timesteps, MDP horizon is {}",
                self.tables.len(),
                mdp.horizon()
            )));
        }
        let mut stack = TableStack::zeros(mdp, self.role);
        for (h, by_state) in self.tables.iter().enumerate() {
            for (state, row) in by_state {
                let x = mdp
                    .state_index(h, state)
                    .ok_or_else(|| IoError::Schema(format!("unknown state '{state}' at timestep {h}")))?;
                for (action, &v) in row {
                    let a = mdp.action_index(h, x, action).ok_or_else(|| {
                        IoError::Schema(format!("unknown action '{action}' for '{state}' at timestep {h}"))
                    })?;
                    stack.set(h, x, a, v);
                }
            }
        }
        Ok(stack)
    }
}

/// On-disk function or weight class: an ordered list of named stacks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassFile {
    pub members: Vec<ClassMemberFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassMemberFile {
    pub name: String,
    pub table: TableFile,
}

impl ClassFile {
    pub fn from_function_class(class: &FunctionClass, mdp: &LayeredMdp) -> Self {
        Self {
            members: (0..class.len())
                .map(|i| ClassMemberFile {
                    name: class.name(i).to_string(),
                    table: TableFile::from_stack(class.member(i), mdp),
                })
                .collect(),
        }
    }

    pub fn from_weight_class(class: &WeightClass, mdp: &LayeredMdp) -> Self {
        Self {
            members: (0..class.len())
                .map(|i| ClassMemberFile {
                    name: class.name(i).to_string(),
                    table: TableFile::from_stack(class.member(i), mdp),
                })
                .collect(),
        }
    }

    pub fn to_function_class(&self, mdp: &LayeredMdp) -> Result<FunctionClass, IoError> {
        let named = self
            .members
            .iter()
            .map(|m| Ok((m.name.clone(), m.table.to_stack(mdp)?)))
            .collect::<Result<Vec<_>, IoError>>()?;
        Ok(FunctionClass::new(named, mdp, DEFAULT_TIE_TOLERANCE)?)
    }

    pub fn to_weight_class(&self, mdp: &LayeredMdp) -> Result<WeightClass, IoError> {
        let named = self
            .members
            .iter()
            .map(|m| Ok((m.name.clone(), m.table.to_stack(mdp)?)))
            .collect::<Result<Vec<_>, IoError>>()?;
        Ok(WeightClass::new(named, mdp)?)
    }
}

/// On-disk dataset. The row form is name-based and self-describing; the
/// columnar form stores index arrays against the MDP's canonical ordering
/// and stays compact for large sizes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum DatasetFile {
    Rows { seed: u64, n: usize, tuples: Vec<Vec<TupleRow>> },
    Columnar { seed: u64, n: usize, timesteps: Vec<ColumnarTimestep> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TupleRow {
    pub state: String,
    pub action: String,
    pub reward: f64,
    pub next_state: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnarTimestep {
    pub states: Vec<u32>,
    pub actions: Vec<u32>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<u32>,
}

impl DatasetFile {
    pub fn rows(data: &Dataset, mdp: &LayeredMdp) -> Self {
        let tuples = data
            .tuples
            .iter()
            .enumerate()
            .map(|(h, layer)| {
                layer
                    .iter()
                    .map(|t| TupleRow {
                        state: mdp.state_name(h, t.state).to_string(),
                        action: mdp.action_name(h, t.state, t.action).to_string(),
                        reward: t.reward,
                        next_state: mdp.state_name(h + 1, t.next_state).to_string(),
                    })
                    .collect()
            })
            .collect();
        DatasetFile::Rows { seed: data.seed, n: data.n, tuples }
    }

    pub fn columnar(data: &Dataset) -> Self {
        let timesteps = data
            .tuples
            .iter()
            .map(|layer| ColumnarTimestep {
                states: layer.iter().map(|t| t.state as u32).collect(),
                actions: layer.iter().map(|t| t.action as u32).collect(),
                rewards: layer.iter().map(|t| t.reward).collect(),
                next_states: layer.iter().map(|t| t.next_state as u32).collect(),
            })
            .collect();
        DatasetFile::Columnar { seed: data.seed, n: data.n, timesteps }
    }

    pub fn to_dataset(&self, mdp: &LayeredMdp) -> Result<Dataset, IoError> {
        match self {
            DatasetFile::Rows { seed, n, tuples } => {
                let converted = tuples
                    .iter()
                    .enumerate()
                    .map(|(h, layer)| {
                        layer
                            .iter()
                            .map(|row| {
                                let state = mdp.state_index(h, &row.state).ok_or_else(|| {
                                    IoError::Schema(format!("unknown state '{}' at timestep {h}", row.state))
                                })?;
                                let action =
                                    mdp.action_index(h, state, &row.action).ok_or_else(|| {
                                        IoError::Schema(format!(
                                            "unknown action '{}' at timestep {h}",
                                            row.action
                                        ))
                                    })?;
                                let next_state =
                                    mdp.state_index(h + 1, &row.next_state).ok_or_else(|| {
                                        IoError::Schema(format!(
                                            "unknown next state '{}' at timestep {h}",
                                            row.next_state
                                        ))
                                    })?;
                                Ok(Transition { state, action, reward: row.reward, next_state })
                            })
                            .collect::<Result<Vec<_>, IoError>>()
                    })
                    .collect::<Result<Vec<_>, IoError>>()?;
                Ok(Dataset { seed: *seed, n: *n, tuples: converted })
            }
            DatasetFile::Columnar { seed, n, timesteps } => {
                let converted = timesteps
                    .iter()
                    .map(|ts| {
                        (0..ts.states.len())
                            .map(|i| Transition {
                                state: ts.states[i] as usize,
                                action: ts.actions[i] as usize,
                                reward: ts.rewards[i],
                                next_state: ts.next_states[i] as usize,
                            })
                            .collect()
                    })
                    .collect();
                Ok(Dataset { seed: *seed, n: *n, tuples: converted })
            }
        }
    }
}

/// A whole instance (environment, data distribution, classes, annotations)
/// in one file, as written by `export-instance`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceBundle {
    pub name: String,
    pub mdp: MdpFile,
    pub data_distribution: TableFile,
    pub function_class: ClassFile,
    pub weight_class: ClassFile,
    pub annotations: Annotations,
    pub adversarial: Option<AdversarialTies>,
}

impl InstanceBundle {
    pub fn from_instance(instance: &NamedInstance) -> Self {
        Self {
            name: instance.name.clone(),
            mdp: MdpFile::from_mdp(&instance.mdp),
            data_distribution: TableFile::from_stack(instance.data.table(), &instance.mdp),
            function_class: ClassFile::from_function_class(&instance.functions, &instance.mdp),
            weight_class: ClassFile::from_weight_class(&instance.weights, &instance.mdp),
            annotations: instance.annotations.clone(),
            adversarial: instance.adversarial.clone(),
        }
    }

    /// Rebuilds the instance and re-verifies the stored annotations against
    /// the oracles.
    pub fn to_instance(&self) -> Result<NamedInstance, IoError> {
        let mdp = self.mdp.to_mdp()?;
        let report = mdp.validate();
        if !report.is_valid() {
            return Err(IoError::Invalid(report));
        }
        let data = DataDistribution::new(self.data_distribution.to_stack(&mdp)?, &mdp)?;
        let functions = self.function_class.to_function_class(&mdp)?;
        let weights = self.weight_class.to_weight_class(&mdp)?;
        let instance = NamedInstance {
            name: self.name.clone(),
            mdp,
            data,
            functions,
            weights,
            annotations: self.annotations.clone(),
            adversarial: self.adversarial.clone(),
        };
        instance.verify_annotations()?;
        Ok(instance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{build_counterexample, build_table1_example};
    use crate::data::sample_dataset;

    #[test]
    fn mdp_round_trip_is_lossless() {
        let inst = build_counterexample();
        let file = MdpFile::from_mdp(&inst.mdp);
        let json = serde_json::to_string(&file).unwrap();
        let back: MdpFile = serde_json::from_str(&json).unwrap();
        let rebuilt = back.to_mdp().unwrap();
        assert_eq!(rebuilt, inst.mdp);
    }

    #[test]
    fn dangling_target_detected() {
        let inst = build_counterexample();
        let mut file = MdpFile::from_mdp(&inst.mdp);
        file.transitions
            .get_mut("0")
            .unwrap()
            .get_mut("x0")
            .unwrap()
            .get_mut("L1")
            .unwrap()
            .insert("nowhere".into(), 0.5);
        let report = file.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DanglingTarget { .. })));
        assert!(matches!(file.to_mdp(), Err(IoError::Invalid(_))));
    }

    #[test]
    fn bundle_round_trip_reverifies() {
        let inst = build_table1_example();
        let bundle = InstanceBundle::from_instance(&inst);
        let json = serde_json::to_string_pretty(&bundle).unwrap();
        let back: InstanceBundle = serde_json::from_str(&json).unwrap();
        let rebuilt = back.to_instance().unwrap();
        assert_eq!(rebuilt.mdp, inst.mdp);
        assert!(rebuilt.annotations.optimal_concentrability.is_infinite());
        assert_eq!(rebuilt.annotations.eps_w_oracle, inst.annotations.eps_w_oracle);
    }

    #[test]
    fn dataset_forms_round_trip() {
        let inst = build_counterexample();
        let data = sample_dataset(&inst.mdp, &inst.data, 20, 5).unwrap();
        let rows = DatasetFile::rows(&data, &inst.mdp);
        assert_eq!(rows.to_dataset(&inst.mdp).unwrap(), data);
        let cols = DatasetFile::columnar(&data);
        assert_eq!(cols.to_dataset(&inst.mdp).unwrap(), data);
    }
}
