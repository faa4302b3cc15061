use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::tree::{RegressionTree, TreeParams};
use crate::kernel::FEATURE_COUNT;
use crate::mdp::{Action, Environment, StateKey};

/// Q inputs: the current state's features followed by the look-ahead
/// features of the action.
pub const Q_INPUT_WIDTH: usize = 2 * FEATURE_COUNT;

const KEY_SCALE: f64 = 1e3;

pub fn q_input<E: Environment>(env: &E, s: &E::State, a: Action) -> [f64; Q_INPUT_WIDTH] {
    let here = env.features(s);
    let there = env.lookahead(s, a);
    let mut out = [0.0; Q_INPUT_WIDTH];
    out[..FEATURE_COUNT].copy_from_slice(&here.0);
    out[FEATURE_COUNT..].copy_from_slice(&there.0);
    out
}

/// Observation-store identity of a (state, action) pair: the Q inputs
/// rounded to 1e-3, plus the action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QKey {
    pub input: [i64; Q_INPUT_WIDTH],
    pub action: u8,
}

impl QKey {
    pub fn new(input: &[f64; Q_INPUT_WIDTH], action: Action) -> Self {
        Self {
            input: input.map(|v| (v * KEY_SCALE).round() as i64),
            action: action.index() as u8,
        }
    }
}

/// Regression tree over `(features, look-ahead features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QRegressor {
    tree: RegressionTree,
}

impl QRegressor {
    pub fn fit(inputs: &[[f64; Q_INPUT_WIDTH]], targets: &[f64], params: TreeParams) -> Self {
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        Self {
            tree: RegressionTree::fit(&flat, Q_INPUT_WIDTH, targets, params),
        }
    }

    pub fn predict(&self, input: &[f64; Q_INPUT_WIDTH]) -> f64 {
        self.tree.predict(input)
    }

    pub fn q<E: Environment>(&self, env: &E, s: &E::State, a: Action) -> f64 {
        self.predict(&q_input(env, s, a))
    }

    pub fn tree(&self) -> &RegressionTree {
        &self.tree
    }
}

/// Tabular Q values; entries never written read as a small deterministic
/// pseudo-random initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: BTreeMap<QKey, f64>,
    seed: u64,
}

impl QTable {
    pub fn new(seed: u64) -> Self {
        Self {
            values: BTreeMap::new(),
            seed,
        }
    }

    pub fn get(&self, key: &QKey) -> f64 {
        self.values
            .get(key)
            .copied()
            .unwrap_or_else(|| self.initial(key))
    }

    pub fn set(&mut self, key: QKey, value: f64) {
        self.values.insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn initial(&self, key: &QKey) -> f64 {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for v in key.input.iter().chain(std::iter::once(&(key.action as i64))) {
            h = splitmix(h ^ (*v as u64));
        }
        ((h >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e-6
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Uniformly random action; the only stochastic variant.
    Uniform,
    Constant(Action),
    /// `argmax_a Q(s, a)` over a fitted regressor.
    Greedy(QRegressor),
    QTable(QTable),
    /// Exact per-state table (value iteration); unknown states take `fallback`.
    StateTable {
        actions: HashMap<StateKey, Action>,
        fallback: Action,
    },
}

impl Policy {
    pub fn constant(a: Action) -> Self {
        Policy::Constant(a)
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Policy::Uniform)
    }

    pub fn act<E: Environment, R: Rng + ?Sized>(&self, env: &E, s: &E::State, rng: &mut R) -> Action {
        match self {
            Policy::Uniform => Action::from_index(rng.random_range(0..Action::ALL.len())),
            Policy::Constant(a) => *a,
            Policy::Greedy(q) => argmax(|a| q.q(env, s, a)),
            Policy::QTable(t) => argmax(|a| t.get(&QKey::new(&q_input(env, s, a), a))),
            Policy::StateTable { actions, fallback } => {
                actions.get(&env.state_key(s)).copied().unwrap_or(*fallback)
            }
        }
    }
}

/// First action (in `Action::ALL` order) attaining the maximum.
pub(crate) fn argmax(mut value: impl FnMut(Action) -> f64) -> Action {
    let mut best = Action::Stay;
    let mut best_v = f64::NEG_INFINITY;
    for a in Action::ALL {
        let v = value(a);
        if v > best_v {
            best = a;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_by_action_order() {
        assert_eq!(argmax(|_| 1.0), Action::Stay);
        assert_eq!(argmax(|a| if a == Action::E || a == Action::W { 2.0 } else { 0.0 }), Action::E);
    }

    #[test]
    fn qtable_initial_values_are_tiny_and_seeded() {
        let t1 = QTable::new(1);
        let t2 = QTable::new(2);
        let k = QKey::new(&[0.5; Q_INPUT_WIDTH], Action::N);
        assert!(t1.get(&k).abs() < 1e-6);
        assert_eq!(t1.get(&k), QTable::new(1).get(&k));
        assert_ne!(t1.get(&k), t2.get(&k));
    }
}
