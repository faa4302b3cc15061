//! Exhaustive enumeration of small MDPs and value iteration over them.

use std::collections::{HashMap, VecDeque};

use super::{Policy, Reward, RlError};
use crate::kernel::FeatureVector;
use crate::mdp::{Action, Environment, StateKey};

/// Every state reachable from the start distribution, with its transitions.
#[derive(Debug, Clone)]
pub struct FiniteModel<S> {
    pub states: Vec<S>,
    pub keys: Vec<StateKey>,
    pub features: Vec<FeatureVector>,
    /// `None` for terminal states.
    pub next: Vec<Option<[usize; 9]>>,
    pub starts: Vec<usize>,
}

impl<S> FiniteModel<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.next.iter().flatten().count() * Action::ALL.len()
    }
}

/// Breadth-first enumeration from all start states. Fails once more than
/// `budget` distinct states are discovered.
pub fn enumerate<E: Environment>(env: &E, budget: usize) -> Result<FiniteModel<E::State>, RlError> {
    let mut index: HashMap<StateKey, usize> = HashMap::new();
    let mut model = FiniteModel {
        states: Vec::new(),
        keys: Vec::new(),
        features: Vec::new(),
        next: Vec::new(),
        starts: Vec::new(),
    };
    let mut queue = VecDeque::new();
    let mut intern = |s: E::State, model: &mut FiniteModel<E::State>, queue: &mut VecDeque<usize>| {
        let key = env.state_key(&s);
        if let Some(&i) = index.get(&key) {
            return Ok(i);
        }
        if model.states.len() >= budget {
            return Err(RlError::Capacity { budget });
        }
        let i = model.states.len();
        index.insert(key, i);
        model.keys.push(key);
        model.features.push(env.features(&s));
        model.states.push(s);
        model.next.push(None);
        queue.push_back(i);
        Ok(i)
    };
    for k in 0..env.start_count() {
        let i = intern(env.start_state(k), &mut model, &mut queue)?;
        if !model.starts.contains(&i) {
            model.starts.push(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        if env.is_terminal(&model.states[i]) {
            continue;
        }
        let mut next = [0usize; 9];
        for a in Action::ALL {
            let s = env.step(&model.states[i], a)?;
            next[a.index()] = intern(s, &mut model, &mut queue)?;
        }
        model.next[i] = Some(next);
    }
    Ok(model)
}

/// Bellman backups `V(s) = r(s) + γ max_a V(s')` (terminal: `V = r`)
/// until the max-norm change drops below `tolerance`. Returns the values
/// and the greedy state-table policy.
pub fn value_iteration<S>(
    model: &FiniteModel<S>,
    reward: &dyn Reward,
    discount: f64,
    tolerance: f64,
) -> Result<(Vec<f64>, Policy), RlError> {
    if !(0.0..1.0).contains(&discount) {
        return Err(RlError::Argument(format!("discount {discount} outside [0, 1)")));
    }
    let r: Vec<f64> = model.features.iter().map(|f| reward.reward(f)).collect();
    let mut v = r.clone();
    // Gauss-Seidel sweeps in reverse discovery order; finite-horizon models
    // settle in a couple of sweeps.
    loop {
        let mut delta: f64 = 0.0;
        for i in (0..model.len()).rev() {
            let new = match &model.next[i] {
                None => r[i],
                Some(next) => r[i] + discount * next.iter().map(|&j| v[j]).fold(f64::NEG_INFINITY, f64::max),
            };
            delta = delta.max((new - v[i]).abs());
            v[i] = new;
        }
        if delta < tolerance {
            break;
        }
    }
    let mut actions = HashMap::with_capacity(model.len());
    for (i, next) in model.next.iter().enumerate() {
        let a = match next {
            None => Action::Stay,
            Some(next) => super::policy::argmax(|a| v[next[a.index()]]),
        };
        actions.insert(model.keys[i], a);
    }
    Ok((
        v,
        Policy::StateTable {
            actions,
            fallback: Action::Stay,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{grid_replay_mdp, TwoStateChain};
    use crate::mdp::Motion;

    #[test]
    fn chain_fixed_point() {
        let chain = TwoStateChain;
        let model = enumerate(&chain, 10).unwrap();
        assert_eq!(model.len(), 2);
        let (v, _) = value_iteration(&model, &TwoStateChain::reward, 0.9, 1e-12).unwrap();
        assert!((v[1] - 10.0).abs() < 1e-9);
        assert!((v[0] - 9.0).abs() < 1e-9);
    }

    #[test]
    fn zero_discount_values_equal_rewards() {
        let chain = TwoStateChain;
        let model = enumerate(&chain, 10).unwrap();
        let (v, _) = value_iteration(&model, &TwoStateChain::reward, 0.0, 1e-12).unwrap();
        assert_eq!(v, vec![0.0, 1.0]);
        let (v, _) = value_iteration(&model, &|_: &FeatureVector| 0.0, 0.9, 1e-12).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn grid_replay_is_enumerable_but_isotropic_blows_the_budget() {
        let grid = grid_replay_mdp();
        let model = enumerate(&grid, 10_000).unwrap();
        assert!(model.len() <= 25 * grid.tick_count());
        let iso = grid.clone().with_motion(Motion::Isotropic);
        assert!(matches!(enumerate(&iso, 2_000), Err(RlError::Capacity { budget: 2_000 })));
    }
}
