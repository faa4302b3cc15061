//! Tiny hand-checkable environments for tests, examples and the benchmark.

use crate::kernel::FeatureVector;
use crate::mdp::{Action, Environment, MdpError, Motion, ReplayMdp, StateKey};
use crate::trajectory::{AgentRecord, Match, MatchMeta, Side, Tick};

/// Two states. `GO` moves state 0 to state 1; every other move stays put.
/// State 1 is absorbing and worth reward 1, so with γ = 0.9 the optimal
/// values are `V(1) = 10` and `V(0) = 9`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoStateChain;

impl TwoStateChain {
    pub const GO: Action = Action::E;

    pub fn reward(phi: &FeatureVector) -> f64 {
        phi.0[0]
    }

    fn phi(s: usize) -> FeatureVector {
        FeatureVector([s as f64; 6])
    }

    fn next(s: usize, a: Action) -> usize {
        if s == 1 || a == Self::GO {
            1
        } else {
            0
        }
    }
}

impl Environment for TwoStateChain {
    type State = usize;

    fn step(&self, s: &usize, a: Action) -> Result<usize, MdpError> {
        Ok(Self::next(*s, a))
    }

    fn is_terminal(&self, _: &usize) -> bool {
        false
    }

    fn features(&self, s: &usize) -> FeatureVector {
        Self::phi(*s)
    }

    fn lookahead(&self, s: &usize, a: Action) -> FeatureVector {
        Self::phi(Self::next(*s, a))
    }

    fn state_key(&self, s: &usize) -> StateKey {
        [*s as u64, 0, 0]
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn start_count(&self) -> usize {
        1
    }

    fn start_state(&self, _: usize) -> usize {
        0
    }
}

/// 40 m × 40 m match, 12 ticks. Blue `b0` walks the lattice of spacing
/// 10 m; one red agent sweeps along the north wall and a blue teammate
/// holds the south-west corner.
pub fn grid_match() -> Match {
    let mut meta = MatchMeta::new("grid");
    meta.arena_width = 40.0;
    meta.arena_height = 40.0;
    meta.controlled_agent_id = Some("b0".into());
    let rec = |id: &str, side, x, y| AgentRecord {
        agent_id: id.into(),
        side,
        x,
        y,
        health: 1.0,
    };
    let ticks = (0..12)
        .map(|i| {
            let t = i as f64;
            Tick {
                time: 3.0 * t,
                agents: vec![
                    rec("r0", Side::Red, (40.0 - 3.0 * t).max(0.0), 40.0),
                    rec("b0", Side::Blue, 20.0, (10.0 + 10.0 * (i / 4) as f64).min(40.0)),
                    rec("b1", Side::Blue, 0.0, 0.0),
                ],
            }
        })
        .collect();
    Match { meta, ticks }
}

/// Replay MDP over [`grid_match`] with lattice motion, small enough for
/// value iteration (at most 25 positions per tick).
pub fn grid_replay_mdp() -> ReplayMdp {
    ReplayMdp::new(grid_match(), "b0")
        .expect("fixture is valid")
        .with_step_length(10.0)
        .expect("positive step")
        .with_motion(Motion::Grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::validate_match;

    #[test]
    fn grid_match_is_valid() {
        assert!(validate_match(&grid_match()).is_empty());
    }

    #[test]
    fn chain_transitions() {
        let c = TwoStateChain;
        assert_eq!(c.step(&0, TwoStateChain::GO).unwrap(), 1);
        assert_eq!(c.step(&0, Action::W).unwrap(), 0);
        assert_eq!(c.step(&1, Action::W).unwrap(), 1);
    }
}
