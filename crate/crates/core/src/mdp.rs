//! Deterministic replay MDP: one blue agent of a recorded match becomes
//! controllable, everybody else follows the recording.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::kernel::{featurize_position, FeatureVector, KernelSpec};
use crate::rl::Policy;
use crate::trajectory::{AgentRecord, Match, Side};

pub const DEFAULT_DISCOUNT: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("agent `{0}` is not in the match")]
    UnknownAgent(String),
    #[error("agent `{0}` is not blue")]
    NotBlue(String),
    #[error("discount must lie in [0, 1), got {0}")]
    Discount(f64),
    #[error("step length must be positive, got {0}")]
    StepLength(f64),
    #[error("state at tick {0} is terminal")]
    Terminal(usize),
    #[error("match has no ticks")]
    EmptyMatch,
}

/// Stay in place or move one step along one of the eight compass
/// directions. `N` is +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Stay,
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Action {
    /// Fixed order; greedy tie-breaking picks the earliest.
    pub const ALL: [Action; 9] = [
        Action::Stay,
        Action::N,
        Action::NE,
        Action::E,
        Action::SE,
        Action::S,
        Action::SW,
        Action::W,
        Action::NW,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    /// Unit grid offset, e.g. `NE = (1, 1)`.
    pub fn offset(self) -> (f64, f64) {
        match self {
            Action::Stay => (0.0, 0.0),
            Action::N => (0.0, 1.0),
            Action::NE => (1.0, 1.0),
            Action::E => (1.0, 0.0),
            Action::SE => (1.0, -1.0),
            Action::S => (0.0, -1.0),
            Action::SW => (-1.0, -1.0),
            Action::W => (-1.0, 0.0),
            Action::NW => (-1.0, 1.0),
        }
    }

    /// Nearest of the eight directions to `(dx, dy)`, or `Stay` when the
    /// displacement is shorter than `stay_below`.
    pub fn nearest(dx: f64, dy: f64, stay_below: f64) -> Action {
        if dx.hypot(dy) < stay_below || (dx == 0.0 && dy == 0.0) {
            return Action::Stay;
        }
        let octant = (dy.atan2(dx) / std::f64::consts::FRAC_PI_4).round() as i64;
        match octant.rem_euclid(8) {
            0 => Action::E,
            1 => Action::NE,
            2 => Action::N,
            3 => Action::NW,
            4 => Action::W,
            5 => Action::SW,
            6 => Action::S,
            _ => Action::SE,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// How one step displaces the controlled agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Motion {
    /// Every move covers `step_length`; diagonals are scaled by `1/√2`.
    #[default]
    Isotropic,
    /// King moves on a lattice of spacing `step_length`; diagonals cover
    /// `√2·step_length`. Keeps the reachable set finite for exact solvers.
    Grid,
}

/// Exact identity of a state for tabular structures.
pub type StateKey = [u64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    pub tick_index: usize,
    pub controlled_x: f64,
    pub controlled_y: f64,
    pub controlled_health: f64,
    /// The recording at `tick_index` without the replaced agent.
    pub others: Arc<[AgentRecord]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<S> {
    pub states: Vec<S>,
    pub actions: Vec<Action>,
}

/// Anything the RL solvers can interact with.
pub trait Environment {
    type State: Clone;

    fn step(&self, s: &Self::State, a: Action) -> Result<Self::State, MdpError>;

    fn is_terminal(&self, s: &Self::State) -> bool;

    fn features(&self, s: &Self::State) -> FeatureVector;

    /// Features the agent would observe after its own move `a`, judged
    /// against the current scene. Never advances the environment.
    fn lookahead(&self, s: &Self::State, a: Action) -> FeatureVector;

    fn state_key(&self, s: &Self::State) -> StateKey;

    fn initial_state(&self) -> Self::State;

    /// Number of states in the exploring-start distribution.
    fn start_count(&self) -> usize;

    fn start_state(&self, index: usize) -> Self::State;

    fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State
    where
        Self: Sized,
    {
        let n = self.start_count();
        self.start_state(rng.random_range(0..n))
    }
}

#[derive(Debug, Clone)]
pub struct ReplayMdp {
    recording: Arc<Match>,
    replaced_agent_id: String,
    step_length: f64,
    discount: f64,
    motion: Motion,
    spec: KernelSpec,
    others: Vec<Arc<[AgentRecord]>>,
    track: Vec<AgentRecord>,
}

impl ReplayMdp {
    /// Replaces `agent_id` (which must be blue) with a controllable agent.
    /// The step length defaults to the agent's median recorded per-tick
    /// displacement.
    pub fn new(recording: impl Into<Arc<Match>>, agent_id: &str) -> Result<Self, MdpError> {
        let recording: Arc<Match> = recording.into();
        let first = recording.ticks.first().ok_or(MdpError::EmptyMatch)?;
        let agent = first
            .agent(agent_id)
            .ok_or_else(|| MdpError::UnknownAgent(agent_id.to_string()))?;
        if agent.side != Side::Blue {
            return Err(MdpError::NotBlue(agent_id.to_string()));
        }
        let track: Vec<AgentRecord> = recording
            .track(agent_id)
            .ok_or_else(|| MdpError::UnknownAgent(agent_id.to_string()))?
            .into_iter()
            .cloned()
            .collect();
        let others = recording
            .ticks
            .iter()
            .map(|t| {
                t.agents
                    .iter()
                    .filter(|a| a.agent_id != agent_id)
                    .cloned()
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect();
        let spec = KernelSpec {
            arena_width: recording.meta.arena_width,
            arena_height: recording.meta.arena_height,
            ..KernelSpec::default()
        };
        let step_length = median_step(&track, recording.meta.arena_diagonal());
        Ok(Self {
            recording,
            replaced_agent_id: agent_id.to_string(),
            step_length,
            discount: DEFAULT_DISCOUNT,
            motion: Motion::default(),
            spec,
            others,
            track,
        })
    }

    pub fn with_step_length(mut self, step_length: f64) -> Result<Self, MdpError> {
        if !(step_length > 0.0 && step_length.is_finite()) {
            return Err(MdpError::StepLength(step_length));
        }
        self.step_length = step_length;
        Ok(self)
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self, MdpError> {
        if !(0.0..1.0).contains(&discount) {
            return Err(MdpError::Discount(discount));
        }
        self.discount = discount;
        Ok(self)
    }

    pub fn with_motion(mut self, motion: Motion) -> Self {
        self.motion = motion;
        self
    }

    /// Kernel bandwidth used by rewards on this MDP; arena scaling always
    /// comes from the recording.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.spec.sigma = sigma;
        self
    }

    pub fn recording(&self) -> &Match {
        &self.recording
    }

    pub fn replaced_agent_id(&self) -> &str {
        &self.replaced_agent_id
    }

    pub fn step_length(&self) -> f64 {
        self.step_length
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn motion(&self) -> Motion {
        self.motion
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn tick_count(&self) -> usize {
        self.others.len()
    }

    /// Recorded record of the replaced agent at each tick.
    pub fn expert_track(&self) -> &[AgentRecord] {
        &self.track
    }

    /// State with the controlled agent at its recorded position at `tick`.
    pub fn recorded_state(&self, tick: usize) -> MdpState {
        let r = &self.track[tick];
        MdpState {
            tick_index: tick,
            controlled_x: r.x,
            controlled_y: r.y,
            controlled_health: r.health,
            others: self.others[tick].clone(),
        }
    }

    fn displaced(&self, x: f64, y: f64, a: Action) -> (f64, f64) {
        let (ox, oy) = a.offset();
        let scale = match self.motion {
            Motion::Isotropic if ox != 0.0 && oy != 0.0 => self.step_length / 2f64.sqrt(),
            _ => self.step_length,
        };
        let meta = &self.recording.meta;
        (
            (x + ox * scale).clamp(0.0, meta.arena_width),
            (y + oy * scale).clamp(0.0, meta.arena_height),
        )
    }
}

/// Median displacement over the ticks in which the agent moved while alive,
/// falling back to 1% of the arena diagonal for agents that never move.
/// Displacements at or below this (m) count as standing still.
const MOVE_THRESHOLD: f64 = 1e-2;

fn median_step(track: &[AgentRecord], diagonal: f64) -> f64 {
    let living = track.iter().take_while(|a| a.is_alive()).count().max(1);
    let mut steps: Vec<f64> = track[..living.min(track.len())]
        .windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
        .filter(|d| *d > MOVE_THRESHOLD)
        .collect();
    steps.sort_by(f64::total_cmp);
    let median = match steps.len() {
        0 => 0.0,
        n if n % 2 == 1 => steps[n / 2],
        n => 0.5 * (steps[n / 2 - 1] + steps[n / 2]),
    };
    if median > 0.0 {
        median
    } else {
        diagonal / 100.0
    }
}

impl Environment for ReplayMdp {
    type State = MdpState;

    fn step(&self, s: &MdpState, a: Action) -> Result<MdpState, MdpError> {
        if self.is_terminal(s) {
            return Err(MdpError::Terminal(s.tick_index));
        }
        let (x, y) = self.displaced(s.controlled_x, s.controlled_y, a);
        let next = s.tick_index + 1;
        Ok(MdpState {
            tick_index: next,
            controlled_x: x,
            controlled_y: y,
            controlled_health: s.controlled_health,
            others: self.others[next].clone(),
        })
    }

    fn is_terminal(&self, s: &MdpState) -> bool {
        s.tick_index + 1 >= self.others.len()
    }

    fn features(&self, s: &MdpState) -> FeatureVector {
        featurize_position(s.controlled_x, s.controlled_y, &s.others, &self.spec)
    }

    fn lookahead(&self, s: &MdpState, a: Action) -> FeatureVector {
        let (x, y) = self.displaced(s.controlled_x, s.controlled_y, a);
        featurize_position(x, y, &s.others, &self.spec)
    }

    fn state_key(&self, s: &MdpState) -> StateKey {
        [
            s.tick_index as u64,
            s.controlled_x.to_bits(),
            s.controlled_y.to_bits(),
        ]
    }

    fn initial_state(&self) -> MdpState {
        let mut s = self.recorded_state(0);
        s.controlled_health = self.track[0].health;
        s
    }

    fn start_count(&self) -> usize {
        self.others.len().saturating_sub(1).max(1)
    }

    /// Recorded position at a non-terminal tick, with the tick-0 health.
    fn start_state(&self, index: usize) -> MdpState {
        let mut s = self.recorded_state(index);
        s.controlled_health = self.track[0].health;
        s
    }
}

/// Takes `a0` first, then follows `policy` for up to `horizon` steps in
/// total, stopping early at a terminal state.
pub fn rollout<E: Environment, R: Rng + ?Sized>(
    env: &E,
    policy: &Policy,
    s0: E::State,
    a0: Action,
    horizon: usize,
    rng: &mut R,
) -> Rollout<E::State> {
    let mut states = vec![s0];
    let mut actions = Vec::new();
    let mut action = a0;
    while actions.len() < horizon {
        let current = states.last().expect("rollout always holds a state");
        if env.is_terminal(current) {
            break;
        }
        let next = env
            .step(current, action)
            .expect("non-terminal states always step");
        actions.push(action);
        if actions.len() < horizon && !env.is_terminal(&next) {
            action = policy.act(env, &next, rng);
        }
        states.push(next);
    }
    Rollout { states, actions }
}

/// The recorded agent's own trajectory as a rollout of the replay MDP, up
/// to its last living tick. Actions are the nearest of the nine moves to
/// each recorded displacement, `Stay` below half a step.
pub fn expert_rollouts(recording: impl Into<Arc<Match>>, agent_id: &str) -> Result<Vec<Rollout<MdpState>>, MdpError> {
    let mdp = ReplayMdp::new(recording, agent_id)?;
    Ok(vec![expert_rollout(&mdp)])
}

pub fn expert_rollout(mdp: &ReplayMdp) -> Rollout<MdpState> {
    let track = mdp.expert_track();
    let living = track.iter().take_while(|a| a.is_alive()).count().max(1);
    let states: Vec<MdpState> = (0..living).map(|t| mdp.recorded_state(t)).collect();
    let actions = track[..living]
        .windows(2)
        .map(|w| Action::nearest(w[1].x - w[0].x, w[1].y - w[0].y, mdp.step_length() / 2.0))
        .collect();
    Rollout { states, actions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{MatchMeta, Tick};
    use rand::SeedableRng;

    fn rec(id: &str, side: Side, x: f64, y: f64) -> AgentRecord {
        AgentRecord {
            agent_id: id.into(),
            side,
            x,
            y,
            health: 1.0,
        }
    }

    /// Blue `b0` follows `path`; a red agent drifts west.
    fn recording(path: &[(f64, f64)]) -> Match {
        Match {
            meta: MatchMeta::new("t"),
            ticks: path
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| Tick {
                    time: 3.0 * i as f64,
                    agents: vec![
                        rec("r0", Side::Red, 300.0 - i as f64, 200.0),
                        rec("b0", Side::Blue, x, y),
                        rec("b1", Side::Blue, 50.0, 50.0),
                    ],
                })
                .collect(),
        }
    }

    fn mdp() -> ReplayMdp {
        ReplayMdp::new(recording(&[(100.0, 100.0); 6]), "b0")
            .unwrap()
            .with_step_length(5.0)
            .unwrap()
    }

    fn at(m: &ReplayMdp, x: f64, y: f64) -> MdpState {
        let mut s = m.initial_state();
        s.controlled_x = x;
        s.controlled_y = y;
        s
    }

    #[test]
    fn initial_state_copies_recording() {
        let m = ReplayMdp::new(recording(&[(10.0, 20.0), (11.0, 20.0)]), "b0").unwrap();
        let s = m.initial_state();
        assert_eq!(s.tick_index, 0);
        assert_eq!((s.controlled_x, s.controlled_y, s.controlled_health), (10.0, 20.0, 1.0));
        assert_eq!(s.others.len(), 2);
        assert!(s.others.iter().all(|a| a.agent_id != "b0"));
    }

    #[test]
    fn one_tick_match_starts_terminal() {
        let m = ReplayMdp::new(recording(&[(10.0, 20.0)]), "b0").unwrap();
        let s = m.initial_state();
        assert!(m.is_terminal(&s));
        assert_eq!(m.step(&s, Action::E), Err(MdpError::Terminal(0)));
    }

    #[test]
    fn constructor_rejects_red_and_unknown() {
        assert_eq!(
            ReplayMdp::new(recording(&[(1.0, 1.0)]), "r0").unwrap_err(),
            MdpError::NotBlue("r0".into())
        );
        assert!(matches!(
            ReplayMdp::new(recording(&[(1.0, 1.0)]), "zz"),
            Err(MdpError::UnknownAgent(_))
        ));
        assert!(mdp().with_discount(1.0).is_err());
    }

    #[test]
    fn axis_and_diagonal_moves() {
        let m = mdp();
        let s = m.step(&at(&m, 100.0, 100.0), Action::E).unwrap();
        assert_eq!((s.controlled_x, s.controlled_y), (105.0, 100.0));
        let s = m.step(&at(&m, 100.0, 100.0), Action::NE).unwrap();
        let d = 5.0 / 2f64.sqrt();
        assert!((s.controlled_x - (100.0 + d)).abs() < 1e-12);
        assert!((s.controlled_y - 103.5355).abs() < 1e-4);
        assert_eq!(s.tick_index, 1);
        let s = m.step(&at(&m, 0.0, 100.0), Action::W).unwrap();
        assert_eq!(s.controlled_x, 0.0);
    }

    #[test]
    fn grid_motion_keeps_lattice() {
        let m = mdp().with_motion(Motion::Grid);
        let s = m.step(&at(&m, 100.0, 100.0), Action::SW).unwrap();
        assert_eq!((s.controlled_x, s.controlled_y), (95.0, 95.0));
    }

    #[test]
    fn others_ignore_the_action_and_health_is_frozen() {
        let m = mdp();
        let s = at(&m, 100.0, 100.0);
        let results: Vec<_> = Action::ALL.iter().map(|a| m.step(&s, *a).unwrap()).collect();
        for (r, a) in results.iter().zip(Action::ALL) {
            assert_eq!(r.others, results[0].others);
            assert_eq!(r.controlled_health, s.controlled_health);
            assert_eq!(r, &m.step(&s, a).unwrap());
        }
    }

    #[test]
    fn rollout_shapes() {
        let m = mdp();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = Policy::Uniform;
        let r = rollout(&m, &p, m.initial_state(), Action::N, 1, &mut rng);
        assert_eq!((r.states.len(), r.actions.len()), (2, 1));
        assert_eq!(r.actions[0], Action::N);
        // 6 ticks: at most 5 steps from tick 0
        let r = rollout(&m, &p, m.initial_state(), Action::N, 50, &mut rng);
        assert_eq!((r.states.len(), r.actions.len()), (6, 5));
        let late = m.start_state(3);
        let r = rollout(&m, &p, late, Action::N, 50, &mut rng);
        assert_eq!(r.states.len(), 3);
    }

    #[test]
    fn deterministic_policy_rollouts_repeat() {
        let m = mdp();
        let p = Policy::constant(Action::SE);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = rollout(&m, &p, m.initial_state(), Action::N, 4, &mut rng);
        let b = rollout(&m, &p, m.initial_state(), Action::N, 4, &mut rng);
        assert_eq!(a, b);
    }

    #[test]
    fn expert_action_inference() {
        let still = recording(&[(100.0, 100.0); 5]);
        let r = &expert_rollouts(still, "b0").unwrap()[0];
        assert_eq!(r.states.len(), 5);
        assert!(r.actions.iter().all(|a| *a == Action::Stay));

        let east: Vec<_> = (0..5).map(|i| (100.0 + 10.0 * i as f64, 100.0)).collect();
        let r = &expert_rollouts(recording(&east), "b0").unwrap()[0];
        assert!(r.actions.iter().all(|a| *a == Action::E));

        let deg = 40f64.to_radians();
        assert_eq!(Action::nearest(deg.cos(), deg.sin(), 0.5), Action::NE);
        assert_eq!(Action::nearest(0.1, 0.0, 0.5), Action::Stay);
        assert_eq!(Action::nearest(-1.0, -0.1, 0.5), Action::W);
    }

    #[test]
    fn expert_rollout_stops_at_death() {
        let mut m = recording(&[(100.0, 100.0); 5]);
        for t in 3..5 {
            m.ticks[t].agents[1].health = 0.0;
        }
        let r = &expert_rollouts(m, "b0").unwrap()[0];
        assert_eq!(r.states.len(), 3);
        assert_eq!(r.actions.len(), 2);
    }

    #[test]
    fn median_step_length() {
        let path = [(0.0, 0.0), (3.0, 4.0), (3.0, 4.0), (3.0, 14.0), (3.0, 20.0)];
        let m = ReplayMdp::new(recording(&path), "b0").unwrap();
        // displacements 5, 0, 10, 6; standing still does not count
        assert_eq!(m.step_length(), 6.0);
        let still = ReplayMdp::new(recording(&[(1.0, 1.0); 4]), "b0").unwrap();
        assert_eq!(still.step_length(), still.recording().meta.arena_diagonal() / 100.0);
    }
}
