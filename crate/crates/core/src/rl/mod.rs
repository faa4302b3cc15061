//! Forward RL: Direct Estimate Iteration with a regression-tree Q function,
//! plus exact value iteration, tabular Q-learning and Monte Carlo policy
//! evaluation.

mod bench;
mod direct;
mod exact;
mod policy;
mod qlearning;
mod tree;

pub use bench::{bench_rl, random_kernel_reward, reachable_features, BenchConfig, BenchReport, BenchRow, Solver};
pub use direct::{
    direct_estimate_iteration, n_step_return, softmax_select, softmax_start, update_observation, DeiOutcome,
    DeiParams, QObservations, StartHeuristic, TargetMode,
};
pub use exact::{enumerate, value_iteration, FiniteModel};
pub use policy::{q_input, Policy, QKey, QRegressor, QTable, Q_INPUT_WIDTH};
pub use qlearning::{q_learning_baseline, QLearningParams};
pub use tree::{RegressionTree, TreeParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernel::{evaluate, FeatureVector, KernelSpec, RkhsVector};
use crate::mdp::{rollout, Environment, MdpError};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("reachable state set exceeds the budget of {budget} states")]
    Capacity { budget: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// State reward as a function of the state's features.
pub trait Reward: Sync {
    fn reward(&self, phi: &FeatureVector) -> f64;
}

impl<F: Fn(&FeatureVector) -> f64 + Sync> Reward for F {
    fn reward(&self, phi: &FeatureVector) -> f64 {
        self(phi)
    }
}

/// `R(s) = ⟨v, k(s, ·)⟩`.
#[derive(Debug, Clone, Copy)]
pub struct KernelReward<'a> {
    pub vector: &'a RkhsVector,
    pub spec: KernelSpec,
}

impl<'a> KernelReward<'a> {
    pub fn new(vector: &'a RkhsVector, spec: KernelSpec) -> Self {
        Self { vector, spec }
    }
}

impl Reward for KernelReward<'_> {
    fn reward(&self, phi: &FeatureVector) -> f64 {
        evaluate(self.vector, phi, &self.spec)
    }
}

/// Monte Carlo mean of `Σ_t γ^{t−1} r(s_t)` over `episodes` rollouts from
/// sampled starts. Terminal states end an episode early.
pub fn evaluate_policy<E: Environment>(
    env: &E,
    policy: &Policy,
    reward: &dyn Reward,
    episodes: usize,
    horizon: usize,
    discount: f64,
    seed: u64,
) -> f64 {
    let episodes = episodes.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let s0 = env.sample_start(&mut rng);
        let a0 = policy.act(env, &s0, &mut rng);
        let r = rollout(env, policy, s0, a0, horizon, &mut rng);
        let mut g = 0.0;
        let mut scale = 1.0;
        for s in &r.states {
            g += scale * reward.reward(&env.features(s));
            scale *= discount;
        }
        total += g;
    }
    total / episodes as f64
}
