//! Solver comparison on random kernel rewards under a shared interaction
//! budget.

use std::fmt;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    direct_estimate_iteration, enumerate, evaluate_policy, q_learning_baseline, value_iteration, DeiParams,
    KernelReward, Policy, QLearningParams, RlError,
};
use crate::kernel::{random_expansion, FeatureVector, KernelSpec, RkhsVector};
use crate::mdp::{Action, Environment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Solver {
    ValueIteration,
    DirectIteration,
    QLearning,
    Random,
}

impl Solver {
    pub const ALL: [Solver; 4] = [
        Solver::ValueIteration,
        Solver::DirectIteration,
        Solver::QLearning,
        Solver::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Solver::ValueIteration => "value_iteration",
            Solver::DirectIteration => "direct_iteration",
            Solver::QLearning => "q_learning",
            Solver::Random => "random",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub rewards: usize,
    /// Interaction budget shared by the learning solvers.
    pub budget: usize,
    pub anchors_per_reward: usize,
    pub eval_episodes: usize,
    /// Long enough to reach the end of every replay.
    pub eval_horizon: usize,
    /// Value iteration is skipped when more states are reachable.
    pub exact_state_budget: usize,
    pub dei: DeiParams,
    pub q_learning: QLearningParams,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rewards: 30,
            budget: 10_000,
            anchors_per_reward: 10,
            eval_episodes: 50,
            eval_horizon: 1_000,
            exact_state_budget: 200_000,
            dei: DeiParams::default(),
            q_learning: QLearningParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub reward_id: usize,
    pub solver: Solver,
    pub mean_return: f64,
    pub interactions_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub rewards: usize,
    pub budget: usize,
    pub seed: u64,
    pub exact_available: bool,
}

impl BenchReport {
    pub fn returns(&self, solver: Solver) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.solver == solver)
            .map(|r| r.mean_return)
            .collect()
    }

    /// Mean over rewards, `None` if the solver never ran.
    pub fn mean(&self, solver: Solver) -> Option<f64> {
        let v = self.returns(solver);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["reward_id", "solver", "mean_return", "interactions_used"])?;
        for r in &self.rows {
            w.write_record([
                r.reward_id.to_string(),
                r.solver.name().to_string(),
                format!("{:.9}", r.mean_return),
                r.interactions_used.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Key/value metadata plus the per-solver means.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "rewards={}\nbudget={}\nseed={}\nvalue_iteration={}\n",
            self.rewards, self.budget, self.seed, self.exact_available
        );
        for solver in Solver::ALL {
            if let Some(m) = self.mean(solver) {
                s.push_str(&format!("mean_return.{solver}={m:.9}\n"));
            }
        }
        s
    }
}

/// Features visited by `count` uniformly random steps from sampled starts.
pub fn reachable_features<E: Environment, R: Rng + ?Sized>(env: &E, count: usize, rng: &mut R) -> Vec<FeatureVector> {
    let mut out = Vec::with_capacity(count);
    let mut s = env.sample_start(rng);
    while out.len() < count {
        out.push(env.features(&s));
        if env.is_terminal(&s) {
            s = env.sample_start(rng);
        } else {
            let a = Action::from_index(rng.random_range(0..Action::ALL.len()));
            s = env.step(&s, a).expect("non-terminal states always step");
        }
    }
    out
}

/// Random reward expansion over reachable anchors with weights uniform in
/// `[-1, 1]`.
pub fn random_kernel_reward<E: Environment, R: Rng + ?Sized>(env: &E, anchors: usize, rng: &mut R) -> RkhsVector {
    let anchors = reachable_features(env, anchors.max(1), rng);
    random_expansion(&anchors, rng)
}

/// Reward `i` lives on `mdps[i % mdps.len()]`. Every solver is evaluated on
/// the same sampled starts; deterministic policies consume no randomness,
/// so on deterministic MDPs the value-iteration row bounds the others
/// episode by episode.
pub fn bench_rl<E>(mdps: &[E], spec: KernelSpec, config: &BenchConfig) -> Result<BenchReport, RlError>
where
    E: Environment + Sync,
    E::State: Send + Sync,
{
    if mdps.is_empty() {
        return Err(RlError::Argument("bench needs at least one MDP".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..config.rewards).map(|_| master.next_u64()).collect();
    let models: Vec<_> = mdps
        .iter()
        .map(|m| enumerate(m, config.exact_state_budget).ok())
        .collect();
    let exact_available = models.iter().all(Option::is_some);

    let per_reward: Result<Vec<Vec<BenchRow>>, RlError> = seeds
        .par_iter()
        .enumerate()
        .map(|(id, &seed)| {
            let env = &mdps[id % mdps.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vector = random_kernel_reward(env, config.anchors_per_reward, &mut rng);
            let reward = KernelReward::new(&vector, spec);
            let eval_seed = rng.next_u64();
            let eval = |p: &Policy| {
                evaluate_policy(
                    env,
                    p,
                    &reward,
                    config.eval_episodes,
                    config.eval_horizon,
                    config.dei.discount,
                    eval_seed,
                )
            };
            let mut rows = Vec::with_capacity(4);
            if let Some(model) = &models[id % mdps.len()] {
                let (_, p) = value_iteration(model, &reward, config.dei.discount, 1e-10)?;
                rows.push((Solver::ValueIteration, eval(&p), model.transitions()));
            }
            let dei = direct_estimate_iteration(
                env,
                &reward,
                &DeiParams {
                    budget: Some(config.budget),
                    seed: rng.next_u64(),
                    ..config.dei.clone()
                },
            )?;
            rows.push((Solver::DirectIteration, eval(&dei.policy), dei.interactions));
            let ql = QLearningParams {
                seed: rng.next_u64(),
                discount: config.dei.discount,
                ..config.q_learning
            };
            let q = q_learning_baseline(env, &reward, config.budget, &ql);
            rows.push((Solver::QLearning, eval(&q), config.budget));
            rows.push((Solver::Random, eval(&Policy::Uniform), 0));
            Ok(rows
                .into_iter()
                .map(|(solver, mean_return, interactions_used)| BenchRow {
                    reward_id: id,
                    solver,
                    mean_return,
                    interactions_used,
                })
                .collect())
        })
        .collect();
    Ok(BenchReport {
        rows: per_reward?.into_iter().flatten().collect(),
        rewards: config.rewards,
        budget: config.budget,
        seed: config.seed,
        exact_available,
    })
}
