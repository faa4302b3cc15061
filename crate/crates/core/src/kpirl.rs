//! Kernel-based projection IRL: rewards whose optimal policies' kernel
//! expectations are projected toward the expert's, one reward per round.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernel::{distance, dot, norm, policy_expectation, ExpectationParams, KernelError, KernelSpec, RkhsVector};
use crate::mdp::Environment;
use crate::rl::{
    direct_estimate_iteration, enumerate, random_kernel_reward, value_iteration, DeiParams, KernelReward, Policy,
    RlError,
};

#[derive(Debug, Error)]
pub enum KpirlError {
    #[error("projection step is degenerate: μ_i coincides with the previous projection")]
    DegenerateStep,
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("expert expectation is empty")]
    EmptyExpert,
    #[error("RL solve failed at iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: RlError,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// How each round's reward is turned into a policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySolver {
    Direct(DeiParams),
    /// Value iteration over the enumerated MDP; only for small MDPs.
    Exact { state_budget: usize, discount: f64 },
}

impl Default for PolicySolver {
    fn default() -> Self {
        PolicySolver::Direct(DeiParams::default())
    }
}

impl PolicySolver {
    pub fn solve<E: Environment>(&self, env: &E, reward: &KernelReward<'_>, seed: u64) -> Result<Policy, RlError> {
        match self {
            PolicySolver::Direct(p) => {
                let params = DeiParams { seed, ..p.clone() };
                Ok(direct_estimate_iteration(env, reward, &params)?.policy)
            }
            PolicySolver::Exact { state_budget, discount } => {
                let model = enumerate(env, *state_budget)?;
                Ok(value_iteration(&model, reward, *discount, 1e-10)?.1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpirlParams {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub solver: PolicySolver,
    /// Every round reuses `expectation.seed`, so policies are compared on
    /// common random numbers.
    pub expectation: ExpectationParams,
    /// Anchors of the random first reward.
    pub initial_anchors: usize,
    pub stall_iterations: usize,
    pub stall_tolerance: f64,
    pub seed: u64,
}

impl Default for KpirlParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iterations: 50,
            solver: PolicySolver::default(),
            expectation: ExpectationParams::default(),
            initial_anchors: 10,
            stall_iterations: 3,
            stall_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl KpirlParams {
    pub fn validate(&self) -> Result<(), KpirlError> {
        if !(self.epsilon > 0.0) {
            return Err(KpirlError::Params(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(KpirlError::Params("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpirlRecord {
    /// `μ_E − μ̄_{i−1}`; the random initial reward on the first round.
    pub alpha: RkhsVector,
    /// `α_i` scaled to unit norm. Positive scaling leaves the optimal policy
    /// unchanged and keeps rewards comparable across rounds and matches.
    pub reward: RkhsVector,
    pub policy: Policy,
    pub mu: RkhsVector,
    pub mu_bar: RkhsVector,
    /// `β_i`; 1 on the first round.
    pub beta: f64,
    /// `‖μ_E − μ̄_i‖`.
    pub residual: f64,
    /// `‖μ_E − μ_i‖`, the selection criterion.
    pub expert_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpirlTrace {
    pub records: Vec<KpirlRecord>,
    pub stop: StopReason,
}

impl KpirlTrace {
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.residual)
    }

    /// `iteration,residual,beta,expert_distance`, one row per round.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "residual", "beta", "expert_distance"])?;
        for (i, r) in self.records.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                format!("{:.9}", r.residual),
                format!("{:.9}", r.beta),
                format!("{:.9}", r.expert_distance),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Projects `μ_E` onto the segment from `μ̄_prev` to `μ_i`.
pub fn projection_step(
    mu_bar_prev: &RkhsVector,
    mu_i: &RkhsVector,
    mu_e: &RkhsVector,
    spec: &KernelSpec,
) -> Result<(f64, RkhsVector), KpirlError> {
    let step = mu_i.sub(mu_bar_prev).compact();
    let target = mu_e.sub(mu_bar_prev);
    let denom = dot(&step, &step, spec);
    let scale = 1.0 + step.l1_weight().powi(2);
    if denom <= 1e-14 * scale {
        return Err(KpirlError::DegenerateStep);
    }
    let beta = (dot(&step, &target, spec) / denom).clamp(0.0, 1.0);
    Ok((beta, mu_bar_prev.combine(1.0, &step, beta).compact()))
}

/// Index of the record whose own policy expectation is closest to the
/// expert's; the first one on ties.
pub fn select_index(trace: &KpirlTrace) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in trace.records.iter().enumerate() {
        if best.is_none_or(|(_, d)| r.expert_distance < d) {
            best = Some((i, r.expert_distance));
        }
    }
    best.map(|(i, _)| i)
}

pub fn select_reward(trace: &KpirlTrace) -> Option<&RkhsVector> {
    select_index(trace).map(|i| &trace.records[i].reward)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpirlOutcome {
    pub selected: RkhsVector,
    pub selected_index: usize,
    pub trace: KpirlTrace,
}

fn unit(v: &RkhsVector, spec: &KernelSpec) -> Result<RkhsVector, KernelError> {
    let n = norm(v, spec)?;
    Ok(if n > 0.0 { v.scaled(1.0 / n) } else { v.clone() })
}

/// Runs projection IRL against the expert expectation `mu_e`.
pub fn kpirl<E: Environment>(
    env: &E,
    mu_e: &RkhsVector,
    spec: &KernelSpec,
    params: &KpirlParams,
) -> Result<KpirlOutcome, KpirlError> {
    params.validate()?;
    if mu_e.is_empty() {
        return Err(KpirlError::EmptyExpert);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let solve = |iteration: usize, reward: &RkhsVector, seed: u64| -> Result<(Policy, RkhsVector), KpirlError> {
        let policy = params
            .solver
            .solve(env, &KernelReward::new(reward, *spec), seed)
            .map_err(|source| KpirlError::Solver { iteration, source })?;
        let mu = policy_expectation(env, &policy, &params.expectation)?;
        Ok((policy, mu))
    };

    let r1 = unit(&random_kernel_reward(env, params.initial_anchors, &mut rng), spec)?;
    let (policy, mu) = solve(1, &r1, rng.next_u64())?;
    let residual = distance(mu_e, &mu, spec)?;
    let mut records = vec![KpirlRecord {
        alpha: r1.clone(),
        reward: r1,
        policy,
        mu: mu.clone(),
        mu_bar: mu.clone(),
        beta: 1.0,
        residual,
        expert_distance: residual,
    }];
    let mut stalled = 0;
    let stop = loop {
        let prev = records.last().expect("at least one record");
        if prev.residual <= params.epsilon {
            break StopReason::Converged;
        }
        if records.len() >= params.max_iterations {
            break StopReason::MaxIterations;
        }
        if stalled >= params.stall_iterations {
            break StopReason::Stalled;
        }
        let iteration = records.len() + 1;
        let alpha = mu_e.sub(&prev.mu_bar).compact();
        let reward = unit(&alpha, spec)?;
        let (policy, mu) = solve(iteration, &reward, rng.next_u64())?;
        let (mut beta, mut mu_bar) = match projection_step(&prev.mu_bar, &mu, mu_e, spec) {
            Ok(step) => step,
            Err(KpirlError::DegenerateStep) => (0.0, prev.mu_bar.clone()),
            Err(e) => return Err(e),
        };
        let mut residual = distance(mu_e, &mu_bar, spec)?;
        if residual > prev.residual {
            // rounding only: the clamped step can never move away
            beta = 0.0;
            mu_bar = prev.mu_bar.clone();
            residual = prev.residual;
        }
        if prev.residual - residual < params.stall_tolerance {
            stalled += 1;
        } else {
            stalled = 0;
        }
        let expert_distance = distance(mu_e, &mu, spec)?;
        log::debug!("kpirl iteration {iteration}: residual {residual:.6} beta {beta:.4}");
        records.push(KpirlRecord {
            alpha,
            reward,
            policy,
            mu,
            mu_bar,
            beta,
            residual,
            expert_distance,
        });
    };
    let trace = KpirlTrace { records, stop };
    let selected_index = select_index(&trace).expect("trace is nonempty");
    Ok(KpirlOutcome {
        selected: trace.records[selected_index].reward.clone(),
        selected_index,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::grid_replay_mdp;
    use crate::kernel::FeatureVector;
    use proptest::prelude::*;

    fn spec() -> KernelSpec {
        KernelSpec::default()
    }

    /// Anchors far enough apart that their kernel values vanish, so the
    /// expansions behave like coordinates in an orthonormal basis.
    fn ortho(coords: &[f64]) -> RkhsVector {
        let anchors = (0..coords.len())
            .map(|i| FeatureVector([i as f64 * 100.0; 6]))
            .collect();
        RkhsVector::new(anchors, coords.to_vec()).unwrap()
    }

    #[test]
    fn hand_projection() {
        let (beta, bar) = projection_step(&ortho(&[0.0, 0.0]), &ortho(&[2.0, 0.0]), &ortho(&[1.0, 0.0]), &spec()).unwrap();
        assert!((beta - 0.5).abs() < 1e-12);
        assert!(distance(&bar, &ortho(&[1.0, 0.0]), &spec()).unwrap() < 1e-9);
    }

    #[test]
    fn exact_match_and_orthogonal_step() {
        let e = ortho(&[1.0, 0.0]);
        let (beta, bar) = projection_step(&ortho(&[0.0, 0.0]), &e, &e, &spec()).unwrap();
        assert_eq!(beta, 1.0);
        assert!(distance(&bar, &e, &spec()).unwrap() < 1e-9);
        let (beta, bar) = projection_step(&ortho(&[0.0, 0.0]), &ortho(&[0.0, 3.0]), &e, &spec()).unwrap();
        assert_eq!(beta, 0.0);
        assert!(norm(&bar, &spec()).unwrap() < 1e-12);
    }

    #[test]
    fn degenerate_step_is_an_error() {
        let v = ortho(&[1.0, 2.0]);
        assert!(matches!(
            projection_step(&v, &v, &ortho(&[0.0, 1.0]), &spec()),
            Err(KpirlError::DegenerateStep)
        ));
    }

    fn trace_with(distances: &[f64]) -> KpirlTrace {
        KpirlTrace {
            records: distances
                .iter()
                .enumerate()
                .map(|(i, &d)| KpirlRecord {
                    alpha: RkhsVector::zero(),
                    reward: ortho(&[i as f64]),
                    policy: Policy::Uniform,
                    mu: RkhsVector::zero(),
                    mu_bar: RkhsVector::zero(),
                    beta: 0.0,
                    residual: 0.0,
                    expert_distance: d,
                })
                .collect(),
            stop: StopReason::MaxIterations,
        }
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_index(&trace_with(&[0.9, 0.3, 0.5])), Some(1));
        assert_eq!(select_index(&trace_with(&[0.4])), Some(0));
        assert_eq!(select_index(&trace_with(&[0.5, 0.5])), Some(0));
        assert_eq!(select_index(&trace_with(&[])), None);
    }

    fn expert_mu() -> (crate::mdp::ReplayMdp, RkhsVector, ExpectationParams) {
        let env = grid_replay_mdp();
        let expectation = ExpectationParams {
            episodes: 1,
            horizon: env.tick_count() - 1,
            from_initial: true,
            ..ExpectationParams::default()
        };
        let mu = policy_expectation(&env, &Policy::constant(crate::mdp::Action::N), &expectation).unwrap();
        (env, mu, expectation)
    }

    #[test]
    fn loose_epsilon_stops_after_first_round() {
        let (env, mu, expectation) = expert_mu();
        let params = KpirlParams {
            epsilon: 1e6,
            expectation,
            solver: PolicySolver::Exact {
                state_budget: 10_000,
                discount: 0.9,
            },
            ..KpirlParams::default()
        };
        let out = kpirl(&env, &mu, &env.kernel_spec(), &params).unwrap();
        assert_eq!(out.trace.records.len(), 1);
        assert_eq!(out.trace.stop, StopReason::Converged);
        assert_eq!(out.selected_index, 0);
    }

    #[test]
    fn residuals_never_increase_and_rewards_are_unit() {
        let (env, mu, expectation) = expert_mu();
        let spec = env.kernel_spec();
        let params = KpirlParams {
            epsilon: 1e-3,
            max_iterations: 8,
            expectation,
            solver: PolicySolver::Direct(DeiParams {
                iterations: 4,
                episodes_per_iter: 20,
                ..DeiParams::default()
            }),
            ..KpirlParams::default()
        };
        let out = kpirl(&env, &mu, &spec, &params).unwrap();
        let r = out.trace.residuals();
        assert!(r.windows(2).all(|w| w[1] <= w[0]), "{r:?}");
        for rec in &out.trace.records {
            assert!((norm(&rec.reward, &spec).unwrap() - 1.0).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&rec.beta));
        }
        let again = kpirl(&env, &mu, &spec, &params).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn reward_evaluation_matches_unit_expansion_dot() {
        let (env, mu, _) = expert_mu();
        let spec = env.kernel_spec();
        let alpha = mu.sub(&ortho(&[0.3]));
        let s = env.initial_state();
        let phi = env.features(&s);
        let lhs = crate::kernel::evaluate(&alpha, &phi, &spec);
        let rhs = dot(&alpha, &RkhsVector::unit(phi), &spec);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn expansion() -> impl proptest::strategy::Strategy<Value = RkhsVector> {
        prop::collection::vec((prop::array::uniform6(0.0f64..1.0), -1.0f64..1.0), 1..5).prop_map(|pairs| {
            let (a, w): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(a, w)| (FeatureVector(a), w)).unzip();
            RkhsVector::new(a, w).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_matches_grid_search(prev in expansion(), mu_i in expansion(), mu_e in expansion()) {
            let spec = spec();
            let Ok((beta, bar)) = projection_step(&prev, &mu_i, &mu_e, &spec) else {
                return Ok(());
            };
            let residual = distance(&mu_e, &bar, &spec).unwrap();
            let best = (0..=1000)
                .map(|k| {
                    let b = k as f64 / 1000.0;
                    distance(&mu_e, &prev.combine(1.0 - b, &mu_i, b), &spec).unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            prop_assert!(residual <= best + 1e-9);
            prop_assert!(residual <= distance(&mu_e, &prev, &spec).unwrap() + 1e-9);
            prop_assert!((0.0..=1.0).contains(&beta));
        }
    }
}
