//! Recovers a hidden reward: the expert acts optimally for a random unit
//! kernel reward, and projection IRL has to reproduce its behavior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stratid::fixtures::grid_replay_mdp;
use stratid::kernel::{distance, norm, policy_expectation, ExpectationParams};
use stratid::kpirl::{kpirl, KpirlParams, PolicySolver};
use stratid::rl::{enumerate, random_kernel_reward, value_iteration, KernelReward};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = grid_replay_mdp();
    let spec = env.kernel_spec();
    let model = enumerate(&env, 100_000)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw = random_kernel_reward(&env, 10, &mut rng);
    let truth = raw.scaled(1.0 / norm(&raw, &spec)?);
    let (_, expert) = value_iteration(&model, &KernelReward::new(&truth, spec), 0.9, 1e-12)?;
    let expectation = ExpectationParams {
        episodes: 1,
        horizon: env.tick_count() - 1,
        from_initial: true,
        ..ExpectationParams::default()
    };
    let mu_e = policy_expectation(&env, &expert, &expectation)?;
    let scale = norm(&mu_e, &spec)?;
    let out = kpirl(
        &env,
        &mu_e,
        &spec,
        &KpirlParams {
            epsilon: 0.1 * scale,
            expectation,
            solver: PolicySolver::Exact { state_budget: 100_000, discount: 0.9 },
            ..KpirlParams::default()
        },
    )?;
    println!("iteration  residual/|mu_E|  beta   expert distance/|mu_E|");
    for (i, r) in out.trace.records.iter().enumerate() {
        println!("{:>9}  {:>15.4}  {:.3}  {:>22.4}", i + 1, r.residual / scale, r.beta, r.expert_distance / scale);
    }
    println!("stopped: {:?}, selected iteration {}", out.trace.stop, out.selected_index + 1);
    println!("selected vs hidden reward distance {:.3}", distance(&out.selected, &truth, &spec)?);
    Ok(())
}
