//! Direct estimate iteration against the exact optimum on a small
//! lattice replay MDP, for a handful of random kernel rewards.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratid::fixtures::grid_replay_mdp;
use stratid::rl::{
    direct_estimate_iteration, enumerate, evaluate_policy, q_learning_baseline, random_kernel_reward, value_iteration,
    DeiParams, KernelReward, Policy, QLearningParams,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = grid_replay_mdp();
    let spec = env.kernel_spec();
    let model = enumerate(&env, 100_000)?;
    println!("{} reachable states, {} transitions", model.len(), model.transitions());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "reward", "optimum", "direct", "tabular", "random");
    for i in 0..5 {
        let v = random_kernel_reward(&env, 10, &mut rng);
        let r = KernelReward::new(&v, spec);
        let (_, best) = value_iteration(&model, &r, 0.9, 1e-10)?;
        let dei = direct_estimate_iteration(&env, &r, &DeiParams { seed: rng.next_u64(), ..DeiParams::default() })?;
        let q = q_learning_baseline(&env, &r, dei.interactions, &QLearningParams { seed: rng.next_u64(), ..QLearningParams::default() });
        let seed = rng.next_u64();
        let eval = |p: &Policy| evaluate_policy(&env, p, &r, 100, 100, 0.9, seed);
        println!(
            "{i:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            eval(&best),
            eval(&dei.policy),
            eval(&q),
            eval(&Policy::Uniform)
        );
    }
    Ok(())
}
