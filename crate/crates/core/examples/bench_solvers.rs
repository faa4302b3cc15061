//! Value iteration, direct iteration, tabular Q-learning and a random
//! policy on the same random rewards and interaction budget.

use stratid::pipeline::{bench_mdps, PipelineConfig};
use stratid::rl::{bench_rl, BenchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = PipelineConfig::default();
    cfg.bench.crop_ticks = 8;
    let mdps = bench_mdps(&cfg)?;
    let report = bench_rl(
        &mdps,
        mdps[0].kernel_spec(),
        &BenchConfig {
            rewards: 6,
            budget: 3_000,
            eval_episodes: 20,
            ..BenchConfig::default()
        },
    )?;
    print!("{}", report.summary());
    Ok(())
}
