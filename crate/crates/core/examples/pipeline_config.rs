//! Prints the default pipeline configuration as TOML, the starting point
//! for a `--config` file, and the stage seeds it derives.

use stratid::pipeline::{stage_seed, PipelineConfig};

fn main() {
    let cfg = PipelineConfig::default();
    print!("{}", cfg.to_toml_string());
    println!();
    for stage in ["generate", "bench", "learn/m00", "analyze/reward", "replay/m00"] {
        println!("# seed for {stage}: {}", stage_seed(cfg.seed, stage));
    }
}
