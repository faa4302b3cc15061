//! Learns behavior vectors and rewards for a small dataset in memory, then
//! clusters and classifies both.
//!
//! `cargo run --release --example strategy_analytics`

use rayon::prelude::*;
use stratid::analytics::{cluster_report, distance_matrix, hac_complete, loo_evaluate, LabeledItem, LabeledSet, SvmParams};
use stratid::gen::{dataset_configs, generate_match, DatasetConfig};
use stratid::kernel::VectorRole;
use stratid::pipeline::{learn_match, stage_seed, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = PipelineConfig::default();
    cfg.kpirl.max_iterations = 10;
    let configs = dataset_configs(&DatasetConfig {
        counts: [4, 4, 4],
        seed: stage_seed(cfg.seed, "generate"),
        ..DatasetConfig::default()
    });
    let learned: Vec<_> = configs
        .par_iter()
        .map(|c| (c, learn_match(&cfg, generate_match(c).unwrap()).unwrap()))
        .collect();
    for role in [VectorRole::Behavior, VectorRole::Reward] {
        let items = learned
            .iter()
            .map(|(c, l)| {
                let f = if role == VectorRole::Behavior { &l.behavior } else { &l.reward };
                LabeledItem { match_id: c.match_id.clone(), label: c.strategy, vector: f.vector.clone(), spec: f.spec }
            })
            .collect();
        let set = LabeledSet::new(role, items)?;
        let d = distance_matrix(&set)?;
        let clusters = cluster_report(&hac_complete(&d, 3)?.assignment, &set.labels());
        let loo = loo_evaluate(&set, &SvmParams::default())?;
        println!("== {role}: leave-one-out accuracy {:.3}", loo.accuracy);
        print!("{}", clusters.to_text());
    }
    Ok(())
}
