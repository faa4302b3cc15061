//! Behavior descriptors: kernel expectations of the controlled agent's
//! recorded track, compared across strategies through RKHS distances.

use stratid::gen::{dataset_configs, generate_match, DatasetConfig};
use stratid::kernel::{distance, empirical_expectation, norm, vector_gram, min_eigenvalue, FeatureVector};
use stratid::mdp::{expert_rollout, Environment, ReplayMdp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let configs = dataset_configs(&DatasetConfig {
        counts: [2, 2, 2],
        seed: 3,
        ..DatasetConfig::default()
    });
    let mut descriptors = Vec::new();
    let mut spec = None;
    for c in &configs {
        let m = generate_match(c)?;
        let agent = m.meta.controlled_agent_id.clone().expect("generated matches mark their agent");
        let mdp = ReplayMdp::new(m, &agent)?;
        let features: Vec<FeatureVector> = expert_rollout(&mdp).states.iter().map(|s| mdp.features(s)).collect();
        let mu = empirical_expectation(&[features], 20)?;
        let s = mdp.kernel_spec();
        println!("{} {:<8} anchors {:>3}  norm {:.3}", c.match_id, c.strategy.to_string(), mu.len(), norm(&mu, &s)?);
        descriptors.push(mu);
        spec = Some(s);
    }
    let spec = spec.expect("at least one match");
    println!("\npairwise RKHS distances");
    for (i, a) in descriptors.iter().enumerate() {
        let row: Vec<String> = descriptors.iter().map(|b| format!("{:6.2}", distance(a, b, &spec).unwrap())).collect();
        println!("{} {}", configs[i].match_id, row.join(" "));
    }
    println!("\nGram min eigenvalue {:.3}", min_eigenvalue(&vector_gram(&descriptors, &spec)));
    Ok(())
}
