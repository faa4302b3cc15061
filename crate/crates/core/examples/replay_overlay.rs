//! Learns a reward for one assault match, trains a policy on it and
//! overlays the policy's track on the recorded one.
//!
//! `cargo run --release --example replay_overlay -- [out_dir]`

use stratid::gen::{generate_match, GenConfig};
use stratid::pipeline::{learn_match, replay_policy, PipelineConfig};
use stratid::trajectory::{write_atomic, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-replay".into()));
    let cfg = PipelineConfig::default();
    let m = generate_match(&GenConfig { strategy: Strategy::Assault, ..GenConfig::default() })?;
    let learned = learn_match(&cfg, m.clone())?;
    println!("KPIRL: {} iterations, stop {:?}, residual {:.3} of |mu_E|", learned.iterations, learned.stop, learned.relative_residual);
    let report = replay_policy(&cfg, m, &learned.reward)?;
    println!(
        "displacement: mean {:.1} m, first half {:.1} m, arena diagonal {:.1} m",
        report.mean_displacement(),
        report.first_half_displacement(),
        report.diagonal()
    );
    std::fs::create_dir_all(&out)?;
    write_atomic(&out.join("overlay.csv"), &report.overlay_csv()?)?;
    write_atomic(&out.join("overlay.svg"), report.overlay_svg().as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}
