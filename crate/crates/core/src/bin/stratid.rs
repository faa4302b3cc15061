use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stratid::pipeline::{
    run_analyze, run_bench_rl, run_generate, run_learn, run_replay, PipelineConfig, PipelineError, SvmKernelName, EXIT_OK,
};

#[derive(Parser)]
#[command(version, about = "Strategy identification from engagement recordings")]
struct Cli {
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Matches per strategy as `assault,flank,fallback`.
        #[arg(long, value_parser = parse_counts)]
        counts: Option<[usize; 3]>,
    },
    /// Learn behavior vectors and rewards for every match of a dataset.
    Learn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Relearn matches whose outputs already exist.
        #[arg(long)]
        force: bool,
        /// Termination threshold relative to the expert expectation norm.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Cluster, embed and classify the learned vectors.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        svm_c: Option<f64>,
        #[arg(long, value_enum)]
        svm_kernel: Option<KernelArg>,
    },
    /// Compare solvers on random rewards under a shared interaction budget.
    BenchRl {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rewards: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Overlay a policy trained on a learned reward with the recorded track.
    Replay {
        #[arg(long = "match")]
        match_file: PathBuf,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_counts(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("`{p}` is not a count")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated counts".to_string())
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum KernelArg {
    Linear,
    Gaussian,
}

fn run(cli: Cli) -> Result<i32, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_toml_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match cli.command {
        Command::Generate { out, counts } => {
            if let Some(c) = counts {
                cfg.generate.set_counts(c);
            }
            let entries = run_generate(&cfg, &out)?;
            println!("wrote {} matches to {}", entries.len(), out.display());
            Ok(EXIT_OK)
        }
        Command::Learn { data, out, force, epsilon } => {
            if let Some(e) = epsilon {
                cfg.kpirl.epsilon = e;
            }
            let report = run_learn(&cfg, &data, &out, force)?;
            println!(
                "{} matches, {} failed",
                report.outcomes.len(),
                report.failed()
            );
            Ok(report.exit_code())
        }
        Command::Analyze { data, out, clusters, svm_c, svm_kernel } => {
            if let Some(k) = clusters {
                cfg.analyze.clusters = k;
            }
            if let Some(c) = svm_c {
                cfg.analyze.svm_c = c;
            }
            if let Some(k) = svm_kernel {
                cfg.analyze.svm_kernel = match k {
                    KernelArg::Linear => SvmKernelName::Linear,
                    KernelArg::Gaussian => SvmKernelName::Gaussian,
                };
            }
            print!("{}", run_analyze(&cfg, &data, &out)?.summary_text());
            Ok(EXIT_OK)
        }
        Command::BenchRl { out, rewards, budget } => {
            if let Some(r) = rewards {
                cfg.bench.rewards = r;
            }
            if let Some(b) = budget {
                cfg.bench.budget = b;
            }
            print!("{}", run_bench_rl(&cfg, &out)?.summary());
            Ok(EXIT_OK)
        }
        Command::Replay { match_file, reward, out } => {
            let r = run_replay(&cfg, &match_file, &reward, &out)?;
            println!(
                "mean displacement {:.1} m ({:.1} m over the first half, arena diagonal {:.1} m)",
                r.mean_displacement(),
                r.first_half_displacement(),
                r.diagonal()
            );
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
