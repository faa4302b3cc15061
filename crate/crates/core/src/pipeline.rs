//! File-based orchestration: dataset generation, per-match learning,
//! analytics, the solver benchmark and policy replay. Every stage draws its
//! randomness from a seed derived from the master seed and the stage name,
//! and every output file is written atomically.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{
    cluster_report, dendrogram_svg, distance_matrix, hac_complete, loo_evaluate, tsne, write_embedding_csv,
    AnalyticsError, ClusterReport, ConfusionMatrix, LabeledItem, LabeledSet, SvmKernel, SvmParams, TsneParams,
};
use crate::gen::{dataset_configs, generate_dataset, generate_match, DatasetConfig};
use crate::kernel::{
    empirical_expectation, norm, read_rkhs, rkhs_to_bytes, ExpectationParams, FeatureVector, KernelError, KernelSpec,
    RkhsFile, VectorRole,
};
use crate::kpirl::{kpirl, KpirlError, KpirlParams, PolicySolver, StopReason};
use crate::mdp::{expert_rollout, rollout, Environment, MdpError, Motion, ReplayMdp};
use crate::rl::{bench_rl, direct_estimate_iteration, BenchConfig, BenchReport, DeiParams, KernelReward, RlError, TreeParams};
use crate::trajectory::{
    read_manifest, read_match_file, write_atomic, ManifestEntry, Match, Side, Strategy, TrajectoryError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Kpirl(#[from] KpirlError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

/// First eight bytes of `SHA-256(stage ‖ ':' ‖ master)`, little endian.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update(b":");
    h.update(master.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub assault: usize,
    pub flank: usize,
    pub fallback: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let [assault, flank, fallback] = DatasetConfig::default().counts;
        Self { assault, flank, fallback }
    }
}

impl GenerateConfig {
    /// In `Strategy::ALL` order.
    pub fn counts(&self) -> [usize; 3] {
        [self.assault, self.flank, self.fallback]
    }

    pub fn set_counts(&mut self, counts: [usize; 3]) {
        [self.assault, self.flank, self.fallback] = counts;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeiConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub steps_per_episode: usize,
    pub window: usize,
    pub discount: f64,
    pub softmax_temperature: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for DeiConfig {
    fn default() -> Self {
        let d = DeiParams::default();
        Self {
            iterations: d.iterations,
            episodes_per_iter: d.episodes_per_iter,
            steps_per_episode: d.steps_per_episode,
            window: d.window,
            discount: d.discount,
            softmax_temperature: d.softmax_temperature,
            max_depth: d.tree.max_depth.unwrap_or(0),
            min_leaf: d.tree.min_leaf,
        }
    }
}

impl DeiConfig {
    /// A `max_depth` of 0 grows unbounded trees.
    pub fn params(&self, seed: u64) -> DeiParams {
        DeiParams {
            iterations: self.iterations,
            episodes_per_iter: self.episodes_per_iter,
            steps_per_episode: self.steps_per_episode,
            window: self.window,
            discount: self.discount,
            softmax_temperature: self.softmax_temperature,
            tree: TreeParams {
                max_depth: (self.max_depth > 0).then_some(self.max_depth),
                min_leaf: self.min_leaf,
            },
            seed,
            ..DeiParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpirlConfig {
    /// Termination threshold as a fraction of `‖μ_E‖`.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// The `T` of the empirical expectation estimator.
    pub expectation_scale: usize,
    pub initial_anchors: usize,
    pub stall_iterations: usize,
    pub stall_tolerance: f64,
}

impl Default for KpirlConfig {
    fn default() -> Self {
        let d = KpirlParams::default();
        Self {
            epsilon: 0.05,
            max_iterations: d.max_iterations,
            expectation_scale: ExpectationParams::default().scale,
            initial_anchors: d.initial_anchors,
            stall_iterations: d.stall_iterations,
            stall_tolerance: d.stall_tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SvmKernelName {
    #[default]
    Linear,
    Gaussian,
}

impl From<SvmKernelName> for SvmKernel {
    fn from(k: SvmKernelName) -> Self {
        match k {
            SvmKernelName::Linear => SvmKernel::Linear,
            SvmKernelName::Gaussian => SvmKernel::GaussianDistance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub clusters: usize,
    pub svm_c: f64,
    pub svm_kernel: SvmKernelName,
    /// Capped at a third of the item count for small sets.
    pub perplexity: f64,
    pub tsne_iterations: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            clusters: 3,
            svm_c: SvmParams::default().c,
            svm_kernel: SvmKernelName::Linear,
            perplexity: TsneParams::default().perplexity,
            tsne_iterations: TsneParams::default().iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub rewards: usize,
    pub budget: usize,
    /// Generated matches the rewards are spread over.
    pub mdps: usize,
    /// Ticks kept from the start of each match.
    pub crop_ticks: usize,
    /// Lattice spacing (m) of the grid-motion MDPs.
    pub grid_step: f64,
    pub eval_episodes: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            rewards: 30,
            budget: 10_000,
            mdps: 3,
            crop_ticks: 12,
            grid_step: 20.0,
            eval_episodes: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub sigma: f64,
    pub generate: GenerateConfig,
    pub dei: DeiConfig,
    pub kpirl: KpirlConfig,
    pub analyze: AnalyzeConfig,
    pub bench: BenchSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            workers: 0,
            sigma: KernelSpec::default().sigma,
            generate: GenerateConfig::default(),
            dei: DeiConfig::default(),
            kpirl: KpirlConfig::default(),
            analyze: AnalyzeConfig::default(),
            bench: BenchSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.kpirl.epsilon > 0.0) {
            return bad(format!("kpirl.epsilon must be positive, got {}", self.kpirl.epsilon));
        }
        if self.kpirl.expectation_scale == 0 {
            return bad("kpirl.expectation_scale must be at least 1".into());
        }
        if self.analyze.clusters == 0 {
            return bad("analyze.clusters must be at least 1".into());
        }
        if !(self.analyze.svm_c > 0.0) || !(self.analyze.perplexity > 0.0) {
            return bad("analyze.svm_c and analyze.perplexity must be positive".into());
        }
        if self.bench.mdps == 0 || self.bench.crop_ticks < 2 || !(self.bench.grid_step > 0.0) {
            return bad("bench needs at least one MDP, two ticks and a positive grid step".into());
        }
        self.dei.params(0).validate().map_err(|e| PipelineError::Config(format!("dei: {e}")))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
    }
}

/// The agent a recording marks as controlled, else its first blue agent.
pub fn controlled_agent(m: &Match) -> Result<String, PipelineError> {
    if let Some(id) = &m.meta.controlled_agent_id {
        return Ok(id.clone());
    }
    m.ticks
        .first()
        .and_then(|t| t.agents.iter().find(|a| a.side == Side::Blue))
        .map(|a| a.agent_id.clone())
        .ok_or_else(|| PipelineError::Input(format!("match `{}` has no blue agent", m.meta.match_id)))
}

fn replay_mdp(m: impl Into<Arc<Match>>, sigma: f64) -> Result<ReplayMdp, PipelineError> {
    let m: Arc<Match> = m.into();
    let id = controlled_agent(&m)?;
    Ok(ReplayMdp::new(m, &id)?.with_sigma(sigma))
}

// ---------------------------------------------------------------- generate

pub fn run_generate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<ManifestEntry>, PipelineError> {
    cfg.validate()?;
    let dataset = DatasetConfig {
        counts: cfg.generate.counts(),
        seed: stage_seed(cfg.seed, "generate"),
        ..DatasetConfig::default()
    };
    let pool = cfg.pool()?;
    Ok(pool.install(|| generate_dataset(out, &dataset))?)
}

// ---------------------------------------------------------------- learn

pub const TRACE_DIR: &str = "trace";

/// `<out>/<role>/<match_id>.rkhs`.
pub fn rkhs_path(out: &Path, role: VectorRole, match_id: &str) -> PathBuf {
    out.join(role.to_string()).join(format!("{match_id}.rkhs"))
}

pub fn trace_path(out: &Path, match_id: &str) -> PathBuf {
    out.join(TRACE_DIR).join(format!("{match_id}.csv"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnStatus {
    Learned {
        iterations: usize,
        stop: StopReason,
        /// Final `‖μ_E − μ̄‖ / ‖μ_E‖`.
        relative_residual: f64,
    },
    /// All outputs were already present.
    Skipped,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutcome {
    pub match_id: String,
    pub status: LearnStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnReport {
    pub outcomes: Vec<LearnOutcome>,
}

impl LearnReport {
    pub fn failed(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o.status, LearnStatus::Failed(_)))
            .count()
    }

    pub fn exit_code(&self) -> i32 {
        if self.failed() > 0 {
            EXIT_PARTIAL
        } else {
            EXIT_OK
        }
    }
}

/// Behavior vector, learned reward and trace for one recording.
pub struct Learned {
    pub behavior: RkhsFile,
    pub reward: RkhsFile,
    pub trace_csv: Vec<u8>,
    pub iterations: usize,
    pub stop: StopReason,
    pub relative_residual: f64,
}

/// `μ_E` of the controlled agent's recorded track, then KPIRL with every
/// round's policy rolled out from the recorded start for as many steps as
/// the expert lived.
pub fn learn_match(cfg: &PipelineConfig, m: Match) -> Result<Learned, PipelineError> {
    let seed = stage_seed(cfg.seed, &format!("learn/{}", m.meta.match_id));
    let mdp = replay_mdp(m, cfg.sigma)?;
    let spec = mdp.kernel_spec();
    let expert = expert_rollout(&mdp);
    let features: Vec<FeatureVector> = expert.states.iter().map(|s| mdp.features(s)).collect();
    let mu_e = empirical_expectation(std::slice::from_ref(&features), cfg.kpirl.expectation_scale)?;
    let scale = norm(&mu_e, &spec)?;
    let params = KpirlParams {
        epsilon: cfg.kpirl.epsilon * scale,
        max_iterations: cfg.kpirl.max_iterations,
        solver: PolicySolver::Direct(cfg.dei.params(seed)),
        expectation: ExpectationParams {
            episodes: 1,
            horizon: features.len().max(2) - 1,
            scale: cfg.kpirl.expectation_scale,
            from_initial: true,
            seed,
        },
        initial_anchors: cfg.kpirl.initial_anchors,
        stall_iterations: cfg.kpirl.stall_iterations,
        stall_tolerance: cfg.kpirl.stall_tolerance,
        seed,
    };
    let out = kpirl(&mdp, &mu_e, &spec, &params)?;
    let mut trace_csv = Vec::new();
    out.trace.write_csv(&mut trace_csv)?;
    Ok(Learned {
        behavior: RkhsFile {
            role: VectorRole::Behavior,
            spec,
            vector: mu_e,
        },
        reward: RkhsFile {
            role: VectorRole::Reward,
            spec,
            vector: out.selected,
        },
        trace_csv,
        iterations: out.trace.records.len(),
        stop: out.trace.stop,
        relative_residual: out.trace.final_residual() / scale.max(f64::MIN_POSITIVE),
    })
}

fn learn_entry(cfg: &PipelineConfig, data: &Path, out: &Path, entry: &ManifestEntry, force: bool) -> LearnStatus {
    let id = &entry.match_id;
    let targets = [
        rkhs_path(out, VectorRole::Behavior, id),
        rkhs_path(out, VectorRole::Reward, id),
        trace_path(out, id),
    ];
    if !force && targets.iter().all(|p| p.exists()) {
        return LearnStatus::Skipped;
    }
    let result = (|| -> Result<LearnStatus, PipelineError> {
        let m = read_match_file(&data.join(&entry.file))?;
        let l = learn_match(cfg, m)?;
        // the reward goes last so its presence marks a finished match
        write_atomic(&targets[2], &l.trace_csv)?;
        write_atomic(&targets[0], &rkhs_to_bytes(&l.behavior))?;
        write_atomic(&targets[1], &rkhs_to_bytes(&l.reward))?;
        Ok(LearnStatus::Learned {
            iterations: l.iterations,
            stop: l.stop,
            relative_residual: l.relative_residual,
        })
    })();
    match result {
        Ok(s) => {
            log::info!("learned {id}: {s:?}");
            s
        }
        Err(e) => {
            log::error!("learning {id} failed: {e}");
            LearnStatus::Failed(e.to_string())
        }
    }
}

/// Learns every match in the manifest, skipping those with complete outputs
/// unless `force`. Per-match failures are reported, not raised.
pub fn run_learn(cfg: &PipelineConfig, data: &Path, out: &Path, force: bool) -> Result<LearnReport, PipelineError> {
    cfg.validate()?;
    let entries = read_manifest(data)?;
    for dir in [VectorRole::Behavior.to_string(), VectorRole::Reward.to_string(), TRACE_DIR.into()] {
        fs::create_dir_all(out.join(dir))?;
    }
    let pool = cfg.pool()?;
    let outcomes = pool.install(|| {
        entries
            .par_iter()
            .map(|e| LearnOutcome {
                match_id: e.match_id.clone(),
                status: learn_entry(cfg, data, out, e, force),
            })
            .collect()
    });
    Ok(LearnReport { outcomes })
}

// ---------------------------------------------------------------- analyze

pub const ANALYSIS_DIR: &str = "analysis";
const MIN_ANALYZE_ITEMS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RoleAnalysis {
    pub role: VectorRole,
    pub items: usize,
    pub loo_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub clusters: ClusterReport,
    /// Share of fallback matches in the cluster holding most of them.
    pub fallback_concentration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub roles: Vec<RoleAnalysis>,
}

impl AnalysisReport {
    pub fn role(&self, role: VectorRole) -> Option<&RoleAnalysis> {
        self.roles.iter().find(|r| r.role == role)
    }

    /// `role,items,loo_accuracy,fallback_concentration`.
    pub fn summary_csv(&self) -> Result<Vec<u8>, PipelineError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["role", "items", "loo_accuracy", "fallback_concentration"])?;
        for r in &self.roles {
            w.write_record([
                r.role.to_string(),
                r.items.to_string(),
                format!("{:.6}", r.loo_accuracy),
                format!("{:.6}", r.fallback_concentration),
            ])?;
        }
        w.into_inner().map_err(|e| PipelineError::Io(e.into_error()))
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        for r in &self.roles {
            let _ = writeln!(
                s,
                "{}: {} matches, leave-one-out accuracy {:.3}, fallback concentration {:.3}",
                r.role, r.items, r.loo_accuracy, r.fallback_concentration
            );
        }
        if let (Some(b), Some(r)) = (self.role(VectorRole::Behavior), self.role(VectorRole::Reward)) {
            let _ = writeln!(
                s,
                "reward minus behavior: accuracy {:+.3}, fallback concentration {:+.3}",
                r.loo_accuracy - b.loo_accuracy,
                r.fallback_concentration - b.fallback_concentration
            );
        }
        s
    }
}

fn load_set(data: &Path, out: &Path, role: VectorRole) -> Result<LabeledSet, PipelineError> {
    let mut items = Vec::new();
    for e in read_manifest(data)? {
        let Some(label) = e.strategy() else {
            log::warn!("{} has no label; left out of the {role} analysis", e.match_id);
            continue;
        };
        let path = rkhs_path(out, role, &e.match_id);
        if !path.exists() {
            log::warn!("{} is missing; left out of the {role} analysis", path.display());
            continue;
        }
        let file = read_rkhs(io::BufReader::new(fs::File::open(&path)?))?;
        if file.role != role {
            return Err(PipelineError::Input(format!("{} holds a {} vector", path.display(), file.role)));
        }
        items.push(LabeledItem {
            match_id: e.match_id,
            label,
            vector: file.vector,
            spec: file.spec,
        });
    }
    if items.len() < MIN_ANALYZE_ITEMS {
        return Err(PipelineError::Input(format!(
            "{role} analysis needs at least {MIN_ANALYZE_ITEMS} labeled vectors, found {}",
            items.len()
        )));
    }
    Ok(LabeledSet::new(role, items)?)
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), AnalyticsError>) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn analyze_role(cfg: &PipelineConfig, set: &LabeledSet, dir: &Path) -> Result<RoleAnalysis, PipelineError> {
    fs::create_dir_all(dir)?;
    let ids = set.ids();
    let labels = set.labels();
    let d = distance_matrix(set)?;
    write_atomic(&dir.join("distances.csv"), &to_bytes(|b| d.write_csv(&ids, b))?)?;

    let n = set.len() as f64;
    let embedding = tsne(
        &d,
        &TsneParams {
            perplexity: cfg.analyze.perplexity.min((n - 1.0) / 3.0),
            iterations: cfg.analyze.tsne_iterations,
            seed: stage_seed(cfg.seed, &format!("analyze/{}", set.role)),
            ..TsneParams::default()
        },
    )?;
    write_atomic(&dir.join("tsne.csv"), &to_bytes(|b| write_embedding_csv(set, &embedding.coords, b))?)?;

    let k = cfg.analyze.clusters.min(set.len());
    let dendrogram = hac_complete(&d, k)?;
    write_atomic(&dir.join("dendrogram.csv"), &to_bytes(|b| dendrogram.write_csv(b))?)?;
    write_atomic(&dir.join("dendrogram.svg"), dendrogram_svg(&dendrogram, &ids, &labels).as_bytes())?;
    let clusters = cluster_report(&dendrogram.assignment, &labels);
    write_atomic(&dir.join("clusters.txt"), clusters.to_text().as_bytes())?;

    let loo = loo_evaluate(
        set,
        &SvmParams {
            c: cfg.analyze.svm_c,
            kernel: cfg.analyze.svm_kernel.into(),
            ..SvmParams::default()
        },
    )?;
    write_atomic(&dir.join("confusion.csv"), &to_bytes(|b| loo.confusion.write_csv(b))?)?;
    let mut accuracy = format!("loo_accuracy={:.6}\n", loo.accuracy);
    for (id, (t, p)) in ids.iter().zip(labels.iter().zip(&loo.predictions)) {
        let _ = writeln!(accuracy, "{id}\t{t}\t{p}");
    }
    write_atomic(&dir.join("accuracy.txt"), accuracy.as_bytes())?;

    let fallback_concentration = if clusters.label_totals[Strategy::Fallback.index()] > 0 {
        clusters.most_concentrated(Strategy::Fallback).1
    } else {
        0.0
    };
    Ok(RoleAnalysis {
        role: set.role,
        items: set.len(),
        loo_accuracy: loo.accuracy,
        confusion: loo.confusion,
        clusters,
        fallback_concentration,
    })
}

/// Runs the analytics on the behavior and reward vectors side by side.
pub fn run_analyze(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<AnalysisReport, PipelineError> {
    cfg.validate()?;
    let base = out.join(ANALYSIS_DIR);
    let pool = cfg.pool()?;
    let roles = pool.install(|| {
        [VectorRole::Behavior, VectorRole::Reward]
            .into_iter()
            .map(|role| {
                let set = load_set(data, out, role)?;
                analyze_role(cfg, &set, &base.join(role.to_string()))
            })
            .collect::<Result<Vec<_>, PipelineError>>()
    })?;
    let report = AnalysisReport { roles };
    write_atomic(&base.join("summary.csv"), &report.summary_csv()?)?;
    write_atomic(&base.join("summary.txt"), report.summary_text().as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------- bench-rl

/// Grid-motion replay MDPs over the opening ticks of freshly generated
/// matches, small enough for value iteration.
pub fn bench_mdps(cfg: &PipelineConfig) -> Result<Vec<ReplayMdp>, PipelineError> {
    let per = cfg.bench.mdps.div_ceil(3);
    let configs = dataset_configs(&DatasetConfig {
        counts: [per; 3],
        seed: stage_seed(cfg.seed, "bench/generate"),
        ..DatasetConfig::default()
    });
    // interleave strategies so any prefix mixes them
    let mut order: Vec<usize> = (0..configs.len()).collect();
    order.sort_by_key(|&i| (i % per, i / per));
    order
        .into_iter()
        .take(cfg.bench.mdps)
        .map(|i| {
            let mut m = generate_match(&configs[i]).map_err(PipelineError::Input)?;
            m.ticks.truncate(cfg.bench.crop_ticks);
            Ok(replay_mdp(m, cfg.sigma)?
                .with_motion(Motion::Grid)
                .with_step_length(cfg.bench.grid_step)?)
        })
        .collect()
}

pub fn run_bench_rl(cfg: &PipelineConfig, out: &Path) -> Result<BenchReport, PipelineError> {
    cfg.validate()?;
    let mdps = bench_mdps(cfg)?;
    let spec = mdps[0].kernel_spec();
    let config = BenchConfig {
        rewards: cfg.bench.rewards,
        budget: cfg.bench.budget,
        eval_episodes: cfg.bench.eval_episodes,
        dei: cfg.dei.params(0),
        seed: stage_seed(cfg.seed, "bench"),
        ..BenchConfig::default()
    };
    let pool = cfg.pool()?;
    let report = pool.install(|| bench_rl(&mdps, spec, &config))?;
    fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_atomic(&out.join("bench.csv"), &csv)?;
    let mut summary = report.summary();
    let _ = write!(
        summary,
        "mdps={}\ncrop_ticks={}\ngrid_step={}\neval_episodes={}\n",
        mdps.len(),
        cfg.bench.crop_ticks,
        cfg.bench.grid_step,
        cfg.bench.eval_episodes
    );
    write_atomic(&out.join("bench_summary.txt"), summary.as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------- replay

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayRow {
    pub time: f64,
    pub expert: (f64, f64),
    pub policy: (f64, f64),
}

impl OverlayRow {
    pub fn displacement(&self) -> f64 {
        (self.expert.0 - self.policy.0).hypot(self.expert.1 - self.policy.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub match_id: String,
    pub rows: Vec<OverlayRow>,
    pub arena: (f64, f64),
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl ReplayReport {
    pub fn mean_displacement(&self) -> f64 {
        mean(self.rows.iter().map(OverlayRow::displacement))
    }

    /// Mean over the first half of the rows, rounded up.
    pub fn first_half_displacement(&self) -> f64 {
        mean(self.rows[..self.rows.len().div_ceil(2)].iter().map(OverlayRow::displacement))
    }

    pub fn diagonal(&self) -> f64 {
        self.arena.0.hypot(self.arena.1)
    }

    pub fn overlay_csv(&self) -> Result<Vec<u8>, PipelineError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["time", "expert_x", "expert_y", "policy_x", "policy_y"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.3}", r.time),
                format!("{:.6}", r.expert.0),
                format!("{:.6}", r.expert.1),
                format!("{:.6}", r.policy.0),
                format!("{:.6}", r.policy.1),
            ])?;
        }
        w.into_inner().map_err(|e| PipelineError::Io(e.into_error()))
    }

    /// Both tracks over the arena, fading in with time.
    pub fn overlay_svg(&self) -> String {
        const SIZE: f64 = 600.0;
        let scale = SIZE / self.arena.0.max(self.arena.1);
        let (w, h) = (self.arena.0 * scale, self.arena.1 * scale);
        let p = |(x, y): (f64, f64)| (x * scale, h - y * scale);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.1} {h:.1}\">\n\
             <rect width=\"{w:.1}\" height=\"{h:.1}\" fill=\"white\" stroke=\"black\"/>\n"
        );
        let n = self.rows.len().max(2) - 1;
        for (track, colour) in [(0, "#1f77b4"), (1, "#d62728")] {
            let pick = |r: &OverlayRow| if track == 0 { r.expert } else { r.policy };
            for (i, pair) in self.rows.windows(2).enumerate() {
                let (a, b) = (p(pick(&pair[0])), p(pick(&pair[1])));
                let _ = writeln!(
                    s,
                    "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{colour}\" stroke-width=\"2\" stroke-opacity=\"{:.2}\"/>",
                    a.0,
                    a.1,
                    b.0,
                    b.1,
                    0.2 + 0.8 * i as f64 / n as f64
                );
            }
            if let Some(first) = self.rows.first() {
                let (x, y) = p(pick(first));
                let _ = writeln!(s, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"4\" fill=\"{colour}\"/>");
            }
        }
        s.push_str("<text x=\"8\" y=\"16\" font-size=\"12\" fill=\"#1f77b4\">expert</text>\n");
        s.push_str("<text x=\"8\" y=\"30\" font-size=\"12\" fill=\"#d62728\">policy</text>\n");
        s.push_str("</svg>\n");
        s
    }
}

/// Trains a policy on the recording's replay MDP under `reward` and rolls
/// it out from the expert's start for as many steps as the expert lived.
pub fn replay_policy(cfg: &PipelineConfig, m: Match, reward: &RkhsFile) -> Result<ReplayReport, PipelineError> {
    let match_id = m.meta.match_id.clone();
    let arena = (m.meta.arena_width, m.meta.arena_height);
    let times: Vec<f64> = m.ticks.iter().map(|t| t.time).collect();
    let mdp = replay_mdp(m, cfg.sigma)?;
    let spec = mdp.kernel_spec();
    spec.ensure_same(&reward.spec)?;
    let seed = stage_seed(cfg.seed, &format!("replay/{match_id}"));
    let kr = KernelReward::new(&reward.vector, spec);
    let policy = direct_estimate_iteration(&mdp, &kr, &cfg.dei.params(seed))?.policy;
    let expert = expert_rollout(&mdp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s0 = mdp.initial_state();
    let a0 = policy.act(&mdp, &s0, &mut rng);
    let run = rollout(&mdp, &policy, s0, a0, expert.states.len().max(2) - 1, &mut rng);
    let rows = expert
        .states
        .iter()
        .zip(&run.states)
        .map(|(e, p)| OverlayRow {
            time: times[e.tick_index],
            expert: (e.controlled_x, e.controlled_y),
            policy: (p.controlled_x, p.controlled_y),
        })
        .collect();
    Ok(ReplayReport { match_id, rows, arena })
}

/// Writes `<match_id>_overlay.csv` and `<match_id>_overlay.svg` into `out`.
pub fn run_replay(
    cfg: &PipelineConfig,
    match_path: &Path,
    reward_path: &Path,
    out: &Path,
) -> Result<ReplayReport, PipelineError> {
    cfg.validate()?;
    let m = read_match_file(match_path)?;
    let reward = read_rkhs(io::BufReader::new(fs::File::open(reward_path)?))?;
    if reward.role != VectorRole::Reward {
        return Err(PipelineError::Input(format!("{} holds a {} vector", reward_path.display(), reward.role)));
    }
    let report = cfg.pool()?.install(|| replay_policy(cfg, m, &reward))?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join(format!("{}_overlay.csv", report.match_id)), &report.overlay_csv()?)?;
    write_atomic(&out.join(format!("{}_overlay.svg", report.match_id)), report.overlay_svg().as_bytes())?;
    Ok(report)
}
