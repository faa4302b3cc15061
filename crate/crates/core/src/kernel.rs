//! Six-feature state descriptor, Gaussian kernel and the algebra of finite
//! kernel expansions `Σ wᵢ·k(aᵢ, ·)`.
//!
//! Expansions are stored over feature vectors rather than whole states since
//! the kernel only ever looks at features.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::mdp::{rollout, Environment, MdpState};
use crate::rl::Policy;
use crate::trajectory::{AgentRecord, Side, DEFAULT_ARENA};

pub const FEATURE_COUNT: usize = 6;
pub const DEFAULT_SIGMA: f64 = 0.25;
pub const DEFAULT_EXPECTATION_HORIZON: usize = 20;

/// Slack allowed on `⟨v, v⟩` before a negative value is treated as a
/// non-PSD symptom rather than round-off.
const NORM_TOLERANCE: f64 = 1e-9;
const MERGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("arena dimensions must be positive, got {0}x{1}")]
    Arena(f64, f64),
    #[error("anchor/weight length mismatch: {0} anchors, {1} weights")]
    Length(usize, usize),
    #[error("squared norm {0} is negative beyond tolerance")]
    NotPsd(f64),
    #[error("empirical expectation needs at least one non-empty episode")]
    NoEpisodes,
    #[error("horizon must be at least 1")]
    Horizon,
    #[error("kernel specs differ: {0} vs {1}")]
    SpecMismatch(KernelSpec, KernelSpec),
    #[error("rkhs file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Feature vector in `[0,1]⁶`: min/max distance to living red, min/max
/// distance to living blue, min/max affinely mapped cosine between the
/// directions to a living red and a living blue agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn min_dist_red(&self) -> f64 {
        self.0[0]
    }
    pub fn max_dist_red(&self) -> f64 {
        self.0[1]
    }
    pub fn min_dist_blue(&self) -> f64 {
        self.0[2]
    }
    pub fn max_dist_blue(&self) -> f64 {
        self.0[3]
    }
    pub fn min_cos_rb(&self) -> f64 {
        self.0[4]
    }
    pub fn max_cos_rb(&self) -> f64 {
        self.0[5]
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Components rounded to a `1/scale` grid, used as a hashable identity.
    pub fn quantized(&self, scale: f64) -> [i64; FEATURE_COUNT] {
        self.0.map(|v| (v * scale).round() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub sigma: f64,
    pub arena_width: f64,
    pub arena_height: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            arena_width: DEFAULT_ARENA,
            arena_height: DEFAULT_ARENA,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sigma={} arena={}x{}",
            self.sigma, self.arena_width, self.arena_height
        )
    }
}

impl KernelSpec {
    pub fn new(sigma: f64, arena_width: f64, arena_height: f64) -> Result<Self, KernelError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(KernelError::Bandwidth(sigma));
        }
        if !(arena_width > 0.0 && arena_height > 0.0) {
            return Err(KernelError::Arena(arena_width, arena_height));
        }
        Ok(Self {
            sigma,
            arena_width,
            arena_height,
        })
    }

    pub fn diagonal(&self) -> f64 {
        self.arena_width.hypot(self.arena_height)
    }

    pub fn eval(&self, a: &FeatureVector, b: &FeatureVector) -> f64 {
        (-a.squared_distance(b) / (2.0 * self.sigma * self.sigma)).exp()
    }

    pub fn ensure_same(&self, other: &KernelSpec) -> Result<(), KernelError> {
        if self == other {
            Ok(())
        } else {
            Err(KernelError::SpecMismatch(*self, *other))
        }
    }
}

/// Features of an agent standing at `(x, y)` among `others`. Only living
/// agents count.
pub fn featurize_position(x: f64, y: f64, others: &[AgentRecord], spec: &KernelSpec) -> FeatureVector {
    let diag = spec.diagonal();
    let scaled = |d: f64| (d / diag).clamp(0.0, 1.0);
    let living = |side: Side| {
        others
            .iter()
            .filter(move |a| a.side == side && a.is_alive())
            .map(|a| (a.x - x, a.y - y))
    };
    let span = |side: Side| {
        living(side)
            .map(|(dx, dy)| dx.hypot(dy))
            .fold(None, |acc: Option<(f64, f64)>, d| {
                Some(match acc {
                    None => (d, d),
                    Some((lo, hi)) => (lo.min(d), hi.max(d)),
                })
            })
            .map_or((1.0, 1.0), |(lo, hi)| (scaled(lo), scaled(hi)))
    };
    let (min_red, max_red) = span(Side::Red);
    let (min_blue, max_blue) = span(Side::Blue);

    let mut cos_range: Option<(f64, f64)> = None;
    for (rx, ry) in living(Side::Red) {
        let rn = rx.hypot(ry);
        if rn == 0.0 {
            continue;
        }
        for (bx, by) in living(Side::Blue) {
            let bn = bx.hypot(by);
            if bn == 0.0 {
                continue;
            }
            let c = ((rx * bx + ry * by) / (rn * bn)).clamp(-1.0, 1.0);
            cos_range = Some(match cos_range {
                None => (c, c),
                Some((lo, hi)) => (lo.min(c), hi.max(c)),
            });
        }
    }
    let (min_cos, max_cos) = cos_range.map_or((0.5, 0.5), |(lo, hi)| ((lo + 1.0) / 2.0, (hi + 1.0) / 2.0));
    FeatureVector([min_red, max_red, min_blue, max_blue, min_cos, max_cos])
}

pub fn featurize(s: &MdpState, spec: &KernelSpec) -> FeatureVector {
    featurize_position(s.controlled_x, s.controlled_y, &s.others, spec)
}

pub fn kernel(s: &MdpState, t: &MdpState, spec: &KernelSpec) -> f64 {
    spec.eval(&featurize(s, spec), &featurize(t, spec))
}

/// Finite expansion `Σ wᵢ·k(aᵢ, ·)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RkhsVector {
    anchors: Vec<FeatureVector>,
    weights: Vec<f64>,
}

impl RkhsVector {
    pub fn new(anchors: Vec<FeatureVector>, weights: Vec<f64>) -> Result<Self, KernelError> {
        if anchors.len() != weights.len() {
            return Err(KernelError::Length(anchors.len(), weights.len()));
        }
        Ok(Self { anchors, weights })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// The kernel section `k(φ, ·)`.
    pub fn unit(anchor: FeatureVector) -> Self {
        Self {
            anchors: vec![anchor],
            weights: vec![1.0],
        }
    }

    pub fn anchors(&self) -> &[FeatureVector] {
        &self.anchors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn push(&mut self, anchor: FeatureVector, weight: f64) {
        self.anchors.push(anchor);
        self.weights.push(weight);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureVector, f64)> {
        self.anchors.iter().zip(self.weights.iter().copied())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            anchors: self.anchors.clone(),
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }

    /// `a·self + b·other`, compacted.
    pub fn combine(&self, a: f64, other: &RkhsVector, b: f64) -> Self {
        let mut out = self.scaled(a);
        for (anchor, w) in other.iter() {
            out.push(*anchor, b * w);
        }
        out.compact()
    }

    pub fn add(&self, other: &RkhsVector) -> Self {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &RkhsVector) -> Self {
        self.combine(1.0, other, -1.0)
    }

    /// Merges anchors whose features coincide within 1e-12 and drops zero
    /// weights. First-occurrence order is kept so results are reproducible.
    pub fn compact(self) -> Self {
        let mut index: HashMap<[i64; FEATURE_COUNT], usize> = HashMap::with_capacity(self.len());
        let mut out = RkhsVector::zero();
        for (anchor, w) in self.anchors.into_iter().zip(self.weights) {
            let key = anchor.quantized(1.0 / MERGE_TOLERANCE);
            match index.get(&key) {
                Some(&i) => out.weights[i] += w,
                None => {
                    index.insert(key, out.len());
                    out.push(anchor, w);
                }
            }
        }
        let keep: Vec<bool> = out.weights.iter().map(|w| *w != 0.0).collect();
        if keep.iter().all(|k| *k) {
            return out;
        }
        let mut it = keep.iter();
        out.anchors.retain(|_| *it.next().unwrap());
        out.weights.retain(|w| *w != 0.0);
        out
    }

    pub fn l1_weight(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

pub fn dot(u: &RkhsVector, v: &RkhsVector, spec: &KernelSpec) -> f64 {
    let mut total = 0.0;
    for (a, wu) in u.iter() {
        let mut row = 0.0;
        for (b, wv) in v.iter() {
            row += wv * spec.eval(a, b);
        }
        total += wu * row;
    }
    total
}

pub fn norm(v: &RkhsVector, spec: &KernelSpec) -> Result<f64, KernelError> {
    let sq = dot(v, v, spec);
    let tol = NORM_TOLERANCE * v.l1_weight().max(1.0).powi(2);
    if sq < -tol {
        return Err(KernelError::NotPsd(sq));
    }
    Ok(sq.max(0.0).sqrt())
}

/// RKHS distance `‖u − v‖`.
pub fn distance(u: &RkhsVector, v: &RkhsVector, spec: &KernelSpec) -> Result<f64, KernelError> {
    norm(&u.sub(v), spec)
}

/// `⟨v, k(φ, ·)⟩`.
pub fn evaluate(v: &RkhsVector, phi: &FeatureVector, spec: &KernelSpec) -> f64 {
    v.iter().map(|(a, w)| w * spec.eval(a, phi)).sum()
}

pub fn evaluate_state(v: &RkhsVector, s: &MdpState, spec: &KernelSpec) -> f64 {
    evaluate(v, &featurize(s, spec), spec)
}

/// `(T / N) Σ_ω Σ_s k(s, ·)` with `N` the total state count over all
/// episodes. Longer episodes carry proportionally more mass.
pub fn empirical_expectation(
    episodes: &[Vec<FeatureVector>],
    horizon: usize,
) -> Result<RkhsVector, KernelError> {
    if horizon == 0 {
        return Err(KernelError::Horizon);
    }
    let total: usize = episodes.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(KernelError::NoEpisodes);
    }
    let w = horizon as f64 / total as f64;
    let mut out = RkhsVector::zero();
    for phi in episodes.iter().flatten() {
        out.push(*phi, w);
    }
    Ok(out.compact())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectationParams {
    pub episodes: usize,
    /// Steps per rollout.
    pub horizon: usize,
    /// The `T` scale factor of the empirical estimator.
    pub scale: usize,
    /// Start every rollout from the environment's initial state instead of
    /// sampling exploring starts.
    pub from_initial: bool,
    pub seed: u64,
}

impl Default for ExpectationParams {
    fn default() -> Self {
        Self {
            episodes: 10,
            horizon: DEFAULT_EXPECTATION_HORIZON,
            scale: DEFAULT_EXPECTATION_HORIZON,
            from_initial: false,
            seed: 0,
        }
    }
}

/// Kernel expectation of `policy`: rollouts from sampled starts fed through
/// [`empirical_expectation`].
pub fn policy_expectation<E: Environment>(
    env: &E,
    policy: &Policy,
    params: &ExpectationParams,
) -> Result<RkhsVector, KernelError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed);
    let episodes: Vec<Vec<FeatureVector>> = (0..params.episodes.max(1))
        .map(|_| {
            let s0 = if params.from_initial {
                env.initial_state()
            } else {
                env.sample_start(&mut rng)
            };
            let a0 = policy.act(env, &s0, &mut rng);
            let r = rollout(env, policy, s0, a0, params.horizon.max(1), &mut rng);
            r.states.iter().map(|s| env.features(s)).collect()
        })
        .collect();
    empirical_expectation(&episodes, params.scale)
}

/// Gram matrix of kernel values between feature vectors.
pub fn state_gram(features: &[FeatureVector], spec: &KernelSpec) -> DMatrix<f64> {
    let n = features.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        g[(i, i)] = spec.eval(&features[i], &features[i]);
        for j in 0..i {
            let v = spec.eval(&features[i], &features[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Gram matrix of RKHS inner products between expansions.
pub fn vector_gram(vectors: &[RkhsVector], spec: &KernelSpec) -> DMatrix<f64> {
    let n = vectors.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = dot(&vectors[i], &vectors[j], spec);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Random expansion with uniform weights in `[-1, 1]` over `anchors`.
pub fn random_expansion<R: Rng + ?Sized>(anchors: &[FeatureVector], rng: &mut R) -> RkhsVector {
    let weights = anchors.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
    RkhsVector {
        anchors: anchors.to_vec(),
        weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorRole {
    Behavior,
    Reward,
    Expectation,
}

impl fmt::Display for VectorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VectorRole::Behavior => "behavior",
            VectorRole::Reward => "reward",
            VectorRole::Expectation => "expectation",
        })
    }
}

impl FromStr for VectorRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "behavior" => Ok(VectorRole::Behavior),
            "reward" => Ok(VectorRole::Reward),
            "expectation" => Ok(VectorRole::Expectation),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RkhsFile {
    pub role: VectorRole,
    pub spec: KernelSpec,
    pub vector: RkhsVector,
}

/// Header line `#rkhs role=… sigma=… arena_width=… arena_height=… anchors=N`
/// followed by N rows `weight f1 … f6`, all tab separated.
pub fn write_rkhs<W: Write>(file: &RkhsFile, mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "#rkhs\trole={}\tsigma={}\tarena_width={}\tarena_height={}\tanchors={}",
        file.role,
        file.spec.sigma,
        file.spec.arena_width,
        file.spec.arena_height,
        file.vector.len()
    )?;
    for (a, w) in file.vector.iter() {
        write!(out, "{w}")?;
        for v in a.0 {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn rkhs_to_bytes(file: &RkhsFile) -> Vec<u8> {
    let mut buf = Vec::new();
    write_rkhs(file, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_rkhs<R: BufRead>(source: R) -> Result<RkhsFile, KernelError> {
    let bad = |line: usize, message: String| KernelError::Format { line, message };
    let mut lines = source.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty input".into()))??;
    let mut fields = header.split('\t');
    if fields.next() != Some("#rkhs") {
        return Err(bad(1, "expected `#rkhs` header".into()));
    }
    let mut get = |key: &str| -> Result<String, KernelError> {
        let f = fields.next().ok_or_else(|| bad(1, format!("missing `{key}`")))?;
        match f.split_once('=') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(bad(1, format!("expected `{key}=`, found `{f}`"))),
        }
    };
    let role: VectorRole = get("role")?.parse().map_err(|m| bad(1, m))?;
    let num = |s: String, line: usize| -> Result<f64, KernelError> {
        s.parse::<f64>().map_err(|_| bad(line, format!("`{s}` is not a number")))
    };
    let sigma = num(get("sigma")?, 1)?;
    let width = num(get("arena_width")?, 1)?;
    let height = num(get("arena_height")?, 1)?;
    let count: usize = get("anchors")?
        .parse()
        .map_err(|_| bad(1, "anchors is not a count".into()))?;
    let spec = KernelSpec::new(sigma, width, height)?;
    let mut vector = RkhsVector::zero();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split('\t').collect();
        if vals.len() != FEATURE_COUNT + 1 {
            return Err(bad(i + 2, format!("expected 7 fields, found {}", vals.len())));
        }
        let w = num(vals[0].to_string(), i + 2)?;
        let mut phi = [0.0; FEATURE_COUNT];
        for (k, v) in vals[1..].iter().enumerate() {
            phi[k] = num(v.to_string(), i + 2)?;
        }
        vector.push(FeatureVector(phi), w);
    }
    if vector.len() != count {
        return Err(bad(1, format!("header declares {count} anchors, found {}", vector.len())));
    }
    Ok(RkhsFile { role, spec, vector })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn rec(side: Side, x: f64, y: f64, health: f64) -> AgentRecord {
        AgentRecord {
            agent_id: format!("{side}{x}{y}"),
            side,
            x,
            y,
            health,
        }
    }

    fn state(x: f64, y: f64, others: Vec<AgentRecord>) -> MdpState {
        MdpState {
            tick_index: 0,
            controlled_x: x,
            controlled_y: y,
            controlled_health: 1.0,
            others: Arc::from(others),
        }
    }

    fn fv(v: [f64; 6]) -> FeatureVector {
        FeatureVector(v)
    }

    #[test]
    fn distance_features_hand_geometry() {
        let spec = KernelSpec::default();
        let s = state(0.0, 0.0, vec![rec(Side::Red, 3.0, 4.0, 1.0)]);
        let f = featurize(&s, &spec);
        let expected = 5.0 / (340.0 * 2f64.sqrt());
        assert!((f.min_dist_red() - expected).abs() < 1e-12);
        assert!((f.max_dist_red() - expected).abs() < 1e-12);
        assert!((expected - 0.0104).abs() < 1e-4);
        // no blue: distance 1, cosine 0.5
        assert_eq!(f.min_dist_blue(), 1.0);
        assert_eq!(f.min_cos_rb(), 0.5);
    }

    #[test]
    fn cosine_features_hand_dot_product() {
        let spec = KernelSpec::default();
        let s = state(
            0.0,
            0.0,
            vec![rec(Side::Red, 3.0, 4.0, 1.0), rec(Side::Blue, 0.0, 10.0, 1.0)],
        );
        let f = featurize(&s, &spec);
        assert!((f.min_cos_rb() - 0.9).abs() < 1e-12);
        assert!((f.max_cos_rb() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn dead_red_defaults() {
        let spec = KernelSpec::default();
        let s = state(
            50.0,
            50.0,
            vec![rec(Side::Red, 3.0, 4.0, 0.0), rec(Side::Blue, 0.0, 10.0, 1.0)],
        );
        let f = featurize(&s, &spec);
        assert_eq!(f.min_dist_red(), 1.0);
        assert_eq!(f.max_dist_red(), 1.0);
        assert_eq!(f.min_cos_rb(), 0.5);
        assert_eq!(f.max_cos_rb(), 0.5);
    }

    #[test]
    fn colocated_agent_excluded_from_cosines() {
        let spec = KernelSpec::default();
        let s = state(
            10.0,
            10.0,
            vec![rec(Side::Red, 10.0, 10.0, 1.0), rec(Side::Blue, 0.0, 10.0, 1.0)],
        );
        let f = featurize(&s, &spec);
        assert_eq!(f.min_dist_red(), 0.0);
        assert_eq!((f.min_cos_rb(), f.max_cos_rb()), (0.5, 0.5));
    }

    #[test]
    fn gaussian_hand_values() {
        let spec = KernelSpec::new(0.5, 340.0, 340.0).unwrap();
        let a = fv([0.0; 6]);
        let mut b = a;
        b.0[2] = 1.0;
        assert!((spec.eval(&a, &b) - (-2f64).exp()).abs() < 1e-15);
        assert!((spec.eval(&a, &b) - 0.1353).abs() < 1e-4);
        assert_eq!(spec.eval(&a, &a), 1.0);
    }

    #[test]
    fn dot_identities() {
        let spec = KernelSpec::default();
        let s1 = fv([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let s2 = fv([0.3, 0.2, 0.1, 0.4, 0.9, 0.6]);
        let k = |a, b| spec.eval(a, b);
        assert!((dot(&RkhsVector::unit(s1), &RkhsVector::unit(s2), &spec) - k(&s1, &s2)).abs() < 1e-15);
        assert_eq!(dot(&RkhsVector::unit(s1), &RkhsVector::zero(), &spec), 0.0);

        let a = RkhsVector::new(vec![s1, s2], vec![1.0, 2.0]).unwrap();
        let b = RkhsVector::unit(s2);
        let d2 = distance(&a, &b, &spec).unwrap().powi(2);
        let closed = k(&s1, &s1) + k(&s2, &s2) + 2.0 * k(&s1, &s2);
        assert!((d2 - closed).abs() < 1e-9);
    }

    #[test]
    fn norms() {
        let spec = KernelSpec::default();
        let s = fv([0.5; 6]);
        assert!((norm(&RkhsVector::unit(s), &spec).unwrap() - 1.0).abs() < 1e-15);
        assert!((norm(&RkhsVector::unit(s).scaled(2.0), &spec).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(norm(&RkhsVector::zero(), &spec).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_identities() {
        let spec = KernelSpec::default();
        let s = fv([0.2, 0.3, 0.2, 0.9, 0.1, 0.7]);
        let t = fv([0.4, 0.3, 0.8, 0.9, 0.1, 0.2]);
        assert_eq!(evaluate(&RkhsVector::unit(s), &s, &spec), 1.0);
        let cancel = RkhsVector::new(vec![s, s], vec![1.0, -1.0]).unwrap();
        assert_eq!(evaluate(&cancel, &t, &spec), 0.0);
        let v = RkhsVector::new(vec![s, t], vec![0.3, -1.2]).unwrap();
        assert!((evaluate(&v, &t, &spec) - dot(&v, &RkhsVector::unit(t), &spec)).abs() < 1e-15);
    }

    #[test]
    fn empirical_expectation_weights() {
        let a = fv([0.1; 6]);
        let b = fv([0.2; 6]);
        let c = fv([0.3; 6]);
        let d = fv([0.4; 6]);
        let e = empirical_expectation(&[vec![a, b]], 20).unwrap();
        assert_eq!(e.weights(), &[10.0, 10.0]);

        let e = empirical_expectation(&[vec![a, b, c], vec![d]], 20).unwrap();
        assert_eq!(e.weights(), &[5.0, 5.0, 5.0, 5.0]);

        assert!(matches!(empirical_expectation(&[], 20), Err(KernelError::NoEpisodes)));
    }

    #[test]
    fn duplicate_states_merge_consistently() {
        let spec = KernelSpec::default();
        let a = fv([0.1; 6]);
        let b = fv([0.7, 0.1, 0.3, 0.3, 0.5, 0.5]);
        let merged = empirical_expectation(&[vec![a, a, b]], 20).unwrap();
        assert_eq!(merged.len(), 2);
        let w = 20.0 / 3.0;
        let split = RkhsVector::new(vec![a, a, b], vec![w, w, w]).unwrap();
        let probe = RkhsVector::new(vec![b, fv([0.4; 6])], vec![0.7, -0.2]).unwrap();
        assert!((dot(&merged, &probe, &spec) - dot(&split, &probe, &spec)).abs() < 1e-9);
    }

    #[test]
    fn gram_small_cases() {
        let spec = KernelSpec::default();
        let s = fv([0.3; 6]);
        let g = state_gram(&[s], &spec);
        assert_eq!(g[(0, 0)], 1.0);
        let g = state_gram(&[s, s, s], &spec);
        assert!(g.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn rkhs_file_round_trip() {
        let v = RkhsVector::new(
            vec![fv([0.1, 0.25, 0.3, 0.4, 0.5, 0.6]), fv([0.0, 1.0, 0.5, 0.5, 0.5, 0.5])],
            vec![1.0 / 3.0, -2.5],
        )
        .unwrap();
        let file = RkhsFile {
            role: VectorRole::Reward,
            spec: KernelSpec::default(),
            vector: v,
        };
        let bytes = rkhs_to_bytes(&file);
        assert_eq!(read_rkhs(bytes.as_slice()).unwrap(), file);
        let truncated = &bytes[..bytes.len() - 3];
        assert!(read_rkhs(truncated).is_err() || read_rkhs(truncated).unwrap() != file);
    }

    fn arb_feature() -> impl Strategy<Value = FeatureVector> {
        prop::array::uniform6(0.0f64..=1.0).prop_map(FeatureVector)
    }

    fn arb_vector() -> impl Strategy<Value = RkhsVector> {
        prop::collection::vec((arb_feature(), -2.0f64..2.0), 0..8).prop_map(|pairs| {
            let (a, w): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            RkhsVector::new(a, w).unwrap()
        })
    }

    fn arb_agent() -> impl Strategy<Value = AgentRecord> {
        (any::<bool>(), 0.0f64..=340.0, 0.0f64..=340.0, prop_oneof![Just(0.0), 0.01f64..=1.0]).prop_map(
            |(red, x, y, h)| rec(if red { Side::Red } else { Side::Blue }, x, y, h),
        )
    }

    proptest! {
        #[test]
        fn features_stay_in_unit_cube(
            x in 0.0f64..=340.0, y in 0.0f64..=340.0,
            others in prop::collection::vec(arb_agent(), 0..10),
        ) {
            let f = featurize(&state(x, y, others), &KernelSpec::default());
            prop_assert!(f.0.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(f.0[0] <= f.0[1] && f.0[2] <= f.0[3] && f.0[4] <= f.0[5]);
        }

        #[test]
        fn cauchy_schwarz(u in arb_vector(), v in arb_vector()) {
            let spec = KernelSpec::default();
            let lhs = dot(&u, &v, &spec).abs();
            let rhs = norm(&u, &spec).unwrap() * norm(&v, &spec).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn dot_is_symmetric_and_bilinear(u in arb_vector(), v in arb_vector(), w in arb_vector(), c in -3.0f64..3.0) {
            let spec = KernelSpec::default();
            prop_assert!((dot(&u, &v, &spec) - dot(&v, &u, &spec)).abs() < 1e-9);
            let lhs = dot(&u.combine(c, &w, 1.0), &v, &spec);
            let rhs = c * dot(&u, &v, &spec) + dot(&w, &v, &spec);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn merging_duplicates_preserves_dots(u in arb_vector(), v in arb_vector()) {
            let spec = KernelSpec::default();
            let mut doubled = RkhsVector::zero();
            for (a, w) in u.iter() {
                doubled.push(*a, w * 0.25);
                doubled.push(*a, w * 0.75);
            }
            let merged = doubled.clone().compact();
            prop_assert!(merged.len() <= u.len());
            prop_assert!((dot(&merged, &v, &spec) - dot(&doubled, &v, &spec)).abs() < 1e-9);
        }

        #[test]
        fn kernel_symmetric(a in arb_feature(), b in arb_feature()) {
            let spec = KernelSpec::default();
            let k = spec.eval(&a, &b);
            prop_assert_eq!(k, spec.eval(&b, &a));
            prop_assert!(k > 0.0 && k <= 1.0);
        }
    }
}
