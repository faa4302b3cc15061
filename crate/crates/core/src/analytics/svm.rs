//! Soft-margin SVMs on precomputed Gram matrices: SMO with maximal-violating
//! pair selection, one-vs-one voting, and leave-one-out evaluation.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{AnalyticsError, DistanceMatrix, LabeledSet};
use crate::kernel::min_eigenvalue;
use crate::trajectory::Strategy;

/// Kernel composed over the RKHS vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvmKernel {
    /// RKHS inner products, i.e. a linear kernel in H.
    #[default]
    Linear,
    /// `exp(−d²/(2h²))` over RKHS distances, `h` = median training distance.
    GaussianDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub tolerance: f64,
    /// Iteration cap in units of the training-set size.
    pub max_passes: usize,
    pub kernel: SvmKernel,
    /// Accepted negative eigenvalue, relative to the largest diagonal entry.
    pub psd_tolerance: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-3,
            max_passes: 100,
            kernel: SvmKernel::Linear,
            psd_tolerance: 1e-8,
        }
    }
}

/// `f(x) = Σ αᵢ yᵢ K(xᵢ, x) + b` with `y = +1` for `positive`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub alpha: Vec<f64>,
    pub y: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl BinarySvm {
    /// `k_row[i]` = kernel between training point `i` and the query.
    pub fn decision(&self, k_row: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(&self.y)
            .zip(k_row)
            .map(|((a, y), k)| a * y * k)
            .sum::<f64>()
            + self.bias
    }

    /// Largest violation of the KKT complementarity conditions on the
    /// training set.
    pub fn kkt_residual(&self, gram: &DMatrix<f64>) -> f64 {
        let n = self.alpha.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| gram[(i, j)]).collect();
            let m = self.y[i] * self.decision(&row);
            let a = self.alpha[i];
            let v = if a <= 1e-12 {
                (1.0 - m).max(0.0)
            } else if a >= self.c - 1e-12 {
                (m - 1.0).max(0.0)
            } else {
                (m - 1.0).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// Dual soft-margin SVM on the Gram matrix `k` with labels in `{−1, +1}`.
pub fn svm_train_binary(k: &DMatrix<f64>, y: &[f64], params: &SvmParams) -> BinarySvm {
    let n = y.len();
    let c = params.c;
    let mut alpha = vec![0.0; n];
    // f_t = Σ α y K(·, t) − y_t, the bias-free error
    let mut f: Vec<f64> = y.iter().map(|v| -v).collect();
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y < 0.0 && a < c) || (y > 0.0 && a > 0.0);
    let cap = params.max_passes.max(1) * n.max(1) * 10;
    for _ in 0..cap {
        let mut i = None;
        let mut j = None;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && i.is_none_or(|i: usize| -f[t] > -f[i]) {
                i = Some(t);
            }
            if in_low(alpha[t], y[t]) && j.is_none_or(|j: usize| -f[t] < -f[j]) {
                j = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i, j) else { break };
        if f[j] - f[i] < params.tolerance {
            break;
        }
        let eta = (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(1e-12);
        let (lo, hi) = if y[i] != y[j] {
            ((alpha[j] - alpha[i]).max(0.0), (c + alpha[j] - alpha[i]).min(c))
        } else {
            ((alpha[i] + alpha[j] - c).max(0.0), (alpha[i] + alpha[j]).min(c))
        };
        let aj = (alpha[j] + y[j] * (f[i] - f[j]) / eta).clamp(lo, hi);
        let ai = alpha[i] + y[i] * y[j] * (alpha[j] - aj);
        let (di, dj) = (ai - alpha[i], aj - alpha[j]);
        if di.abs() < 1e-15 && dj.abs() < 1e-15 {
            break;
        }
        alpha[i] = ai;
        alpha[j] = aj;
        for t in 0..n {
            f[t] += di * y[i] * k[(i, t)] + dj * y[j] * k[(j, t)];
        }
    }
    let free: Vec<usize> = (0..n).filter(|&t| alpha[t] > 1e-12 && alpha[t] < c - 1e-12).collect();
    let bias = if !free.is_empty() {
        free.iter().map(|&t| -f[t]).sum::<f64>() / free.len() as f64
    } else {
        let up = (0..n)
            .filter(|&t| in_up(alpha[t], y[t]))
            .map(|t| -f[t])
            .fold(f64::NEG_INFINITY, f64::max);
        let low = (0..n)
            .filter(|&t| in_low(alpha[t], y[t]))
            .map(|t| -f[t])
            .fold(f64::INFINITY, f64::min);
        match (up.is_finite(), low.is_finite()) {
            (true, true) => 0.5 * (up + low),
            (true, false) => up,
            (false, true) => low,
            (false, false) => 0.0,
        }
    };
    BinarySvm { alpha, y: y.to_vec(), bias, c }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvoSvm {
    /// `(positive, negative, training indices, model)` per label pair.
    pub machines: Vec<(Strategy, Strategy, Vec<usize>, BinarySvm)>,
}

impl OvoSvm {
    /// `k_row[i]` = kernel between training point `i` and the query.
    pub fn predict(&self, k_row: &[f64]) -> Strategy {
        let mut votes = [0usize; 3];
        let mut margin = [0.0f64; 3];
        for (pos, neg, idx, m) in &self.machines {
            let row: Vec<f64> = idx.iter().map(|&i| k_row[i]).collect();
            let f = m.decision(&row);
            let winner = if f >= 0.0 { *pos } else { *neg };
            votes[winner.index()] += 1;
            margin[winner.index()] += f.abs();
        }
        let mut best = Strategy::ALL[0];
        for s in Strategy::ALL {
            let (v, b) = (votes[s.index()], votes[best.index()]);
            if v > b || (v == b && margin[s.index()] > margin[best.index()]) {
                best = s;
            }
        }
        best
    }
}

fn check_psd(gram: &DMatrix<f64>, tolerance: f64) -> Result<(), AnalyticsError> {
    let scale = gram.diagonal().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let min = min_eigenvalue(gram);
    if min < -tolerance * scale {
        return Err(AnalyticsError::Numeric(format!("Gram matrix has eigenvalue {min:.3e}")));
    }
    Ok(())
}

pub fn svm_train_ovo(gram: &DMatrix<f64>, labels: &[Strategy], params: &SvmParams) -> Result<OvoSvm, AnalyticsError> {
    if gram.nrows() != labels.len() || gram.ncols() != labels.len() {
        return Err(AnalyticsError::Argument("Gram size does not match the labels".into()));
    }
    check_psd(gram, params.psd_tolerance)?;
    let present: Vec<Strategy> = Strategy::ALL.into_iter().filter(|s| labels.contains(s)).collect();
    if present.len() < 2 {
        return Err(AnalyticsError::Argument("need at least two classes".into()));
    }
    let mut machines = Vec::new();
    for (a, &pos) in present.iter().enumerate() {
        for &neg in &present[a + 1..] {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == pos || labels[i] == neg).collect();
            let k = DMatrix::from_fn(idx.len(), idx.len(), |r, c| gram[(idx[r], idx[c])]);
            let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == pos { 1.0 } else { -1.0 }).collect();
            machines.push((pos, neg, idx, svm_train_binary(&k, &y, params)));
        }
    }
    Ok(OvoSvm { machines })
}

/// `counts[true][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Strategy, predicted: Strategy) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalyticsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["true\\predicted", "assault", "flank", "fallback"])?;
        for s in Strategy::ALL {
            let row = &self.counts[s.index()];
            w.write_record([s.to_string(), row[0].to_string(), row[1].to_string(), row[2].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooResult {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<Strategy>,
}

/// Kernel matrix the SVM sees, given RKHS inner products and distances.
fn composed(gram: &DMatrix<f64>, d: &DistanceMatrix, kernel: SvmKernel) -> DMatrix<f64> {
    match kernel {
        SvmKernel::Linear => gram.clone(),
        SvmKernel::GaussianDistance => {
            let h = d.median().max(1e-12);
            DMatrix::from_fn(d.len(), d.len(), |i, j| (-d.get(i, j).powi(2) / (2.0 * h * h)).exp())
        }
    }
}

/// Leave-one-out over a precomputed Gram matrix.
pub fn loo_from_gram(gram: &DMatrix<f64>, labels: &[Strategy], params: &SvmParams) -> Result<LooResult, AnalyticsError> {
    let n = labels.len();
    let classes = Strategy::ALL.iter().filter(|s| labels.contains(s)).count();
    if n < classes + 1 {
        return Err(AnalyticsError::Argument(format!("{n} items are too few for {classes} classes")));
    }
    let d = DistanceMatrix::from_gram(gram);
    let predictions: Result<Vec<Strategy>, AnalyticsError> = (0..n)
        .into_par_iter()
        .map(|held| {
            let train: Vec<usize> = (0..n).filter(|&i| i != held).collect();
            let mut all = train.clone();
            all.push(held);
            let sub_d = d.select(&all);
            let sub_g = DMatrix::from_fn(all.len(), all.len(), |r, c| gram[(all[r], all[c])]);
            let k_all = match params.kernel {
                SvmKernel::Linear => sub_g,
                SvmKernel::GaussianDistance => {
                    // bandwidth from training distances only
                    let h = sub_d.select(&(0..train.len()).collect::<Vec<_>>()).median().max(1e-12);
                    DMatrix::from_fn(all.len(), all.len(), |i, j| (-sub_d.get(i, j).powi(2) / (2.0 * h * h)).exp())
                }
            };
            let m = train.len();
            let k_train = k_all.view((0, 0), (m, m)).into_owned();
            let train_labels: Vec<Strategy> = train.iter().map(|&i| labels[i]).collect();
            let model = svm_train_ovo(&k_train, &train_labels, params)?;
            let row: Vec<f64> = (0..m).map(|i| k_all[(m, i)]).collect();
            Ok(model.predict(&row))
        })
        .collect();
    let predictions = predictions?;
    let mut confusion = ConfusionMatrix::default();
    for (t, p) in labels.iter().zip(&predictions) {
        confusion.record(*t, *p);
    }
    Ok(LooResult {
        accuracy: confusion.accuracy(),
        confusion,
        predictions,
    })
}

pub fn loo_evaluate(set: &LabeledSet, params: &SvmParams) -> Result<LooResult, AnalyticsError> {
    loo_from_gram(&set.gram()?, &set.labels(), params)
}

/// Training Gram under `params.kernel` for the whole set.
pub fn kernel_matrix(set: &LabeledSet, kernel: SvmKernel) -> Result<DMatrix<f64>, AnalyticsError> {
    let g = set.gram()?;
    let d = DistanceMatrix::from_gram(&g);
    Ok(composed(&g, &d, kernel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), xs.len(), |i, j| xs[i] * xs[j])
    }

    /// Dual objective `Σα − ½ ΣΣ αα yy K`.
    fn dual(k: &DMatrix<f64>, y: &[f64], a: &[f64]) -> f64 {
        let n = y.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += a[i] * a[j] * y[i] * y[j] * k[(i, j)];
            }
        }
        a.iter().sum::<f64>() - 0.5 * quad
    }

    #[test]
    fn separable_toy_matches_grid_search() {
        let xs = [-2.0, -1.0, 1.0, 2.0];
        let y = [-1.0, -1.0, 1.0, 1.0];
        let k = linear(&xs);
        let m = svm_train_binary(&k, &y, &SvmParams::default());
        for (i, x) in xs.iter().enumerate() {
            let row: Vec<f64> = xs.iter().map(|t| t * x).collect();
            assert_eq!(m.decision(&row).signum(), y[i]);
        }
        // exhaustive dual search over a 0.05 grid with Σ αy = 0
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        let mut best = f64::NEG_INFINITY;
        for &a0 in &grid {
            for &a1 in &grid {
                for &a2 in &grid {
                    let a3 = a0 + a1 - a2;
                    if (0.0..=1.0).contains(&a3) {
                        best = best.max(dual(&k, &y, &[a0, a1, a2, a3]));
                    }
                }
            }
        }
        let got = dual(&k, &y, &m.alpha);
        assert!(got >= best - 1e-3, "{got} < {best}");
        assert!(m.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        assert!(m.kkt_residual(&k) < 1e-3 + 1e-9);
    }

    #[test]
    fn two_points_split_between_them() {
        let xs = [0.5, 3.0];
        let m = svm_train_binary(&linear(&xs), &[1.0, -1.0], &SvmParams::default());
        let f = |x: f64| m.decision(&[0.5 * x, 3.0 * x]);
        assert!(f(0.5) > 0.0 && f(3.0) < 0.0);
        let boundary = -m.bias / (m.alpha[0] * 0.5 - m.alpha[1] * 3.0);
        assert!(boundary > 0.5 && boundary < 3.0);
    }

    #[test]
    fn duplicated_data_predicts_the_same() {
        let xs = [-3.0, -2.0, 2.0, 3.5];
        let y = [-1.0, -1.0, 1.0, 1.0];
        let params = SvmParams {
            c: 100.0,
            tolerance: 1e-6,
            ..SvmParams::default()
        };
        let m1 = svm_train_binary(&linear(&xs), &y, &params);
        let xs2: Vec<f64> = xs.iter().chain(&xs).copied().collect();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let m2 = svm_train_binary(&linear(&xs2), &y2, &params);
        for q in [-5.0, -1.0, -0.1, 0.0, 0.1, 1.0, 5.0] {
            let r1: Vec<f64> = xs.iter().map(|t| t * q).collect();
            let r2: Vec<f64> = xs2.iter().map(|t| t * q).collect();
            assert!((m1.decision(&r1) - m2.decision(&r2)).abs() < 1e-3);
        }
    }

    /// Three far-apart clusters of four on a line, Gaussian Gram.
    fn clusters() -> (DMatrix<f64>, Vec<Strategy>) {
        let xs: Vec<f64> = (0..12).map(|i| (i / 4) as f64 * 10.0 + (i % 4) as f64 * 0.01).collect();
        let k = DMatrix::from_fn(12, 12, |i, j| (-(xs[i] - xs[j]).powi(2) / 2.0).exp());
        let labels = (0..12).map(|i| Strategy::ALL[i / 4]).collect();
        (k, labels)
    }

    #[test]
    fn loo_on_separated_clusters_is_perfect() {
        let (k, labels) = clusters();
        let r = loo_from_gram(&k, &labels, &SvmParams::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion.total(), 12);
        for i in 0..3 {
            assert_eq!(r.confusion.counts[i][i], 4);
        }
    }

    #[test]
    fn permuted_labels_are_near_chance() {
        let (k, labels) = clusters();
        let mut mean = 0.0;
        let trials = 20;
        for seed in 0..trials {
            let mut l = labels.clone();
            l.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let r = loo_from_gram(&k, &l, &SvmParams::default()).unwrap();
            assert_eq!(r.confusion.total(), 12);
            mean += r.accuracy / trials as f64;
        }
        assert!((mean - 1.0 / 3.0).abs() <= 0.2, "{mean}");
    }

    #[test]
    fn non_psd_gram_is_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            svm_train_ovo(&g, &[Strategy::Assault, Strategy::Flank], &SvmParams::default()),
            Err(AnalyticsError::Numeric(_))
        ));
    }

    #[test]
    fn single_class_is_rejected() {
        let g = DMatrix::identity(2, 2);
        assert!(svm_train_ovo(&g, &[Strategy::Flank; 2], &SvmParams::default()).is_err());
    }
}
