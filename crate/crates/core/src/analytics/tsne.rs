//! Exact t-SNE on a precomputed distance matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AnalyticsError, DistanceMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 5.0,
            iterations: 1000,
            learning_rate: 100.0,
            exaggeration: 4.0,
            exaggeration_iterations: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// KL(P‖Q) after every iteration, against the unexaggerated P.
    pub kl: Vec<f64>,
}

/// Row of conditional affinities with entropy `ln(perplexity)`, found by
/// bisection on the precision.
fn conditional_row(d: &DistanceMatrix, i: usize, perplexity: f64) -> Vec<f64> {
    let n = d.len();
    let target = perplexity.ln();
    let d2: Vec<f64> = d.row(i).iter().map(|v| v * v).collect();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut p = vec![0.0; n];
    for _ in 0..200 {
        // shift by the smallest distance for numerical stability
        let dmin = (0..n).filter(|&j| j != i).map(|j| d2[j]).fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for (j, pj) in p.iter_mut().enumerate() {
            *pj = if j == i { 0.0 } else { (-(d2[j] - dmin) * beta).exp() };
            sum += *pj;
        }
        let mut h = 0.0;
        for pj in p.iter_mut() {
            *pj /= sum;
            if *pj > 0.0 {
                h -= *pj * pj.ln();
            }
        }
        let diff = h - target;
        if diff.abs() < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    p
}

fn kl(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / (q / z).max(1e-300)).ln())
        .sum()
}

pub fn tsne(d: &DistanceMatrix, params: &TsneParams) -> Result<TsneResult, AnalyticsError> {
    let n = d.len();
    if n < 4 {
        return Err(AnalyticsError::Argument(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(params.perplexity > 0.0 && params.perplexity < n as f64) {
        return Err(AnalyticsError::Argument(format!(
            "perplexity {} must lie in (0, {n})",
            params.perplexity
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = d.get(i, j);
            if !(v >= 0.0) || v != d.get(j, i) {
                return Err(AnalyticsError::Argument(format!("invalid distance at ({i}, {j})")));
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| conditional_row(d, i, params.perplexity)).collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((rows[i][j] + rows[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut history = Vec::with_capacity(params.iterations);

    let affinities = |y: &[[f64; 2]], num: &mut [f64]| -> f64 {
        let mut z = 0.0;
        for i in 0..n {
            num[i * n + i] = 0.0;
            for j in 0..i {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        z
    };

    for it in 0..params.iterations {
        let exaggeration = if it < params.exaggeration_iterations {
            params.exaggeration
        } else {
            1.0
        };
        let momentum = if it < params.momentum_switch {
            params.initial_momentum
        } else {
            params.final_momentum
        };
        let z = affinities(&y, &mut num);
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                g[0] += 4.0 * w * (y[i][0] - y[j][0]);
                g[1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (g[k] > 0.0) != (velocity[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                velocity[i][k] = momentum * velocity[i][k] - params.learning_rate * gains[i][k] * g[k];
            }
        }
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for v in y.iter_mut() {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
        let z = affinities(&y, &mut num);
        history.push(kl(&p, &num, z));
    }
    Ok(TsneResult { coords: y, kl: history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs() -> DistanceMatrix {
        let pos: [f64; 4] = [0.0, 0.01, 10.0, 10.01];
        DistanceMatrix::from_rows(
            (0..4)
                .map(|i| (0..4).map(|j| (pos[i] - pos[j]).abs()).collect())
                .collect(),
        )
        .unwrap()
    }

    fn nearest(c: &[[f64; 2]], i: usize) -> usize {
        (0..c.len())
            .filter(|&j| j != i)
            .min_by(|&a, &b| {
                let da = (c[a][0] - c[i][0]).hypot(c[a][1] - c[i][1]);
                let db = (c[b][0] - c[i][0]).hypot(c[b][1] - c[i][1]);
                da.total_cmp(&db)
            })
            .unwrap()
    }

    #[test]
    fn tight_pairs_stay_together() {
        for seed in 0..5 {
            let r = tsne(
                &pairs(),
                &TsneParams {
                    perplexity: 2.0,
                    seed,
                    ..TsneParams::default()
                },
            )
            .unwrap();
            assert_eq!(nearest(&r.coords, 0), 1);
            assert_eq!(nearest(&r.coords, 1), 0);
            assert_eq!(nearest(&r.coords, 2), 3);
            assert_eq!(nearest(&r.coords, 3), 2);
        }
    }

    #[test]
    fn deterministic_and_settling() {
        let d = pairs();
        let params = TsneParams {
            perplexity: 2.0,
            ..TsneParams::default()
        };
        let a = tsne(&d, &params).unwrap();
        let b = tsne(&d, &params).unwrap();
        assert_eq!(a, b);
        let half = params.iterations / 2;
        assert!(a.kl[half..].windows(2).all(|w| w[1] <= w[0] + 1e-3));
    }

    #[test]
    fn perplexity_row_hits_entropy() {
        let d = pairs();
        let p = conditional_row(&d, 0, 2.0);
        let h: f64 = p.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
        assert!((h - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(tsne(&pairs(), &TsneParams::default()).is_err()); // perplexity 5 ≥ n
        let small = DistanceMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(tsne(&small, &TsneParams::default()).is_err());
    }
}
