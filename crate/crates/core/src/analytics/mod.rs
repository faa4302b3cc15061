//! Strategy identification from per-match RKHS vectors: distance matrices,
//! embeddings, clustering and one-vs-one SVM classification.

mod hac;
mod svm;
mod tsne;

pub use hac::{cluster_report, dendrogram_svg, hac_complete, ClusterReport, Dendrogram, Merge};
pub use svm::{
    kernel_matrix, loo_evaluate, loo_from_gram, svm_train_binary, svm_train_ovo, BinarySvm, ConfusionMatrix, LooResult, OvoSvm, SvmKernel,
    SvmParams,
};
pub use tsne::{tsne, TsneParams, TsneResult};

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::kernel::{dot, KernelSpec, RkhsVector, VectorRole};
use crate::trajectory::Strategy;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub match_id: String,
    pub label: Strategy,
    pub vector: RkhsVector,
    pub spec: KernelSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub role: VectorRole,
    pub items: Vec<LabeledItem>,
}

impl LabeledSet {
    pub fn new(role: VectorRole, items: Vec<LabeledItem>) -> Result<Self, AnalyticsError> {
        let mut ids: Vec<&str> = items.iter().map(|i| i.match_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(AnalyticsError::Argument(format!("duplicate match id `{}`", w[0])));
        }
        Ok(Self { role, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<Strategy> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.match_id.clone()).collect()
    }

    /// The shared kernel spec, or an error if the items disagree.
    pub fn spec(&self) -> Result<KernelSpec, AnalyticsError> {
        let first = self
            .items
            .first()
            .ok_or_else(|| AnalyticsError::Argument("empty set".into()))?
            .spec;
        for item in &self.items[1..] {
            first
                .ensure_same(&item.spec)
                .map_err(|e| AnalyticsError::Argument(e.to_string()))?;
        }
        Ok(first)
    }

    /// Pairwise RKHS inner products.
    pub fn gram(&self) -> Result<DMatrix<f64>, AnalyticsError> {
        let spec = self.spec()?;
        let n = self.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| dot(&self.items[i].vector, &self.items[j].vector, &spec))
            .collect();
        let mut g = DMatrix::zeros(n, n);
        for (&(i, j), v) in pairs.iter().zip(values) {
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
        Ok(g)
    }
}

/// Symmetric, zero-diagonal, nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Checks the matrix axioms on a full row-major matrix.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, AnalyticsError> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(AnalyticsError::Argument(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            values.extend_from_slice(row);
        }
        let m = Self { n, values };
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(AnalyticsError::Argument(format!("diagonal entry {i} is nonzero")));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(AnalyticsError::Argument(format!("entry ({i}, {j}) = {v} is not a distance")));
                }
                if v != m.get(j, i) {
                    return Err(AnalyticsError::Argument(format!("matrix is asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(m)
    }

    /// `d_ij = sqrt(G_ii + G_jj − 2 G_ij)`, clamped at zero.
    pub fn from_gram(g: &DMatrix<f64>) -> Self {
        let n = g.nrows();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let d = (g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)]).max(0.0).sqrt();
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Submatrix over `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> Self {
        let n = keep.len();
        let mut values = Vec::with_capacity(n * n);
        for &i in keep {
            for &j in keep {
                values.push(self.get(i, j));
            }
        }
        Self { n, values }
    }

    /// Median of the strictly upper-triangular entries.
    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = (0..self.n)
            .flat_map(|i| (i + 1..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    }

    pub fn write_csv<W: Write>(&self, ids: &[String], out: W) -> Result<(), AnalyticsError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["match_id".to_string()];
        header.extend(ids.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.row(i).iter().map(|v| format!("{v:.9}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn distance_matrix(set: &LabeledSet) -> Result<DistanceMatrix, AnalyticsError> {
    if set.is_empty() {
        return Err(AnalyticsError::Argument("empty set".into()));
    }
    Ok(DistanceMatrix::from_gram(&set.gram()?))
}

/// `match_id,label,x,y`.
pub fn write_embedding_csv<W: Write>(set: &LabeledSet, coords: &[[f64; 2]], out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["match_id", "label", "x", "y"])?;
    for (item, c) in set.items.iter().zip(coords) {
        w.write_record([
            item.match_id.clone(),
            item.label.to_string(),
            format!("{:.9}", c[0]),
            format!("{:.9}", c[1]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
