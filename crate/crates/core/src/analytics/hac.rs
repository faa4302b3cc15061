//! Complete-linkage agglomerative clustering.

use std::fmt::Write as _;
use std::io::Write;

use super::{AnalyticsError, DistanceMatrix};
use crate::trajectory::Strategy;

/// One merge. Leaves are `0..n`; the cluster created by merge `k` is `n + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
    /// Cluster of every leaf at the requested cut, numbered by first member.
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl Dendrogram {
    /// Cluster index of each leaf after the first `leaves − k` merges.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let n = self.leaves;
        let mut parent: Vec<usize> = (0..n + self.merges.len()).collect();
        fn root(parent: &[usize], mut x: usize) -> usize {
            while parent[x] != x {
                x = parent[x];
            }
            x
        }
        for (step, m) in self.merges.iter().take(n.saturating_sub(k)).enumerate() {
            parent[m.a] = n + step;
            parent[m.b] = n + step;
        }
        let mut ids: Vec<usize> = Vec::new();
        (0..n)
            .map(|leaf| {
                let r = root(&parent, leaf);
                match ids.iter().position(|&x| x == r) {
                    Some(p) => p,
                    None => {
                        ids.push(r);
                        ids.len() - 1
                    }
                }
            })
            .collect()
    }

    /// Leaves in the left-to-right order of the drawn tree.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.leaves;
        if self.merges.is_empty() {
            return (0..n).collect();
        }
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![n + self.merges.len() - 1];
        while let Some(c) = stack.pop() {
            if c < n {
                out.push(c);
            } else {
                let m = self.merges[c - n];
                stack.push(m.b);
                stack.push(m.a);
            }
        }
        out
    }

    /// `step,cluster_a,cluster_b,height,size`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalyticsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "cluster_a", "cluster_b", "height", "size"])?;
        for (i, m) in self.merges.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                m.a.to_string(),
                m.b.to_string(),
                format!("{:.9}", m.height),
                m.size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Naive O(n³) complete linkage; ties go to the lexicographically smallest
/// pair of current cluster ids.
pub fn hac_complete(d: &DistanceMatrix, k: usize) -> Result<Dendrogram, AnalyticsError> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(AnalyticsError::Argument(format!("cluster count {k} outside 1..={n}")));
    }
    // active clusters: (id, members)
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut link: Vec<Vec<f64>> = (0..n).map(|i| d.row(i).to_vec()).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..active.len() {
            for q in p + 1..active.len() {
                let h = link[p][q];
                let (a, b) = (active[p].0.min(active[q].0), active[p].0.max(active[q].0));
                let better = match best {
                    None => true,
                    Some((bh, bp, bq)) => {
                        let (ba, bb) = (active[bp].0.min(active[bq].0), active[bp].0.max(active[bq].0));
                        h < bh || (h == bh && (a, b) < (ba, bb))
                    }
                };
                if better {
                    best = Some((h, p, q));
                }
            }
        }
        let (h, p, q) = best.expect("two clusters remain");
        let id = n + merges.len();
        let (ida, idb) = (active[p].0.min(active[q].0), active[p].0.max(active[q].0));
        let (_, mq) = active.remove(q);
        let row_q = link.remove(q);
        for row in link.iter_mut() {
            row.remove(q);
        }
        for r in 0..active.len() {
            let v = link[p][r].max(if r < q { row_q[r] } else { row_q[r + 1] });
            link[p][r] = v;
            link[r][p] = v;
        }
        link[p][p] = 0.0;
        active[p].0 = id;
        active[p].1.extend(mq);
        merges.push(Merge {
            a: ida,
            b: idb,
            height: h,
            size: active[p].1.len(),
        });
    }
    let mut dendro = Dendrogram {
        leaves: n,
        merges,
        assignment: Vec::new(),
        k,
    };
    dendro.assignment = dendro.cut(k);
    Ok(dendro)
}

/// Dendrogram drawing with leaves labelled by match id and colored by
/// strategy.
pub fn dendrogram_svg(d: &Dendrogram, ids: &[String], labels: &[Strategy]) -> String {
    const W: f64 = 900.0;
    const H: f64 = 420.0;
    const BOTTOM: f64 = 330.0;
    const TOP: f64 = 20.0;
    let n = d.leaves;
    let order = d.leaf_order();
    let max_h = d.merges.iter().map(|m| m.height).fold(0.0, f64::max).max(1e-12);
    let step = (W - 40.0) / n.max(1) as f64;
    let mut x = vec![0.0; n + d.merges.len()];
    let mut y = vec![BOTTOM; n + d.merges.len()];
    for (pos, &leaf) in order.iter().enumerate() {
        x[leaf] = 20.0 + step * (pos as f64 + 0.5);
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for (k, m) in d.merges.iter().enumerate() {
        let c = n + k;
        y[c] = BOTTOM - (BOTTOM - TOP) * m.height / max_h;
        x[c] = 0.5 * (x[m.a] + x[m.b]);
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="black" stroke-width="1" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
            x[m.a], y[m.a], x[m.a], y[c], x[m.b], y[c], x[m.b], y[m.b]
        );
    }
    for &leaf in &order {
        let color = match labels.get(leaf) {
            Some(Strategy::Assault) => "#d62728",
            Some(Strategy::Flank) => "#2ca02c",
            Some(Strategy::Fallback) => "#1f77b4",
            None => "black",
        };
        let name = ids.get(leaf).map(String::as_str).unwrap_or("");
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" fill="{color}" transform="rotate(90 {:.2} {:.2})">{name}</text>"#,
            x[leaf],
            BOTTOM + 6.0,
            x[leaf],
            BOTTOM + 6.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Label composition of the clusters of a cut.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    /// `counts[cluster][label]`.
    pub counts: Vec<[usize; 3]>,
    pub label_totals: [usize; 3],
}

impl ClusterReport {
    pub fn clusters(&self) -> usize {
        self.counts.len()
    }

    /// Share of the cluster's members carrying `label`.
    pub fn purity(&self, cluster: usize, label: Strategy) -> f64 {
        let size: usize = self.counts[cluster].iter().sum();
        if size == 0 {
            0.0
        } else {
            self.counts[cluster][label.index()] as f64 / size as f64
        }
    }

    /// Share of all `label` items that fall in `cluster`.
    pub fn concentration(&self, cluster: usize, label: Strategy) -> f64 {
        let total = self.label_totals[label.index()];
        if total == 0 {
            0.0
        } else {
            self.counts[cluster][label.index()] as f64 / total as f64
        }
    }

    /// Cluster holding the largest share of `label`, first on ties.
    pub fn most_concentrated(&self, label: Strategy) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..self.clusters() {
            let v = self.concentration(c, label);
            if v > best.1 {
                best = (c, v);
            }
        }
        best
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("cluster\tsize\tassault\tflank\tfallback\n");
        for (c, counts) in self.counts.iter().enumerate() {
            let size: usize = counts.iter().sum();
            let _ = write!(s, "{c}\t{size}");
            for label in Strategy::ALL {
                let _ = write!(
                    s,
                    "\t{} ({:.1}% of cluster, {:.1}% of {label})",
                    counts[label.index()],
                    100.0 * self.purity(c, label),
                    100.0 * self.concentration(c, label)
                );
            }
            s.push('\n');
        }
        s
    }
}

pub fn cluster_report(assignment: &[usize], labels: &[Strategy]) -> ClusterReport {
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![[0usize; 3]; k];
    let mut label_totals = [0usize; 3];
    for (&c, &l) in assignment.iter().zip(labels) {
        counts[c][l.index()] += 1;
        label_totals[l.index()] += 1;
    }
    ClusterReport { counts, label_totals }
}
