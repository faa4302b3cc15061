//! CART regression tree with variance-reduction splits.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: Some(12),
            min_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        value: f64,
        count: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    width: usize,
    nodes: Vec<Node>,
}

struct Builder<'a> {
    rows: &'a [f64],
    width: usize,
    targets: &'a [f64],
    params: TreeParams,
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Fits on row-major `rows` (each `width` wide). Empty input yields a
    /// single zero leaf.
    pub fn fit(rows: &[f64], width: usize, targets: &[f64], params: TreeParams) -> Self {
        assert!(width > 0, "tree inputs need at least one column");
        assert_eq!(rows.len(), width * targets.len(), "row/target count mismatch");
        let mut b = Builder {
            rows,
            width,
            targets,
            params: TreeParams {
                min_leaf: params.min_leaf.max(1),
                ..params
            },
            nodes: Vec::new(),
        };
        if targets.is_empty() {
            b.nodes.push(Node::Leaf { value: 0.0, count: 0 });
        } else {
            let mut idx: Vec<usize> = (0..targets.len()).collect();
            b.grow(&mut idx, 0);
        }
        RegressionTree {
            width,
            nodes: b.nodes,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.width);
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { count, .. } => Some(*count),
                _ => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

impl Builder<'_> {
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.rows[row * self.width + feature]
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.targets[i]).sum();
        let mean = sum / n as f64;
        let sse: f64 = idx.iter().map(|&i| (self.targets[i] - mean).powi(2)).sum();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean, count: n });

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || n < 2 * self.params.min_leaf || sse <= 1e-12 * (1.0 + mean * mean) * n as f64 {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(idx, sum) else {
            return at;
        };
        let mut split = 0;
        for k in 0..n {
            if self.value(idx[k], feature) <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    /// Split maximizing `Σ_l²/n_l + Σ_r²/n_r`, i.e. the largest drop in
    /// squared error. Earliest feature and position win ties.
    fn best_split(&self, idx: &[usize], total: f64) -> Option<(usize, f64)> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf;
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in 0..self.width {
            order.sort_by(|&a, &b| self.value(a, f).total_cmp(&self.value(b, f)).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.targets[order[k]];
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let lo = self.value(order[k], f);
                let hi = self.value(order[k + 1], f);
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - base;
                if best.is_none_or(|(g, _, _)| gain > g + 1e-12 * g.abs().max(1e-300)) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.filter(|(g, _, _)| *g > 1e-12).map(|(_, f, t)| (f, t))
    }
}
