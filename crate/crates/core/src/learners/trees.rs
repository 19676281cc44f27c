//! Histogram-based gradient boosting with squared loss.
//!
//! Features are bucketed once into at most [`MAX_BINS`] bins. Each round
//! grows a depth-limited tree on the current residuals by scanning per-node
//! gradient histograms; leaves take the shrunken residual mean, so the
//! training loss never increases from one round to the next. Ties between
//! candidate splits keep the first one found (lowest feature, then lowest
//! bin), which makes the fit deterministic.

use nalgebra::DMatrix;

use super::TreeParams;
use crate::stats;

const MAX_BINS: usize = 255;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[(row, feature)] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Boosted tree ensemble: `base + sum_t tree_t(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    dim: usize,
}

/// Per-feature cut points; bin `b` holds values in `(cut[b-1], cut[b]]`.
fn cut_points(col: &[f64]) -> Vec<f64> {
    let sorted = stats::sorted_copy(col);
    let mut uniq = sorted.clone();
    uniq.dedup();
    if uniq.len() <= 1 {
        return Vec::new();
    }
    if uniq.len() <= MAX_BINS {
        return uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let m = sorted.len();
    let mut cuts: Vec<f64> = (1..MAX_BINS).map(|b| sorted[b * m / MAX_BINS]).collect();
    cuts.dedup();
    // The maximum can never be a useful cut: nothing would fall to its right.
    cuts.retain(|&c| c < uniq[uniq.len() - 1]);
    cuts
}

struct Binned {
    cuts: Vec<Vec<f64>>,
    /// Column-major bin indices.
    bins: Vec<Vec<u16>>,
}

impl Binned {
    fn new(x: &DMatrix<f64>) -> Self {
        let mut cuts = Vec::with_capacity(x.ncols());
        let mut bins = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let c = cut_points(&col);
            bins.push(col.iter().map(|&v| c.partition_point(|&t| t < v) as u16).collect());
            cuts.push(c);
        }
        Self { cuts, bins }
    }
}

struct Grower<'a> {
    data: &'a Binned,
    residual: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    /// (row set, leaf value) for every leaf, used to update training predictions.
    leaves: Vec<(Vec<usize>, f64)>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let split = if depth < self.params.depth && rows.len() >= 2 * self.params.min_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            Some((feature, bin)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| (self.data.bins[feature][i] as usize) <= bin);
                let threshold = self.data.cuts[feature][bin];
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split { feature, threshold, left, right };
            }
            None => {
                let mean = rows.iter().map(|&i| self.residual[i]).sum::<f64>() / rows.len() as f64;
                let value = self.params.learning_rate * mean;
                self.nodes[id] = Node::Leaf(value);
                self.leaves.push((rows, value));
            }
        }
        id
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, usize)> {
        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&i| self.residual[i]).sum();
        let parent = total * total / n;
        let min_leaf = self.params.min_leaf;
        let mut best: Option<(usize, usize)> = None;
        let mut best_gain = 0.0;
        for (feature, cuts) in self.data.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let nb = cuts.len() + 1;
            let mut sums = vec![0.0; nb];
            let mut counts = vec![0usize; nb];
            let col = &self.data.bins[feature];
            for &i in rows {
                let b = col[i] as usize;
                sums[b] += self.residual[i];
                counts[b] += 1;
            }
            let (mut gl, mut nl) = (0.0, 0usize);
            for b in 0..nb - 1 {
                gl += sums[b];
                nl += counts[b];
                let nr = rows.len() - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let gr = total - gl;
                let gain = gl * gl / nl as f64 + gr * gr / nr as f64 - parent;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((feature, b));
                }
            }
        }
        best
    }
}

impl TreeEnsemble {
    pub(crate) fn constant(value: f64, learning_rate: f64, dim: usize) -> Self {
        Self { base: value, learning_rate, trees: Vec::new(), dim }
    }

    pub(crate) fn fit(x: &DMatrix<f64>, y: &[f64], params: &TreeParams) -> Self {
        let m = y.len();
        let base = stats::mean(y);
        let mut ensemble = Self::constant(base, params.learning_rate, x.ncols());
        if params.learning_rate == 0.0 {
            return ensemble;
        }
        let data = Binned::new(x);
        let mut pred = vec![base; m];
        let mut residual = vec![0.0; m];
        for _ in 0..params.rounds {
            for i in 0..m {
                residual[i] = y[i] - pred[i];
            }
            let mut grower = Grower { data: &data, residual: &residual, params, nodes: Vec::new(), leaves: Vec::new() };
            grower.grow((0..m).collect(), 0);
            for (rows, value) in &grower.leaves {
                for &i in rows {
                    pred[i] += value;
                }
            }
            ensemble.trees.push(Tree { nodes: grower.nodes });
        }
        ensemble
    }

    pub(crate) fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        debug_assert_eq!(x.ncols(), self.dim);
        (0..x.nrows())
            .map(|i| {
                let mut acc = self.base;
                for tree in &self.trees {
                    acc += tree.predict_row(x, i);
                }
                acc
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn n_trees(&self) -> usize {
        self.trees.len()
    }

    #[cfg(test)]
    pub(crate) fn learning_rate(&self) -> f64 {
        self.learning_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cut_points_for_few_uniques_are_midpoints() {
        assert_eq!(cut_points(&[1.0, 3.0, 1.0, 2.0]), vec![1.5, 2.5]);
        assert!(cut_points(&[4.0, 4.0]).is_empty());
    }

    #[test]
    fn cut_points_capped() {
        let col: Vec<f64> = (0..5000).map(|i| (i as f64).sqrt()).collect();
        let cuts = cut_points(&col);
        assert!(cuts.len() < MAX_BINS);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn step_function_is_learned() {
        let x = DMatrix::from_fn(100, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 1.0 }).collect();
        let p = TreeParams { depth: 1, learning_rate: 1.0, rounds: 1, min_leaf: 1 };
        let e = TreeEnsemble::fit(&x, &y, &p);
        assert_eq!(e.n_trees(), 1);
        assert_eq!(e.learning_rate(), 1.0);
        let pred = e.predict(&x);
        for (a, b) in pred.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
