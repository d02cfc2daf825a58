//! Single CART tree, stored as flat node arrays.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, HyperParams, Target};

pub(crate) const LEAF: u32 = u32::MAX;

/// Flattened tree. Node 0 is the root; a node is a leaf when
/// `feature == LEAF`. Each node stores `n_outputs` values: class
/// probabilities for classifiers, the mean target for regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub n_samples: Vec<u32>,
    pub value: Vec<f64>,
    /// Normalized impurity decrease per feature for this tree.
    pub importance: Vec<f64>,
}

impl Tree {
    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub(crate) fn n_outputs(&self) -> usize {
        self.value.len() / self.feature.len().max(1)
    }

    /// Index of the leaf reached by `row`. Values `<= threshold` go left.
    pub fn leaf(&self, row: &[f64]) -> usize {
        let mut n = 0usize;
        while self.feature[n] != LEAF {
            n = if row[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
        }
        n
    }

    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let k = self.n_outputs();
        let n = self.leaf(row);
        &self.value[n * k..(n + 1) * k]
    }

    /// Longest root-to-leaf path, counted in splits.
    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((n, d)) = stack.pop() {
            if self.feature[n] == LEAF {
                best = best.max(d);
            } else {
                stack.push((self.left[n] as usize, d + 1));
                stack.push((self.right[n] as usize, d + 1));
            }
        }
        best
    }
}

/// Per-node statistics for the impurity criterion.
trait Criterion {
    fn reset(&mut self);
    fn push(&mut self, idx: usize);
    fn pop(&mut self, idx: usize);
    fn count(&self) -> usize;
    /// Impurity times sample count.
    fn weighted_impurity(&self) -> f64;
    fn value(&self, out: &mut Vec<f64>);
}

struct Gini<'a> {
    labels: &'a [usize],
    counts: Vec<usize>,
    n: usize,
}

impl Criterion for Gini<'_> {
    fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.n = 0;
    }
    fn push(&mut self, idx: usize) {
        self.counts[self.labels[idx]] += 1;
        self.n += 1;
    }
    fn pop(&mut self, idx: usize) {
        self.counts[self.labels[idx]] -= 1;
        self.n -= 1;
    }
    fn count(&self) -> usize {
        self.n
    }
    fn weighted_impurity(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let sq: f64 = self.counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
        n - sq / n
    }
    fn value(&self, out: &mut Vec<f64>) {
        let n = self.n.max(1) as f64;
        out.extend(self.counts.iter().map(|&c| c as f64 / n));
    }
}

struct Variance<'a> {
    y: &'a [f64],
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl Criterion for Variance<'_> {
    fn reset(&mut self) {
        self.sum = 0.0;
        self.sum_sq = 0.0;
        self.n = 0;
    }
    fn push(&mut self, idx: usize) {
        let v = self.y[idx];
        self.sum += v;
        self.sum_sq += v * v;
        self.n += 1;
    }
    fn pop(&mut self, idx: usize) {
        let v = self.y[idx];
        self.sum -= v;
        self.sum_sq -= v * v;
        self.n -= 1;
    }
    fn count(&self) -> usize {
        self.n
    }
    fn weighted_impurity(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.sum_sq - self.sum * self.sum / self.n as f64).max(0.0)
    }
    fn value(&self, out: &mut Vec<f64>) {
        out.push(self.sum / self.n.max(1) as f64);
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Position in the sorted sample slice where the right child starts.
    pos: usize,
    decrease: f64,
}

/// Fits one tree on the multiset `samples` of row indices.
pub(crate) fn build_tree(d: &Dataset, samples: Vec<usize>, params: &HyperParams, rng: &mut ChaCha8Rng) -> Tree {
    match &d.target {
        Target::Classes { labels, names } => {
            let mk = || Gini {
                labels,
                counts: vec![0; names.len()],
                n: 0,
            };
            Builder::new(d, params, mk).build(samples, rng)
        }
        Target::Values(y) => {
            let mk = || Variance {
                y,
                sum: 0.0,
                sum_sq: 0.0,
                n: 0,
            };
            Builder::new(d, params, mk).build(samples, rng)
        }
    }
}

struct Builder<'a, C, F: Fn() -> C> {
    d: &'a Dataset,
    params: &'a HyperParams,
    make: F,
    tree: Tree,
}

impl<'a, C: Criterion, F: Fn() -> C> Builder<'a, C, F> {
    fn new(d: &'a Dataset, params: &'a HyperParams, make: F) -> Self {
        Builder {
            d,
            params,
            make,
            tree: Tree {
                feature: Vec::new(),
                threshold: Vec::new(),
                left: Vec::new(),
                right: Vec::new(),
                n_samples: Vec::new(),
                value: Vec::new(),
                importance: vec![0.0; d.n_features()],
            },
        }
    }

    fn push_node(&mut self, crit: &C) -> usize {
        let id = self.tree.feature.len();
        self.tree.feature.push(LEAF);
        self.tree.threshold.push(0.0);
        self.tree.left.push(LEAF);
        self.tree.right.push(LEAF);
        self.tree.n_samples.push(crit.count() as u32);
        crit.value(&mut self.tree.value);
        id
    }

    fn build(mut self, mut samples: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let n_features = self.d.n_features();
        let mtry = self.params.max_features.count(n_features);
        let mut crit = (self.make)();
        let mut left = (self.make)();
        let mut right = (self.make)();
        let mut order: Vec<usize> = (0..n_features).collect();
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(samples.len());

        crit.reset();
        samples.iter().for_each(|&i| crit.push(i));
        let root = self.push_node(&crit);
        // (node id, start, end, depth)
        let mut stack = vec![(root, 0usize, samples.len(), 0usize)];

        while let Some((node, start, end, depth)) = stack.pop() {
            let n = end - start;
            crit.reset();
            samples[start..end].iter().for_each(|&i| crit.push(i));
            let node_imp = crit.weighted_impurity();
            let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
            if !depth_ok || n < self.params.min_split || n < 2 * self.params.min_leaf || node_imp <= 1e-12 * n as f64 {
                continue;
            }

            // Draw features in random order; constant ones do not count
            // toward the per-split budget.
            let mut best: Option<Split> = None;
            let mut tried = 0usize;
            for k in 0..n_features {
                if tried >= mtry {
                    break;
                }
                let j = rng.gen_range(k..n_features);
                order.swap(k, j);
                let f = order[k];

                keyed.clear();
                keyed.extend(samples[start..end].iter().map(|&i| (self.d.get(i, f), i)));
                keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if keyed[0].0 == keyed[n - 1].0 {
                    continue;
                }
                tried += 1;

                left.reset();
                right.reset();
                keyed.iter().for_each(|&(_, i)| right.push(i));
                for p in 1..n {
                    let idx = keyed[p - 1].1;
                    left.push(idx);
                    right.pop(idx);
                    let (lo, hi) = (keyed[p - 1].0, keyed[p].0);
                    if lo == hi || p < self.params.min_leaf || n - p < self.params.min_leaf {
                        continue;
                    }
                    let decrease = node_imp - left.weighted_impurity() - right.weighted_impurity();
                    if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                        let mut t = lo + (hi - lo) / 2.0;
                        if t >= hi {
                            t = lo;
                        }
                        best = Some(Split {
                            feature: f,
                            threshold: t,
                            pos: p,
                            decrease,
                        });
                    }
                }
            }

            let Some(split) = best else { continue };
            // Re-sort this node's slice by the chosen feature so children are
            // contiguous.
            let f = split.feature;
            let slice = &mut samples[start..end];
            slice.sort_unstable_by(|&a, &b| self.d.get(a, f).total_cmp(&self.d.get(b, f)).then(a.cmp(&b)));
            let mid = start + split.pos;

            self.tree.importance[f] += split.decrease.max(0.0);
            crit.reset();
            samples[start..mid].iter().for_each(|&i| crit.push(i));
            let l = self.push_node(&crit);
            crit.reset();
            samples[mid..end].iter().for_each(|&i| crit.push(i));
            let r = self.push_node(&crit);
            self.tree.feature[node] = f as u32;
            self.tree.threshold[node] = split.threshold;
            self.tree.left[node] = l as u32;
            self.tree.right[node] = r as u32;
            stack.push((r, mid, end, depth + 1));
            stack.push((l, start, mid, depth + 1));
        }

        let total: f64 = self.tree.importance.iter().sum();
        if total > 0.0 {
            self.tree.importance.iter_mut().for_each(|v| *v /= total);
        }
        self.tree
    }
}
