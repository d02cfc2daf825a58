//! Fold assignment, grid-search cross-validation and fold voting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, fit_forest, importance_of, Dataset, ForestModel, HyperGrid, HyperParams, Target};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::metrics::{r2, rmse};
use crate::par::into_par_iter;
#[allow(unused_imports)]
use crate::par::prelude::*;

/// Fold (1..=k) and block of every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    k: usize,
    folds: Vec<usize>,
    blocks: Vec<(i64, i64)>,
}

impl FoldAssignment {
    /// Deals the distinct `blocks` to folds after a seeded shuffle.
    fn from_blocks(blocks: Vec<(i64, i64)>, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InsufficientBlocks { k, blocks: 0 });
        }
        let mut occupied: Vec<(i64, i64)> = blocks.clone();
        occupied.sort_unstable();
        occupied.dedup();
        if occupied.len() < k {
            return Err(Error::InsufficientBlocks { k, blocks: occupied.len() });
        }
        occupied.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let fold_of: BTreeMap<(i64, i64), usize> = occupied.iter().enumerate().map(|(i, &b)| (b, i % k + 1)).collect();
        Ok(FoldAssignment {
            k,
            folds: blocks.iter().map(|b| fold_of[b]).collect(),
            blocks,
        })
    }

    /// Plain shuffled k-fold: every sample is its own block.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        FoldAssignment::from_blocks((0..n as i64).map(|i| (i, 0)).collect(), k, seed)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    pub fn blocks(&self) -> &[(i64, i64)] {
        &self.blocks
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.folds[i]
    }

    /// (train, test) row indices for held-out fold `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.folds.len()).partition(|&i| self.folds[i] != fold)
    }
}

/// Square blocks of side `block_size` keyed by `(floor(x/s), floor(y/s))`.
pub fn spatial_blocks(locations: &[Point], block_size: f64, k: usize, seed: u64) -> Result<FoldAssignment> {
    if !(block_size > 0.0 && block_size.is_finite()) {
        return Err(Error::Config(format!("block size must be positive, got {block_size}")));
    }
    if locations.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let blocks = locations
        .iter()
        .map(|p| ((p.x / block_size).floor() as i64, (p.y / block_size).floor() as i64))
        .collect();
    FoldAssignment::from_blocks(blocks, k, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// F1 of class index 1 (binary).
    F1,
    MacroF1,
    R2,
}

impl SelectionMetric {
    pub fn for_dataset(d: &Dataset) -> Self {
        match d.class_names() {
            Some(names) if names.len() == 2 => SelectionMetric::F1,
            Some(_) => SelectionMetric::MacroF1,
            None => SelectionMetric::R2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FoldScores {
    Classification { accuracy: f64, precision: f64, recall: f64, f1: f64 },
    Regression { r2: f64, rmse: f64 },
}

impl FoldScores {
    pub fn primary(&self) -> f64 {
        match *self {
            FoldScores::Classification { f1, .. } => f1,
            FoldScores::Regression { r2, .. } => r2,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            FoldScores::Classification { accuracy, precision, recall, f1 } => vec![accuracy, precision, recall, f1],
            FoldScores::Regression { r2, rmse } => vec![r2, rmse],
        }
    }

    pub fn names(&self) -> &'static [&'static str] {
        match self {
            FoldScores::Classification { .. } => &["accuracy", "precision", "recall", "f1"],
            FoldScores::Regression { .. } => &["r2", "rmse"],
        }
    }

    fn mean(all: &[FoldScores]) -> Option<FoldScores> {
        let first = all.first()?;
        let n = all.len() as f64;
        let mut acc = vec![0.0; first.values().len()];
        for s in all {
            acc.iter_mut().zip(s.values()).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= n);
        Some(match first {
            FoldScores::Classification { .. } => FoldScores::Classification {
                accuracy: acc[0],
                precision: acc[1],
                recall: acc[2],
                f1: acc[3],
            },
            FoldScores::Regression { .. } => FoldScores::Regression { r2: acc[0], rmse: acc[1] },
        })
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Class predicted from a probability vector. Binary problems call class 1
/// at probability >= 0.5, matching the voting threshold.
pub(crate) fn decide(probs: &[f64]) -> usize {
    if probs.len() == 2 {
        usize::from(probs[1] >= 0.5)
    } else {
        argmax(probs)
    }
}

/// Scores class predictions. Binary problems report class 1; otherwise
/// precision, recall and F1 are macro averages over classes seen in either
/// truth or prediction. Undefined ratios count as 0.
pub fn classification_scores(pred: &[usize], truth: &[usize], n_classes: usize, metric: SelectionMetric) -> FoldScores {
    let mut cm = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| cm[c][c]).sum();
    let accuracy = ratio(correct, pred.len());
    let per_class = |c: usize| {
        let tp = cm[c][c];
        let predicted: usize = (0..n_classes).map(|t| cm[t][c]).sum();
        let actual: usize = cm[c].iter().sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
        (p, r, harmonic(p, r), predicted + actual > 0)
    };
    let (precision, recall, f1) = if n_classes == 2 && metric != SelectionMetric::MacroF1 {
        let (p, r, f, _) = per_class(1);
        (p, r, f)
    } else {
        let seen: Vec<_> = (0..n_classes).map(per_class).filter(|c| c.3).collect();
        let m = seen.len().max(1) as f64;
        (
            seen.iter().map(|c| c.0).sum::<f64>() / m,
            seen.iter().map(|c| c.1).sum::<f64>() / m,
            seen.iter().map(|c| c.2).sum::<f64>() / m,
        )
    };
    FoldScores::Classification {
        accuracy,
        precision,
        recall,
        f1,
    }
}

fn score_outputs(d: &Dataset, test: &[usize], outputs: &[Vec<f64>], metric: SelectionMetric) -> FoldScores {
    match &d.target {
        Target::Classes { labels, names } => {
            let pred: Vec<usize> = outputs.iter().map(|o| decide(o)).collect();
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            classification_scores(&pred, &truth, names.len(), metric)
        }
        Target::Values(y) => {
            let pred: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            let truth: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            FoldScores::Regression {
                r2: r2(&pred, &truth).unwrap_or(f64::NEG_INFINITY),
                rmse: rmse(&pred, &truth).unwrap_or(f64::NAN),
            }
        }
    }
}

/// One (fold, configuration) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub fold: usize,
    pub params: HyperParams,
    pub scores: FoldScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFold {
    pub fold: usize,
    pub reason: String,
}

/// Selected configuration and its model for one held-out fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub params: HyperParams,
    pub scores: FoldScores,
    pub n_train: usize,
    pub n_test: usize,
    pub model: ForestModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub metric: SelectionMetric,
    pub rows: Vec<CvRow>,
    pub folds: Vec<FoldOutcome>,
    pub skipped: Vec<SkippedFold>,
}

impl GridSearchResult {
    /// Mean over evaluated folds of each fold's selected scores.
    pub fn mean_scores(&self) -> Option<FoldScores> {
        FoldScores::mean(&self.folds.iter().map(|f| f.scores).collect::<Vec<_>>())
    }

    pub fn models(&self) -> Vec<&ForestModel> {
        self.folds.iter().map(|f| &f.model).collect()
    }

    /// Gini importance averaged across fold models, normalized to 1.
    pub fn mean_importance(&self) -> Option<Vec<f64>> {
        let first = self.folds.first()?;
        let p = first.model.columns.len();
        let mut acc = vec![0.0; p];
        for f in &self.folds {
            acc.iter_mut().zip(f.model.gini_importance()).for_each(|(a, v)| *a += v);
        }
        let s: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|a| *a /= s);
        Some(acc)
    }

    /// Every evaluated (fold, configuration) row.
    pub fn cv_csv(&self) -> String {
        let names = self.rows.first().map_or(&["f1"][..], |r| r.scores.names());
        let mut out = format!("fold,config,{}\n", names.join(","));
        for r in &self.rows {
            let vals: Vec<String> = r.scores.values().iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&format!("{},{},{}\n", r.fold, r.params.label(), vals.join(",")));
        }
        out
    }

    /// Selected configuration per fold, train/test sizes and test scores,
    /// followed by the mean row.
    pub fn fold_table_csv(&self, label: &str) -> String {
        let names = self.folds.first().map_or(&["f1"][..], |f| f.scores.names());
        let mut out = format!("fold,config,training,testing,{},params\n", names.join(","));
        let fmt = |s: &FoldScores| s.values().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",");
        for f in &self.folds {
            out.push_str(&format!(
                "{},{label},{},{},{},{}\n",
                f.fold,
                f.n_train,
                f.n_test,
                fmt(&f.scores),
                f.params.label()
            ));
        }
        if let Some(m) = self.mean_scores() {
            let n_train: usize = self.folds.iter().map(|f| f.n_train).sum();
            let n_test: usize = self.folds.iter().map(|f| f.n_test).sum();
            let k = self.folds.len();
            out.push_str(&format!("mean,{label},{},{},{},\n", n_train / k, n_test / k, fmt(&m)));
        }
        out
    }

    pub fn importance_csv(&self) -> String {
        let mut out = String::from("feature,importance\n");
        if let (Some(f), Some(imp)) = (self.folds.first(), self.mean_importance()) {
            let mut rows: Vec<(&String, f64)> = f.model.columns.iter().zip(imp).collect();
            rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
            for (c, v) in rows {
                out.push_str(&format!("{c},{v:.6}\n"));
            }
        }
        out
    }
}

fn skip_reason(d: &Dataset, train: &[usize], test: &[usize]) -> Option<String> {
    match &d.target {
        Target::Classes { labels, names } => {
            let present = |idx: &[usize]| {
                let mut s = vec![false; names.len()];
                idx.iter().for_each(|&i| s[labels[i]] = true);
                s
            };
            let (tr, te) = (present(train), present(test));
            if names.len() == 2 {
                if !(tr[0] && tr[1]) {
                    return Some("training partition has a single class".into());
                }
                if !(te[0] && te[1]) {
                    return Some("test partition has a single class".into());
                }
            } else {
                if tr.iter().filter(|&&b| b).count() < 2 {
                    return Some("training partition has a single class".into());
                }
                if test.is_empty() {
                    return Some("test partition is empty".into());
                }
            }
            None
        }
        Target::Values(y) => {
            if train.iter().all(|&i| y[i] == y[train[0]]) {
                return Some("training targets are constant".into());
            }
            if test.len() < 2 {
                return Some("fewer than two test rows".into());
            }
            None
        }
    }
}

/// `a` is preferred over `b`: higher score, then fewer trees, then
/// shallower depth, then earlier grid position.
fn better(a: (f64, &HyperParams, usize), b: (f64, &HyperParams, usize)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1.n_trees != b.1.n_trees {
        return a.1.n_trees < b.1.n_trees;
    }
    let depth = |p: &HyperParams| p.max_depth.unwrap_or(usize::MAX);
    if depth(a.1) != depth(b.1) {
        return depth(a.1) < depth(b.1);
    }
    a.2 < b.2
}

/// Trains every grid configuration on each fold's complement and scores it
/// on the held-out fold.
///
/// Configurations differing only in `n_trees` share one fit: per-tree seeds
/// make the `m`-tree forest the first `m` trees of the largest one. The
/// winning configuration is refitted, which reproduces it exactly.
pub fn grid_search_cv(
    d: &Dataset,
    folds: &FoldAssignment,
    grid: &HyperGrid,
    metric: SelectionMetric,
    seed: u64,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid has an empty list".into()));
    }
    if folds.len() != d.n_rows() {
        return Err(Error::LengthMismatch(folds.len(), d.n_rows()));
    }
    let points = grid.points();
    let mut n_trees = grid.n_trees.clone();
    n_trees.sort_unstable();
    n_trees.dedup();
    let max_trees = *n_trees.last().expect("non-empty grid");
    let groups: Vec<HyperParams> = points
        .iter()
        .map(|p| HyperParams { n_trees: max_trees, ..*p })
        .fold(Vec::new(), |mut acc, p| {
            if !acc.contains(&p) {
                acc.push(p);
            }
            acc
        });

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for fold in 1..=folds.k() {
        let (train_idx, test_idx) = folds.split(fold);
        if let Some(reason) = skip_reason(d, &train_idx, &test_idx) {
            skipped.push(SkippedFold { fold, reason });
            continue;
        }
        let train = d.subset(&train_idx);
        let test = d.subset(&test_idx);
        let scored: Vec<Result<Vec<(HyperParams, FoldScores)>>> = into_par_iter!(groups.clone())
            .map(|g| {
                let model = fit_forest(&train, &g, seed)?;
                let k = model.n_outputs();
                let mut acc = vec![vec![0.0; k]; test.n_rows()];
                let mut out = Vec::with_capacity(n_trees.len());
                let mut next = 0;
                for (t, tree) in model.trees.iter().enumerate() {
                    for (i, a) in acc.iter_mut().enumerate() {
                        a.iter_mut().zip(tree.leaf_value(test.row(i))).for_each(|(s, v)| *s += v);
                    }
                    while next < n_trees.len() && n_trees[next] == t + 1 {
                        let m = (t + 1) as f64;
                        let means: Vec<Vec<f64>> = acc.iter().map(|a| a.iter().map(|s| s / m).collect()).collect();
                        let params = HyperParams { n_trees: t + 1, ..g };
                        out.push((params, score_outputs(d, &test_idx, &means, metric)));
                        next += 1;
                    }
                }
                Ok(out)
            })
            .collect();
        let mut by_params: Vec<(HyperParams, FoldScores)> = Vec::new();
        for s in scored {
            by_params.extend(s?);
        }
        let mut best: Option<(usize, HyperParams, FoldScores)> = None;
        for (pos, p) in points.iter().enumerate() {
            let s = by_params.iter().find(|(q, _)| q == p).expect("every grid point scored").1;
            rows.push(CvRow {
                fold,
                params: *p,
                scores: s,
            });
            let replace = match &best {
                None => true,
                Some((bpos, bp, bs)) => better((s.primary(), p, pos), (bs.primary(), bp, *bpos)),
            };
            if replace {
                best = Some((pos, *p, s));
            }
        }
        let (_, params, scores) = best.expect("non-empty grid");
        let model = fit_forest(&train, &params, seed)?;
        outcomes.push(FoldOutcome {
            fold,
            params,
            scores,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            model,
        });
    }
    Ok(GridSearchResult {
        metric,
        rows,
        folds: outcomes,
        skipped,
    })
}

/// Agreeing folds required out of `k`: a strict majority, 3 of 5.
pub fn majority_needed(k: usize) -> usize {
    (k + 2) / 2
}

/// Retained iff at least a majority of fold probabilities are >= 0.5.
pub fn vote_filter(per_fold_probs: &[f64]) -> bool {
    if per_fold_probs.is_empty() {
        return false;
    }
    let votes = per_fold_probs.iter().filter(|&&p| p >= 0.5).count();
    votes >= majority_needed(per_fold_probs.len())
}

/// Positive-class probability from each fold model for every row.
pub fn fold_probabilities(models: &[&ForestModel], d: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut per_model = Vec::with_capacity(models.len());
    for m in models {
        if m.classes().len() != 2 {
            return Err(Error::SchemaMismatch("fold voting needs binary classifiers".into()));
        }
        per_model.push(m.predict_rows(d)?);
    }
    Ok((0..d.n_rows()).map(|i| per_model.iter().map(|p| p[i][1]).collect()).collect())
}

/// Mean importance over a set of models.
pub fn mean_importance(models: &[&ForestModel]) -> Vec<f64> {
    let p = models.first().map_or(0, |m| m.columns.len());
    let trees: Vec<_> = models.iter().flat_map(|m| m.trees.iter().cloned()).collect();
    importance_of(&trees, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_single_fold() {
        let pts: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 5.0)).collect();
        let f = spatial_blocks(&pts, 25_000.0, 1, 0).unwrap();
        assert!(f.folds().iter().all(|&x| x == 1));
        assert!(matches!(spatial_blocks(&pts, 25_000.0, 5, 0), Err(Error::InsufficientBlocks { k: 5, blocks: 1 })));
    }

    #[test]
    fn lattice_deals_five_per_fold() {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                pts.push(Point::new(i as f64 * 25_000.0 + 10.0, j as f64 * 25_000.0 + 10.0));
            }
        }
        let f = spatial_blocks(&pts, 25_000.0, 5, 3).unwrap();
        for fold in 1..=5 {
            assert_eq!(f.folds().iter().filter(|&&x| x == fold).count(), 5);
        }
    }

    #[test]
    fn vote_examples() {
        assert!(vote_filter(&[0.6, 0.6, 0.6, 0.4, 0.4]));
        assert!(vote_filter(&[0.5, 0.5, 0.5, 0.0, 0.0]));
        assert!(!vote_filter(&[0.9, 0.9, 0.1, 0.1, 0.1]));
        assert!(!vote_filter(&[]));
        assert_eq!(majority_needed(4), 3);
        assert_eq!(majority_needed(3), 2);
    }

    #[test]
    fn binary_scores() {
        let s = classification_scores(&[1, 1, 0, 0], &[1, 0, 1, 0], 2, SelectionMetric::F1);
        assert_eq!(
            s,
            FoldScores::Classification {
                accuracy: 0.5,
                precision: 0.5,
                recall: 0.5,
                f1: 0.5
            }
        );
        let none = classification_scores(&[0, 0], &[1, 0], 2, SelectionMetric::F1);
        assert_eq!(none.primary(), 0.0);
    }

    #[test]
    fn tie_prefers_fewer_trees_then_shallower() {
        let a = HyperParams { n_trees: 100, max_depth: None, ..Default::default() };
        let b = HyperParams { n_trees: 200, max_depth: Some(10), ..Default::default() };
        assert!(better((0.9, &a, 5), (0.9, &b, 0)));
        let c = HyperParams { n_trees: 100, max_depth: Some(30), ..Default::default() };
        assert!(better((0.9, &c, 5), (0.9, &a, 0)));
        assert!(better((0.91, &b, 9), (0.9, &a, 0)));
    }
}
