//! Random forests of CART trees for classification and regression, with
//! spatial cross-validation and the fold-voting filter.
//!
//! Tree `i` of a forest fitted with seed `s` draws its bootstrap sample and
//! split features from a stream seeded with `s + i`. Trees are therefore
//! independent of each other and of the ensemble size: the first `m` trees of
//! a 500-tree forest are exactly the `m`-tree forest. Grid search relies on
//! this to score every `n_trees` value from a single fit.

mod cv;
mod io;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::par::into_par_iter;
#[allow(unused_imports)]
use crate::par::prelude::*;

pub use cv::{
    classification_scores, fold_probabilities, grid_search_cv, majority_needed, mean_importance, spatial_blocks, vote_filter, CvRow,
    FoldAssignment, FoldOutcome, FoldScores,
    GridSearchResult, SelectionMetric, SkippedFold,
};
pub use io::{load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT_VERSION};
pub use tree::Tree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Classes { labels: Vec<usize>, names: Vec<String> },
    Values(Vec<f64>),
}

/// Row-major feature matrix with named columns and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    x: Vec<f64>,
    n_rows: usize,
    pub target: Target,
    pub locations: Option<Vec<Point>>,
}

impl Dataset {
    fn build(columns: Vec<String>, rows: &[Vec<f64>], target: Target) -> Result<Self> {
        let p = columns.len();
        if p == 0 {
            return Err(Error::InvalidDataset("no feature columns".into()));
        }
        let mut x = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::InvalidDataset(format!("row {i} has {} values for {p} columns", r.len())));
            }
            if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("row {i} has non-finite value {v}")));
            }
            x.extend_from_slice(r);
        }
        let n_targets = match &target {
            Target::Classes { labels, names } => {
                if let Some(&l) = labels.iter().find(|&&l| l >= names.len()) {
                    return Err(Error::InvalidDataset(format!("label {l} outside {} classes", names.len())));
                }
                labels.len()
            }
            Target::Values(v) => {
                if v.iter().any(|t| !t.is_finite()) {
                    return Err(Error::InvalidDataset("non-finite target".into()));
                }
                v.len()
            }
        };
        if n_targets != rows.len() {
            return Err(Error::InvalidDataset(format!("{} rows, {n_targets} targets", rows.len())));
        }
        Ok(Dataset {
            columns,
            x,
            n_rows: rows.len(),
            target,
            locations: None,
        })
    }

    pub fn classification(columns: Vec<String>, rows: &[Vec<f64>], labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        Dataset::build(columns, rows, Target::Classes { labels, names: class_names })
    }

    pub fn regression(columns: Vec<String>, rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        Dataset::build(columns, rows, Target::Values(targets))
    }

    pub fn with_locations(mut self, locations: Vec<Point>) -> Result<Self> {
        if locations.len() != self.n_rows {
            return Err(Error::InvalidDataset(format!("{} rows, {} locations", self.n_rows, locations.len())));
        }
        self.locations = Some(locations);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.x[row * self.columns.len() + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.columns.len();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.target {
            Target::Classes { labels, .. } => Some(labels),
            Target::Values(_) => None,
        }
    }

    pub fn class_names(&self) -> Option<&[String]> {
        match &self.target {
            Target::Classes { names, .. } => Some(names),
            Target::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.target {
            Target::Values(v) => Some(v),
            Target::Classes { .. } => None,
        }
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let p = self.columns.len();
        let mut x = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        let target = match &self.target {
            Target::Classes { labels, names } => Target::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                names: names.clone(),
            },
            Target::Values(v) => Target::Values(idx.iter().map(|&i| v[i]).collect()),
        };
        Dataset {
            columns: self.columns.clone(),
            x,
            n_rows: idx.len(),
            target,
            locations: self.locations.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Number of rows per class.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        let Target::Classes { labels, names } = &self.target else {
            return None;
        };
        let mut c = vec![0; names.len()];
        labels.iter().for_each(|&l| c[l] += 1);
        Some(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    All,
}

impl MaxFeatures {
    /// Features drawn per split out of `p`.
    pub fn count(self, p: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (p as f64).sqrt().ceil() as usize,
            MaxFeatures::Log2 => (p as f64).log2().ceil() as usize,
            MaxFeatures::All => p,
        };
        k.clamp(1, p.max(1))
    }

    pub fn name(self) -> &'static str {
        match self {
            MaxFeatures::Sqrt => "sqrt",
            MaxFeatures::Log2 => "log2",
            MaxFeatures::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_split: usize,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            n_trees: 100,
            max_depth: None,
            min_split: 2,
            min_leaf: 1,
            max_features: MaxFeatures::Sqrt,
        }
    }
}

impl HyperParams {
    /// Stable label, e.g. `n_trees=100;max_depth=none;min_split=2;min_leaf=1;max_features=sqrt`.
    pub fn label(&self) -> String {
        format!(
            "n_trees={};max_depth={};min_split={};min_leaf={};max_features={}",
            self.n_trees,
            self.max_depth.map_or("none".to_string(), |d| d.to_string()),
            self.min_split,
            self.min_leaf,
            self.max_features.name()
        )
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_split < 2 || self.min_leaf == 0 || self.max_depth == Some(0) {
            return Err(Error::Config(format!("invalid hyperparameters {}", self.label())));
        }
        Ok(())
    }
}

/// Candidate values for each hyperparameter family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub min_split: Vec<usize>,
    pub min_leaf: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
}

impl HyperGrid {
    /// Trees {100, 200, 300, 500}, depth {none, 10, 20, 30}, min split
    /// {2, 5, 10}, min leaf {1, 2, 4}, features per split {sqrt, log2}.
    pub fn standard() -> Self {
        HyperGrid {
            n_trees: vec![100, 200, 300, 500],
            max_depth: vec![None, Some(10), Some(20), Some(30)],
            min_split: vec![2, 5, 10],
            min_leaf: vec![1, 2, 4],
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Log2],
        }
    }

    pub fn single(p: HyperParams) -> Self {
        HyperGrid {
            n_trees: vec![p.n_trees],
            max_depth: vec![p.max_depth],
            min_split: vec![p.min_split],
            min_leaf: vec![p.min_leaf],
            max_features: vec![p.max_features],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_trees.is_empty()
            || self.max_depth.is_empty()
            || self.min_split.is_empty()
            || self.min_leaf.is_empty()
            || self.max_features.is_empty()
    }

    /// All combinations, `n_trees` varying fastest.
    pub fn points(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &max_features in &self.max_features {
            for &max_depth in &self.max_depth {
                for &min_split in &self.min_split {
                    for &min_leaf in &self.min_leaf {
                        for &n_trees in &self.n_trees {
                            out.push(HyperParams {
                                n_trees,
                                max_depth,
                                min_split,
                                min_leaf,
                                max_features,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Classifier { classes: Vec<String> },
    Regressor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub task: Task,
    pub columns: Vec<String>,
    pub schema_hash: String,
    pub params: HyperParams,
    pub seed: u64,
    pub n_train: usize,
    pub trees: Vec<Tree>,
}

/// Hash over column names and task; any rename or reorder changes it.
pub fn schema_hash(columns: &[String], task: &Task) -> String {
    let mut h = Sha256::new();
    for c in columns {
        h.update(c.as_bytes());
        h.update(b"\n");
    }
    match task {
        Task::Classifier { classes } => {
            h.update(b"classifier:");
            for c in classes {
                h.update(c.as_bytes());
                h.update(b"\n");
            }
        }
        Task::Regressor => h.update(b"regressor"),
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(tree as u64))
}

fn bootstrap(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Row indices drawn for tree `tree` of a forest fitted with `seed` on `n`
/// rows.
pub fn bootstrap_indices(seed: u64, tree: usize, n: usize) -> Vec<usize> {
    bootstrap(&mut tree_rng(seed, tree), n)
}

pub fn fit_forest(d: &Dataset, params: &HyperParams, seed: u64) -> Result<ForestModel> {
    params.validate()?;
    let task = match &d.target {
        Target::Classes { labels, names } => {
            let mut seen = vec![false; names.len()];
            labels.iter().for_each(|&l| seen[l] = true);
            if seen.iter().filter(|&&s| s).count() < 2 {
                return Err(Error::DegenerateTraining("classifier needs at least two classes present".into()));
            }
            Task::Classifier { classes: names.clone() }
        }
        Target::Values(v) => {
            if v.iter().all(|&t| t == v[0]) {
                return Err(Error::DegenerateTraining("regression target is constant".into()));
            }
            Task::Regressor
        }
    };
    let n = d.n_rows();
    let trees: Vec<Tree> = into_par_iter!(0..params.n_trees)
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let sample = bootstrap(&mut rng, n);
            tree::build_tree(d, sample, params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        schema_hash: schema_hash(d.columns(), &task),
        task,
        columns: d.columns().to_vec(),
        params: *params,
        seed,
        n_train: n,
        trees,
    })
}

impl ForestModel {
    pub fn is_classifier(&self) -> bool {
        matches!(self.task, Task::Classifier { .. })
    }

    pub fn classes(&self) -> &[String] {
        match &self.task {
            Task::Classifier { classes } => classes,
            Task::Regressor => &[],
        }
    }

    pub fn n_outputs(&self) -> usize {
        match &self.task {
            Task::Classifier { classes } => classes.len(),
            Task::Regressor => 1,
        }
    }

    /// Fails unless `columns` is exactly the training schema.
    pub fn check_schema(&self, columns: &[String]) -> Result<()> {
        if schema_hash(columns, &self.task) != self.schema_hash {
            return Err(Error::SchemaMismatch(format!(
                "model expects [{}], got [{}]",
                self.columns.join(","),
                columns.join(",")
            )));
        }
        Ok(())
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} values, model has {} features",
                row.len(),
                self.columns.len()
            )));
        }
        Ok(())
    }

    /// Mean over trees of the leaf values, accumulated in tree order.
    fn mean_output(&self, trees: &[Tree], row: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_outputs()];
        for t in trees {
            for (a, v) in acc.iter_mut().zip(t.leaf_value(row)) {
                *a += v;
            }
        }
        let n = trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Class probabilities (classifier).
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_row(row)?;
        if !self.is_classifier() {
            return Err(Error::SchemaMismatch("regressor has no class probabilities".into()));
        }
        Ok(self.mean_output(&self.trees, row))
    }

    /// Predicted value (regressor).
    pub fn predict_value(&self, row: &[f64]) -> Result<f64> {
        self.check_row(row)?;
        if self.is_classifier() {
            return Err(Error::SchemaMismatch("classifier has no real-valued output".into()));
        }
        Ok(self.mean_output(&self.trees, row)[0])
    }

    /// Most probable class; ties go to the lower class index.
    pub fn predict_class(&self, row: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(row)?))
    }

    /// Outputs for every row of `d`, after checking its schema.
    pub fn predict_rows(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.check_schema(d.columns())?;
        let idx: Vec<usize> = (0..d.n_rows()).collect();
        Ok(into_par_iter!(idx).map(|i| self.mean_output(&self.trees, d.row(i))).collect())
    }

    /// Normalized mean decrease in impurity per feature.
    pub fn gini_importance(&self) -> Vec<f64> {
        importance_of(&self.trees, self.columns.len())
    }

    /// The forest made of the first `n` trees.
    pub fn truncated(&self, n: usize) -> ForestModel {
        let n = n.min(self.trees.len());
        ForestModel {
            params: HyperParams { n_trees: n, ..self.params },
            trees: self.trees[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Out-of-bag outputs for the training set `d`: for each row, the mean
    /// over trees whose bootstrap missed it.
    pub fn oob_outputs(&self, d: &Dataset) -> Result<Vec<Option<Vec<f64>>>> {
        self.check_schema(d.columns())?;
        if d.n_rows() != self.n_train {
            return Err(Error::InvalidDataset("out-of-bag needs the training set".into()));
        }
        let n = d.n_rows();
        let k = self.n_outputs();
        let mut acc = vec![vec![0.0; k]; n];
        let mut cnt = vec![0usize; n];
        for (t, tree) in self.trees.iter().enumerate() {
            let mut in_bag = vec![false; n];
            bootstrap_indices(self.seed, t, n).into_iter().for_each(|i| in_bag[i] = true);
            for i in (0..n).filter(|&i| !in_bag[i]) {
                for (a, v) in acc[i].iter_mut().zip(tree.leaf_value(d.row(i))) {
                    *a += v;
                }
                cnt[i] += 1;
            }
        }
        Ok(acc
            .into_iter()
            .zip(cnt)
            .map(|(a, c)| (c > 0).then(|| a.into_iter().map(|v| v / c as f64).collect()))
            .collect())
    }
}

pub(crate) fn importance_of(trees: &[Tree], p: usize) -> Vec<f64> {
    let mut imp = vec![0.0; p];
    for t in trees {
        for (a, v) in imp.iter_mut().zip(&t.importance) {
            *a += v;
        }
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    } else {
        imp.iter_mut().for_each(|v| *v = 1.0 / p as f64);
    }
    imp
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn cols(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("f{i}")).collect()
    }

    fn two_names() -> Vec<String> {
        vec!["neg".into(), "pos".into()]
    }

    /// Two Gaussian blobs in 2D whose means sit `margin` standard deviations
    /// either side of the separating line x0 = 0.
    pub(crate) fn blobs(n: usize, margin: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let mu = if c == 1 { margin } else { -margin };
            rows.push(vec![mu + z.sample(&mut rng), z.sample(&mut rng)]);
            labels.push(c);
        }
        Dataset::classification(cols(2), &rows, labels, two_names()).unwrap()
    }

    #[test]
    fn separable_single_feature() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let d = Dataset::classification(cols(1), &rows, labels.clone(), two_names()).unwrap();
        let m = fit_forest(&d, &HyperParams { n_trees: 25, ..Default::default() }, 1).unwrap();
        for (r, &l) in rows.iter().zip(&labels) {
            assert_eq!(m.predict_class(r).unwrap(), l);
        }
    }

    #[test]
    fn constant_regression_target_rejected() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let d = Dataset::regression(cols(1), &rows, vec![3.0; 10]).unwrap();
        assert!(matches!(fit_forest(&d, &HyperParams::default(), 0), Err(Error::DegenerateTraining(_))));
        let one_class = Dataset::classification(cols(1), &rows, vec![1; 10], two_names()).unwrap();
        assert!(matches!(fit_forest(&one_class, &HyperParams::default(), 0), Err(Error::DegenerateTraining(_))));
    }

    #[test]
    fn blobs_out_of_bag_accuracy() {
        let d = blobs(600, 3.0, 4);
        let m = fit_forest(&d, &HyperParams::default(), 9).unwrap();
        let oob = m.oob_outputs(&d).unwrap();
        let labels = d.labels().unwrap();
        let (mut hit, mut n) = (0, 0);
        for (o, &l) in oob.iter().zip(labels) {
            if let Some(p) = o {
                n += 1;
                hit += usize::from(argmax(p) == l);
            }
        }
        assert!(hit as f64 / n as f64 >= 0.95, "oob {}", hit as f64 / n as f64);
    }

    #[test]
    fn stump_leaf_distribution() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let d = Dataset::classification(cols(1), &rows, vec![0, 0, 1, 1], two_names()).unwrap();
        let p = HyperParams {
            n_trees: 1,
            max_depth: Some(1),
            ..Default::default()
        };
        let m = fit_forest(&d, &p, 3).unwrap();
        let t = &m.trees[0];
        assert_eq!(t.depth(), 1);
        let leaf = t.leaf(&[0.0]);
        let k = 2;
        let want = &t.value[leaf * k..leaf * k + k];
        assert_eq!(m.predict_proba(&[0.0]).unwrap(), want.to_vec());
        let imp = m.gini_importance();
        assert_eq!(imp, vec![1.0]);
    }

    #[test]
    fn tree_order_does_not_change_prediction() {
        let d = blobs(200, 1.0, 2);
        let m = fit_forest(&d, &HyperParams { n_trees: 30, ..Default::default() }, 5).unwrap();
        let mut rev = m.clone();
        rev.trees.reverse();
        for i in 0..50 {
            let a = m.predict_proba(d.row(i)).unwrap();
            let b = rev.predict_proba(d.row(i)).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-12);
            assert!((a[0] + a[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_region_probability() {
        let d = blobs(400, 4.0, 6);
        let m = fit_forest(&d, &HyperParams::default(), 1).unwrap();
        assert!(m.predict_proba(&[6.0, 0.0]).unwrap()[1] >= 0.9);
        assert!(m.predict_proba(&[-6.0, 0.0]).unwrap()[0] >= 0.9);
    }

    #[test]
    fn deterministic_and_prefix_consistent() {
        let d = blobs(300, 1.0, 8);
        let p = HyperParams { n_trees: 40, ..Default::default() };
        let a = fit_forest(&d, &p, 77).unwrap();
        let b = fit_forest(&d, &p, 77).unwrap();
        assert_eq!(a, b);
        let small = fit_forest(&d, &HyperParams { n_trees: 15, ..p }, 77).unwrap();
        assert_eq!(a.truncated(15), small);
    }

    #[test]
    fn depth_limit_and_min_leaf() {
        let d = blobs(300, 0.5, 1);
        for depth in [1, 2, 4] {
            let m = fit_forest(
                &d,
                &HyperParams {
                    n_trees: 10,
                    max_depth: Some(depth),
                    min_leaf: 3,
                    ..Default::default()
                },
                2,
            )
            .unwrap();
            for t in &m.trees {
                assert!(t.depth() <= depth);
                for n in 0..t.n_nodes() {
                    if t.feature[n] == tree::LEAF {
                        assert!(t.n_samples[n] >= 3);
                    }
                }
            }
        }
    }

    #[test]
    fn informative_feature_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let labels: Vec<usize> = rows.iter().map(|r| usize::from(r[3] > 0.5)).collect();
        let d = Dataset::classification(cols(5), &rows, labels, two_names()).unwrap();
        let m = fit_forest(&d, &HyperParams { n_trees: 50, ..Default::default() }, 4).unwrap();
        let imp = m.gini_importance();
        assert_eq!(argmax(&imp), 3);
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn noise_importances_roughly_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..300).map(|_| rng.gen_range(0..2)).collect();
        let d = Dataset::classification(cols(4), &rows, labels, two_names()).unwrap();
        let m = fit_forest(&d, &HyperParams { n_trees: 500, ..Default::default() }, 4).unwrap();
        let imp = m.gini_importance();
        let (lo, hi) = imp.iter().fold((f64::MAX, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi / lo < 3.0, "{imp:?}");
    }

    #[test]
    fn bootstrap_unique_fraction() {
        let n = 1000;
        let mut total = 0.0;
        for t in 0..200 {
            let mut seen = vec![false; n];
            let idx = bootstrap_indices(31, t, n);
            assert_eq!(idx.len(), n);
            idx.into_iter().for_each(|i| seen[i] = true);
            total += seen.iter().filter(|&&s| s).count() as f64 / n as f64;
        }
        let mean = total / 200.0;
        assert!((mean - (1.0 - (-1.0f64).exp())).abs() < 0.02, "{mean}");
    }

    #[test]
    fn regression_fits_step() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..100).map(|i| if i < 50 { 10.0 } else { 30.0 }).collect();
        let d = Dataset::regression(cols(1), &rows, y).unwrap();
        let m = fit_forest(&d, &HyperParams { n_trees: 20, ..Default::default() }, 2).unwrap();
        assert!((m.predict_value(&[10.0]).unwrap() - 10.0).abs() < 1.0);
        assert!((m.predict_value(&[90.0]).unwrap() - 30.0).abs() < 1.0);
        assert!(m.predict_proba(&[1.0]).is_err());
        assert!(matches!(m.predict_value(&[1.0, 2.0]), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn max_features_counts() {
        assert_eq!(MaxFeatures::Sqrt.count(20), 5);
        assert_eq!(MaxFeatures::Log2.count(20), 5);
        assert_eq!(MaxFeatures::Log2.count(1), 1);
        assert_eq!(MaxFeatures::Sqrt.count(2), 2);
        assert_eq!(HyperGrid::standard().points().len(), 288);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::regression(cols(2), &[vec![1.0]], vec![1.0]).is_err());
        assert!(Dataset::regression(cols(1), &[vec![f64::NAN]], vec![1.0]).is_err());
        assert!(Dataset::classification(cols(1), &[vec![1.0]], vec![5], two_names()).is_err());
    }
}
