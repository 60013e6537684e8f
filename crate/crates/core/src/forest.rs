//! Random-forest classifier grown from CART trees with Gini splits.
//!
//! Every node records its training cover (the bootstrap-weighted number of
//! samples reaching it), which TreeSHAP uses as the background distribution.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabeledMatrix, Matrix};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set contains a single class")]
    SingleClass,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature value at position {0}")]
    NonFinite(usize),
    #[error("class counts are all zero")]
    EmptyCounts,
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until the leaf-size limit stops splitting.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means ⌈√m⌉.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            max_depth: Some(16),
            min_samples_leaf: 5,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::InvalidConfig("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(ForestError::InvalidConfig("mtry must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mtry_for(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    /// Samples with `x[feature] <= threshold` go left.
    Internal {
        feature: usize,
        threshold: f64,
        cover: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        distribution: Vec<f64>,
        cover: f64,
    },
}

impl TreeNode {
    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Internal { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }

    pub fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { distribution, .. } => return distribution,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Calls `f(feature)` for every split in the tree.
    pub fn visit_features(&self, f: &mut impl FnMut(usize)) {
        if let TreeNode::Internal {
            feature, left, right, ..
        } = self
        {
            f(*feature);
            left.visit_features(f);
            right.visit_features(f);
        }
    }

    /// Cover-weighted mean leaf distribution: the expected output with no
    /// feature known.
    pub fn expected_value(&self) -> Vec<f64> {
        match self {
            TreeNode::Leaf { distribution, .. } => distribution.clone(),
            TreeNode::Internal { cover, left, right, .. } => {
                let l = left.expected_value();
                let r = right.expected_value();
                let (wl, wr) = (left.cover() / cover, right.cover() / cover);
                l.iter().zip(&r).map(|(a, b)| wl * a + wr * b).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub format_version: u32,
    pub config: ForestConfig,
    pub n_classes: usize,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

/// 1 − Σ (c_i / N)².
pub fn gini_impurity(class_counts: &[f64]) -> Result<f64, ForestError> {
    let total: f64 = class_counts.iter().sum();
    if class_counts.iter().any(|c| *c < 0.0) || total <= 0.0 {
        return Err(ForestError::EmptyCounts);
    }
    Ok(1.0 - class_counts.iter().map(|c| (c / total).powi(2)).sum::<f64>())
}

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    n_classes: usize,
    config: &'a ForestConfig,
    mtry: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf(&self, samples: &[(usize, f64)], cover: f64) -> TreeNode {
        let mut dist = vec![0.0; self.n_classes];
        for &(i, w) in samples {
            dist[self.y[i]] += w;
        }
        for v in &mut dist {
            *v /= cover;
        }
        TreeNode::Leaf { distribution: dist, cover }
    }

    fn grow(&self, samples: Vec<(usize, f64)>, depth: usize, rng: &mut ChaCha8Rng) -> TreeNode {
        let cover: f64 = samples.iter().map(|s| s.1).sum();
        let mut counts = vec![0.0; self.n_classes];
        for &(i, w) in &samples {
            counts[self.y[i]] += w;
        }
        let pure = counts.iter().filter(|c| **c > 0.0).count() <= 1;
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        let min_leaf = self.config.min_samples_leaf as f64;
        if pure || depth_capped || cover < 2.0 * min_leaf {
            return self.leaf(&samples, cover);
        }

        let split = match self.best_split(&samples, &counts, cover, rng) {
            Some(s) => s,
            None => return self.leaf(&samples, cover),
        };
        let (left, right): (Vec<_>, Vec<_>) = samples
            .into_iter()
            .partition(|&(i, _)| self.x.get(i, split.feature) <= split.threshold);
        TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            cover,
            left: Box::new(self.grow(left, depth + 1, rng)),
            right: Box::new(self.grow(right, depth + 1, rng)),
        }
    }

    /// Best Gini split over `mtry` randomly drawn features. Ties go to the
    /// lower feature index, then the lower threshold.
    fn best_split(&self, samples: &[(usize, f64)], counts: &[f64], total: f64, rng: &mut ChaCha8Rng) -> Option<Split> {
        let m = self.x.cols();
        let mut features: Vec<usize> = sample_indices(rng, m, self.mtry).into_vec();
        features.sort_unstable();

        // maximising Σ l²/L + Σ r²/R is minimising the weighted child impurity
        let parent_score: f64 = counts.iter().map(|c| c * c).sum::<f64>() / total;
        let min_leaf = self.config.min_samples_leaf as f64;
        let mut best: Option<(f64, Split)> = None;
        let mut col: Vec<(f64, usize, f64)> = Vec::with_capacity(samples.len());
        let mut left = vec![0.0; self.n_classes];

        for &f in &features {
            col.clear();
            col.extend(samples.iter().map(|&(i, w)| (self.x.get(i, f), self.y[i], w)));
            col.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if col[0].0 == col[col.len() - 1].0 {
                continue;
            }
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut l_sq = 0.0;
            let mut r_sq: f64 = counts.iter().map(|c| c * c).sum();
            let mut l_n = 0.0;
            for k in 0..col.len() - 1 {
                let (v, c, w) = col[k];
                let rc = counts[c] - left[c];
                r_sq += (rc - w) * (rc - w) - rc * rc;
                l_sq += (left[c] + w) * (left[c] + w) - left[c] * left[c];
                left[c] += w;
                l_n += w;
                let next = col[k + 1].0;
                if v == next {
                    continue;
                }
                let r_n = total - l_n;
                if l_n < min_leaf || r_n < min_leaf {
                    continue;
                }
                let score = l_sq / l_n + r_sq / r_n;
                let better = match &best {
                    None => true,
                    Some((s, _)) => score > *s,
                };
                if better {
                    let mut threshold = 0.5 * (v + next);
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some((score, Split { feature: f, threshold }));
                }
            }
        }
        match best {
            Some((score, split)) if score > parent_score * (1.0 + 1e-12) => Some(split),
            _ => None,
        }
    }
}

fn check_row(x: &[f64], n_features: usize) -> Result<(), ForestError> {
    if x.len() != n_features {
        return Err(ForestError::DimensionMismatch {
            expected: n_features,
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(ForestError::NonFinite(i));
    }
    Ok(())
}

impl RandomForestModel {
    pub fn fit(data: &LabeledMatrix, config: &ForestConfig) -> Result<Self, ForestError> {
        config.validate()?;
        if data.is_empty() {
            return Err(ForestError::EmptyDataset);
        }
        if data.class_counts().iter().filter(|c| **c > 0).count() < 2 {
            return Err(ForestError::SingleClass);
        }
        for i in 0..data.len() {
            check_row(data.x.row(i), data.n_features())?;
        }
        let grower = Grower {
            x: &data.x,
            y: &data.y,
            n_classes: data.n_classes,
            config,
            mtry: config.mtry_for(data.n_features()),
        };
        let n = data.len();
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ t as u64);
                let samples: Vec<(usize, f64)> = if config.bootstrap {
                    let mut multiplicity = vec![0u32; n];
                    for _ in 0..n {
                        multiplicity[rng.random_range(0..n)] += 1;
                    }
                    multiplicity
                        .iter()
                        .enumerate()
                        .filter(|(_, m)| **m > 0)
                        .map(|(i, m)| (i, *m as f64))
                        .collect()
                } else {
                    (0..n).map(|i| (i, 1.0)).collect()
                };
                grower.grow(samples, 0, &mut rng)
            })
            .collect();
        Ok(RandomForestModel {
            format_version: MODEL_FORMAT_VERSION,
            config: config.clone(),
            n_classes: data.n_classes,
            n_features: data.n_features(),
            trees,
        })
    }

    /// Builds a model from explicit trees (hand-made fixtures, deserialised models).
    pub fn from_trees(trees: Vec<TreeNode>, n_classes: usize, n_features: usize) -> Self {
        RandomForestModel {
            format_version: MODEL_FORMAT_VERSION,
            config: ForestConfig {
                n_trees: trees.len(),
                ..ForestConfig::default()
            },
            n_classes,
            n_features,
            trees,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ForestError> {
        check_row(x, self.n_features)?;
        Ok(self.predict_proba_unchecked(x))
    }

    pub(crate) fn predict_proba_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (o, p) in out.iter_mut().zip(t.leaf(x)) {
                *o += p;
            }
        }
        let k = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= k);
        out
    }

    /// Most probable class; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, ForestError> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn predict_proba_matrix(&self, x: &Matrix) -> Result<Vec<Vec<f64>>, ForestError> {
        (0..x.rows()).map(|i| self.predict_proba(x.row(i))).collect()
    }

    /// Mean of the per-tree expected values.
    pub fn expected_value(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.expected_value()) {
                *o += v;
            }
        }
        let k = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= k);
        out
    }

    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.n_features];
        for t in &self.trees {
            t.visit_features(&mut |f| used[f] = true);
        }
        used
    }

    pub fn save(&self, path: &Path) -> Result<(), ForestError> {
        let f = File::create(path).map_err(|e| ForestError::Io(e.to_string()))?;
        serde_json::to_writer(BufWriter::new(f), self).map_err(|e| ForestError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ForestError> {
        let f = File::open(path).map_err(|e| ForestError::Io(format!("{}: {e}", path.display())))?;
        let model: RandomForestModel =
            serde_json::from_reader(BufReader::new(f)).map_err(|e| ForestError::Io(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ForestError::Io(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(dist: &[f64], cover: f64) -> TreeNode {
        TreeNode::Leaf {
            distribution: dist.to_vec(),
            cover,
        }
    }

    fn stump(feature: usize, threshold: f64, l: TreeNode, r: TreeNode) -> TreeNode {
        let cover = l.cover() + r.cover();
        TreeNode::Internal {
            feature,
            threshold,
            cover,
            left: Box::new(l),
            right: Box::new(r),
        }
    }

    fn separable(n: usize, seed: u64) -> LabeledMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            rows.push([a, b]);
            y.push(usize::from(a > 0.0));
        }
        LabeledMatrix::new(Matrix::from_rows(&rows, 2), y, 2, vec!["x1".into(), "x2".into()])
    }

    fn walk(node: &TreeNode, f: &mut impl FnMut(&TreeNode)) {
        f(node);
        if let TreeNode::Internal { left, right, .. } = node {
            walk(left, f);
            walk(right, f);
        }
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity(&[10.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((gini_impurity(&[5.0, 5.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((gini_impurity(&[1.0, 1.0, 1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(gini_impurity(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let data = separable(200, 3);
        let cfg = ForestConfig {
            n_trees: 10,
            max_depth: Some(1),
            min_samples_leaf: 1,
            mtry: Some(2),
            bootstrap: false,
            seed: 1,
        };
        let model = RandomForestModel::fit(&data, &cfg).unwrap();
        for i in 0..data.len() {
            assert_eq!(model.predict(data.x.row(i)).unwrap(), data.y[i]);
        }
        let cfg = ForestConfig {
            n_trees: 25,
            min_samples_leaf: 1,
            ..ForestConfig::default()
        };
        let model = RandomForestModel::fit(&data, &cfg).unwrap();
        let correct = (0..data.len()).filter(|&i| model.predict(data.x.row(i)).unwrap() == data.y[i]).count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = separable(150, 9);
        let cfg = ForestConfig {
            n_trees: 15,
            seed: 42,
            ..ForestConfig::default()
        };
        let a = RandomForestModel::fit(&data, &cfg).unwrap();
        let b = RandomForestModel::fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        for probe in [[0.1, 0.2], [-0.3, 0.9], [0.0, 0.0]] {
            assert_eq!(a.predict_proba(&probe).unwrap(), b.predict_proba(&probe).unwrap());
        }
    }

    #[test]
    fn oversized_leaf_limit_gives_prior_leaves() {
        let data = separable(60, 5);
        let cfg = ForestConfig {
            n_trees: 3,
            min_samples_leaf: data.len(),
            bootstrap: false,
            ..ForestConfig::default()
        };
        let model = RandomForestModel::fit(&data, &cfg).unwrap();
        let counts = data.class_counts();
        let prior: Vec<f64> = counts.iter().map(|c| *c as f64 / data.len() as f64).collect();
        for t in &model.trees {
            assert!(matches!(t, TreeNode::Leaf { .. }));
        }
        let p = model.predict_proba(&[0.5, 0.5]).unwrap();
        for (a, b) in p.iter().zip(&prior) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_built_forest_averages_leaves() {
        let t1 = stump(0, 0.5, leaf(&[1.0, 0.0], 3.0), leaf(&[0.25, 0.75], 4.0));
        let t2 = stump(1, 2.0, leaf(&[0.5, 0.5], 2.0), leaf(&[0.0, 1.0], 2.0));
        let model = RandomForestModel::from_trees(vec![t1, t2], 2, 2);
        let p = model.predict_proba(&[0.7, 1.0]).unwrap();
        assert_eq!(p, vec![(0.25 + 0.5) / 2.0, (0.75 + 0.5) / 2.0]);
        assert!(matches!(
            model.predict_proba(&[1.0]),
            Err(ForestError::DimensionMismatch { .. })
        ));
        assert!(matches!(model.predict_proba(&[f64::NAN, 1.0]), Err(ForestError::NonFinite(0))));
    }

    #[test]
    fn single_class_is_rejected() {
        let data = LabeledMatrix::new(Matrix::from_rows(&[[1.0], [2.0]], 1), vec![0, 0], 2, vec!["a".into()]);
        assert!(matches!(
            RandomForestModel::fit(&data, &ForestConfig::default()),
            Err(ForestError::SingleClass)
        ));
    }

    #[test]
    fn structural_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<[f64; 4]> = (0..300)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
            .collect();
        let y: Vec<usize> = rows.iter().map(|r| ((r[0] + r[1] * 0.5) * 3.0) as usize % 3).collect();
        let data = LabeledMatrix::new(Matrix::from_rows(&rows, 4), y, 3, (0..4).map(|i| format!("f{i}")).collect());
        let cfg = ForestConfig {
            n_trees: 20,
            min_samples_leaf: 3,
            seed: 3,
            ..ForestConfig::default()
        };
        let model = RandomForestModel::fit(&data, &cfg).unwrap();
        for t in &model.trees {
            walk(t, &mut |node| match node {
                TreeNode::Internal {
                    feature,
                    cover,
                    left,
                    right,
                    ..
                } => {
                    assert!(*feature < 4);
                    assert_eq!(left.cover() + right.cover(), *cover);
                    assert!(left.cover() >= 3.0 && right.cover() >= 3.0);
                }
                TreeNode::Leaf { distribution, .. } => {
                    assert!((distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            });
        }
        for i in 0..data.len() {
            let p = model.predict_proba(data.x.row(i)).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn monotone_transform_leaves_predictions_unchanged() {
        let data = separable(120, 21);
        let mut transformed = data.clone();
        for i in 0..data.len() {
            let v = data.x.get(i, 0);
            transformed.x.set(i, 0, v.exp());
        }
        let cfg = ForestConfig {
            n_trees: 8,
            min_samples_leaf: 2,
            seed: 5,
            ..ForestConfig::default()
        };
        let a = RandomForestModel::fit(&data, &cfg).unwrap();
        let b = RandomForestModel::fit(&transformed, &cfg).unwrap();
        for i in 0..data.len() {
            let mut q = data.x.row(i).to_vec();
            q[0] += 0.013;
            let mut qt = q.clone();
            qt[0] = qt[0].exp();
            assert_eq!(a.predict(&q).unwrap(), b.predict(&qt).unwrap());
        }
    }

    #[test]
    fn model_json_round_trip() {
        let data = separable(50, 2);
        let cfg = ForestConfig {
            n_trees: 3,
            ..ForestConfig::default()
        };
        let model = RandomForestModel::fit(&data, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        assert_eq!(RandomForestModel::load(&path).unwrap(), model);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }
}
