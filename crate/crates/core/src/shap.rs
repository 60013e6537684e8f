//! Per-class SHAP attributions for the random forest.
//!
//! [`tree_shap`] is the exact path-dependent TreeSHAP recursion, using node
//! covers as the background distribution. [`brute_force_shapley`] sums over
//! every feature subset with the same cover-weighted conditional
//! expectations and serves as the reference implementation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::factors::{FactorCatalog, PrimaryCategory};
use crate::forest::{ForestError, RandomForestModel, TreeNode};

pub const MAX_BRUTE_FORCE_FEATURES: usize = 15;

#[derive(Debug, Error)]
pub enum ShapError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("brute-force Shapley values need at most {MAX_BRUTE_FORCE_FEATURES} features, got {0}")]
    TooManyFeatures(usize),
    #[error("SHAP matrix is empty")]
    Empty,
    #[error("class {0} out of range")]
    UnknownClass(usize),
    #[error("key-factor subset is empty")]
    EmptySubset,
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("beeswarm export: {0}")]
    Io(String),
}

/// Attributions for one sample: `phi[i * n_classes + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub n_features: usize,
    pub n_classes: usize,
    pub phi: Vec<f64>,
    pub base_values: Vec<f64>,
}

impl Explanation {
    pub fn get(&self, feature: usize, class: usize) -> f64 {
        self.phi[feature * self.n_classes + class]
    }

    /// φ₀ᶜ + Σᵢ φᵢᶜ for every class.
    pub fn reconstruct(&self) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| self.base_values[c] + (0..self.n_features).map(|i| self.get(i, c)).sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElem>, index: usize) {
    let l = path.len() - 1;
    let PathElem { zero, one, .. } = path[index];
    let denom = (l + 1) as f64;
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = next * denom / ((j + 1) as f64 * one);
            next = t - path[j].weight * zero * (l - j) as f64 / denom;
        } else {
            path[j].weight = path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    for j in index..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

/// Total path weight if element `index` were unwound, without mutating.
fn unwound_sum(path: &[PathElem], index: usize) -> f64 {
    let l = path.len() - 1;
    let PathElem { zero, one, .. } = path[index];
    let denom = (l + 1) as f64;
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[l].weight;
        for j in (0..l).rev() {
            let t = next * denom / ((j + 1) as f64 * one);
            total += t;
            next = path[j].weight - t * zero * (l - j) as f64 / denom;
        }
    } else {
        for j in (0..l).rev() {
            total += path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    total
}

struct TreeWalk<'a> {
    x: &'a [f64],
    n_classes: usize,
    phi: &'a mut [f64],
}

impl TreeWalk<'_> {
    fn recurse(&mut self, node: &TreeNode, mut path: Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
        extend(&mut path, zero, one, feature);
        match node {
            TreeNode::Leaf { distribution, .. } => {
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i) * (path[i].one - path[i].zero);
                    let f = path[i].feature.expect("only the root element has no feature");
                    for (c, v) in distribution.iter().enumerate() {
                        self.phi[f * self.n_classes + c] += w * v;
                    }
                }
            }
            TreeNode::Internal {
                feature: f,
                threshold,
                cover,
                left,
                right,
            } => {
                let (hot, cold) = if self.x[*f] <= *threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let (mut iz, mut io) = (1.0, 1.0);
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(*f)) {
                    iz = path[k].zero;
                    io = path[k].one;
                    unwind(&mut path, k);
                }
                self.recurse(hot, path.clone(), iz * hot.cover() / cover, io, Some(*f));
                self.recurse(cold, path, iz * cold.cover() / cover, 0.0, Some(*f));
            }
        }
    }
}

/// Exact SHAP values of the forest's class probabilities at `x`.
pub fn tree_shap(model: &RandomForestModel, x: &[f64]) -> Result<Explanation, ShapError> {
    model.predict_proba(x)?;
    Ok(tree_shap_unchecked(model, x))
}

fn tree_shap_unchecked(model: &RandomForestModel, x: &[f64]) -> Explanation {
    let (m, k) = (model.n_features, model.n_classes);
    let mut phi = vec![0.0; m * k];
    let mut walk = TreeWalk {
        x,
        n_classes: k,
        phi: &mut phi,
    };
    for tree in &model.trees {
        walk.recurse(tree, Vec::with_capacity(32), 1.0, 1.0, None);
    }
    let n_trees = model.trees.len() as f64;
    phi.iter_mut().for_each(|v| *v /= n_trees);
    Explanation {
        n_features: m,
        n_classes: k,
        phi,
        base_values: model.expected_value(),
    }
}

/// Cover-weighted expectation of a tree's output when only the features in
/// `known` (a bit mask) are fixed to their values in `x`.
fn conditional_expectation(node: &TreeNode, x: &[f64], known: u32, out: &mut [f64], weight: f64) {
    match node {
        TreeNode::Leaf { distribution, .. } => {
            for (o, v) in out.iter_mut().zip(distribution) {
                *o += weight * v;
            }
        }
        TreeNode::Internal {
            feature,
            threshold,
            cover,
            left,
            right,
        } => {
            if known & (1 << feature) != 0 {
                let next = if x[*feature] <= *threshold { left } else { right };
                conditional_expectation(next, x, known, out, weight);
            } else {
                conditional_expectation(left, x, known, out, weight * left.cover() / cover);
                conditional_expectation(right, x, known, out, weight * right.cover() / cover);
            }
        }
    }
}

/// Shapley values by direct summation over all 2ᵐ subsets.
pub fn brute_force_shapley(model: &RandomForestModel, x: &[f64]) -> Result<Explanation, ShapError> {
    let (m, k) = (model.n_features, model.n_classes);
    if m > MAX_BRUTE_FORCE_FEATURES {
        return Err(ShapError::TooManyFeatures(m));
    }
    model.predict_proba(x)?;
    let n_trees = model.trees.len() as f64;
    let values: Vec<Vec<f64>> = (0..1u32 << m)
        .map(|mask| {
            let mut out = vec![0.0; k];
            for tree in &model.trees {
                conditional_expectation(tree, x, mask, &mut out, 1.0 / n_trees);
            }
            out
        })
        .collect();

    let mut factorial = vec![1.0f64; m + 1];
    for i in 1..=m {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; m * k];
    for i in 0..m {
        let bit = 1u32 << i;
        for mask in 0..1u32 << m {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial[s] * factorial[m - s - 1] / factorial[m];
            for c in 0..k {
                phi[i * k + c] += w * (values[(mask | bit) as usize][c] - values[mask as usize][c]);
            }
        }
    }
    Ok(Explanation {
        n_features: m,
        n_classes: k,
        phi,
        base_values: values[0].clone(),
    })
}

/// Attributions for a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapMatrix {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Indexed `[(sample * n_features + feature) * n_classes + class]`.
    pub values: Vec<f64>,
    pub base_values: Vec<f64>,
}

impl ShapMatrix {
    pub fn compute(model: &RandomForestModel, x: &Matrix) -> Result<Self, ShapError> {
        for r in 0..x.rows() {
            model.predict_proba(x.row(r))?;
        }
        let per_sample: Vec<Explanation> = (0..x.rows())
            .into_par_iter()
            .map(|r| tree_shap_unchecked(model, x.row(r)))
            .collect();
        let mut values = Vec::with_capacity(x.rows() * model.n_features * model.n_classes);
        for e in &per_sample {
            values.extend_from_slice(&e.phi);
        }
        Ok(ShapMatrix {
            n_samples: x.rows(),
            n_features: model.n_features,
            n_classes: model.n_classes,
            values,
            base_values: model.expected_value(),
        })
    }

    pub fn get(&self, sample: usize, feature: usize, class: usize) -> f64 {
        self.values[(sample * self.n_features + feature) * self.n_classes + class]
    }

    /// Mean |φ| per class and feature: `[class][feature]`.
    pub fn per_class_importance(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_features]; self.n_classes];
        for s in 0..self.n_samples {
            for i in 0..self.n_features {
                for (c, row) in out.iter_mut().enumerate() {
                    row[i] += self.get(s, i, c).abs();
                }
            }
        }
        let n = self.n_samples.max(1) as f64;
        out.iter_mut().flatten().for_each(|v| *v /= n);
        out
    }

    /// Writes one row per (factor, sample, class).
    pub fn write_beeswarm(
        &self,
        feature_ids: &[String],
        sample_ids: &[String],
        x: &Matrix,
        class_names: &[&str],
        path: &Path,
    ) -> Result<(), ShapError> {
        let io = |e: csv::Error| ShapError::Io(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["factor_id", "sample_id", "class", "shap_value", "factor_value"])
            .map_err(io)?;
        for (i, fid) in feature_ids.iter().enumerate() {
            for (s, sid) in sample_ids.iter().enumerate() {
                for (c, cname) in class_names.iter().enumerate() {
                    w.write_record([
                        fid.as_str(),
                        sid.as_str(),
                        cname,
                        &self.get(s, i, c).to_string(),
                        &x.get(s, i).to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| ShapError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceScope {
    Global,
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: String,
    /// Position of the factor in the dataset's column order.
    pub index: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImportanceRank {
    pub entries: Vec<RankEntry>,
}

impl ImportanceRank {
    /// Sorts descending by importance; ties keep column order.
    pub fn from_importances(ids: &[String], importance: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
        ImportanceRank {
            entries: order
                .into_iter()
                .map(|i| RankEntry {
                    id: ids[i].clone(),
                    index: i,
                    importance: importance[i],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn importance_of(&self, id: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.importance)
    }
}

pub fn aggregate_importance(
    shap: &ShapMatrix,
    feature_ids: &[String],
    scope: ImportanceScope,
) -> Result<ImportanceRank, ShapError> {
    if shap.n_samples == 0 {
        return Err(ShapError::Empty);
    }
    let per_class = shap.per_class_importance();
    let importance: Vec<f64> = match scope {
        ImportanceScope::Global => (0..shap.n_features)
            .map(|i| per_class.iter().map(|row| row[i]).sum::<f64>() / shap.n_classes as f64)
            .collect(),
        ImportanceScope::Class(c) => per_class.get(c).cloned().ok_or(ShapError::UnknownClass(c))?,
    };
    Ok(ImportanceRank::from_importances(feature_ids, &importance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: PrimaryCategory,
    pub share: f64,
}

/// Normalised per-category importance of the key factors, in category order.
/// When every key factor has zero importance the share is split evenly over
/// the categories present.
pub fn category_aggregate(
    importance: &[(String, f64)],
    key_factors: &[String],
    catalog: &FactorCatalog,
) -> Result<Vec<CategoryShare>, ShapError> {
    if key_factors.is_empty() {
        return Err(ShapError::EmptySubset);
    }
    let mut sums: Vec<(PrimaryCategory, f64)> = Vec::new();
    for id in key_factors {
        let desc = catalog.get(id).ok_or_else(|| ShapError::UnknownFactor(id.clone()))?;
        let value = importance
            .iter()
            .find(|(fid, _)| fid == id)
            .map(|(_, v)| *v)
            .ok_or_else(|| ShapError::UnknownFactor(id.clone()))?;
        match sums.iter_mut().find(|(c, _)| *c == desc.category()) {
            Some(entry) => entry.1 += value,
            None => sums.push((desc.category(), value)),
        }
    }
    sums.sort_by_key(|(c, _)| *c);
    let total: f64 = sums.iter().map(|(_, v)| v).sum();
    let n = sums.len() as f64;
    Ok(sums
        .into_iter()
        .map(|(category, v)| CategoryShare {
            category,
            share: if total > 0.0 { v / total } else { 1.0 / n },
        })
        .collect())
}
