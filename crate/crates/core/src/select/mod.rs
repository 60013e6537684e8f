//! Cross-validated key-factor selection: stratified folds, the top-n loop
//! over a (filtered) importance rank, the grid search over filter
//! parameters, and the unfiltered baseline.
//!
//! Two fold layouts are supported. [`Evaluator::faithful`] ranks and filters
//! once on the whole (already resampled) dataset and cross-validates on it.
//! [`Evaluator::nested`] splits the original samples first and repeats
//! resampling, ranking and correlation on every training portion, so
//! validation folds never influence a fitted model.

mod metrics;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledMatrix;
use crate::factors::FactorCatalog;
use crate::filter::{
    correlation_matrix, sliding_filter, CorrelationMatrix, CorrelationScope, FilterConfig, FilterError, FilterRound,
};
use crate::forest::{argmax, ForestConfig, ForestError, RandomForestModel};
use crate::resample::{smote_tomek, ResampleConfig, ResampleError, TargetCounts};
use crate::rng;
use crate::shap::{aggregate_importance, ImportanceRank, ImportanceScope, ShapError, ShapMatrix};

pub use metrics::{compute_metrics, roc_auc, ClassMetrics, CvMetrics, MetricSet, MetricSummary};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("class {class} has {size} samples, fewer than the {folds} folds")]
    ClassTooSmall { class: usize, size: usize, folds: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Shap(#[from] ShapError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Faithful,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub tau_values: Vec<f64>,
    pub window_values: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            tau_values: (1..=7).map(|i| i as f64 / 10.0).collect(),
            window_values: vec![5, 10, 15, 20, 25],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), SelectError> {
        let sorted_f = self.tau_values.windows(2).all(|w| w[0] < w[1]);
        let sorted_w = self.window_values.windows(2).all(|w| w[0] < w[1]);
        if self.tau_values.is_empty() || self.window_values.is_empty() || !sorted_f || !sorted_w {
            return Err(SelectError::InvalidConfig(
                "grid values must be non-empty and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Forest and SHAP settings for producing an importance rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingConfig {
    pub forest: ForestConfig,
    /// Number of samples explained; `None` explains every sample.
    pub shap_samples: Option<usize>,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            forest: ForestConfig::default(),
            shap_samples: Some(2000),
        }
    }
}

pub struct Ranking {
    pub model: RandomForestModel,
    /// Rows of the input that were explained.
    pub rows: Vec<usize>,
    pub shap: ShapMatrix,
    pub rank: ImportanceRank,
}

/// Fits a forest and ranks the columns by mean |SHAP| over samples and classes.
pub fn rank_factors(data: &LabeledMatrix, config: &RankingConfig) -> Result<Ranking, SelectError> {
    let model = RandomForestModel::fit(data, &config.forest)?;
    rank_with_model(model, data, config)
}

/// Ranks the columns of `data` with an already fitted `model`.
pub fn rank_with_model(
    model: RandomForestModel,
    data: &LabeledMatrix,
    config: &RankingConfig,
) -> Result<Ranking, SelectError> {
    let rows: Vec<usize> = match config.shap_samples {
        Some(cap) if cap < data.len() => {
            let mut r = rng::stream(config.forest.seed, "shap-samples", 0);
            let mut pick = sample_indices(&mut r, data.len(), cap).into_vec();
            pick.sort_unstable();
            pick
        }
        _ => (0..data.len()).collect(),
    };
    let shap = ShapMatrix::compute(&model, &data.x.select_rows(&rows))?;
    let rank = aggregate_importance(&shap, &data.feature_ids, ImportanceScope::Global)?;
    Ok(Ranking {
        model,
        rows,
        shap,
        rank,
    })
}

/// Fold id for every sample. Each class is shuffled and dealt round-robin,
/// continuing where the previous class stopped, so fold sizes and per-fold
/// class counts differ by at most one.
pub fn stratified_kfold(y: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<usize>, SelectError> {
    if k < 2 {
        return Err(SelectError::InvalidConfig(format!("{k} folds; at least 2 are needed")));
    }
    let mut fold = vec![0; y.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        if !members.is_empty() && members.len() < k {
            return Err(SelectError::ClassTooSmall {
                class: c,
                size: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut rng::stream(seed, "kfold", c as u64));
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

fn fold_rows(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != f)
}

fn fit_and_score(
    train: &LabeledMatrix,
    valid: &LabeledMatrix,
    subset: &[usize],
    forest: &ForestConfig,
    fold: usize,
) -> Result<MetricSet, SelectError> {
    let cfg = ForestConfig {
        seed: rng::derive(forest.seed, "cv-fold", fold as u64),
        ..forest.clone()
    };
    let model = RandomForestModel::fit(&train.select_cols(subset), &cfg)?;
    let v = valid.select_cols(subset);
    let proba = model.predict_proba_matrix(&v.x)?;
    let pred: Vec<usize> = proba.iter().map(|p| argmax(p)).collect();
    compute_metrics(&v.y, &pred, &proba, valid.n_classes)
}

/// Cross-validated metrics of a forest restricted to the `subset` columns.
/// The subset is put into column order first, so its ordering is irrelevant.
pub fn evaluate_cv(
    data: &LabeledMatrix,
    subset: &[usize],
    forest: &ForestConfig,
    cv: &CvConfig,
) -> Result<CvMetrics, SelectError> {
    if subset.is_empty() {
        return Err(SelectError::InvalidInput("empty factor subset".into()));
    }
    let mut cols = subset.to_vec();
    cols.sort_unstable();
    cols.dedup();
    let folds = stratified_kfold(&data.y, data.n_classes, cv.folds, cv.seed)?;
    let sets = (0..cv.folds)
        .into_par_iter()
        .map(|f| {
            let (tr, va) = fold_rows(&folds, f);
            fit_and_score(&data.select_rows(&tr), &data.select_rows(&va), &cols, forest, f)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvMetrics::from_folds(sets))
}

struct FoldContext {
    train: LabeledMatrix,
    valid: LabeledMatrix,
    rank: ImportanceRank,
    corr: Arc<CorrelationMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NPoint {
    pub n: usize,
    pub metrics: CvMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopN {
    pub n: usize,
    pub factors: Vec<String>,
    pub best: CvMetrics,
    pub trace: Vec<NPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub tau: f64,
    pub window: usize,
    pub filtered_len: usize,
    pub n: usize,
    pub metrics: CvMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub mode: SelectionMode,
    pub filter: FilterConfig,
    pub filtered_rank: ImportanceRank,
    pub filter_trace: Vec<FilterRound>,
    pub n: usize,
    pub key_factors: Vec<String>,
    pub criterion: MetricSummary,
    pub grid: Vec<GridCell>,
    pub n_trace: Vec<NPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub n: usize,
    pub factors: Vec<String>,
    pub criterion: MetricSummary,
    pub n_trace: Vec<NPoint>,
}

type CacheKey = (usize, Vec<usize>);

/// Fold layout plus a memo of every (fold, column subset) evaluation.
pub struct Evaluator {
    mode: SelectionMode,
    folds: Vec<FoldContext>,
    reference_rank: ImportanceRank,
    reference_corr: Arc<CorrelationMatrix>,
    forest: ForestConfig,
    max_n: Option<usize>,
    cache: Mutex<HashMap<CacheKey, MetricSet>>,
}

impl Evaluator {
    /// Folds over `data` itself, sharing one rank and correlation matrix.
    pub fn faithful(
        data: &LabeledMatrix,
        rank: &ImportanceRank,
        corr: &CorrelationMatrix,
        forest: &ForestConfig,
        cv: &CvConfig,
    ) -> Result<Self, SelectError> {
        let folds = stratified_kfold(&data.y, data.n_classes, cv.folds, cv.seed)?;
        let corr = Arc::new(corr.clone());
        let contexts = (0..cv.folds)
            .map(|f| {
                let (tr, va) = fold_rows(&folds, f);
                FoldContext {
                    train: data.select_rows(&tr),
                    valid: data.select_rows(&va),
                    rank: rank.clone(),
                    corr: Arc::clone(&corr),
                }
            })
            .collect();
        Ok(Evaluator {
            mode: SelectionMode::Faithful,
            folds: contexts,
            reference_rank: rank.clone(),
            reference_corr: corr,
            forest: forest.clone(),
            max_n: None,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Folds over the original samples; each training portion is resampled,
    /// ranked and correlated on its own. `reference_rank` / `reference_corr`
    /// (computed on the whole resampled dataset) name the reported factors.
    #[allow(clippy::too_many_arguments)]
    pub fn nested(
        data: &LabeledMatrix,
        catalog: &FactorCatalog,
        resample: &ResampleConfig,
        ranking: &RankingConfig,
        scope: CorrelationScope,
        reference_rank: &ImportanceRank,
        reference_corr: &CorrelationMatrix,
        forest: &ForestConfig,
        cv: &CvConfig,
    ) -> Result<Self, SelectError> {
        let folds = stratified_kfold(&data.y, data.n_classes, cv.folds, cv.seed)?;
        let contexts = (0..cv.folds)
            .into_par_iter()
            .map(|f| {
                let (tr, va) = fold_rows(&folds, f);
                let train_orig = data.select_rows(&tr);
                let share = tr.len() as f64 / data.len() as f64;
                let target_counts = match &resample.target_counts {
                    TargetCounts::Counts { counts } => TargetCounts::Counts {
                        counts: counts.iter().map(|c| ((*c as f64 * share).round() as usize).max(1)).collect(),
                    },
                    TargetCounts::Ratio {
                        weights,
                        majority_target,
                    } => TargetCounts::Ratio {
                        weights: weights.clone(),
                        majority_target: majority_target.map(|t| ((t as f64 * share).round() as usize).max(1)),
                    },
                };
                let fold_resample = ResampleConfig {
                    target_counts,
                    seed: rng::derive(resample.seed, "fold-resample", f as u64),
                    ..resample.clone()
                };
                let train = smote_tomek(&train_orig, &fold_resample)?.data;
                let fold_ranking = RankingConfig {
                    forest: ForestConfig {
                        seed: rng::derive(ranking.forest.seed, "fold-rank", f as u64),
                        ..ranking.forest.clone()
                    },
                    ..ranking.clone()
                };
                let rank = rank_factors(&train, &fold_ranking)?.rank;
                let corr = correlation_matrix(&train.x, &train.feature_ids, catalog, scope);
                Ok(FoldContext {
                    train,
                    valid: data.select_rows(&va),
                    rank,
                    corr: Arc::new(corr),
                })
            })
            .collect::<Result<Vec<_>, SelectError>>()?;
        Ok(Evaluator {
            mode: SelectionMode::Nested,
            folds: contexts,
            reference_rank: reference_rank.clone(),
            reference_corr: Arc::new(reference_corr.clone()),
            forest: forest.clone(),
            max_n: None,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Caps the top-n loop at `max_n` factors.
    pub fn with_max_n(mut self, max_n: Option<usize>) -> Self {
        self.max_n = max_n;
        self
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    fn evaluate_fold(&self, fold: usize, subset: &[usize]) -> Result<MetricSet, SelectError> {
        let mut cols = subset.to_vec();
        cols.sort_unstable();
        cols.dedup();
        let key = (fold, cols);
        if let Some(m) = self.cache.lock().expect("metric cache").get(&key) {
            return Ok(m.clone());
        }
        let ctx = &self.folds[fold];
        let m = fit_and_score(&ctx.train, &ctx.valid, &key.1, &self.forest, fold)?;
        self.cache.lock().expect("metric cache").insert(key, m.clone());
        Ok(m)
    }

    /// Cross-validated metrics with a per-fold column subset.
    pub fn evaluate(&self, subsets: &[Vec<usize>]) -> Result<CvMetrics, SelectError> {
        assert_eq!(subsets.len(), self.folds.len());
        let sets = (0..self.folds.len())
            .into_par_iter()
            .map(|f| self.evaluate_fold(f, &subsets[f]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CvMetrics::from_folds(sets))
    }

    /// The top-n loop over the fold ranks, filtered with `filter` when given.
    /// Ties in the criterion go to the smaller n.
    pub fn top_n(&self, filter: Option<&FilterConfig>) -> Result<TopN, SelectError> {
        let reference = match filter {
            Some(cfg) => sliding_filter(&self.reference_rank, &self.reference_corr, cfg)?.rank,
            None => self.reference_rank.clone(),
        };
        let fold_ranks: Vec<Vec<usize>> = self
            .folds
            .iter()
            .map(|ctx| match filter {
                Some(cfg) => sliding_filter(&ctx.rank, &ctx.corr, cfg).map(|o| o.rank.indices()),
                None => Ok(ctx.rank.indices()),
            })
            .collect::<Result<_, _>>()?;
        let limit = self.max_n.map_or(reference.len(), |m| m.min(reference.len()));
        if limit == 0 {
            return Err(SelectError::InvalidInput("empty rank".into()));
        }

        let mut trace = Vec::with_capacity(limit);
        for n in 1..=limit {
            let subsets: Vec<Vec<usize>> = fold_ranks.iter().map(|r| r[..n.min(r.len())].to_vec()).collect();
            trace.push(NPoint {
                n,
                metrics: self.evaluate(&subsets)?,
            });
        }
        let mut best = 0;
        for (i, p) in trace.iter().enumerate() {
            if p.metrics.criterion() > trace[best].metrics.criterion() {
                best = i;
            }
        }
        let n = trace[best].n;
        Ok(TopN {
            n,
            factors: reference.entries[..n].iter().map(|e| e.id.clone()).collect(),
            best: trace[best].metrics.clone(),
            trace,
        })
    }
}

/// Top-n loop on the filtered rank for one filter setting.
pub fn top_n_selection(evaluator: &Evaluator, filter: &FilterConfig) -> Result<TopN, SelectError> {
    evaluator.top_n(Some(filter))
}

/// Top-n loop on the unfiltered rank.
pub fn conventional_baseline(evaluator: &Evaluator) -> Result<BaselineResult, SelectError> {
    let t = evaluator.top_n(None)?;
    Ok(BaselineResult {
        n: t.n,
        factors: t.factors,
        criterion: t.best.mean,
        n_trace: t.trace,
    })
}

/// Exhaustive search over (τ, w). The best cell maximises weighted F1, then
/// AUC; remaining ties go to the smaller window, then the smaller τ.
pub fn grid_search(evaluator: &Evaluator, grid: &GridSpec, base: &FilterConfig) -> Result<SelectionResult, SelectError> {
    grid.validate()?;
    let cells: Vec<(usize, f64)> = grid
        .window_values
        .iter()
        .flat_map(|w| grid.tau_values.iter().map(move |t| (*w, *t)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(window, tau)| {
            let cfg = FilterConfig {
                r_tau: tau,
                window,
                ..base.clone()
            };
            let top = top_n_selection(evaluator, &cfg)?;
            Ok((cfg, top))
        })
        .collect::<Result<Vec<_>, SelectError>>()?;

    let mut best = 0;
    for (i, (_, top)) in results.iter().enumerate() {
        if top.best.criterion() > results[best].1.best.criterion() {
            best = i;
        }
    }
    let grid_trace: Vec<GridCell> = results
        .iter()
        .map(|(cfg, top)| GridCell {
            tau: cfg.r_tau,
            window: cfg.window,
            filtered_len: sliding_filter(&evaluator.reference_rank, &evaluator.reference_corr, cfg)
                .map(|o| o.rank.len())
                .unwrap_or(0),
            n: top.n,
            metrics: top.best.clone(),
        })
        .collect();
    let (cfg, top) = results.into_iter().nth(best).expect("non-empty grid");
    let filtered = sliding_filter(&evaluator.reference_rank, &evaluator.reference_corr, &cfg)?;
    Ok(SelectionResult {
        mode: evaluator.mode,
        filter: cfg,
        filtered_rank: filtered.rank,
        filter_trace: filtered.trace,
        n: top.n,
        key_factors: top.factors,
        criterion: top.best.mean,
        grid: grid_trace,
        n_trace: top.trace,
    })
}

/// Long-form metric trace: one row per (τ, w, n, fold, metric).
pub struct TraceWriter {
    writer: csv::Writer<std::fs::File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self, SelectError> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| SelectError::Io(e.to_string()))?;
        writer
            .write_record(["tau", "window", "n", "fold", "metric", "value"])
            .map_err(|e| SelectError::Io(e.to_string()))?;
        Ok(TraceWriter { writer })
    }

    pub fn write(&mut self, tau: Option<f64>, window: Option<usize>, n: usize, m: &CvMetrics) -> Result<(), SelectError> {
        let tau = tau.map(|t| t.to_string()).unwrap_or_default();
        let window = window.map(|w| w.to_string()).unwrap_or_default();
        let n = n.to_string();
        let mut rows: Vec<(String, &str, Option<f64>)> = Vec::new();
        for (label, s) in [("mean", &m.mean), ("std", &m.std)] {
            rows.push((label.into(), "accuracy", Some(s.accuracy)));
            rows.push((label.into(), "precision", Some(s.precision)));
            rows.push((label.into(), "recall", Some(s.recall)));
            rows.push((label.into(), "f1", Some(s.f1)));
            rows.push((label.into(), "auc", s.auc));
        }
        for (f, s) in m.folds.iter().enumerate() {
            rows.push((f.to_string(), "accuracy", Some(s.accuracy)));
            rows.push((f.to_string(), "precision", Some(s.precision)));
            rows.push((f.to_string(), "recall", Some(s.recall)));
            rows.push((f.to_string(), "f1", Some(s.f1)));
            rows.push((f.to_string(), "auc", s.auc));
        }
        for (fold, metric, value) in rows {
            let value = value.map(|v| v.to_string()).unwrap_or_default();
            self.writer
                .write_record([tau.as_str(), window.as_str(), n.as_str(), fold.as_str(), metric, value.as_str()])
                .map_err(|e| SelectError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), SelectError> {
        self.writer.flush().map_err(|e| SelectError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use crate::shap::RankEntry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(counts: &[usize]) -> Vec<usize> {
        counts.iter().enumerate().flat_map(|(c, n)| std::iter::repeat_n(c, *n)).collect()
    }

    /// Label is a majority vote over the signs of the first `informative`
    /// columns; the rest are noise.
    fn planted(n: usize, informative: usize, noise: usize, seed: u64) -> LabeledMatrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = informative + noise;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let positive = row[..informative].iter().filter(|v| **v > 0.0).count();
            y.push(usize::from(2 * positive > informative));
            rows.push(row);
        }
        LabeledMatrix::new(Matrix::from_rows(&rows, m), y, 2, (0..m).map(|i| format!("f{i}")).collect())
    }

    fn identity_rank(m: usize) -> ImportanceRank {
        ImportanceRank {
            entries: (0..m)
                .map(|i| RankEntry {
                    id: format!("f{i}"),
                    index: i,
                    importance: (m - i) as f64,
                })
                .collect(),
        }
    }

    fn small_forest() -> ForestConfig {
        ForestConfig {
            n_trees: 30,
            min_samples_leaf: 2,
            seed: 1,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn folds_are_stratified() {
        let y = labels(&[50, 30, 20]);
        let folds = stratified_kfold(&y, 3, 5, 9).unwrap();
        for f in 0..5 {
            let members: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            assert_eq!(members.len(), 20);
            let per: Vec<usize> = (0..3).map(|c| members.iter().filter(|&&i| y[i] == c).count()).collect();
            assert_eq!(per, vec![10, 6, 4]);
        }
        assert_eq!(folds, stratified_kfold(&y, 3, 5, 9).unwrap());
        assert!(stratified_kfold(&y, 3, 1, 9).is_err());
        assert!(matches!(
            stratified_kfold(&labels(&[10, 3]), 2, 5, 0),
            Err(SelectError::ClassTooSmall { class: 1, .. })
        ));
    }

    #[test]
    fn uneven_folds_stay_within_one() {
        let y = labels(&[37, 23, 11]);
        let folds = stratified_kfold(&y, 3, 5, 2).unwrap();
        for c in 0..3 {
            let total = y.iter().filter(|v| **v == c).count() as f64;
            for f in 0..5 {
                let k = (0..y.len()).filter(|&i| folds[i] == f && y[i] == c).count() as f64;
                assert!((k - total / 5.0).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn separable_data_scores_high_and_noise_scores_prior() {
        let data = planted(400, 1, 3, 4);
        let cv = CvConfig { folds: 5, seed: 3 };
        let all = evaluate_cv(&data, &[0, 1, 2, 3], &small_forest(), &cv).unwrap();
        assert!(all.mean.accuracy >= 0.95, "{}", all.mean.accuracy);
        let noise = evaluate_cv(&data, &[2], &small_forest(), &cv).unwrap();
        let prior = data.class_counts().iter().max().copied().unwrap() as f64 / data.len() as f64;
        assert!((noise.mean.accuracy - prior).abs() <= 0.1, "{} vs {prior}", noise.mean.accuracy);
        assert_eq!(noise, evaluate_cv(&data, &[2], &small_forest(), &cv).unwrap());
    }

    #[test]
    fn subset_order_does_not_matter() {
        let data = planted(150, 2, 2, 8);
        let cv = CvConfig::default();
        let a = evaluate_cv(&data, &[0, 3, 1], &small_forest(), &cv).unwrap();
        let b = evaluate_cv(&data, &[3, 1, 0], &small_forest(), &cv).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn top_n_finds_the_informative_prefix() {
        let mut chosen = Vec::new();
        for seed in 0..3 {
            let data = planted(500, 5, 10, 10 + seed);
            let corr = CorrelationMatrix::from_values(
                data.feature_ids.clone(),
                CorrelationScope::Global,
                (0..225).map(|i| if i % 16 == 0 { 1.0 } else { 0.0 }).collect(),
            );
            let ev = Evaluator::faithful(&data, &identity_rank(15), &corr, &small_forest(), &CvConfig::default())
                .unwrap();
            let top = ev.top_n(None).unwrap();
            assert_eq!(top.trace.len(), 15);
            chosen.push(top.n);
        }
        for n in chosen {
            assert!((3..=7).contains(&n), "{n}");
        }
    }

    #[test]
    fn grid_picks_the_scan_argmax() {
        let data = planted(200, 3, 3, 6);
        let catalog = FactorCatalog::new(vec![], Default::default(), Default::default()).unwrap();
        let corr = correlation_matrix(&data.x, &data.feature_ids, &catalog, CorrelationScope::Global);
        let ev = Evaluator::faithful(&data, &identity_rank(6), &corr, &small_forest(), &CvConfig::default())
            .unwrap()
            .with_max_n(Some(4));
        let grid = GridSpec {
            tau_values: vec![0.1, 0.5],
            window_values: vec![2, 4],
        };
        let res = grid_search(&ev, &grid, &FilterConfig::default()).unwrap();
        assert_eq!(res.grid.len(), 4);
        let best = res
            .grid
            .iter()
            .fold(None::<&GridCell>, |acc, c| match acc {
                Some(b) if b.metrics.criterion() >= c.metrics.criterion() => Some(b),
                _ => Some(c),
            })
            .unwrap();
        assert_eq!((best.tau, best.window), (res.filter.r_tau, res.filter.window));
        assert_eq!(res.key_factors, res.filtered_rank.ids()[..res.n].to_vec());

        let single = GridSpec {
            tau_values: vec![0.3],
            window_values: vec![3],
        };
        let one = grid_search(&ev, &single, &FilterConfig::default()).unwrap();
        assert_eq!((one.filter.r_tau, one.filter.window), (0.3, 3));
    }
}
