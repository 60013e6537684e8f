//! Class rebalancing: optional random undersampling, SMOTE oversampling of
//! minority classes, then one pass of Tomek-link cleaning.
//!
//! Distances are Euclidean on z-scored factors; synthetic samples are built
//! in the original units.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabeledMatrix, Matrix};
use crate::rng;

/// Class ratio of the resampled dataset reported for the original study
/// (Low : Medium : High).
pub const DEFAULT_RATIO: [f64; 3] = [9500.0, 5104.0, 1445.0];

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("dataset needs at least two classes present")]
    TooFewClasses,
    #[error("class {class} has {size} samples; at least 2 are needed to oversample it")]
    ClassTooSmall { class: usize, size: usize },
    #[error("infeasible targets: {0}")]
    Infeasible(String),
    #[error("invalid resampling configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TargetCounts {
    /// Exact per-class counts.
    Counts { counts: Vec<usize> },
    /// Per-class proportions. The scale is fixed by `majority_target` when
    /// given, otherwise by the minority class that is largest relative to
    /// its weight, so that no minority class shrinks.
    Ratio {
        weights: Vec<f64>,
        majority_target: Option<usize>,
    },
}

impl Default for TargetCounts {
    fn default() -> Self {
        TargetCounts::Ratio {
            weights: DEFAULT_RATIO.to_vec(),
            majority_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    pub k_neighbors: usize,
    pub target_counts: TargetCounts,
    /// Randomly drop samples from classes above their target before SMOTE.
    pub undersample_majority: bool,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            k_neighbors: 5,
            target_counts: TargetCounts::default(),
            undersample_majority: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub values: Vec<f64>,
    pub class: usize,
    /// Row indices (into the input dataset) of the two parents.
    pub parents: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub original_counts: Vec<usize>,
    pub targets: Vec<usize>,
    pub after_undersampling: Vec<usize>,
    pub after_smote: Vec<usize>,
    pub tomek_removed: usize,
    pub final_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampledDataset {
    pub data: LabeledMatrix,
    pub synthetic: Vec<bool>,
    /// Input row index for originals, parent pair for synthetic samples.
    pub provenance: Vec<Provenance>,
    pub report: ResampleReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original(usize),
    Synthetic(usize, usize),
}

/// Z-score scaler; constant columns keep unit scale.
#[derive(Debug, Clone)]
struct Scaler {
    stats: Vec<(f64, f64)>,
}

impl Scaler {
    fn fit(x: &Matrix) -> Self {
        Scaler {
            stats: x
                .column_stats()
                .into_iter()
                .map(|(m, s)| (m, if s > 0.0 { s } else { 1.0 }))
                .collect(),
        }
    }

    fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.stats).map(|(v, (m, s))| (v - m) / s).collect()
    }

    fn transform_all(&self, x: &Matrix) -> Vec<Vec<f64>> {
        (0..x.rows()).map(|r| self.transform(x.row(r))).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// The `k` nearest points to `points[query]` among `points`, excluding the
/// query itself. Ties go to the lower index.
fn nearest(points: &[Vec<f64>], query: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, p)| (sq_dist(&points[query], p), i))
        .collect();
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    d.select_nth_unstable_by(k - 1, cmp);
    d.truncate(k);
    d.sort_unstable_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// SMOTE samples for one class. Parents are drawn uniformly among the
/// class members, neighbours uniformly among each parent's `k` nearest
/// same-class members.
pub fn smote(
    data: &LabeledMatrix,
    class: usize,
    n_synthetic: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>, ResampleError> {
    let members: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] == class).collect();
    smote_members(data, &Scaler::fit(&data.x), &members, class, n_synthetic, k, seed)
}

fn smote_members(
    data: &LabeledMatrix,
    scaler: &Scaler,
    members: &[usize],
    class: usize,
    n_synthetic: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>, ResampleError> {
    if n_synthetic == 0 {
        return Ok(Vec::new());
    }
    if k == 0 {
        return Err(ResampleError::InvalidConfig("k_neighbors must be at least 1".into()));
    }
    if members.len() < 2 {
        return Err(ResampleError::ClassTooSmall {
            class,
            size: members.len(),
        });
    }
    let k = if k > members.len() - 1 {
        log::warn!(
            "class {class} has {} samples; clamping SMOTE k from {k} to {}",
            members.len(),
            members.len() - 1
        );
        members.len() - 1
    } else {
        k
    };
    let scaled: Vec<Vec<f64>> = members.iter().map(|&i| scaler.transform(data.x.row(i))).collect();
    let neighbours: Vec<Vec<usize>> = (0..members.len())
        .into_par_iter()
        .map(|q| nearest(&scaled, q, k))
        .collect();

    Ok((0..n_synthetic)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(seed, "smote", ((class as u64) << 40) | s as u64);
            let p = r.random_range(0..members.len());
            let nn = neighbours[p][r.random_range(0..k)];
            let u: f64 = r.random_range(0.0..=1.0);
            let (a, b) = (data.x.row(members[p]), data.x.row(members[nn]));
            let values = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x + u * (y - x)).clamp(x.min(*y), x.max(*y)))
                .collect();
            SyntheticSample {
                values,
                class,
                parents: (members[p], members[nn]),
            }
        })
        .collect())
}

/// Mutual nearest-neighbour pairs `(a, b)`, `a < b`, with different labels.
pub fn tomek_links(data: &LabeledMatrix) -> Vec<(usize, usize)> {
    let scaled = Scaler::fit(&data.x).transform_all(&data.x);
    tomek_links_scaled(&scaled, &data.y)
}

fn tomek_links_scaled(scaled: &[Vec<f64>], y: &[usize]) -> Vec<(usize, usize)> {
    if scaled.len() < 2 {
        return Vec::new();
    }
    let nn: Vec<usize> = (0..scaled.len())
        .into_par_iter()
        .map(|q| nearest(scaled, q, 1)[0])
        .collect();
    (0..scaled.len())
        .filter(|&a| nn[a] > a && nn[nn[a]] == a && y[a] != y[nn[a]])
        .map(|a| (a, nn[a]))
        .collect()
}

/// Resolves the configured targets against the current class counts.
pub fn resolve_targets(counts: &[usize], target: &TargetCounts) -> Result<Vec<usize>, ResampleError> {
    let majority = majority_class(counts);
    let targets = match target {
        TargetCounts::Counts { counts: t } => {
            if t.len() != counts.len() {
                return Err(ResampleError::InvalidConfig(format!(
                    "{} target counts for {} classes",
                    t.len(),
                    counts.len()
                )));
            }
            t.clone()
        }
        TargetCounts::Ratio {
            weights,
            majority_target,
        } => {
            if weights.len() != counts.len() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(ResampleError::InvalidConfig(format!(
                    "ratio needs {} positive weights",
                    counts.len()
                )));
            }
            let scale = match majority_target {
                Some(t) => *t as f64 / weights[majority],
                None => (0..counts.len())
                    .filter(|&c| c != majority)
                    .map(|c| counts[c] as f64 / weights[c])
                    .fold(0.0, f64::max),
            };
            let mut t: Vec<usize> = weights.iter().map(|w| (w * scale).round() as usize).collect();
            if majority_target.is_none() {
                t[majority] = t[majority].min(counts[majority]);
            }
            t
        }
    };
    if targets.contains(&0) {
        return Err(ResampleError::InvalidConfig("target counts must be positive".into()));
    }
    Ok(targets)
}

fn majority_class(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, n) in counts.iter().enumerate() {
        if *n > counts[best] {
            best = c;
        }
    }
    best
}

pub fn smote_tomek(data: &LabeledMatrix, config: &ResampleConfig) -> Result<ResampledDataset, ResampleError> {
    if config.k_neighbors == 0 {
        return Err(ResampleError::InvalidConfig("k_neighbors must be at least 1".into()));
    }
    let counts = data.class_counts();
    if counts.iter().filter(|c| **c > 0).count() < 2 {
        return Err(ResampleError::TooFewClasses);
    }
    let targets = resolve_targets(&counts, &config.target_counts)?;
    let majority = majority_class(&counts);
    if targets[majority] > counts[majority] {
        return Err(ResampleError::Infeasible(format!(
            "target {} for majority class {majority} exceeds its {} samples; the majority class is never oversampled",
            targets[majority], counts[majority]
        )));
    }
    for (c, (&n, &t)) in counts.iter().zip(&targets).enumerate() {
        if t > n && n < 2 {
            return Err(ResampleError::ClassTooSmall { class: c, size: n });
        }
    }

    // undersample classes above target
    let mut kept: Vec<Vec<usize>> = (0..data.n_classes)
        .map(|c| (0..data.len()).filter(|&i| data.y[i] == c).collect())
        .collect();
    if config.undersample_majority {
        for (c, members) in kept.iter_mut().enumerate() {
            if members.len() > targets[c] {
                let mut r = rng::stream(config.seed, "undersample", c as u64);
                let mut pick = sample_indices(&mut r, members.len(), targets[c]).into_vec();
                pick.sort_unstable();
                *members = pick.into_iter().map(|i| members[i]).collect();
            }
        }
    }
    let after_undersampling: Vec<usize> = kept.iter().map(Vec::len).collect();

    let scaler = Scaler::fit(&data.x);
    let mut synthetic = Vec::new();
    for (c, members) in kept.iter().enumerate() {
        if targets[c] > members.len() {
            synthetic.extend(smote_members(
                data,
                &scaler,
                members,
                c,
                targets[c] - members.len(),
                config.k_neighbors,
                config.seed,
            )?);
        }
    }

    let mut originals: Vec<usize> = kept.into_iter().flatten().collect();
    originals.sort_unstable();
    let mut rows: Vec<Vec<f64>> = originals.iter().map(|&i| data.x.row(i).to_vec()).collect();
    let mut y: Vec<usize> = originals.iter().map(|&i| data.y[i]).collect();
    let mut provenance: Vec<Provenance> = originals.iter().map(|&i| Provenance::Original(i)).collect();
    for s in &synthetic {
        rows.push(s.values.clone());
        y.push(s.class);
        provenance.push(Provenance::Synthetic(s.parents.0, s.parents.1));
    }
    let mut after_smote = vec![0; data.n_classes];
    for c in &y {
        after_smote[*c] += 1;
    }

    // one Tomek pass: drop the member from the larger class of each link
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
    let mut drop = vec![false; rows.len()];
    for (a, b) in tomek_links_scaled(&scaled, &y) {
        let (ca, cb) = (y[a], y[b]);
        let larger_a = after_smote[ca] > after_smote[cb] || (after_smote[ca] == after_smote[cb] && ca < cb);
        drop[if larger_a { a } else { b }] = true;
    }
    let tomek_removed = drop.iter().filter(|d| **d).count();

    let keep: Vec<usize> = (0..rows.len()).filter(|&i| !drop[i]).collect();
    let mut x = Matrix::zeros(0, data.n_features());
    for &i in &keep {
        x.push_row(&rows[i]);
    }
    let y: Vec<usize> = keep.iter().map(|&i| y[i]).collect();
    let synthetic_flags: Vec<bool> = keep.iter().map(|&i| matches!(provenance[i], Provenance::Synthetic(..))).collect();
    let provenance: Vec<Provenance> = keep.iter().map(|&i| provenance[i]).collect();
    let out = LabeledMatrix::new(x, y, data.n_classes, data.feature_ids.clone());
    let final_counts = out.class_counts();
    Ok(ResampledDataset {
        data: out,
        synthetic: synthetic_flags,
        provenance,
        report: ResampleReport {
            original_counts: counts,
            targets,
            after_undersampling,
            after_smote,
            tomek_removed,
            final_counts,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: &[Vec<f64>], y: &[usize], n_classes: usize) -> LabeledMatrix {
        let m = rows[0].len();
        LabeledMatrix::new(
            Matrix::from_rows(rows, m),
            y.to_vec(),
            n_classes,
            (0..m).map(|i| format!("f{i}")).collect(),
        )
    }

    fn blobs(sizes: &[usize], seed: u64) -> LabeledMatrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, n) in sizes.iter().enumerate() {
            for _ in 0..*n {
                rows.push(vec![
                    c as f64 * 2.0 + r.random_range(-1.5..1.5),
                    r.random_range(-1.0..1.0),
                    (c as f64) * 100.0 + r.random_range(0.0..50.0),
                ]);
                y.push(c);
            }
        }
        dataset(&rows, &y, sizes.len())
    }

    #[test]
    fn two_point_class_interpolates_on_the_diagonal() {
        let data = dataset(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 0.0]], &[1, 1, 0], 2);
        let syn = smote(&data, 1, 200, 1, 7).unwrap();
        assert_eq!(syn.len(), 200);
        for s in &syn {
            assert_eq!(s.values[0], s.values[1]);
            assert!((0.0..=1.0).contains(&s.values[0]));
            assert_eq!(s.class, 1);
        }
        assert!(smote(&data, 1, 0, 1, 7).unwrap().is_empty());
    }

    #[test]
    fn parents_are_uniform() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let data = dataset(&rows, &[0; 5], 1);
        let n = 10_000;
        let syn = smote(&data, 0, n, 2, 3).unwrap();
        let mut hits = [0usize; 5];
        for s in &syn {
            hits[s.parents.0] += 1;
        }
        let p = 0.2;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{hits:?}");
        }
    }

    #[test]
    fn class_of_one_cannot_be_oversampled() {
        let data = dataset(&[vec![0.0], vec![1.0], vec![2.0]], &[0, 0, 1], 2);
        assert!(matches!(
            smote(&data, 1, 3, 1, 0),
            Err(ResampleError::ClassTooSmall { class: 1, size: 1 })
        ));
    }

    #[test]
    fn k_is_clamped_to_class_size() {
        let data = dataset(&[vec![0.0], vec![1.0], vec![2.0], vec![9.0]], &[1, 1, 1, 0], 2);
        let syn = smote(&data, 1, 50, 10, 0).unwrap();
        assert!(syn.iter().all(|s| (0.0..=2.0).contains(&s.values[0])));
    }

    #[test]
    fn isolated_pair_is_one_link() {
        let data = dataset(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[0, 1], 2);
        assert_eq!(tomek_links(&data), vec![(0, 1)]);
        let single = dataset(&[vec![0.0], vec![1.0], vec![3.0]], &[0, 0, 0], 1);
        assert!(tomek_links(&single).is_empty());
    }

    #[test]
    fn planted_links_match_brute_force() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        // 44 class-0 points on a coarse grid, far apart
        for i in 0..44 {
            rows.push(vec![(i % 11) as f64 * 10.0, (i / 11) as f64 * 10.0]);
            y.push(0);
        }
        // three tight opposite-class pairs away from the grid
        for (k, base) in [(0, 200.0), (1, 300.0), (2, 400.0)] {
            let jitter: f64 = r.random_range(0.0..0.01);
            rows.push(vec![base, base]);
            y.push(0);
            rows.push(vec![base + 0.1 + jitter, base]);
            y.push(1 + k % 2);
        }
        let data = dataset(&rows, &y, 3);
        let links = tomek_links(&data);
        assert_eq!(links, vec![(44, 45), (46, 47), (48, 49)]);

        let scaled = Scaler::fit(&data.x).transform_all(&data.x);
        let nn: Vec<usize> = (0..rows.len())
            .map(|a| {
                (0..rows.len())
                    .filter(|&b| b != a)
                    .min_by(|&p, &q| sq_dist(&scaled[a], &scaled[p]).total_cmp(&sq_dist(&scaled[a], &scaled[q])))
                    .unwrap()
            })
            .collect();
        let brute: Vec<(usize, usize)> = (0..rows.len())
            .flat_map(|a| (a + 1..rows.len()).map(move |b| (a, b)))
            .filter(|&(a, b)| nn[a] == b && nn[b] == a && y[a] != y[b])
            .collect();
        assert_eq!(links, brute);
    }

    #[test]
    fn targets_from_ratio() {
        let t = resolve_targets(&[125_892, 5104, 534], &TargetCounts::default()).unwrap();
        assert_eq!(t, vec![9500, 5104, 1445]);
        let t = resolve_targets(
            &[1000, 100, 10],
            &TargetCounts::Ratio {
                weights: vec![4.0, 3.0, 1.0],
                majority_target: Some(400),
            },
        )
        .unwrap();
        assert_eq!(t, vec![400, 300, 100]);
    }

    #[test]
    fn pipeline_hits_targets_within_tomek_slack() {
        let data = blobs(&[1000, 100, 10], 8);
        let cfg = ResampleConfig {
            target_counts: TargetCounts::Counts {
                counts: vec![400, 300, 100],
            },
            seed: 5,
            ..ResampleConfig::default()
        };
        let out = smote_tomek(&data, &cfg).unwrap();
        let rep = &out.report;
        assert_eq!(rep.after_undersampling, vec![400, 100, 10]);
        assert_eq!(rep.after_smote, vec![400, 300, 100]);
        let removed: usize = rep.after_smote.iter().zip(&rep.final_counts).map(|(a, b)| a - b).sum();
        assert_eq!(removed, rep.tomek_removed);
        // Tomek removals only ever touch class 0 here, the largest class
        assert_eq!(&rep.final_counts[1..], &[300, 100]);
        assert!(rep.final_counts[0] + rep.tomek_removed == 400);

        for (i, p) in out.provenance.iter().enumerate() {
            if let Provenance::Synthetic(a, b) = *p {
                assert!(out.synthetic[i]);
                assert_ne!(out.data.y[i], 0);
                assert_eq!(data.y[a], out.data.y[i]);
                assert_eq!(data.y[b], out.data.y[i]);
                for f in 0..3 {
                    let (lo, hi) = (data.x.get(a, f).min(data.x.get(b, f)), data.x.get(a, f).max(data.x.get(b, f)));
                    let v = out.data.x.get(i, f);
                    assert!(lo <= v && v <= hi);
                }
            }
        }
        assert_eq!(smote_tomek(&data, &cfg).unwrap(), out);
    }

    #[test]
    fn balanced_data_only_gets_cleaned() {
        let data = blobs(&[60, 60], 2);
        let cfg = ResampleConfig {
            target_counts: TargetCounts::Counts { counts: vec![60, 60] },
            undersample_majority: false,
            ..ResampleConfig::default()
        };
        let out = smote_tomek(&data, &cfg).unwrap();
        assert!(out.synthetic.iter().all(|s| !s));
        assert_eq!(out.data.len() + out.report.tomek_removed, 120);
        let links = tomek_links(&data);
        assert!(out.report.tomek_removed <= links.len());
    }

    #[test]
    fn majority_is_never_oversampled() {
        let data = blobs(&[50, 20], 1);
        let cfg = ResampleConfig {
            target_counts: TargetCounts::Counts { counts: vec![80, 20] },
            ..ResampleConfig::default()
        };
        assert!(matches!(smote_tomek(&data, &cfg), Err(ResampleError::Infeasible(_))));
        let one = blobs(&[50, 1], 1);
        let cfg = ResampleConfig {
            target_counts: TargetCounts::Counts { counts: vec![50, 10] },
            ..ResampleConfig::default()
        };
        assert!(matches!(smote_tomek(&one, &cfg), Err(ResampleError::ClassTooSmall { .. })));
    }
}
