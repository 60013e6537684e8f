//! Pearson correlation matrices and the sliding-window redundancy filter
//! applied to an importance rank.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::factors::FactorCatalog;
use crate::shap::{ImportanceRank, RankEntry};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("rank is empty")]
    EmptyRank,
    #[error("factor `{0}` is not in the correlation matrix")]
    UnknownFactor(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error("trace does not replay: {0}")]
    Replay(String),
    #[error("{0}")]
    Io(String),
}

/// Pearson correlation; 0 when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, FilterError> {
    if x.len() != y.len() {
        return Err(FilterError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationScope {
    /// Only pairs in the same category are correlated; DOC performance is
    /// split into its secondary categories.
    #[default]
    WithinCategory,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub ids: Vec<String>,
    pub scope: CorrelationScope,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl CorrelationMatrix {
    pub fn from_values(ids: Vec<String>, scope: CorrelationScope, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), ids.len() * ids.len());
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        CorrelationMatrix {
            ids,
            scope,
            values,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn by_id(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(self.position(a)?, self.position(b)?))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FilterError> {
        let io = |e: csv::Error| FilterError::Io(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec![String::from("factor_id")];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend((0..self.len()).map(|j| self.get(i, j).to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| FilterError::Io(e.to_string()))
    }
}

/// Pairwise Pearson correlations between the columns of `x`. Under
/// [`CorrelationScope::WithinCategory`] pairs from different scope groups are
/// stored as 0. Ids missing from the catalog form a group of their own.
pub fn correlation_matrix(
    x: &Matrix,
    ids: &[String],
    catalog: &FactorCatalog,
    scope: CorrelationScope,
) -> CorrelationMatrix {
    let m = x.cols();
    assert_eq!(ids.len(), m);
    let groups: Vec<&str> = ids
        .iter()
        .map(|id| catalog.get(id).map(|d| d.scope_group()).unwrap_or(id.as_str()))
        .collect();

    // centred, unit-norm columns turn each correlation into a dot product
    let n = x.rows();
    let columns: Vec<Option<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let centred: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 0.0).then(|| centred.iter().map(|v| v / norm).collect())
        })
        .collect();

    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (0..m)
                .map(|j| {
                    if scope == CorrelationScope::WithinCategory && groups[i] != groups[j] {
                        return 0.0;
                    }
                    match (&columns[i], &columns[j]) {
                        (Some(_), Some(_)) if i == j => 1.0,
                        (Some(a), Some(b)) => a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0),
                        _ => 0.0,
                    }
                })
                .collect()
        })
        .collect();
    let mut values: Vec<f64> = rows.into_iter().flatten().collect();
    // symmetrise exactly
    for i in 0..m {
        for j in i + 1..m {
            values[j * m + i] = values[i * m + j];
        }
    }
    CorrelationMatrix::from_values(ids.to_vec(), scope, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub r_tau: f64,
    /// Window length counting the anchor.
    pub window: usize,
    pub scope: CorrelationScope,
    pub use_absolute: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            r_tau: 0.2,
            window: 15,
            scope: CorrelationScope::WithinCategory,
            use_absolute: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.r_tau > 0.0 && self.r_tau <= 1.0) {
            return Err(FilterError::InvalidConfig(format!("r_tau {} outside (0, 1]", self.r_tau)));
        }
        if self.window < 2 {
            return Err(FilterError::InvalidConfig(format!("window {} below 2", self.window)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub id: String,
    /// Position in the rank as it stood at the start of the round.
    pub position: usize,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRound {
    pub round: usize,
    pub anchor: String,
    pub anchor_position: usize,
    pub removed: Vec<Removal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub rank: ImportanceRank,
    pub trace: Vec<FilterRound>,
}

/// Slides a window of `config.window` positions (anchor included) down the
/// rank. Each round removes the followers whose correlation with the anchor
/// exceeds `r_tau`, then advances the anchor by one retained position. Each
/// anchor gets exactly one round.
pub fn sliding_filter(
    rank: &ImportanceRank,
    corr: &CorrelationMatrix,
    config: &FilterConfig,
) -> Result<FilterOutcome, FilterError> {
    config.validate()?;
    if rank.is_empty() {
        return Err(FilterError::EmptyRank);
    }
    let mut current: Vec<(RankEntry, usize)> = rank
        .entries
        .iter()
        .map(|e| {
            corr.position(&e.id)
                .map(|p| (e.clone(), p))
                .ok_or_else(|| FilterError::UnknownFactor(e.id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut trace = Vec::new();
    let mut anchor = 0;
    while anchor + 1 < current.len() {
        let a = current[anchor].1;
        let end = (anchor + config.window).min(current.len());
        let mut removed = Vec::new();
        for pos in anchor + 1..end {
            let r = corr.get(a, current[pos].1);
            let strength = if config.use_absolute { r.abs() } else { r };
            if strength > config.r_tau {
                removed.push(Removal {
                    id: current[pos].0.id.clone(),
                    position: pos,
                    correlation: r,
                });
            }
        }
        for rm in removed.iter().rev() {
            current.remove(rm.position);
        }
        trace.push(FilterRound {
            round: trace.len() + 1,
            anchor: current[anchor].0.id.clone(),
            anchor_position: anchor,
            removed,
        });
        anchor += 1;
    }
    Ok(FilterOutcome {
        rank: ImportanceRank {
            entries: current.into_iter().map(|(e, _)| e).collect(),
        },
        trace,
    })
}

/// Re-applies a removal trace to the input rank, returning the rank after
/// every round. Fails if the trace does not match the rank it is applied to.
pub fn replay_trace(input: &[String], trace: &[FilterRound]) -> Result<Vec<Vec<String>>, FilterError> {
    let mut current = input.to_vec();
    let mut states = Vec::with_capacity(trace.len());
    for round in trace {
        if current.get(round.anchor_position) != Some(&round.anchor) {
            return Err(FilterError::Replay(format!(
                "round {}: anchor `{}` not at position {}",
                round.round, round.anchor, round.anchor_position
            )));
        }
        for rm in round.removed.iter().rev() {
            if current.get(rm.position) != Some(&rm.id) || rm.position <= round.anchor_position {
                return Err(FilterError::Replay(format!(
                    "round {}: `{}` not at position {}",
                    round.round, rm.id, rm.position
                )));
            }
            current.remove(rm.position);
        }
        states.push(current.clone());
    }
    Ok(states)
}
