//! Moving-window sample assembly and dataset export.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::catalog::FactorCatalog;
use super::compute::{FactorEngine, LabelThresholds, RiskLevel, YEAR_DAYS};
use super::FactorError;
use crate::data::{LabeledMatrix, Matrix};
use crate::events::{EventStore, VesselId, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub vessel_id: VesselId,
    pub datestamp: NaiveDate,
    pub values: Vec<f64>,
    pub label: RiskLevel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    /// DOC or flag membership does not cover the factor window.
    pub coverage: usize,
    pub non_finite: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyConfig {
    pub datestamps: Vec<NaiveDate>,
    #[serde(default = "default_factor_years")]
    pub factor_years: u8,
    #[serde(default = "default_label_years")]
    pub label_years: u8,
    #[serde(default)]
    pub thresholds: LabelThresholds,
}

fn default_factor_years() -> u8 {
    5
}

fn default_label_years() -> u8 {
    1
}

impl AssemblyConfig {
    pub fn new(datestamps: Vec<NaiveDate>) -> Self {
        AssemblyConfig {
            datestamps,
            factor_years: 5,
            label_years: 1,
            thresholds: LabelThresholds::default(),
        }
    }
}

/// Four half-year-spaced datestamps starting at `first`.
pub fn half_year_datestamps(first: NaiveDate, count: usize) -> Vec<NaiveDate> {
    use chrono::Months;
    (0..count)
        .map(|i| first.checked_add_months(Months::new(6 * i as u32)).expect("date in range"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub catalog: FactorCatalog,
    pub samples: Vec<Sample>,
    pub dropped: DropCounts,
}

impl LabeledDataset {
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-datestamp sample counts.
    pub fn datestamp_counts(&self) -> BTreeMap<NaiveDate, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.datestamp).or_insert(0) += 1;
        }
        out
    }

    /// Removes factors whose value is identical across all samples; returns their ids.
    pub fn drop_constant_factors(&mut self) -> Vec<String> {
        let n = self.catalog.len();
        let mut keep = Vec::with_capacity(n);
        let mut dropped = Vec::new();
        for j in 0..n {
            let first = self.samples.first().map(|s| s.values[j]);
            let constant = match first {
                None => false,
                Some(v0) => self.samples.iter().all(|s| s.values[j] == v0),
            };
            if constant {
                dropped.push(self.catalog.descriptors()[j].id.clone());
            } else {
                keep.push(j);
            }
        }
        if !dropped.is_empty() {
            self.catalog = self.catalog.retain_indices(&keep);
            for s in &mut self.samples {
                s.values = keep.iter().map(|&j| s.values[j]).collect();
            }
        }
        dropped
    }

    pub fn to_matrix(&self) -> LabeledMatrix {
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.values.as_slice()).collect();
        LabeledMatrix::new(
            Matrix::from_rows(&rows, self.catalog.len()),
            self.samples.iter().map(|s| s.label.index()).collect(),
            RiskLevel::ALL.len(),
            self.catalog.ids(),
        )
    }

    /// CSV with one column per factor id followed by `label`.
    pub fn write_csv(&self, path: &Path) -> Result<(), FactorError> {
        write_matrix_csv(&self.to_matrix(), None, path)
    }
}

/// Writes factor columns, `label`, and optionally a `synthetic` flag column.
pub fn write_matrix_csv(data: &LabeledMatrix, synthetic: Option<&[bool]>, path: &Path) -> Result<(), FactorError> {
    let io = |e: csv::Error| FactorError::Io(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(|e| FactorError::Io(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = data.feature_ids.clone();
    header.push("label".into());
    if synthetic.is_some() {
        header.push("synthetic".into());
    }
    w.write_record(&header).map_err(io)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        let label = RiskLevel::from_index(data.y[i]).map(|r| r.name().to_string()).unwrap_or_else(|| data.y[i].to_string());
        rec.push(label);
        if let Some(flags) = synthetic {
            rec.push(flags[i].to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| FactorError::Io(e.to_string()))
}

/// Reads a dataset CSV written by [`write_matrix_csv`]; the `synthetic`
/// column is returned when present.
pub fn read_matrix_csv(path: &Path) -> Result<(LabeledMatrix, Option<Vec<bool>>), FactorError> {
    let io = |e: csv::Error| FactorError::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let headers = r.headers().map_err(io)?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| FactorError::Io(format!("{}: no `label` column", path.display())))?;
    let synth_col = headers.iter().position(|h| h == "synthetic");
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_col && Some(c) != synth_col).collect();
    let ids: Vec<String> = feature_cols.iter().map(|&c| headers[c].to_string()).collect();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut flags = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(io)?;
        for &c in &feature_cols {
            let v: f64 = rec[c].parse().map_err(|_| {
                FactorError::Io(format!("{}: row {}, column `{}`: not a number", path.display(), i + 2, &headers[c]))
            })?;
            values.push(v);
        }
        let label = RiskLevel::parse(&rec[label_col])
            .map(|l| l.index())
            .or_else(|| rec[label_col].parse::<usize>().ok())
            .ok_or_else(|| FactorError::Io(format!("{}: row {}: bad label", path.display(), i + 2)))?;
        labels.push(label);
        if let Some(sc) = synth_col {
            flags.push(&rec[sc] == "true");
        }
    }
    let n = labels.len();
    let n_classes = RiskLevel::ALL.len().max(labels.iter().max().map_or(0, |m| m + 1));
    let m = LabeledMatrix::new(Matrix::new(n, ids.len(), values), labels, n_classes, ids);
    Ok((m, synth_col.map(|_| flags)))
}

enum Outcome {
    Sample(Sample),
    Coverage,
    NonFinite,
}

/// One sample per (vessel, datestamp): factors over the `factor_years`
/// before the datestamp, label from the `label_years` after it.
pub fn assemble_dataset(
    store: &EventStore,
    catalog: &FactorCatalog,
    config: &AssemblyConfig,
) -> Result<LabeledDataset, FactorError> {
    if catalog.max_years() > config.factor_years {
        return Err(FactorError::InvalidConfig(format!(
            "catalog needs {} years of history but the factor span is {}",
            catalog.max_years(),
            config.factor_years
        )));
    }
    let span = store.span();
    let mut datestamps = config.datestamps.clone();
    datestamps.sort();
    datestamps.dedup();
    for &ds in &datestamps {
        let needed = Window::new(
            ds - Duration::days(config.factor_years as i64 * YEAR_DAYS),
            ds + Duration::days(config.label_years as i64 * YEAR_DAYS),
        );
        if !span.covers(&needed) {
            return Err(FactorError::DatestampOutOfSpan {
                datestamp: ds,
                needed,
                span,
            });
        }
    }

    let engine = FactorEngine::new(store, catalog);
    let vessels: Vec<&str> = store.vessel_ids().collect();
    let jobs: Vec<(&str, NaiveDate)> = vessels
        .iter()
        .flat_map(|v| datestamps.iter().map(move |d| (*v, *d)))
        .collect();

    let outcomes: Vec<Result<Outcome, FactorError>> = jobs
        .par_iter()
        .map(|&(vessel, ds)| {
            let values = match engine.evaluate(vessel, ds) {
                Ok(v) => v,
                Err(FactorError::CoverageGap { .. }) | Err(FactorError::NoFleetCoverage { .. }) => {
                    return Ok(Outcome::Coverage)
                }
                Err(e) => return Err(e),
            };
            if values.iter().any(|v| !v.is_finite()) {
                return Ok(Outcome::NonFinite);
            }
            let label = engine.label(vessel, ds, config.label_years, &config.thresholds)?;
            Ok(Outcome::Sample(Sample {
                vessel_id: vessel.to_string(),
                datestamp: ds,
                values,
                label,
            }))
        })
        .collect();

    let mut samples = Vec::new();
    let mut dropped = DropCounts::default();
    for o in outcomes {
        match o? {
            Outcome::Sample(s) => samples.push(s),
            Outcome::Coverage => dropped.coverage += 1,
            Outcome::NonFinite => dropped.non_finite += 1,
        }
    }
    // vessel-major job order; present datestamp-major like the sample tables
    samples.sort_by(|a, b| (a.datestamp, &a.vessel_id).cmp(&(b.datestamp, &b.vessel_id)));
    Ok(LabeledDataset {
        catalog: catalog.clone(),
        samples,
        dropped,
    })
}
