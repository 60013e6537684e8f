//! Candidate risk factors: catalog enumeration, evaluation against the event
//! store, and labeled dataset assembly.

mod catalog;
mod compute;
mod dataset;

use chrono::NaiveDate;
use thiserror::Error;

use crate::events::{EntityKind, LoadError, Window};

pub use catalog::{
    CatalogConfig, DecaySchedule, FactorCatalog, FactorDescriptor, FactorFormat, Measure, PrimaryCategory,
    ProfileField, SeverityWeights,
};
pub use compute::{
    decayed_cumulative, entity_weighted_metric, fleet_size, grade_label, next_years, past_year, past_years,
    sailing_factors, severity_sum, FactorEngine, LabelThresholds, RiskLevel, SailingFactors, YEAR_DAYS,
};
pub use dataset::{
    assemble_dataset, half_year_datestamps, read_matrix_csv, write_matrix_csv, AssemblyConfig, DropCounts,
    LabeledDataset, Sample,
};

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("year count {0} outside 1..=5")]
    InvalidYears(usize),
    #[error("negative incident severity {0}")]
    NegativeSeverity(f64),
    #[error("empty window {0}")]
    EmptyWindow(Window),
    #[error("{kind} membership does not cover {gap}")]
    CoverageGap { kind: EntityKind, gap: Window },
    #[error("DOC company `{doc}` has no vessels during {window}")]
    NoFleetCoverage { doc: String, window: Window },
    #[error("datestamp {datestamp} needs {needed} but the store spans {span}")]
    DatestampOutOfSpan {
        datestamp: NaiveDate,
        needed: Window,
        span: Window,
    },
    #[error("invalid factor: {0}")]
    InvalidFactor(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] LoadError),
    #[error("{0}")]
    Io(String),
}
