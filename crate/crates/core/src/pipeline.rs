//! Stage-wise orchestration over an output directory.
//!
//! Every stage reads the artifacts of earlier stages from the run directory
//! and writes its own, so stages can be run one at a time or all at once
//! with [`Pipeline::run_all`]. Seeds of the individual stages are derived
//! from the single run seed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Duration, NaiveDate};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledMatrix;
use crate::events::{load_store, write_records, EventStore, LoadError, LoadReport, StorePaths, Window};
use crate::factors::{
    assemble_dataset, half_year_datestamps, read_matrix_csv, write_matrix_csv, AssemblyConfig, CatalogConfig,
    DropCounts, FactorCatalog, FactorError, LabelThresholds, RiskLevel, YEAR_DAYS,
};
use crate::filter::{correlation_matrix, sliding_filter, CorrelationMatrix, FilterConfig, FilterError, FilterOutcome};
use crate::forest::{ForestConfig, ForestError, RandomForestModel};
use crate::resample::{smote_tomek, Provenance, ResampleConfig, ResampleError, ResampleReport};
use crate::rng;
use crate::select::{
    conventional_baseline, grid_search, rank_with_model, top_n_selection, BaselineResult, CvConfig, CvMetrics,
    Evaluator, GridSpec, RankingConfig, SelectError, SelectionMode, SelectionResult, TraceWriter,
};
use crate::shap::{category_aggregate, CategoryShare, ImportanceRank, ShapError};
use crate::synth::{generate, GroundTruth, SynthConfig, SynthError};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {artifact}; run `{producer}` first")]
    MissingArtifact { artifact: String, producer: &'static str },
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Shap(#[from] ShapError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("{0}")]
    Io(String),
}

impl PipelineError {
    /// True for failures caused by the input data or its invariants rather
    /// than by the configuration or the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, PipelineError::Config(_) | PipelineError::Exists(_) | PipelineError::Io(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory with the seven input CSV files.
    pub input: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub catalog: CatalogConfig,
    /// Defaults to the synthetic datestamps, or four half-year datestamps
    /// starting five years into the data span.
    pub datestamps: Option<Vec<NaiveDate>>,
    pub factor_years: u8,
    pub label_years: u8,
    pub thresholds: LabelThresholds,
    pub drop_constant_factors: bool,
    pub resample: ResampleConfig,
    pub ranking: RankingConfig,
    /// Forest used inside cross-validation.
    pub forest: ForestConfig,
    /// Filter used by `filter` and by `select` when no search has been run.
    pub filter: FilterConfig,
    pub grid: GridSpec,
    pub cv: CvConfig,
    pub mode: SelectionMode,
    pub max_n: Option<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            synth: None,
            catalog: CatalogConfig::default(),
            datestamps: None,
            factor_years: 5,
            label_years: 1,
            thresholds: LabelThresholds::default(),
            drop_constant_factors: true,
            resample: ResampleConfig::default(),
            ranking: RankingConfig::default(),
            forest: ForestConfig::default(),
            filter: FilterConfig::default(),
            grid: GridSpec::default(),
            cv: CvConfig::default(),
            mode: SelectionMode::default(),
            max_n: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match (&self.input, &self.synth) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(PipelineError::Config(
                    "exactly one of `input` and `synth` must be given".into(),
                ))
            }
            (Some(dir), None) => {
                let paths = StorePaths::in_dir(dir);
                for p in [
                    &paths.incidents,
                    &paths.deficiencies,
                    &paths.detentions,
                    &paths.sailing,
                    &paths.membership,
                    &paths.flag_demerits,
                    &paths.profiles,
                ] {
                    if !p.is_file() {
                        return Err(PipelineError::Config(format!("input file {} does not exist", p.display())));
                    }
                }
            }
            (None, Some(s)) => s.validate()?,
        }
        if self.resample.k_neighbors == 0 {
            return Err(PipelineError::Config("k_neighbors must be at least 1".into()));
        }
        for f in [&self.ranking.forest, &self.forest] {
            f.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.filter.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.grid.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.cv.folds < 2 {
            return Err(PipelineError::Config("at least two CV folds are needed".into()));
        }
        if self.max_n == Some(0) {
            return Err(PipelineError::Config("max_n must be positive".into()));
        }
        Ok(())
    }

    /// Copy with every stage seed derived from `seed`.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        let s = self.seed;
        if let Some(synth) = c.synth.as_mut() {
            synth.seed = rng::derive(s, "synth", 0);
        }
        c.resample.seed = rng::derive(s, "resample", 0);
        c.ranking.forest.seed = rng::derive(s, "rank-forest", 0);
        c.forest.seed = rng::derive(s, "cv-forest", 0);
        c.cv.seed = rng::derive(s, "cv", 0);
        c
    }

    fn assembly(&self, span: Window) -> Result<AssemblyConfig, PipelineError> {
        let datestamps = match (&self.datestamps, &self.synth) {
            (Some(d), _) => d.clone(),
            (None, Some(s)) => s.datestamps(),
            (None, None) => {
                let first = span.start + Duration::days(self.factor_years as i64 * YEAR_DAYS);
                half_year_datestamps(first, 4)
            }
        };
        Ok(AssemblyConfig {
            datestamps,
            factor_years: self.factor_years,
            label_years: self.label_years,
            thresholds: self.thresholds,
        })
    }

    fn catalog_for(&self, ids: &[String]) -> Result<FactorCatalog, PipelineError> {
        Ok(FactorCatalog::build(&CatalogConfig {
            factors: Some(ids.to_vec()),
            ..self.catalog.clone()
        })?)
    }
}

// ---------------------------------------------------------------------------
// artifacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub span: Window,
    pub n_vessels: usize,
    pub load: LoadReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_vessels: usize,
    pub n_samples: usize,
    pub n_factors: usize,
    pub datestamps: Vec<NaiveDate>,
    pub samples_per_datestamp: BTreeMap<NaiveDate, usize>,
    pub class_counts: Vec<ClassCount>,
    pub dropped: DropCounts,
    pub constant_factors: Vec<String>,
    /// `vessel@datestamp` per dataset row.
    pub sample_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleSummary {
    pub report: ResampleReport,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankArtifact {
    pub rank: ImportanceRank,
    /// Mean |SHAP| per class, in the dataset's column order.
    pub per_class: Vec<Vec<f64>>,
    /// Resampled rows that were explained.
    pub explained_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub tau: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n_factors: usize,
    /// Factor pairs with |r| above each grid τ.
    pub above: Vec<PairCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterArtifact {
    pub config: FilterConfig,
    pub outcome: FilterOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFactorRow {
    pub rank: usize,
    pub id: String,
    pub category: String,
    pub description: String,
    pub importance: f64,
    /// Mean |SHAP| for Low, Medium and High.
    pub class_importance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

/// Everything in a report that is determined by the configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub format_version: u32,
    pub config: RunConfig,
    pub class_names: Vec<String>,
    pub dataset: DatasetSummary,
    pub resample: ResampleReport,
    pub initial_rank: ImportanceRank,
    pub correlation: CorrelationSummary,
    pub selection: SelectionResult,
    pub baseline: BaselineResult,
    pub key_factors: Vec<KeyFactorRow>,
    pub baseline_factors: Vec<KeyFactorRow>,
    pub categories: Vec<CategoryRow>,
    pub comparison: Vec<ComparisonRow>,
    pub beeswarm: String,
    pub ground_truth: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub payload: ReportPayload,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub mod artifact {
    pub const DATA_DIR: &str = "data";
    pub const INGEST: &str = "ingest.json";
    pub const GROUND_TRUTH: &str = "ground_truth.json";
    pub const DATASET_CSV: &str = "dataset.csv";
    pub const DATASET: &str = "dataset.json";
    pub const RESAMPLED_CSV: &str = "resampled.csv";
    pub const RESAMPLED: &str = "resampled.json";
    pub const MODEL: &str = "model.json";
    pub const RANK: &str = "rank.json";
    pub const BEESWARM: &str = "beeswarm.csv";
    pub const CORRELATION: &str = "correlation.csv";
    pub const FILTER: &str = "filter.json";
    pub const SEARCH: &str = "search.json";
    pub const GRID_TRACE: &str = "grid_trace.csv";
    pub const SELECTION: &str = "selection.json";
    pub const N_TRACE: &str = "n_trace.csv";
    pub const BASELINE: &str = "baseline.json";
    pub const BASELINE_TRACE: &str = "baseline_trace.csv";
    pub const REPORT: &str = "report.json";
    pub const TIMINGS: &str = "timings.json";
}

use artifact as a;

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// stages

/// Resolved configuration bound to an output directory.
pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    force: bool,
}

impl Pipeline {
    pub fn new(config: &RunConfig, out: &Path, force: bool) -> Result<Self, PipelineError> {
        config.validate()?;
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        Ok(Pipeline {
            config: config.resolved(),
            out: out.to_path_buf(),
            force,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, producer: &'static str) -> Result<PathBuf, PipelineError> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact {
                artifact: p.display().to_string(),
                producer,
            })
        }
    }

    fn claim(&self, names: &[&str]) -> Result<(), PipelineError> {
        if self.force {
            return Ok(());
        }
        for n in names {
            let p = self.path(n);
            if p.exists() {
                return Err(PipelineError::Exists(p));
            }
        }
        Ok(())
    }

    fn timed<T>(&self, stage: &str, f: impl FnOnce() -> Result<T, PipelineError>) -> Result<T, PipelineError> {
        let t0 = Instant::now();
        let out = f()?;
        let path = self.path(a::TIMINGS);
        let mut timings: BTreeMap<String, f64> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
        timings.insert(stage.to_string(), t0.elapsed().as_secs_f64());
        write_json(&path, &timings)?;
        log::info!("{stage} finished in {:.2}s", t0.elapsed().as_secs_f64());
        Ok(out)
    }

    fn write_store(&self, store: &EventStore, load: LoadReport) -> Result<IngestSummary, PipelineError> {
        let dir = self.path(a::DATA_DIR);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_records(&store.to_records(), &StorePaths::in_dir(&dir))?;
        let summary = IngestSummary {
            span: store.span(),
            n_vessels: store.n_vessels(),
            load,
        };
        write_json(&self.path(a::INGEST), &summary)?;
        Ok(summary)
    }

    /// Generates a synthetic fleet from the configured or default generator settings.
    pub fn synth(&self) -> Result<GroundTruth, PipelineError> {
        self.claim(&[a::DATA_DIR, a::INGEST, a::GROUND_TRUTH])?;
        self.timed("synth", || {
            let synth_config = self.config.synth.clone().unwrap_or_default();
            let (store, truth) = generate(&synth_config)?;
            let load = LoadReport {
                rows: store.to_records().row_counts(),
                rejected_vessels: Vec::new(),
            };
            self.write_store(&store, load)?;
            write_json(&self.path(a::GROUND_TRUTH), &truth)?;
            Ok(truth)
        })
    }

    /// Loads and validates the input CSVs, or generates the synthetic fleet.
    pub fn ingest(&self) -> Result<IngestSummary, PipelineError> {
        let Some(input) = &self.config.input else {
            self.synth()?;
            return read_json(&self.path(a::INGEST));
        };
        self.claim(&[a::DATA_DIR, a::INGEST])?;
        self.timed("ingest", || {
            let (store, load) = load_store(&StorePaths::in_dir(input), None)?;
            if !load.rejected_vessels.is_empty() {
                log::warn!("{} vessels rejected for invalid profiles", load.rejected_vessels.len());
            }
            self.write_store(&store, load)
        })
    }

    fn load_ingested(&self) -> Result<EventStore, PipelineError> {
        let summary: IngestSummary = read_json(&self.require(a::INGEST, "ingest")?)?;
        let (store, _) = load_store(&StorePaths::in_dir(self.path(a::DATA_DIR)), Some(summary.span))?;
        Ok(store)
    }

    pub fn build_dataset(&self) -> Result<DatasetSummary, PipelineError> {
        self.claim(&[a::DATASET, a::DATASET_CSV])?;
        self.timed("build-dataset", || {
            let store = self.load_ingested()?;
            let catalog = FactorCatalog::build(&self.config.catalog)?;
            let assembly = self.config.assembly(store.span())?;
            let mut dataset = assemble_dataset(&store, &catalog, &assembly)?;
            if dataset.is_empty() {
                return Err(FactorError::InvalidConfig("no sample survived assembly".into()).into());
            }
            let constant = if self.config.drop_constant_factors {
                dataset.drop_constant_factors()
            } else {
                Vec::new()
            };
            let counts = dataset.class_counts();
            let summary = DatasetSummary {
                n_vessels: store.n_vessels(),
                n_samples: dataset.len(),
                n_factors: dataset.catalog.len(),
                datestamps: assembly.datestamps.clone(),
                samples_per_datestamp: dataset.datestamp_counts(),
                class_counts: RiskLevel::ALL
                    .iter()
                    .map(|r| ClassCount {
                        class: r.name().to_string(),
                        count: counts[r.index()],
                    })
                    .collect(),
                dropped: dataset.dropped.clone(),
                constant_factors: constant,
                sample_keys: dataset
                    .samples
                    .iter()
                    .map(|s| format!("{}@{}", s.vessel_id, s.datestamp))
                    .collect(),
            };
            dataset.write_csv(&self.path(a::DATASET_CSV))?;
            write_json(&self.path(a::DATASET), &summary)?;
            Ok(summary)
        })
    }

    fn load_dataset(&self) -> Result<(LabeledMatrix, DatasetSummary), PipelineError> {
        let summary: DatasetSummary = read_json(&self.require(a::DATASET, "build-dataset")?)?;
        let (data, _) = read_matrix_csv(&self.require(a::DATASET_CSV, "build-dataset")?)?;
        Ok((data, summary))
    }

    pub fn resample(&self) -> Result<ResampleReport, PipelineError> {
        self.claim(&[a::RESAMPLED, a::RESAMPLED_CSV])?;
        self.timed("resample", || {
            let (data, _) = self.load_dataset()?;
            let out = smote_tomek(&data, &self.config.resample)?;
            write_matrix_csv(&out.data, Some(&out.synthetic), &self.path(a::RESAMPLED_CSV))?;
            write_json(
                &self.path(a::RESAMPLED),
                &ResampleSummary {
                    report: out.report.clone(),
                    provenance: out.provenance,
                },
            )?;
            Ok(out.report)
        })
    }

    fn load_resampled(&self) -> Result<(LabeledMatrix, ResampleSummary), PipelineError> {
        let summary: ResampleSummary = read_json(&self.require(a::RESAMPLED, "resample")?)?;
        let (data, _) = read_matrix_csv(&self.require(a::RESAMPLED_CSV, "resample")?)?;
        Ok((data, summary))
    }

    pub fn train(&self) -> Result<RandomForestModel, PipelineError> {
        self.claim(&[a::MODEL])?;
        self.timed("train", || {
            let (data, _) = self.load_resampled()?;
            let model = RandomForestModel::fit(&data, &self.config.ranking.forest)?;
            model.save(&self.path(a::MODEL))?;
            Ok(model)
        })
    }

    fn correlation(&self, data: &LabeledMatrix) -> Result<CorrelationMatrix, PipelineError> {
        let catalog = self.config.catalog_for(&data.feature_ids)?;
        Ok(correlation_matrix(&data.x, &data.feature_ids, &catalog, self.config.filter.scope))
    }

    /// SHAP importance rank, beeswarm export and correlation matrix.
    pub fn rank(&self) -> Result<RankArtifact, PipelineError> {
        self.claim(&[a::RANK, a::BEESWARM, a::CORRELATION])?;
        self.timed("rank", || {
            let (data, resampled) = self.load_resampled()?;
            let (_, dataset) = self.load_dataset()?;
            let model = RandomForestModel::load(&self.require(a::MODEL, "train")?)?;
            let ranking = rank_with_model(model, &data, &self.config.ranking)?;

            let sample_ids: Vec<String> = ranking
                .rows
                .iter()
                .map(|&r| match resampled.provenance[r] {
                    Provenance::Original(i) => dataset.sample_keys[i].clone(),
                    Provenance::Synthetic(..) => format!("synthetic-{r}"),
                })
                .collect();
            let class_names: Vec<&str> = RiskLevel::ALL.iter().map(|r| r.name()).collect();
            ranking.shap.write_beeswarm(
                &data.feature_ids,
                &sample_ids,
                &data.x.select_rows(&ranking.rows),
                &class_names,
                &self.path(a::BEESWARM),
            )?;
            self.correlation(&data)?.write_csv(&self.path(a::CORRELATION))?;

            let artifact = RankArtifact {
                rank: ranking.rank,
                per_class: ranking.shap.per_class_importance(),
                explained_rows: ranking.rows,
            };
            write_json(&self.path(a::RANK), &artifact)?;
            Ok(artifact)
        })
    }

    fn load_rank(&self) -> Result<RankArtifact, PipelineError> {
        read_json(&self.require(a::RANK, "rank")?)
    }

    /// Sliding-window filter with the configured (τ, w).
    pub fn filter(&self) -> Result<FilterOutcome, PipelineError> {
        self.claim(&[a::FILTER])?;
        self.timed("filter", || {
            let (data, _) = self.load_resampled()?;
            let rank = self.load_rank()?;
            let corr = self.correlation(&data)?;
            let outcome = sliding_filter(&rank.rank, &corr, &self.config.filter)?;
            write_json(
                &self.path(a::FILTER),
                &FilterArtifact {
                    config: self.config.filter.clone(),
                    outcome: outcome.clone(),
                },
            )?;
            Ok(outcome)
        })
    }

    /// Builds the cross-validation evaluator from stored artifacts.
    pub fn evaluator(&self) -> Result<Evaluator, PipelineError> {
        let (resampled, _) = self.load_resampled()?;
        let rank = self.load_rank()?.rank;
        let corr = self.correlation(&resampled)?;
        let c = &self.config;
        let ev = match c.mode {
            SelectionMode::Faithful => Evaluator::faithful(&resampled, &rank, &corr, &c.forest, &c.cv)?,
            SelectionMode::Nested => {
                let (data, _) = self.load_dataset()?;
                let catalog = c.catalog_for(&data.feature_ids)?;
                Evaluator::nested(
                    &data,
                    &catalog,
                    &c.resample,
                    &c.ranking,
                    c.filter.scope,
                    &rank,
                    &corr,
                    &c.forest,
                    &c.cv,
                )?
            }
        };
        Ok(ev.with_max_n(c.max_n))
    }

    pub fn search(&self, evaluator: &Evaluator) -> Result<SelectionResult, PipelineError> {
        self.claim(&[a::SEARCH, a::GRID_TRACE])?;
        self.timed("search", || {
            let result = grid_search(evaluator, &self.config.grid, &self.config.filter)?;
            let mut w = TraceWriter::create(&self.path(a::GRID_TRACE))?;
            for cell in &result.grid {
                w.write(Some(cell.tau), Some(cell.window), cell.n, &cell.metrics)?;
            }
            w.finish()?;
            write_json(&self.path(a::SEARCH), &result)?;
            Ok(result)
        })
    }

    /// Top-n selection at the searched optimum, or at the configured filter
    /// when no search result exists.
    pub fn select(&self, evaluator: &Evaluator) -> Result<SelectionResult, PipelineError> {
        self.claim(&[a::SELECTION, a::N_TRACE])?;
        self.timed("select", || {
            let search = self.path(a::SEARCH);
            let result = if search.exists() {
                read_json::<SelectionResult>(&search)?
            } else {
                let cfg = &self.config.filter;
                let top = top_n_selection(evaluator, cfg)?;
                let (resampled, _) = self.load_resampled()?;
                let filtered = sliding_filter(&self.load_rank()?.rank, &self.correlation(&resampled)?, cfg)?;
                SelectionResult {
                    mode: evaluator.mode(),
                    filter: cfg.clone(),
                    filtered_rank: filtered.rank,
                    filter_trace: filtered.trace,
                    n: top.n,
                    key_factors: top.factors,
                    criterion: top.best.mean,
                    grid: Vec::new(),
                    n_trace: top.trace,
                }
            };
            let (tau, window) = (result.filter.r_tau, result.filter.window);
            write_n_trace(&self.path(a::N_TRACE), Some((tau, window)), result.n_trace.iter().map(|p| (p.n, &p.metrics)))?;
            write_json(&self.path(a::SELECTION), &result)?;
            Ok(result)
        })
    }

    pub fn baseline(&self, evaluator: &Evaluator) -> Result<BaselineResult, PipelineError> {
        self.claim(&[a::BASELINE, a::BASELINE_TRACE])?;
        self.timed("baseline", || {
            let result = conventional_baseline(evaluator)?;
            write_n_trace(&self.path(a::BASELINE_TRACE), None, result.n_trace.iter().map(|p| (p.n, &p.metrics)))?;
            write_json(&self.path(a::BASELINE), &result)?;
            Ok(result)
        })
    }

    /// Assembles `report.json` from the artifacts of a completed run.
    pub fn report(&self) -> Result<RunReport, PipelineError> {
        self.claim(&[a::REPORT])?;
        let payload = self.timed("report", || self.payload())?;
        let timings: BTreeMap<String, f64> = read_json(&self.path(a::TIMINGS))?;
        let report = RunReport { payload, timings };
        write_json(&self.path(a::REPORT), &report)?;
        Ok(report)
    }

    fn payload(&self) -> Result<ReportPayload, PipelineError> {
        let (_, dataset) = self.load_dataset()?;
        let (resampled, rs) = self.load_resampled()?;
        let rank = self.load_rank()?;
        let selection: SelectionResult = read_json(&self.require(a::SELECTION, "select")?)?;
        let baseline: BaselineResult = read_json(&self.require(a::BASELINE, "baseline")?)?;
        let catalog = self.config.catalog_for(&resampled.feature_ids)?;
        let corr = self.correlation(&resampled)?;
        let ground_truth = if self.path(a::GROUND_TRUTH).exists() {
            Some(read_json::<GroundTruth>(&self.path(a::GROUND_TRUTH))?.informative)
        } else {
            None
        };

        let importance: Vec<(String, f64)> =
            rank.rank.entries.iter().map(|e| (e.id.clone(), e.importance)).collect();
        let categories = category_aggregate(&importance, &selection.key_factors, &catalog)?
            .into_iter()
            .map(|CategoryShare { category, share }| CategoryRow {
                category: category.label().to_string(),
                share,
            })
            .collect();

        let mut tau_values = self.config.grid.tau_values.clone();
        if !tau_values.contains(&selection.filter.r_tau) {
            tau_values.push(selection.filter.r_tau);
            tau_values.sort_by(f64::total_cmp);
        }
        let correlation = CorrelationSummary {
            n_factors: corr.len(),
            above: tau_values
                .iter()
                .map(|&tau| PairCount {
                    tau,
                    pairs: (0..corr.len())
                        .flat_map(|i| (i + 1..corr.len()).map(move |j| (i, j)))
                        .filter(|&(i, j)| corr.get(i, j).abs() > tau)
                        .count(),
                })
                .collect(),
        };
        let comparison = vec![
            comparison_row("proposed", selection.n, &selection.criterion),
            comparison_row("conventional", baseline.n, &baseline.criterion),
        ];
        Ok(ReportPayload {
            format_version: REPORT_FORMAT_VERSION,
            config: self.config.clone(),
            class_names: RiskLevel::ALL.iter().map(|r| r.name().to_string()).collect(),
            key_factors: factor_table(&selection.key_factors, &rank, &catalog)?,
            baseline_factors: factor_table(&baseline.factors, &rank, &catalog)?,
            dataset,
            resample: rs.report,
            initial_rank: rank.rank.clone(),
            correlation,
            selection,
            baseline,
            categories,
            comparison,
            beeswarm: a::BEESWARM.to_string(),
            ground_truth,
        })
    }

    /// Every stage in order, sharing one evaluator between search, select and
    /// baseline.
    pub fn run_all(&self) -> Result<RunReport, PipelineError> {
        self.ingest()?;
        self.build_dataset()?;
        self.resample()?;
        self.train()?;
        self.rank()?;
        self.filter()?;
        let evaluator = self.timed("evaluator", || self.evaluator())?;
        self.search(&evaluator)?;
        self.select(&evaluator)?;
        self.baseline(&evaluator)?;
        self.report()
    }
}

fn comparison_row(method: &str, n: usize, m: &crate::select::MetricSummary) -> ComparisonRow {
    ComparisonRow {
        method: method.to_string(),
        n,
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        auc: m.auc,
    }
}

/// Key-factor table rows: rank, category label, description and importances.
pub fn factor_table(
    ids: &[String],
    rank: &RankArtifact,
    catalog: &FactorCatalog,
) -> Result<Vec<KeyFactorRow>, PipelineError> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let desc = catalog
                .get(id)
                .ok_or_else(|| PipelineError::Config(format!("factor `{id}` is not in the dataset")))?;
            let entry = rank
                .rank
                .entries
                .iter()
                .find(|e| &e.id == id)
                .ok_or_else(|| PipelineError::Config(format!("factor `{id}` is not ranked")))?;
            Ok(KeyFactorRow {
                rank: i + 1,
                id: id.clone(),
                category: desc.category().label().to_string(),
                description: desc.description(),
                importance: entry.importance,
                class_importance: rank.per_class.iter().map(|row| row[entry.index]).collect(),
            })
        })
        .collect()
}

fn write_n_trace<'a>(
    path: &Path,
    filter: Option<(f64, usize)>,
    points: impl Iterator<Item = (usize, &'a CvMetrics)>,
) -> Result<(), PipelineError> {
    let mut w = TraceWriter::create(path)?;
    for (n, m) in points {
        w.write(filter.map(|f| f.0), filter.map(|f| f.1), n, m)?;
    }
    w.finish()?;
    Ok(())
}
