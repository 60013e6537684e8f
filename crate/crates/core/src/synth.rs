//! Synthetic fleets with planted risk drivers.
//!
//! Non-incident histories are drawn first, with intensities re-drawn
//! independently for every 365-day block so different past years of one
//! measure stay weakly correlated. Each vessel then gets a latent risk per
//! block: a weighted sum of the standardised planted factors, evaluated at the
//! block start, plus Gaussian noise. Incidents in the block follow a Poisson
//! process whose rate, and whose share of Category A events, grow with the
//! latent risk. Blocks are aligned with the generated datestamps, so the
//! label window of a datestamp is exactly one block.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{
    DeficiencyRecord, DetentionRecord, EntityKind, EventStore, FlagDemeritRecord, IncidentCategory, IncidentRecord,
    LoadError, MembershipInterval, RecordSet, SailingDay, VesselProfile, Window,
};
use crate::factors::{CatalogConfig, FactorCatalog, FactorDescriptor, FactorEngine, FactorError, YEAR_DAYS};
use crate::rng;

/// Years of history needed before the first datestamp.
const HISTORY_YEARS: u32 = 5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("span of {years} years cannot hold {datestamps} datestamps after {HISTORY_YEARS} years of history")]
    InfeasibleSpan { years: u32, datestamps: usize },
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Store(#[from] LoadError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub factor: String,
    pub coefficient: f64,
}

impl Effect {
    pub fn new(factor: &str, coefficient: f64) -> Self {
        Effect {
            factor: factor.to_string(),
            coefficient,
        }
    }
}

/// Eight drivers, at most one per windowed measure. None is an exact
/// duplicate of another catalog factor.
pub const DEFAULT_DRIVERS: [&str; 8] = [
    "deficiencies.annual.2",
    "detentions.annual.3",
    "sailing_distance.annual.2",
    "red_flags.annual.2",
    "profile.depth",
    "profile.gross_tonnage",
    "profile.draught",
    "profile.net_tonnage",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_vessels: usize,
    pub n_doc_companies: usize,
    pub n_flags: usize,
    pub start: NaiveDate,
    /// Span length in 365-day years.
    pub span_years: u32,
    pub n_datestamps: usize,
    pub effects: Vec<Effect>,
    pub noise_scale: f64,
    /// Expected incidents per vessel-year at zero latent risk.
    pub base_incident_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_vessels: 300,
            n_doc_companies: 15,
            n_flags: 12,
            start: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
            span_years: 9,
            n_datestamps: 4,
            effects: DEFAULT_DRIVERS.iter().map(|f| Effect::new(f, 0.4)).collect(),
            noise_scale: 0.5,
            base_incident_rate: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn span(&self) -> Window {
        Window::new(self.start, self.block_start(self.span_years as usize))
    }

    fn block_start(&self, j: usize) -> NaiveDate {
        self.start + Duration::days(j as i64 * YEAR_DAYS)
    }

    /// Datestamps one 365-day year apart, starting after five years of history.
    pub fn datestamps(&self) -> Vec<NaiveDate> {
        (0..self.n_datestamps)
            .map(|i| self.block_start(HISTORY_YEARS as usize + i))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_vessels == 0 || self.n_doc_companies == 0 || self.n_flags == 0 {
            return bad("vessel, DOC company and flag counts must be positive");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be a non-negative real");
        }
        if !(self.base_incident_rate > 0.0 && self.base_incident_rate.is_finite()) {
            return bad("base_incident_rate must be positive");
        }
        if self.n_datestamps == 0 || self.span_years < HISTORY_YEARS + self.n_datestamps as u32 {
            return Err(SynthError::InfeasibleSpan {
                years: self.span_years,
                datestamps: self.n_datestamps,
            });
        }
        let catalog = FactorCatalog::build(&CatalogConfig::default())?;
        for e in &self.effects {
            if catalog.position(&e.factor).is_none() {
                return Err(SynthError::InvalidConfig(format!("`{}` is not in the catalog", e.factor)));
            }
            if !e.coefficient.is_finite() {
                return bad("effect coefficients must be finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub block_start: NaiveDate,
    pub latent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub informative: Vec<String>,
    pub effects: Vec<Effect>,
    pub datestamps: Vec<NaiveDate>,
    pub latent: BTreeMap<String, Vec<LatentPoint>>,
}

fn vessel_id(i: usize) -> String {
    format!("V{:05}", i + 1)
}

fn uniform_day(r: &mut ChaCha8Rng, w: &Window) -> NaiveDate {
    w.start + Duration::days(r.random_range(0..w.days()))
}

fn lognormal(r: &mut ChaCha8Rng, median: f64, sigma: f64) -> f64 {
    let z: f64 = Normal::new(0.0, sigma).expect("valid sigma").sample(r);
    median * z.exp()
}

fn poisson(r: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(r) as u64
}

fn memberships(
    r: &mut ChaCha8Rng,
    vessel: &str,
    kind: EntityKind,
    prefix: &str,
    n_entities: usize,
    switch_prob: f64,
    span: &Window,
) -> Vec<MembershipInterval> {
    let first = r.random_range(0..n_entities);
    let interval = |entity: usize, start, end| MembershipInterval {
        vessel_id: vessel.to_string(),
        kind,
        entity_id: format!("{prefix}{:03}", entity + 1),
        start,
        end,
    };
    if n_entities > 1 && r.random_bool(switch_prob) {
        let inner = Window::new(span.start + Duration::days(30), span.end - Duration::days(30));
        let at = uniform_day(r, &inner);
        let second = (first + r.random_range(1..n_entities)) % n_entities;
        vec![interval(first, span.start, at), interval(second, at, span.end)]
    } else {
        vec![interval(first, span.start, span.end)]
    }
}

/// Everything except incidents for one vessel.
fn vessel_history(config: &SynthConfig, index: usize) -> RecordSet {
    let mut r = rng::stream(config.seed, "vessel", index as u64);
    let id = vessel_id(index);
    let span = config.span();
    let mut out = RecordSet::default();

    let dwt = lognormal(&mut r, 50_000.0, 0.5);
    let length_bp = lognormal(&mut r, 200.0, 0.2);
    out.profiles.push(VesselProfile {
        vessel_id: id.clone(),
        dwt,
        max_dwt: dwt * r.random_range(1.0..1.002),
        depth: lognormal(&mut r, 15.0, 0.2),
        draught: lognormal(&mut r, 10.0, 0.2),
        gross_tonnage: lognormal(&mut r, 30_000.0, 0.5),
        length_bp,
        length_oa: length_bp * 1.04 * r.random_range(1.0..1.002),
        net_tonnage: lognormal(&mut r, 15_000.0, 0.5),
    });
    out.memberships
        .extend(memberships(&mut r, &id, EntityKind::Doc, "DOC", config.n_doc_companies, 0.3, &span));
    out.memberships
        .extend(memberships(&mut r, &id, EntityKind::Flag, "FLAG", config.n_flags, 0.2, &span));

    let deficiency_mean = Gamma::new(2.0, 1.5).expect("valid gamma");
    for j in 0..config.span_years as usize {
        let block = Window::new(config.block_start(j), config.block_start(j + 1));
        let mu = deficiency_mean.sample(&mut r);
        let detention_p: f64 = r.random_range(0.0..0.3);
        for _ in 0..poisson(&mut r, 2.0) {
            let date = uniform_day(&mut r, &block);
            out.deficiencies.push(DeficiencyRecord {
                vessel_id: id.clone(),
                date,
                count: poisson(&mut r, mu) as u32,
            });
            if r.random_bool(detention_p) {
                out.detentions.push(DetentionRecord {
                    vessel_id: id.clone(),
                    date,
                });
            }
        }
        let sail_frac: f64 = r.random_range(0.3..0.9);
        let avg: f64 = r.random_range(150.0..350.0);
        let mut day = block.start;
        while day < block.end {
            if r.random_bool(sail_frac) {
                out.sailing.push(SailingDay {
                    vessel_id: id.clone(),
                    date: day,
                    distance: (avg * r.random_range(0.5..1.5) * 10.0).round() / 10.0,
                });
            }
            day += Duration::days(1);
        }
    }
    out
}

fn incidents(config: &SynthConfig, index: usize, latent: &[f64]) -> Vec<IncidentRecord> {
    let mut r = rng::stream(config.seed, "incidents", index as u64);
    let id = vessel_id(index);
    let mut out = Vec::new();
    for (j, z) in latent.iter().enumerate() {
        let block = Window::new(config.block_start(j), config.block_start(j + 1));
        let weight_a = 0.04 * (0.5 * z).exp();
        let (weight_b, weight_c) = (0.3, 0.66);
        let total = weight_a + weight_b + weight_c;
        for _ in 0..poisson(&mut r, config.base_incident_rate * z.exp()) {
            let u: f64 = r.random_range(0.0..total);
            let category = if u < weight_a {
                IncidentCategory::A
            } else if u < weight_a + weight_b {
                IncidentCategory::B
            } else {
                IncidentCategory::C
            };
            out.push(IncidentRecord {
                vessel_id: id.clone(),
                date: uniform_day(&mut r, &block),
                category,
            });
        }
    }
    out
}

/// Draws a fleet and returns its event store with the planted ground truth.
pub fn generate(config: &SynthConfig) -> Result<(EventStore, GroundTruth), SynthError> {
    config.validate()?;
    let span = config.span();

    let histories: Vec<RecordSet> = (0..config.n_vessels)
        .into_par_iter()
        .map(|i| vessel_history(config, i))
        .collect();
    let mut records = RecordSet::default();
    for h in histories {
        records.profiles.extend(h.profiles);
        records.memberships.extend(h.memberships);
        records.deficiencies.extend(h.deficiencies);
        records.detentions.extend(h.detentions);
        records.sailing.extend(h.sailing);
    }
    for f in 0..config.n_flags {
        let mut r = rng::stream(config.seed, "flag", f as u64);
        for year in span.start.year()..=(span.end - Duration::days(1)).year() {
            records.flag_demerits.push(FlagDemeritRecord {
                flag_id: format!("FLAG{:03}", f + 1),
                year,
                red_flags: r.random_range(0..=6),
            });
        }
    }

    // planted factor values at every block start with five years of history
    let (store, _) = EventStore::from_records(records.clone(), Some(span))?;
    let planted_ids: Vec<String> = config.effects.iter().map(|e| e.factor.clone()).collect();
    let planted = FactorCatalog::build(&CatalogConfig {
        factors: Some(planted_ids.clone()),
        ..CatalogConfig::default()
    })?;
    let columns: Vec<usize> = planted_ids
        .iter()
        .map(|id| planted.position(id).expect("planted factor in its own catalog"))
        .collect();
    let engine = FactorEngine::new(&store, &planted);
    let blocks = config.span_years as usize;
    let first = HISTORY_YEARS as usize;
    let values: Vec<Vec<Vec<f64>>> = (0..config.n_vessels)
        .into_par_iter()
        .map(|i| {
            let id = vessel_id(i);
            (first..blocks)
                .map(|j| {
                    let row = engine.evaluate(&id, config.block_start(j))?;
                    Ok(columns.iter().map(|&c| row[c]).collect())
                })
                .collect::<Result<Vec<Vec<f64>>, FactorError>>()
        })
        .collect::<Result<_, _>>()?;

    let n_effects = config.effects.len();
    let mut stats = vec![(0.0, 1.0); n_effects];
    for (k, stat) in stats.iter_mut().enumerate() {
        let all: Vec<f64> = values.iter().flatten().map(|row| row[k]).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let sd = (all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64).sqrt();
        *stat = (mean, if sd > 0.0 { sd } else { 1.0 });
    }

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let latent: Vec<Vec<f64>> = (0..config.n_vessels)
        .map(|i| {
            let mut r = rng::stream(config.seed, "latent", i as u64);
            (0..blocks)
                .map(|j| {
                    let signal: f64 = if j >= first {
                        config
                            .effects
                            .iter()
                            .zip(&values[i][j - first])
                            .zip(&stats)
                            .map(|((e, v), (m, s))| e.coefficient * (v - m) / s)
                            .sum()
                    } else {
                        0.0
                    };
                    (signal + config.noise_scale * noise.sample(&mut r)).clamp(-4.0, 4.0)
                })
                .collect()
        })
        .collect();

    let drawn: Vec<Vec<IncidentRecord>> = (0..config.n_vessels)
        .into_par_iter()
        .map(|i| incidents(config, i, &latent[i]))
        .collect();
    records.incidents = drawn.into_iter().flatten().collect();
    let (store, _) = EventStore::from_records(records, Some(span))?;

    let truth = GroundTruth {
        informative: planted_ids,
        effects: config.effects.clone(),
        datestamps: config.datestamps(),
        latent: latent
            .into_iter()
            .enumerate()
            .map(|(i, series)| {
                let points = series
                    .into_iter()
                    .enumerate()
                    .map(|(j, latent)| LatentPoint {
                        block_start: config.block_start(j),
                        latent,
                    })
                    .collect();
                (vessel_id(i), points)
            })
            .collect(),
    };
    Ok((store, truth))
}

/// Parses an effect list of `factor=coefficient` pairs.
pub fn parse_effects(list: &str) -> Result<Vec<Effect>, SynthError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (f, c) = item
                .split_once('=')
                .ok_or_else(|| SynthError::InvalidConfig(format!("`{item}` is not factor=coefficient")))?;
            let f = f.trim();
            f.parse::<FactorDescriptor>()?;
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| SynthError::InvalidConfig(format!("bad coefficient in `{item}`")))?;
            Ok(Effect::new(f, c))
        })
        .collect()
}
