//! Factor arithmetic and the per-(vessel, datestamp) evaluation engine.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::catalog::{DecaySchedule, FactorCatalog, FactorFormat, Measure, SeverityWeights};
use super::FactorError;
use crate::events::{
    year_overlap_days, years_touching, EntityKind, EventStore, IncidentCategory, MembershipInterval, VesselHistory,
    Window,
};

pub const YEAR_DAYS: i64 = 365;

/// Σ k_i · M_i over the first `n` past years (M_1 is the most recent).
pub fn decayed_cumulative(annual: &[f64], schedule: &DecaySchedule, n: usize) -> Result<f64, FactorError> {
    if !(1..=5).contains(&n) {
        return Err(FactorError::InvalidYears(n));
    }
    if annual.len() < n {
        return Err(FactorError::InvalidConfig(format!(
            "need {n} annual values, got {}",
            annual.len()
        )));
    }
    Ok(schedule.weights()[..n].iter().zip(&annual[..n]).map(|(k, m)| k * m).sum())
}

pub fn severity_sum(count_a: u32, count_b: u32, count_c: u32, weights: &SeverityWeights) -> f64 {
    weights.a * count_a as f64 + weights.b * count_b as f64 + weights.c * count_c as f64
}

/// Duration-weighted mean fleet size of `doc_id` over `window`.
///
/// Only days on which the company operates at least one vessel count toward
/// the duration, so a fleet of `s_1` for `t_1` days and `s_2` for `t_2` days
/// yields `(s_1 t_1 + s_2 t_2) / (t_1 + t_2)`.
pub fn fleet_size(doc_id: &str, window: &Window, memberships: &[MembershipInterval]) -> Result<f64, FactorError> {
    if window.is_empty() {
        return Err(FactorError::EmptyWindow(*window));
    }
    let mut edges: Vec<(NaiveDate, i64)> = Vec::new();
    for m in memberships
        .iter()
        .filter(|m| m.kind == EntityKind::Doc && m.entity_id == doc_id)
    {
        let seg = m.window().intersect(window);
        if seg.is_empty() {
            continue;
        }
        edges.push((seg.start, 1));
        edges.push((seg.end, -1));
    }
    edges.sort();
    let mut vessel_days = 0i64;
    let mut covered = 0i64;
    let mut active = 0i64;
    let mut prev: Option<NaiveDate> = None;
    for (date, delta) in edges {
        if let Some(p) = prev {
            let span = (date - p).num_days();
            if active > 0 {
                vessel_days += active * span;
                covered += span;
            }
        }
        active += delta;
        prev = Some(date);
    }
    if covered == 0 {
        return Err(FactorError::NoFleetCoverage {
            doc: doc_id.to_string(),
            window: *window,
        });
    }
    Ok(vessel_days as f64 / covered as f64)
}

/// Σ over the vessel's membership segments inside `window` of
/// `(segment_days / window_days) · metric(entity, segment)`.
///
/// The segments of `kind` must cover the whole window; the first uncovered
/// sub-window is reported otherwise.
pub fn entity_weighted_metric<F>(
    memberships: &[MembershipInterval],
    window: &Window,
    kind: EntityKind,
    mut metric: F,
) -> Result<f64, FactorError>
where
    F: FnMut(&str, &Window) -> Result<f64, FactorError>,
{
    if window.is_empty() {
        return Err(FactorError::EmptyWindow(*window));
    }
    let mut segs: Vec<(Window, &str)> = memberships
        .iter()
        .filter(|m| m.kind == kind)
        .map(|m| (m.window().intersect(window), m.entity_id.as_str()))
        .filter(|(w, _)| !w.is_empty())
        .collect();
    segs.sort_by_key(|(w, _)| (w.start, w.end));

    let mut cursor = window.start;
    for (w, _) in &segs {
        if w.start > cursor {
            return Err(FactorError::CoverageGap {
                kind,
                gap: Window::new(cursor, w.start),
            });
        }
        cursor = cursor.max(w.end);
    }
    if cursor < window.end {
        return Err(FactorError::CoverageGap {
            kind,
            gap: Window::new(cursor, window.end),
        });
    }

    let total = window.days() as f64;
    let mut acc = 0.0;
    for (w, entity) in segs {
        acc += (w.days() as f64 / total) * metric(entity, &w)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SailingFactors {
    pub distance: f64,
    pub sailing_days: u32,
    pub avg_daily: f64,
}

impl SailingFactors {
    pub fn from_totals(distance: f64, sailing_days: u32) -> Self {
        let avg_daily = if sailing_days == 0 {
            0.0
        } else {
            distance / sailing_days as f64
        };
        SailingFactors {
            distance,
            sailing_days,
            avg_daily,
        }
    }
}

/// Cumulative distance, days with non-zero distance, and their ratio (0 when
/// the vessel never sailed). Days without a record count as distance 0.
pub fn sailing_factors(store: &EventStore, vessel: &str, window: &Window) -> Result<SailingFactors, FactorError> {
    let h = store.history(vessel)?;
    let (distance, days) = h.sailing.totals(window);
    Ok(SailingFactors::from_totals(distance, days))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 3] = [RiskLevel::Low, RiskLevel::Medium, RiskLevel::High];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn from_index(i: usize) -> Option<RiskLevel> {
        RiskLevel::ALL.get(i).copied()
    }

    pub fn name(&self) -> &'static str {
        match self {
            RiskLevel::Low => "Low",
            RiskLevel::Medium => "Medium",
            RiskLevel::High => "High",
        }
    }

    pub fn parse(s: &str) -> Option<RiskLevel> {
        RiskLevel::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// Severity cut points: `{0}` is Low, `(0, high)` Medium, `[high, ∞)` High.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelThresholds {
    pub high: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        LabelThresholds { high: 3.0 }
    }
}

pub fn grade_label(severity: f64, thresholds: &LabelThresholds) -> Result<RiskLevel, FactorError> {
    if !(thresholds.high > 0.0) {
        return Err(FactorError::InvalidConfig(format!(
            "high-risk threshold must be positive, got {}",
            thresholds.high
        )));
    }
    if !(severity >= 0.0) {
        return Err(FactorError::NegativeSeverity(severity));
    }
    Ok(if severity == 0.0 {
        RiskLevel::Low
    } else if severity < thresholds.high {
        RiskLevel::Medium
    } else {
        RiskLevel::High
    })
}

/// The past `k`-th year before `datestamp`: `[d − k·365, d − (k−1)·365)`.
pub fn past_year(datestamp: NaiveDate, k: u8) -> Window {
    let k = k as i64;
    Window::new(
        datestamp - Duration::days(k * YEAR_DAYS),
        datestamp - Duration::days((k - 1) * YEAR_DAYS),
    )
}

/// The `n` years before `datestamp`: `[d − n·365, d)`.
pub fn past_years(datestamp: NaiveDate, n: u8) -> Window {
    Window::new(datestamp - Duration::days(n as i64 * YEAR_DAYS), datestamp)
}

pub fn next_years(datestamp: NaiveDate, n: u8) -> Window {
    Window::new(datestamp, datestamp + Duration::days(n as i64 * YEAR_DAYS))
}

/// Fleet-wide event ledger of one DOC company: every event of a member
/// vessel dated within its membership, with running totals.
#[derive(Debug, Clone, Default)]
struct DocLedger {
    dates: Vec<NaiveDate>,
    // (severity, deficiencies, detentions) summed over the first i events
    prefix: Vec<[f64; 3]>,
}

impl DocLedger {
    fn build(mut events: Vec<(NaiveDate, [f64; 3])>) -> Self {
        events.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1[0].total_cmp(&b.1[0]))
                .then(a.1[1].total_cmp(&b.1[1]))
                .then(a.1[2].total_cmp(&b.1[2]))
        });
        let mut prefix = Vec::with_capacity(events.len() + 1);
        let mut acc = [0.0; 3];
        prefix.push(acc);
        for (_, v) in &events {
            for i in 0..3 {
                acc[i] += v[i];
            }
            prefix.push(acc);
        }
        DocLedger {
            dates: events.into_iter().map(|e| e.0).collect(),
            prefix,
        }
    }

    fn totals(&self, window: &Window) -> [f64; 3] {
        let lo = self.dates.partition_point(|d| *d < window.start);
        let hi = self.dates.partition_point(|d| *d < window.end).max(lo);
        let (a, b) = (self.prefix[hi], self.prefix[lo]);
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }
}

/// Evaluates catalog factors and risk labels against one store.
pub struct FactorEngine<'a> {
    store: &'a EventStore,
    catalog: &'a FactorCatalog,
    docs: BTreeMap<String, DocLedger>,
}

const WINDOW_SLOTS: usize = 10;

impl<'a> FactorEngine<'a> {
    pub fn new(store: &'a EventStore, catalog: &'a FactorCatalog) -> Self {
        let weights = catalog.severity();
        let mut per_doc: BTreeMap<String, Vec<(NaiveDate, [f64; 3])>> = BTreeMap::new();
        for vessel in store.vessel_ids() {
            let h = store.history(vessel).expect("listed vessel");
            let mut push = |date: NaiveDate, v: [f64; 3]| {
                if let Some(doc) = h.entity_at(EntityKind::Doc, date) {
                    per_doc.entry(doc.to_string()).or_default().push((date, v));
                }
            };
            for r in &h.incidents {
                let sev = match r.category {
                    IncidentCategory::A => weights.a,
                    IncidentCategory::B => weights.b,
                    IncidentCategory::C => weights.c,
                };
                push(r.date, [sev, 0.0, 0.0]);
            }
            for r in &h.deficiencies {
                push(r.date, [0.0, r.count as f64, 0.0]);
            }
            for d in &h.detentions {
                push(*d, [0.0, 0.0, 1.0]);
            }
        }
        let docs = per_doc.into_iter().map(|(k, v)| (k, DocLedger::build(v))).collect();
        FactorEngine { store, catalog, docs }
    }

    pub fn catalog(&self) -> &FactorCatalog {
        self.catalog
    }

    fn doc_totals(&self, doc: &str, window: &Window) -> [f64; 3] {
        self.docs.get(doc).map(|l| l.totals(window)).unwrap_or([0.0; 3])
    }

    fn doc_metric(&self, h: &VesselHistory, window: &Window, slot: usize, average: bool) -> Result<f64, FactorError> {
        entity_weighted_metric(&h.doc, window, EntityKind::Doc, |doc, _segment| {
            let total = self.doc_totals(doc, window)[slot];
            if average {
                let size = fleet_size(doc, window, self.store.entity_members(EntityKind::Doc, doc))?;
                Ok(total / size)
            } else {
                Ok(total)
            }
        })
    }

    /// Red-flag exposure: each calendar year's red flags weighted by the
    /// fraction of that year the vessel spent under the flag inside `window`.
    fn red_flag_exposure(&self, h: &VesselHistory, window: &Window) -> Result<f64, FactorError> {
        let window_days = window.days() as f64;
        entity_weighted_metric(&h.flag, window, EntityKind::Flag, |flag, segment| {
            let mut exposure = 0.0;
            for year in years_touching(segment) {
                let overlap = year_overlap_days(segment, year);
                if overlap > 0 {
                    let year_len = Window::calendar_year(year).days() as f64;
                    exposure += overlap as f64 / year_len * self.store.red_flags(flag, year) as f64;
                }
            }
            Ok(exposure * window_days / segment.days() as f64)
        })
    }

    /// Raw value of a windowed measure for one vessel.
    pub fn measure_value(&self, vessel: &str, measure: Measure, window: &Window) -> Result<f64, FactorError> {
        let h = self.store.history(vessel)?;
        self.measure_on(h, vessel, measure, window)
    }

    fn measure_on(&self, h: &VesselHistory, vessel: &str, measure: Measure, window: &Window) -> Result<f64, FactorError> {
        let count_cat = |cat: IncidentCategory| h.incidents_in(window).iter().filter(|r| r.category == cat).count();
        Ok(match measure {
            Measure::IncidentsA => count_cat(IncidentCategory::A) as f64,
            Measure::IncidentsB => count_cat(IncidentCategory::B) as f64,
            Measure::IncidentsC => count_cat(IncidentCategory::C) as f64,
            Measure::IncidentSeverity => self.incident_severity(h, window),
            Measure::Deficiencies => h.deficiencies_in(window).iter().map(|r| r.count as f64).sum(),
            Measure::Detentions => h.detentions_in(window).len() as f64,
            Measure::SailingDistance => h.sailing.totals(window).0,
            Measure::SailingDays => h.sailing.totals(window).1 as f64,
            Measure::AvgDailyDistance => {
                let (d, n) = h.sailing.totals(window);
                SailingFactors::from_totals(d, n).avg_daily
            }
            Measure::DocAvgSeverity => self.doc_metric(h, window, 0, true)?,
            Measure::DocAvgDeficiencies => self.doc_metric(h, window, 1, true)?,
            Measure::DocAvgDetentions => self.doc_metric(h, window, 2, true)?,
            Measure::DocTotalSeverity => self.doc_metric(h, window, 0, false)?,
            Measure::DocTotalDeficiencies => self.doc_metric(h, window, 1, false)?,
            Measure::DocTotalDetentions => self.doc_metric(h, window, 2, false)?,
            Measure::RedFlags => self.red_flag_exposure(h, window)?,
            Measure::Profile(p) => self.store.profile(vessel)?.values()[p.index()],
        })
    }

    fn incident_severity(&self, h: &VesselHistory, window: &Window) -> f64 {
        let mut counts = [0u32; 3];
        for r in h.incidents_in(window) {
            counts[r.category as usize] += 1;
        }
        severity_sum(counts[0], counts[1], counts[2], self.catalog.severity())
    }

    /// Total incident severity of a vessel over `window`.
    pub fn severity_in(&self, vessel: &str, window: &Window) -> Result<f64, FactorError> {
        Ok(self.incident_severity(self.store.history(vessel)?, window))
    }

    /// Risk label from the incident severity in the `label_years` after `datestamp`.
    pub fn label(
        &self,
        vessel: &str,
        datestamp: NaiveDate,
        label_years: u8,
        thresholds: &LabelThresholds,
    ) -> Result<RiskLevel, FactorError> {
        grade_label(self.severity_in(vessel, &next_years(datestamp, label_years))?, thresholds)
    }

    /// Every catalog factor for one (vessel, datestamp), in catalog order.
    pub fn evaluate(&self, vessel: &str, datestamp: NaiveDate) -> Result<Vec<f64>, FactorError> {
        let h = self.store.history(vessel)?;
        // slots 0..5: past k-th year; 5..10: past n years
        let mut cache: Vec<[Option<f64>; WINDOW_SLOTS]> = vec![[None; WINDOW_SLOTS]; Measure::WINDOWED.len()];
        let mut value = |measure: Measure, slot: usize| -> Result<f64, FactorError> {
            let mi = measure.windowed_index().expect("windowed measure");
            if let Some(v) = cache[mi][slot] {
                return Ok(v);
            }
            let window = if slot < 5 {
                past_year(datestamp, slot as u8 + 1)
            } else {
                past_years(datestamp, (slot - 4) as u8)
            };
            let v = self.measure_on(h, vessel, measure, &window)?;
            cache[mi][slot] = Some(v);
            Ok(v)
        };

        let mut out = Vec::with_capacity(self.catalog.len());
        for d in self.catalog.descriptors() {
            let v = match d.format {
                None => self.measure_on(h, vessel, d.measure, &past_years(datestamp, 1))?,
                Some(FactorFormat::Annual(k)) => value(d.measure, k as usize - 1)?,
                Some(FactorFormat::Cumulative(n)) => value(d.measure, n as usize + 4)?,
                Some(FactorFormat::DecayedCumulative(n)) => {
                    let mut annual = [0.0; 5];
                    for (i, slot) in annual.iter_mut().enumerate().take(n as usize) {
                        *slot = value(d.measure, i)?;
                    }
                    decayed_cumulative(&annual, self.catalog.decay(), n as usize)?
                }
            };
            out.push(v);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{
        DeficiencyRecord, DetentionRecord, FlagDemeritRecord, IncidentRecord, RecordSet, SailingDay, VesselProfile,
    };
    use crate::factors::catalog::{CatalogConfig, FactorDescriptor};

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn member(v: &str, kind: EntityKind, e: &str, s: &str, t: &str) -> MembershipInterval {
        MembershipInterval {
            vessel_id: v.into(),
            kind,
            entity_id: e.into(),
            start: d(s),
            end: d(t),
        }
    }

    #[test]
    fn decayed_cumulative_examples() {
        let k = DecaySchedule::default();
        assert_eq!(decayed_cumulative(&[2.0, 1.0, 0.0, 3.0, 1.0], &k, 5).unwrap(), 25.0);
        assert_eq!(decayed_cumulative(&[0.0; 5], &k, 5).unwrap(), 0.0);
        assert_eq!(decayed_cumulative(&[2.0, 1.0], &k, 2).unwrap(), 14.0);
        assert!(matches!(decayed_cumulative(&[1.0; 5], &k, 0), Err(FactorError::InvalidYears(0))));
        assert!(decayed_cumulative(&[1.0; 6], &k, 6).is_err());
    }

    #[test]
    fn severity_sum_examples() {
        let w = SeverityWeights::default();
        assert_eq!(severity_sum(1, 0, 2, &w), 8.0);
        assert_eq!(severity_sum(0, 0, 0, &w), 0.0);
        assert_eq!(severity_sum(3, 1, 0, &w), 20.0);
    }

    #[test]
    fn fleet_size_examples() {
        let window = Window::new(d("2020-01-01"), d("2020-03-31"));
        assert_eq!(window.days(), 90);
        // constant fleet of 12
        let constant: Vec<_> = (0..12)
            .map(|i| member(&format!("V{i}"), EntityKind::Doc, "D", "2019-01-01", "2021-01-01"))
            .collect();
        assert_eq!(fleet_size("D", &window, &constant).unwrap(), 12.0);

        // 10 vessels for 30 days, 16 for the remaining 60
        let mut step: Vec<_> = (0..10)
            .map(|i| member(&format!("V{i}"), EntityKind::Doc, "D", "2019-01-01", "2021-01-01"))
            .collect();
        step.extend((10..16).map(|i| member(&format!("V{i}"), EntityKind::Doc, "D", "2020-01-31", "2021-01-01")));
        let got = fleet_size("D", &window, &step).unwrap();
        assert!((got - (10.0 * 30.0 + 16.0 * 60.0) / 90.0).abs() < 1e-12);
        assert!((got - 14.0).abs() < 1e-12);

        assert!(fleet_size("other", &window, &step).is_err());
    }

    #[test]
    fn fleet_size_matches_two_segment_formula() {
        // s1 = 3 for t1 = 40 days, s2 = 5 for t2 = 25 days
        let window = Window::new(d("2021-01-01"), d("2021-03-07"));
        assert_eq!(window.days(), 65);
        let mut m: Vec<_> = (0..3)
            .map(|i| member(&format!("A{i}"), EntityKind::Doc, "D", "2020-01-01", "2022-01-01"))
            .collect();
        m.extend((0..2).map(|i| member(&format!("B{i}"), EntityKind::Doc, "D", "2021-02-10", "2022-01-01")));
        let (s1, t1, s2, t2) = (3.0, 40.0, 5.0, 25.0);
        let expected = (s1 * t1 + s2 * t2) / (t1 + t2);
        assert!((fleet_size("D", &window, &m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn entity_weighting_examples() {
        let window = Window::new(d("2020-01-01"), d("2020-01-11"));
        let single = vec![member("V", EntityKind::Doc, "D1", "2019-01-01", "2021-01-01")];
        let v = entity_weighted_metric(&single, &window, EntityKind::Doc, |_, _| Ok(7.5)).unwrap();
        assert_eq!(v, 7.5);

        let two = vec![
            member("V", EntityKind::Flag, "F1", "2019-01-01", "2020-01-06"),
            member("V", EntityKind::Flag, "F2", "2020-01-06", "2021-01-01"),
        ];
        let v = entity_weighted_metric(&two, &window, EntityKind::Flag, |f, _| Ok(if f == "F1" { 2.0 } else { 4.0 }))
            .unwrap();
        assert!((v - 3.0).abs() < 1e-12);

        let degenerate = vec![
            member("V", EntityKind::Doc, "D1", "2019-01-01", "2021-01-01"),
            member("V", EntityKind::Doc, "D2", "2021-01-01", "2021-01-01"),
        ];
        let v = entity_weighted_metric(&degenerate, &window, EntityKind::Doc, |_, _| Ok(7.5)).unwrap();
        assert_eq!(v, 7.5);
    }

    #[test]
    fn entity_weighting_reports_gap() {
        let window = Window::new(d("2020-01-01"), d("2020-02-01"));
        let partial = vec![member("V", EntityKind::Doc, "D1", "2020-01-10", "2021-01-01")];
        match entity_weighted_metric(&partial, &window, EntityKind::Doc, |_, _| Ok(1.0)) {
            Err(FactorError::CoverageGap { gap, .. }) => {
                assert_eq!(gap, Window::new(d("2020-01-01"), d("2020-01-10")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grade_label_examples() {
        let t = LabelThresholds::default();
        assert_eq!(grade_label(0.0, &t).unwrap(), RiskLevel::Low);
        assert_eq!(grade_label(2.0, &t).unwrap(), RiskLevel::Medium);
        assert_eq!(grade_label(2.999, &t).unwrap(), RiskLevel::Medium);
        assert_eq!(grade_label(3.0, &t).unwrap(), RiskLevel::High);
        assert!(grade_label(-1.0, &t).is_err());
        assert!(grade_label(f64::NAN, &t).is_err());
    }

    #[test]
    fn sailing_examples() {
        let log_set = |dists: &[f64]| {
            let set = RecordSet {
                sailing: dists
                    .iter()
                    .enumerate()
                    .map(|(i, x)| SailingDay {
                        vessel_id: "V".into(),
                        date: d("2020-01-01") + Duration::days(i as i64),
                        distance: *x,
                    })
                    .collect(),
                profiles: vec![profile("V")],
                ..Default::default()
            };
            EventStore::from_records(set, None).unwrap().0
        };
        let w = Window::new(d("2019-01-01"), d("2021-01-01"));
        let s = sailing_factors(&log_set(&[10.0, 0.0, 20.0]), "V", &w).unwrap();
        assert_eq!((s.distance, s.sailing_days, s.avg_daily), (30.0, 2, 15.0));
        let s = sailing_factors(&log_set(&[0.0, 0.0]), "V", &w).unwrap();
        assert_eq!((s.distance, s.sailing_days, s.avg_daily), (0.0, 0, 0.0));
        let s = sailing_factors(&log_set(&[7.0]), "V", &w).unwrap();
        assert_eq!((s.distance, s.sailing_days, s.avg_daily), (7.0, 1, 7.0));
    }

    fn profile(id: &str) -> VesselProfile {
        VesselProfile {
            vessel_id: id.into(),
            dwt: 1.0,
            max_dwt: 2.0,
            depth: 3.0,
            draught: 4.0,
            gross_tonnage: 5.0,
            length_bp: 6.0,
            length_oa: 7.0,
            net_tonnage: 8.0,
        }
    }

    fn small_store() -> EventStore {
        let mut set = RecordSet {
            profiles: vec![profile("V1"), profile("V2")],
            memberships: vec![
                member("V1", EntityKind::Doc, "D1", "2014-01-01", "2023-01-01"),
                member("V2", EntityKind::Doc, "D1", "2014-01-01", "2018-01-01"),
                member("V2", EntityKind::Doc, "D2", "2018-01-01", "2023-01-01"),
                member("V1", EntityKind::Flag, "F1", "2014-01-01", "2023-01-01"),
                member("V2", EntityKind::Flag, "F2", "2014-01-01", "2023-01-01"),
            ],
            ..Default::default()
        };
        for y in 2014..2023 {
            set.flag_demerits.push(FlagDemeritRecord {
                flag_id: "F1".into(),
                year: y,
                red_flags: 2,
            });
        }
        set.deficiencies = vec![
            DeficiencyRecord {
                vessel_id: "V1".into(),
                date: d("2019-08-01"),
                count: 2,
            },
            DeficiencyRecord {
                vessel_id: "V1".into(),
                date: d("2018-08-01"),
                count: 1,
            },
            DeficiencyRecord {
                vessel_id: "V2".into(),
                date: d("2017-03-01"),
                count: 4,
            },
        ];
        set.detentions = vec![DetentionRecord {
            vessel_id: "V2".into(),
            date: d("2019-01-15"),
        }];
        set.incidents = vec![IncidentRecord {
            vessel_id: "V1".into(),
            date: d("2021-01-01"),
            category: IncidentCategory::A,
        }];
        EventStore::from_records(set, None).unwrap().0
    }

    #[test]
    fn engine_formats_agree_with_definitions() {
        let store = small_store();
        let ids = [
            "deficiencies.annual.1",
            "deficiencies.annual.2",
            "deficiencies.cumulative.2",
            "deficiencies.decayed.2",
            "doc_total_deficiencies.cumulative.5",
            "doc_avg_deficiencies.cumulative.5",
            "red_flags.annual.1",
            "profile.draught",
        ];
        let cfg = CatalogConfig {
            factors: Some(ids.iter().map(|s| s.to_string()).collect()),
            ..Default::default()
        };
        let cat = FactorCatalog::build(&cfg).unwrap();
        let engine = FactorEngine::new(&store, &cat);
        let ds = d("2020-07-01");
        let v = engine.evaluate("V1", ds).unwrap();
        // past year [2019-07-02, 2020-07-01) holds the 2019-08-01 inspection
        assert_eq!(v[0], 2.0);
        assert_eq!(v[1], 1.0);
        assert_eq!(v[2], 3.0);
        assert_eq!(v[3], 5.0 * 2.0 + 4.0 * 1.0);
        // D1 events in the past five years: V1 deficiencies 2 + 1, V2's 4 on 2017-03-01 (in D1)
        assert_eq!(v[4], 7.0);
        // fleet: V1 all 1825 days, V2 from 2015-07-03 to 2018-01-01
        let w = past_years(ds, 5);
        let v2_days = Window::new(w.start, d("2018-01-01")).days() as f64;
        let expected_size = (1825.0 + v2_days) / 1825.0;
        assert!((v[5] - 7.0 / expected_size).abs() < 1e-12);
        // F1 has 2 red flags per year; the window straddles 2019 and leap-year 2020
        assert!((v[6] - 2.0 * (183.0 / 365.0 + 182.0 / 366.0)).abs() < 1e-12);
        assert_eq!(v[7], 4.0);
    }

    #[test]
    fn labels_come_from_next_year() {
        let store = small_store();
        let cat = FactorCatalog::build(&CatalogConfig::default()).unwrap();
        let engine = FactorEngine::new(&store, &cat);
        let t = LabelThresholds::default();
        assert_eq!(engine.label("V1", d("2020-07-01"), 1, &t).unwrap(), RiskLevel::High);
        assert_eq!(engine.label("V1", d("2021-01-02"), 1, &t).unwrap(), RiskLevel::Low);
        assert_eq!(engine.label("V2", d("2020-07-01"), 1, &t).unwrap(), RiskLevel::Low);
    }

    #[test]
    fn uniform_decay_equals_cumulative_for_additive_measures() {
        let store = small_store();
        let mut pairs = Vec::new();
        for m in Measure::WINDOWED.iter().filter(|m| m.is_additive()) {
            for n in 2..=5u8 {
                pairs.push((
                    FactorDescriptor::new(*m, Some(FactorFormat::Cumulative(n))).unwrap().id,
                    FactorDescriptor::new(*m, Some(FactorFormat::DecayedCumulative(n))).unwrap().id,
                ));
            }
        }
        let cfg = CatalogConfig {
            factors: Some(pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect()),
            decay: DecaySchedule::uniform(),
            ..Default::default()
        };
        let cat = FactorCatalog::build(&cfg).unwrap();
        let engine = FactorEngine::new(&store, &cat);
        for vessel in ["V1", "V2"] {
            let v = engine.evaluate(vessel, d("2021-01-01")).unwrap();
            for (cum, dec) in &pairs {
                let (a, b) = (v[cat.position(cum).unwrap()], v[cat.position(dec).unwrap()]);
                assert!((a - b).abs() < 1e-9, "{cum}: {a} vs {dec}: {b}");
            }
        }
    }

    #[test]
    fn red_flag_exposure_is_day_weighted_across_years() {
        let mut set = RecordSet {
            profiles: vec![profile("V")],
            memberships: vec![
                member("V", EntityKind::Flag, "F", "2018-01-01", "2022-01-01"),
                member("V", EntityKind::Doc, "D", "2018-01-01", "2022-01-01"),
            ],
            ..Default::default()
        };
        set.flag_demerits = vec![
            FlagDemeritRecord {
                flag_id: "F".into(),
                year: 2019,
                red_flags: 2,
            },
            FlagDemeritRecord {
                flag_id: "F".into(),
                year: 2020,
                red_flags: 4,
            },
        ];
        let store = EventStore::from_records(set, None).unwrap().0;
        let cat = FactorCatalog::build(&CatalogConfig::default()).unwrap();
        let engine = FactorEngine::new(&store, &cat);
        // window 2019-07-02 .. 2020-07-01: 183 days of 2019 (of 365), 182 of 2020 (of 366)
        let w = past_year(d("2020-07-01"), 1);
        let got = engine.measure_value("V", Measure::RedFlags, &w).unwrap();
        let expected = 183.0 / 365.0 * 2.0 + 182.0 / 366.0 * 4.0;
        assert!((got - expected).abs() < 1e-12);
    }
}
