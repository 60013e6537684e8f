//! Vessel event history: record types, CSV ingestion and a date-indexed store.
//!
//! Every time range in this crate is a half-open [`Window`]: the start day is
//! included and the end day is excluded.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type VesselId = String;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: missing column `{column}` in header")]
    MissingColumn { file: String, column: String },
    #[error("{file}: row {row}, column `{column}`: {message}")]
    Parse {
        file: String,
        row: usize,
        column: String,
        message: String,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("unknown vessel `{0}`")]
    UnknownVessel(String),
    #[error("invalid window [{start}, {end})")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
}

/// A half-open day range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Window {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Window { start, end }
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days().max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date < self.end
    }

    pub fn covers(&self, other: &Window) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn intersect(&self, other: &Window) -> Window {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        if end < start {
            Window { start, end: start }
        } else {
            Window { start, end }
        }
    }

    pub fn overlap_days(&self, other: &Window) -> i64 {
        self.intersect(other).days()
    }

    /// The calendar year `year` as a window.
    pub fn calendar_year(year: i32) -> Window {
        Window {
            start: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(year + 1, 1, 1).expect("valid year"),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IncidentCategory {
    A,
    B,
    C,
}

impl FromStr for IncidentCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(IncidentCategory::A),
            "B" | "b" => Ok(IncidentCategory::B),
            "C" | "c" => Ok(IncidentCategory::C),
            other => Err(format!("expected A, B or C, got `{other}`")),
        }
    }
}

impl fmt::Display for IncidentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IncidentCategory::A => "A",
            IncidentCategory::B => "B",
            IncidentCategory::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    #[serde(rename = "DOC")]
    Doc,
    Flag,
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "DOC" | "doc" | "Doc" => Ok(EntityKind::Doc),
            "Flag" | "flag" | "FLAG" => Ok(EntityKind::Flag),
            other => Err(format!("expected DOC or Flag, got `{other}`")),
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityKind::Doc => f.write_str("DOC"),
            EntityKind::Flag => f.write_str("Flag"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub vessel_id: VesselId,
    pub date: NaiveDate,
    pub category: IncidentCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeficiencyRecord {
    pub vessel_id: VesselId,
    pub date: NaiveDate,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetentionRecord {
    pub vessel_id: VesselId,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SailingDay {
    pub vessel_id: VesselId,
    pub date: NaiveDate,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MembershipInterval {
    pub vessel_id: VesselId,
    pub kind: EntityKind,
    pub entity_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl MembershipInterval {
    pub fn window(&self) -> Window {
        Window::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlagDemeritRecord {
    pub flag_id: String,
    pub year: i32,
    pub red_flags: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselProfile {
    pub vessel_id: VesselId,
    pub dwt: f64,
    pub max_dwt: f64,
    pub depth: f64,
    pub draught: f64,
    pub gross_tonnage: f64,
    pub length_bp: f64,
    pub length_oa: f64,
    pub net_tonnage: f64,
}

impl VesselProfile {
    pub fn values(&self) -> [f64; 8] {
        [
            self.dwt,
            self.max_dwt,
            self.depth,
            self.draught,
            self.gross_tonnage,
            self.length_bp,
            self.length_oa,
            self.net_tonnage,
        ]
    }

    fn is_valid(&self) -> bool {
        self.values().iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

/// The record kinds that carry a date and can be queried by window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    Incidents,
    Deficiencies,
    Detentions,
    Sailing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Record {
    Incident(IncidentRecord),
    Deficiency(DeficiencyRecord),
    Detention(DetentionRecord),
    Sailing(SailingDay),
}

impl Record {
    pub fn date(&self) -> NaiveDate {
        match self {
            Record::Incident(r) => r.date,
            Record::Deficiency(r) => r.date,
            Record::Detention(r) => r.date,
            Record::Sailing(r) => r.date,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatedIncident {
    pub date: NaiveDate,
    pub category: IncidentCategory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatedCount {
    pub date: NaiveDate,
    pub count: u32,
}

/// Sorted daily sailing distances with running totals for O(log n) window sums.
#[derive(Debug, Clone, PartialEq)]
pub struct SailingLog {
    dates: Vec<NaiveDate>,
    distances: Vec<f64>,
    // prefix[i] = (sum of distances, number of non-zero days) over the first i entries
    prefix: Vec<(f64, u32)>,
}

impl Default for SailingLog {
    fn default() -> Self {
        SailingLog::from_sorted(Vec::new())
    }
}

impl SailingLog {
    fn from_sorted(mut entries: Vec<(NaiveDate, f64)>) -> Self {
        entries.sort_by_key(|a| a.0);
        let mut prefix = Vec::with_capacity(entries.len() + 1);
        prefix.push((0.0, 0));
        let mut dist = 0.0;
        let mut days = 0u32;
        for (_, d) in &entries {
            dist += d;
            if *d > 0.0 {
                days += 1;
            }
            prefix.push((dist, days));
        }
        let (dates, distances) = entries.into_iter().unzip();
        SailingLog {
            dates,
            distances,
            prefix,
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    fn bounds(&self, window: &Window) -> (usize, usize) {
        let lo = self.dates.partition_point(|d| *d < window.start);
        let hi = self.dates.partition_point(|d| *d < window.end);
        (lo, hi.max(lo))
    }

    /// `(total distance, days with non-zero distance)` inside the window.
    pub fn totals(&self, window: &Window) -> (f64, u32) {
        let (lo, hi) = self.bounds(window);
        let (d_hi, n_hi) = self.prefix[hi];
        let (d_lo, n_lo) = self.prefix[lo];
        (d_hi - d_lo, n_hi - n_lo)
    }

    pub fn entries(&self, window: &Window) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        let (lo, hi) = self.bounds(window);
        (lo..hi).map(move |i| (self.dates[i], self.distances[i]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.dates.iter().copied().zip(self.distances.iter().copied())
    }
}

/// All history of one vessel, each list sorted by date.
#[derive(Debug, Clone, Default)]
pub struct VesselHistory {
    pub incidents: Vec<DatedIncident>,
    pub deficiencies: Vec<DatedCount>,
    pub detentions: Vec<NaiveDate>,
    pub sailing: SailingLog,
    pub doc: Vec<MembershipInterval>,
    pub flag: Vec<MembershipInterval>,
}

fn date_range<T>(items: &[T], window: &Window, date: impl Fn(&T) -> NaiveDate) -> (usize, usize) {
    let lo = items.partition_point(|r| date(r) < window.start);
    let hi = items.partition_point(|r| date(r) < window.end);
    (lo, hi.max(lo))
}

impl VesselHistory {
    pub fn incidents_in(&self, window: &Window) -> &[DatedIncident] {
        let (lo, hi) = date_range(&self.incidents, window, |r| r.date);
        &self.incidents[lo..hi]
    }

    pub fn deficiencies_in(&self, window: &Window) -> &[DatedCount] {
        let (lo, hi) = date_range(&self.deficiencies, window, |r| r.date);
        &self.deficiencies[lo..hi]
    }

    pub fn detentions_in(&self, window: &Window) -> &[NaiveDate] {
        let (lo, hi) = date_range(&self.detentions, window, |d| *d);
        &self.detentions[lo..hi]
    }

    pub fn memberships(&self, kind: EntityKind) -> &[MembershipInterval] {
        match kind {
            EntityKind::Doc => &self.doc,
            EntityKind::Flag => &self.flag,
        }
    }

    /// The entity governing the vessel on `date`, if any.
    pub fn entity_at(&self, kind: EntityKind, date: NaiveDate) -> Option<&str> {
        let list = self.memberships(kind);
        let idx = list.partition_point(|m| m.start <= date);
        if idx == 0 {
            return None;
        }
        let m = &list[idx - 1];
        (date < m.end).then_some(m.entity_id.as_str())
    }
}

/// Per-kind row counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub incidents: usize,
    pub deficiencies: usize,
    pub detentions: usize,
    pub sailing: usize,
    pub membership: usize,
    pub flag_demerits: usize,
    pub profiles: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: RowCounts,
    /// Vessels dropped because a profile value was missing, non-finite or non-positive.
    pub rejected_vessels: Vec<VesselId>,
}

/// Immutable, indexed collection of everything known about the fleet.
#[derive(Debug, Clone)]
pub struct EventStore {
    span: Window,
    vessels: BTreeMap<VesselId, VesselHistory>,
    profiles: BTreeMap<VesselId, VesselProfile>,
    flag_demerits: BTreeMap<(String, i32), u32>,
    entity_members: BTreeMap<(EntityKind, String), Vec<MembershipInterval>>,
}

/// Raw record collections, as read from or written to disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordSet {
    pub incidents: Vec<IncidentRecord>,
    pub deficiencies: Vec<DeficiencyRecord>,
    pub detentions: Vec<DetentionRecord>,
    pub sailing: Vec<SailingDay>,
    pub memberships: Vec<MembershipInterval>,
    pub flag_demerits: Vec<FlagDemeritRecord>,
    pub profiles: Vec<VesselProfile>,
}

impl RecordSet {
    pub fn row_counts(&self) -> RowCounts {
        RowCounts {
            incidents: self.incidents.len(),
            deficiencies: self.deficiencies.len(),
            detentions: self.detentions.len(),
            sailing: self.sailing.len(),
            membership: self.memberships.len(),
            flag_demerits: self.flag_demerits.len(),
            profiles: self.profiles.len(),
        }
    }
}

/// Returns the first overlapping pair among intervals of one (vessel, kind).
pub fn find_overlap(intervals: &[MembershipInterval]) -> Option<(&MembershipInterval, &MembershipInterval)> {
    let mut sorted: Vec<&MembershipInterval> = intervals.iter().collect();
    sorted.sort_by_key(|a| (a.start, a.end));
    sorted
        .windows(2)
        .find(|w| w[1].start < w[0].end)
        .map(|w| (w[0], w[1]))
}

impl EventStore {
    /// Validates and indexes a record set.
    ///
    /// When `span` is `None` it is the smallest window holding every dated
    /// record and membership interval.
    pub fn from_records(records: RecordSet, span: Option<Window>) -> Result<(Self, LoadReport), LoadError> {
        let rows = records.row_counts();
        let RecordSet {
            incidents,
            deficiencies,
            detentions,
            sailing,
            memberships,
            flag_demerits,
            profiles,
        } = records;

        let mut profile_map = BTreeMap::new();
        let mut rejected = Vec::new();
        for p in profiles {
            if profile_map.contains_key(&p.vessel_id) {
                return Err(LoadError::Invariant(format!(
                    "duplicate profile for vessel `{}`",
                    p.vessel_id
                )));
            }
            if p.is_valid() {
                profile_map.insert(p.vessel_id.clone(), p);
            } else {
                rejected.push(p.vessel_id.clone());
            }
        }
        rejected.sort();
        let is_rejected = |v: &str| rejected.binary_search_by(|r| r.as_str().cmp(v)).is_ok();

        let span = match span {
            Some(s) => {
                if s.is_empty() {
                    return Err(LoadError::InvalidWindow {
                        start: s.start,
                        end: s.end,
                    });
                }
                s
            }
            None => derive_span(&incidents, &deficiencies, &detentions, &sailing, &memberships),
        };

        let mut vessels: BTreeMap<VesselId, VesselHistory> = BTreeMap::new();
        for id in profile_map.keys() {
            vessels.insert(id.clone(), VesselHistory::default());
        }

        let check = |vessel: &str, date: Option<NaiveDate>, what: &str| -> Result<bool, LoadError> {
            if is_rejected(vessel) {
                return Ok(false);
            }
            if !profile_map.contains_key(vessel) {
                return Err(LoadError::Invariant(format!(
                    "{what} references vessel `{vessel}` without a profile"
                )));
            }
            if let Some(d) = date {
                if !span.contains(d) {
                    return Err(LoadError::Invariant(format!(
                        "{what} for vessel `{vessel}` dated {d} lies outside the store span {span}"
                    )));
                }
            }
            Ok(true)
        };

        for r in incidents {
            if check(&r.vessel_id, Some(r.date), "incident")? {
                let h = vessels.get_mut(&r.vessel_id).expect("profiled vessel");
                h.incidents.push(DatedIncident {
                    date: r.date,
                    category: r.category,
                });
            }
        }
        for r in deficiencies {
            if check(&r.vessel_id, Some(r.date), "deficiency record")? {
                let h = vessels.get_mut(&r.vessel_id).expect("profiled vessel");
                h.deficiencies.push(DatedCount {
                    date: r.date,
                    count: r.count,
                });
            }
        }
        for r in detentions {
            if check(&r.vessel_id, Some(r.date), "detention")? {
                vessels.get_mut(&r.vessel_id).expect("profiled vessel").detentions.push(r.date);
            }
        }
        let mut sailing_by_vessel: BTreeMap<VesselId, Vec<(NaiveDate, f64)>> = BTreeMap::new();
        for r in sailing {
            if !(r.distance.is_finite() && r.distance >= 0.0) {
                return Err(LoadError::Invariant(format!(
                    "sailing distance {} for vessel `{}` on {} is not a non-negative number",
                    r.distance, r.vessel_id, r.date
                )));
            }
            if check(&r.vessel_id, Some(r.date), "sailing day")? {
                sailing_by_vessel.entry(r.vessel_id).or_default().push((r.date, r.distance));
            }
        }
        for (vessel, mut days) in sailing_by_vessel {
            days.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            if let Some(w) = days.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(LoadError::Invariant(format!(
                    "vessel `{vessel}` has more than one sailing record on {}",
                    w[0].0
                )));
            }
            vessels.get_mut(&vessel).expect("profiled vessel").sailing = SailingLog::from_sorted(days);
        }

        let mut entity_members: BTreeMap<(EntityKind, String), Vec<MembershipInterval>> = BTreeMap::new();
        for m in memberships {
            if m.start >= m.end {
                return Err(LoadError::Invariant(format!(
                    "{} membership of vessel `{}` in `{}` has start {} not before end {}",
                    m.kind, m.vessel_id, m.entity_id, m.start, m.end
                )));
            }
            if !check(&m.vessel_id, None, "membership")? {
                continue;
            }
            if m.start < span.start || m.end > span.end {
                return Err(LoadError::Invariant(format!(
                    "{} membership of vessel `{}` {} lies outside the store span {span}",
                    m.kind,
                    m.vessel_id,
                    m.window()
                )));
            }
            entity_members
                .entry((m.kind, m.entity_id.clone()))
                .or_default()
                .push(m.clone());
            let h = vessels.get_mut(&m.vessel_id).expect("profiled vessel");
            match m.kind {
                EntityKind::Doc => h.doc.push(m),
                EntityKind::Flag => h.flag.push(m),
            }
        }

        let mut demerits = BTreeMap::new();
        for r in flag_demerits {
            if demerits.insert((r.flag_id.clone(), r.year), r.red_flags).is_some() {
                return Err(LoadError::Invariant(format!(
                    "duplicate red-flag record for flag `{}` in {}",
                    r.flag_id, r.year
                )));
            }
        }

        for (id, h) in vessels.iter_mut() {
            h.incidents.sort_by_key(|a| (a.date, a.category));
            h.deficiencies.sort_by_key(|a| (a.date, a.count));
            h.detentions.sort();
            for kind in [EntityKind::Doc, EntityKind::Flag] {
                let list = match kind {
                    EntityKind::Doc => &mut h.doc,
                    EntityKind::Flag => &mut h.flag,
                };
                list.sort();
                if let Some((a, b)) = find_overlap(list) {
                    return Err(LoadError::Invariant(format!(
                        "overlapping {kind} memberships for vessel `{id}`: `{}` {} and `{}` {}",
                        a.entity_id,
                        a.window(),
                        b.entity_id,
                        b.window()
                    )));
                }
            }
        }
        for list in entity_members.values_mut() {
            list.sort();
        }

        let store = EventStore {
            span,
            vessels,
            profiles: profile_map,
            flag_demerits: demerits,
            entity_members,
        };
        Ok((
            store,
            LoadReport {
                rows,
                rejected_vessels: rejected,
            },
        ))
    }

    pub fn span(&self) -> Window {
        self.span
    }

    pub fn vessel_ids(&self) -> impl Iterator<Item = &str> {
        self.vessels.keys().map(String::as_str)
    }

    pub fn n_vessels(&self) -> usize {
        self.vessels.len()
    }

    pub fn history(&self, vessel: &str) -> Result<&VesselHistory, LoadError> {
        self.vessels
            .get(vessel)
            .ok_or_else(|| LoadError::UnknownVessel(vessel.to_string()))
    }

    pub fn profile(&self, vessel: &str) -> Result<&VesselProfile, LoadError> {
        self.profiles
            .get(vessel)
            .ok_or_else(|| LoadError::UnknownVessel(vessel.to_string()))
    }

    pub fn red_flags(&self, flag: &str, year: i32) -> u32 {
        self.flag_demerits.get(&(flag.to_string(), year)).copied().unwrap_or(0)
    }

    /// All membership intervals (any vessel) of one DOC company or flag.
    pub fn entity_members(&self, kind: EntityKind, entity: &str) -> &[MembershipInterval] {
        self.entity_members
            .get(&(kind, entity.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn entities(&self, kind: EntityKind) -> impl Iterator<Item = &str> {
        self.entity_members
            .keys()
            .filter(move |(k, _)| *k == kind)
            .map(|(_, id)| id.as_str())
    }

    /// Records of one kind for one vessel with date in `window`, in date order.
    pub fn query_window(&self, vessel: &str, kind: RecordKind, window: Window) -> Result<Vec<Record>, LoadError> {
        if window.end < window.start {
            return Err(LoadError::InvalidWindow {
                start: window.start,
                end: window.end,
            });
        }
        let h = self.history(vessel)?;
        let vessel_id = vessel.to_string();
        let out = match kind {
            RecordKind::Incidents => h
                .incidents_in(&window)
                .iter()
                .map(|r| {
                    Record::Incident(IncidentRecord {
                        vessel_id: vessel_id.clone(),
                        date: r.date,
                        category: r.category,
                    })
                })
                .collect(),
            RecordKind::Deficiencies => h
                .deficiencies_in(&window)
                .iter()
                .map(|r| {
                    Record::Deficiency(DeficiencyRecord {
                        vessel_id: vessel_id.clone(),
                        date: r.date,
                        count: r.count,
                    })
                })
                .collect(),
            RecordKind::Detentions => h
                .detentions_in(&window)
                .iter()
                .map(|d| {
                    Record::Detention(DetentionRecord {
                        vessel_id: vessel_id.clone(),
                        date: *d,
                    })
                })
                .collect(),
            RecordKind::Sailing => h
                .sailing
                .entries(&window)
                .map(|(date, distance)| {
                    Record::Sailing(SailingDay {
                        vessel_id: vessel_id.clone(),
                        date,
                        distance,
                    })
                })
                .collect(),
        };
        Ok(out)
    }

    /// Flattens the store back into record collections (sorted).
    pub fn to_records(&self) -> RecordSet {
        let mut set = RecordSet::default();
        for (id, h) in &self.vessels {
            for r in &h.incidents {
                set.incidents.push(IncidentRecord {
                    vessel_id: id.clone(),
                    date: r.date,
                    category: r.category,
                });
            }
            for r in &h.deficiencies {
                set.deficiencies.push(DeficiencyRecord {
                    vessel_id: id.clone(),
                    date: r.date,
                    count: r.count,
                });
            }
            for d in &h.detentions {
                set.detentions.push(DetentionRecord {
                    vessel_id: id.clone(),
                    date: *d,
                });
            }
            for (date, distance) in h.sailing.iter() {
                set.sailing.push(SailingDay {
                    vessel_id: id.clone(),
                    date,
                    distance,
                });
            }
            set.memberships.extend(h.doc.iter().cloned());
            set.memberships.extend(h.flag.iter().cloned());
        }
        for ((flag_id, year), red_flags) in &self.flag_demerits {
            set.flag_demerits.push(FlagDemeritRecord {
                flag_id: flag_id.clone(),
                year: *year,
                red_flags: *red_flags,
            });
        }
        set.profiles.extend(self.profiles.values().cloned());
        set
    }
}

fn derive_span(
    incidents: &[IncidentRecord],
    deficiencies: &[DeficiencyRecord],
    detentions: &[DetentionRecord],
    sailing: &[SailingDay],
    memberships: &[MembershipInterval],
) -> Window {
    let mut lo: Option<NaiveDate> = None;
    let mut hi: Option<NaiveDate> = None;
    let mut see = |start: NaiveDate, end: NaiveDate| {
        lo = Some(lo.map_or(start, |l| l.min(start)));
        hi = Some(hi.map_or(end, |h| h.max(end)));
    };
    let next = |d: NaiveDate| d.succ_opt().unwrap_or(d);
    incidents.iter().for_each(|r| see(r.date, next(r.date)));
    deficiencies.iter().for_each(|r| see(r.date, next(r.date)));
    detentions.iter().for_each(|r| see(r.date, next(r.date)));
    sailing.iter().for_each(|r| see(r.date, next(r.date)));
    memberships.iter().for_each(|m| see(m.start, m.end));
    match (lo, hi) {
        (Some(lo), Some(hi)) => Window::new(lo, hi),
        _ => {
            let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
            Window::new(epoch, epoch)
        }
    }
}

// ---------------------------------------------------------------------------
// CSV IO

/// One file path per record kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorePaths {
    pub incidents: PathBuf,
    pub deficiencies: PathBuf,
    pub detentions: PathBuf,
    pub sailing: PathBuf,
    pub membership: PathBuf,
    pub flag_demerits: PathBuf,
    pub profiles: PathBuf,
}

impl StorePaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        StorePaths {
            incidents: dir.join("incidents.csv"),
            deficiencies: dir.join("deficiencies.csv"),
            detentions: dir.join("detentions.csv"),
            sailing: dir.join("sailing.csv"),
            membership: dir.join("membership.csv"),
            flag_demerits: dir.join("flag_demerits.csv"),
            profiles: dir.join("profiles.csv"),
        }
    }
}

struct Table {
    file: String,
    columns: Vec<usize>,
    rows: Vec<csv::StringRecord>,
    names: &'static [&'static str],
}

impl Table {
    fn read(path: &Path, names: &'static [&'static str]) -> Result<Self, LoadError> {
        let file = path.display().to_string();
        let mut raw = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut raw))
            .map_err(|source| LoadError::Io {
                file: file.clone(),
                source,
            })?;
        if raw.trim().is_empty() {
            return Ok(Table {
                file,
                columns: Vec::new(),
                rows: Vec::new(),
                names,
            });
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(raw.as_bytes());
        let headers = reader
            .headers()
            .map_err(|source| LoadError::Csv {
                file: file.clone(),
                source,
            })?
            .clone();
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let idx = headers.iter().position(|h| h == *name).ok_or_else(|| LoadError::MissingColumn {
                file: file.clone(),
                column: name.to_string(),
            })?;
            columns.push(idx);
        }
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| LoadError::Csv {
                file: file.clone(),
                source,
            })?;
        Ok(Table {
            file,
            columns,
            rows,
            names,
        })
    }

    /// Parses column `col` of data row `row` (0-based); errors report 1-based
    /// line numbers counting the header.
    fn get<T: FromStr>(&self, row: usize, col: usize) -> Result<T, LoadError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.rows[row].get(self.columns[col]).unwrap_or("");
        raw.parse::<T>().map_err(|e| LoadError::Parse {
            file: self.file.clone(),
            row: row + 2,
            column: self.names[col].to_string(),
            message: format!("cannot parse `{raw}`: {e}"),
        })
    }

    fn len(&self) -> usize {
        self.rows.len()
    }
}

pub const INCIDENT_COLUMNS: &[&str] = &["vessel_id", "date", "category"];
pub const DEFICIENCY_COLUMNS: &[&str] = &["vessel_id", "date", "count"];
pub const DETENTION_COLUMNS: &[&str] = &["vessel_id", "date"];
pub const SAILING_COLUMNS: &[&str] = &["vessel_id", "date", "distance"];
pub const MEMBERSHIP_COLUMNS: &[&str] = &["vessel_id", "kind", "entity_id", "start", "end"];
pub const FLAG_DEMERIT_COLUMNS: &[&str] = &["flag_id", "year", "red_flags"];
pub const PROFILE_COLUMNS: &[&str] = &[
    "vessel_id",
    "dwt",
    "max_dwt",
    "depth",
    "draught",
    "gross_tonnage",
    "length_bp",
    "length_oa",
    "net_tonnage",
];

/// Profile values that are empty or unparsable count as missing: the vessel
/// is rejected rather than failing the load.
fn profile_value(table: &Table, row: usize, col: usize) -> f64 {
    table.get::<f64>(row, col).unwrap_or(f64::NAN)
}

pub fn read_records(paths: &StorePaths) -> Result<RecordSet, LoadError> {
    let mut set = RecordSet::default();

    let t = Table::read(&paths.incidents, INCIDENT_COLUMNS)?;
    for i in 0..t.len() {
        set.incidents.push(IncidentRecord {
            vessel_id: t.get(i, 0)?,
            date: t.get(i, 1)?,
            category: t.get(i, 2)?,
        });
    }
    let t = Table::read(&paths.deficiencies, DEFICIENCY_COLUMNS)?;
    for i in 0..t.len() {
        set.deficiencies.push(DeficiencyRecord {
            vessel_id: t.get(i, 0)?,
            date: t.get(i, 1)?,
            count: t.get(i, 2)?,
        });
    }
    let t = Table::read(&paths.detentions, DETENTION_COLUMNS)?;
    for i in 0..t.len() {
        set.detentions.push(DetentionRecord {
            vessel_id: t.get(i, 0)?,
            date: t.get(i, 1)?,
        });
    }
    let t = Table::read(&paths.sailing, SAILING_COLUMNS)?;
    for i in 0..t.len() {
        set.sailing.push(SailingDay {
            vessel_id: t.get(i, 0)?,
            date: t.get(i, 1)?,
            distance: t.get(i, 2)?,
        });
    }
    let t = Table::read(&paths.membership, MEMBERSHIP_COLUMNS)?;
    for i in 0..t.len() {
        set.memberships.push(MembershipInterval {
            vessel_id: t.get(i, 0)?,
            kind: t.get(i, 1)?,
            entity_id: t.get(i, 2)?,
            start: t.get(i, 3)?,
            end: t.get(i, 4)?,
        });
    }
    let t = Table::read(&paths.flag_demerits, FLAG_DEMERIT_COLUMNS)?;
    for i in 0..t.len() {
        set.flag_demerits.push(FlagDemeritRecord {
            flag_id: t.get(i, 0)?,
            year: t.get(i, 1)?,
            red_flags: t.get(i, 2)?,
        });
    }
    let t = Table::read(&paths.profiles, PROFILE_COLUMNS)?;
    for i in 0..t.len() {
        set.profiles.push(VesselProfile {
            vessel_id: t.get(i, 0)?,
            dwt: profile_value(&t, i, 1),
            max_dwt: profile_value(&t, i, 2),
            depth: profile_value(&t, i, 3),
            draught: profile_value(&t, i, 4),
            gross_tonnage: profile_value(&t, i, 5),
            length_bp: profile_value(&t, i, 6),
            length_oa: profile_value(&t, i, 7),
            net_tonnage: profile_value(&t, i, 8),
        });
    }
    Ok(set)
}

/// Reads, validates and indexes the seven CSV files.
pub fn load_store(paths: &StorePaths, span: Option<Window>) -> Result<(EventStore, LoadReport), LoadError> {
    let records = read_records(paths)?;
    EventStore::from_records(records, span)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, LoadError> {
    let file = File::create(path).map_err(|source| LoadError::Io {
        file: path.display().to_string(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), LoadError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let wrap = |source: csv::Error| LoadError::Csv {
        file: path.display().to_string(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(wrap)?;
    }
    w.flush().map_err(|source| LoadError::Io {
        file: path.display().to_string(),
        source,
    })
}

/// Writes the seven CSV files in the ingestion schema.
pub fn write_records(records: &RecordSet, paths: &StorePaths) -> Result<(), LoadError> {
    write_rows(
        &paths.incidents,
        INCIDENT_COLUMNS,
        records
            .incidents
            .iter()
            .map(|r| [r.vessel_id.clone(), r.date.to_string(), r.category.to_string()]),
    )?;
    write_rows(
        &paths.deficiencies,
        DEFICIENCY_COLUMNS,
        records
            .deficiencies
            .iter()
            .map(|r| [r.vessel_id.clone(), r.date.to_string(), r.count.to_string()]),
    )?;
    write_rows(
        &paths.detentions,
        DETENTION_COLUMNS,
        records.detentions.iter().map(|r| [r.vessel_id.clone(), r.date.to_string()]),
    )?;
    write_rows(
        &paths.sailing,
        SAILING_COLUMNS,
        records
            .sailing
            .iter()
            .map(|r| [r.vessel_id.clone(), r.date.to_string(), r.distance.to_string()]),
    )?;
    write_rows(
        &paths.membership,
        MEMBERSHIP_COLUMNS,
        records.memberships.iter().map(|m| {
            [
                m.vessel_id.clone(),
                m.kind.to_string(),
                m.entity_id.clone(),
                m.start.to_string(),
                m.end.to_string(),
            ]
        }),
    )?;
    write_rows(
        &paths.flag_demerits,
        FLAG_DEMERIT_COLUMNS,
        records
            .flag_demerits
            .iter()
            .map(|r| [r.flag_id.clone(), r.year.to_string(), r.red_flags.to_string()]),
    )?;
    write_rows(
        &paths.profiles,
        PROFILE_COLUMNS,
        records.profiles.iter().map(|p| {
            std::iter::once(p.vessel_id.clone())
                .chain(p.values().iter().map(|v| v.to_string()))
                .collect::<Vec<_>>()
        }),
    )?;
    Ok(())
}

/// Fraction of the calendar year `year` overlapped by `window`, in days.
pub(crate) fn year_overlap_days(window: &Window, year: i32) -> i64 {
    window.overlap_days(&Window::calendar_year(year))
}

pub(crate) fn years_touching(window: &Window) -> std::ops::RangeInclusive<i32> {
    let last = window.end.pred_opt().unwrap_or(window.end);
    window.start.year()..=last.year().max(window.start.year())
}

#[allow(dead_code)]
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")
}
