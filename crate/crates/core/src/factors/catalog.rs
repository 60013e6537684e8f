//! Candidate-factor descriptors and the catalog builder.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FactorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimaryCategory {
    Incidents,
    PscDeficiencies,
    Detentions,
    Sailing,
    DocPerformance,
    FlagPerformance,
    Profile,
}

impl PrimaryCategory {
    pub const ALL: [PrimaryCategory; 7] = [
        PrimaryCategory::Incidents,
        PrimaryCategory::PscDeficiencies,
        PrimaryCategory::Detentions,
        PrimaryCategory::Sailing,
        PrimaryCategory::DocPerformance,
        PrimaryCategory::FlagPerformance,
        PrimaryCategory::Profile,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            PrimaryCategory::Incidents => "Incidents",
            PrimaryCategory::PscDeficiencies => "PSC deficiencies",
            PrimaryCategory::Detentions => "Detentions",
            PrimaryCategory::Sailing => "Sailing",
            PrimaryCategory::DocPerformance => "DOC performances",
            PrimaryCategory::FlagPerformance => "Flag performances",
            PrimaryCategory::Profile => "Profile information",
        }
    }
}

impl fmt::Display for PrimaryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Physical profile fields PF1..PF8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProfileField {
    Dwt,
    MaxDwt,
    Depth,
    Draught,
    GrossTonnage,
    LengthBp,
    LengthOa,
    NetTonnage,
}

impl ProfileField {
    pub const ALL: [ProfileField; 8] = [
        ProfileField::Dwt,
        ProfileField::MaxDwt,
        ProfileField::Depth,
        ProfileField::Draught,
        ProfileField::GrossTonnage,
        ProfileField::LengthBp,
        ProfileField::LengthOa,
        ProfileField::NetTonnage,
    ];

    /// Position in [`crate::events::VesselProfile::values`].
    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ProfileField::Dwt => "dwt",
            ProfileField::MaxDwt => "max_dwt",
            ProfileField::Depth => "depth",
            ProfileField::Draught => "draught",
            ProfileField::GrossTonnage => "gross_tonnage",
            ProfileField::LengthBp => "length_bp",
            ProfileField::LengthOa => "length_oa",
            ProfileField::NetTonnage => "net_tonnage",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            ProfileField::Dwt => "Deadweight tonnage",
            ProfileField::MaxDwt => "Maximum dead weight tonnage",
            ProfileField::Depth => "Depth",
            ProfileField::Draught => "Draught",
            ProfileField::GrossTonnage => "Gross tonnage",
            ProfileField::LengthBp => "Length between perpendiculars",
            ProfileField::LengthOa => "Length overall",
            ProfileField::NetTonnage => "Net tonnage",
        }
    }
}

/// What a factor measures, before any time format is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    IncidentsA,
    IncidentsB,
    IncidentsC,
    IncidentSeverity,
    Deficiencies,
    Detentions,
    SailingDistance,
    SailingDays,
    AvgDailyDistance,
    DocAvgSeverity,
    DocAvgDeficiencies,
    DocAvgDetentions,
    DocTotalSeverity,
    DocTotalDeficiencies,
    DocTotalDetentions,
    RedFlags,
    Profile(ProfileField),
}

impl Measure {
    /// Every time-windowed measure, in catalog order.
    pub const WINDOWED: [Measure; 16] = [
        Measure::IncidentsA,
        Measure::IncidentsB,
        Measure::IncidentsC,
        Measure::IncidentSeverity,
        Measure::Deficiencies,
        Measure::Detentions,
        Measure::SailingDistance,
        Measure::SailingDays,
        Measure::AvgDailyDistance,
        Measure::DocAvgSeverity,
        Measure::DocAvgDeficiencies,
        Measure::DocAvgDetentions,
        Measure::DocTotalSeverity,
        Measure::DocTotalDeficiencies,
        Measure::DocTotalDetentions,
        Measure::RedFlags,
    ];

    /// Dense index among [`Measure::WINDOWED`]; `None` for profile fields.
    pub fn windowed_index(&self) -> Option<usize> {
        Measure::WINDOWED.iter().position(|m| m == self)
    }

    pub fn category(&self) -> PrimaryCategory {
        use Measure::*;
        match self {
            IncidentsA | IncidentsB | IncidentsC | IncidentSeverity => PrimaryCategory::Incidents,
            Deficiencies => PrimaryCategory::PscDeficiencies,
            Detentions => PrimaryCategory::Detentions,
            SailingDistance | SailingDays | AvgDailyDistance => PrimaryCategory::Sailing,
            DocAvgSeverity | DocAvgDeficiencies | DocAvgDetentions | DocTotalSeverity | DocTotalDeficiencies
            | DocTotalDetentions => PrimaryCategory::DocPerformance,
            RedFlags => PrimaryCategory::FlagPerformance,
            Profile(_) => PrimaryCategory::Profile,
        }
    }

    /// Correlation scope: the primary category, except DOC performance which
    /// splits into its incident / PSC / detention secondary categories.
    pub fn scope_group(&self) -> &'static str {
        use Measure::*;
        match self {
            DocAvgSeverity | DocTotalSeverity => "DOC-incidents",
            DocAvgDeficiencies | DocTotalDeficiencies => "DOC-PSC inspection performances",
            DocAvgDetentions | DocTotalDetentions => "DOC-detention performances",
            other => other.category().label(),
        }
    }

    /// Whether the value over a window is the sum of its values over any
    /// partition of the window.
    pub fn is_additive(&self) -> bool {
        !matches!(
            self,
            Measure::AvgDailyDistance
                | Measure::DocAvgSeverity
                | Measure::DocAvgDeficiencies
                | Measure::DocAvgDetentions
                | Measure::DocTotalSeverity
                | Measure::DocTotalDeficiencies
                | Measure::DocTotalDetentions
                | Measure::Profile(_)
        )
    }

    pub fn tag(&self) -> &'static str {
        use Measure::*;
        match self {
            IncidentsA => "incidents_a",
            IncidentsB => "incidents_b",
            IncidentsC => "incidents_c",
            IncidentSeverity => "incident_severity",
            Deficiencies => "deficiencies",
            Detentions => "detentions",
            SailingDistance => "sailing_distance",
            SailingDays => "sailing_days",
            AvgDailyDistance => "avg_daily_distance",
            DocAvgSeverity => "doc_avg_severity",
            DocAvgDeficiencies => "doc_avg_deficiencies",
            DocAvgDetentions => "doc_avg_detentions",
            DocTotalSeverity => "doc_total_severity",
            DocTotalDeficiencies => "doc_total_deficiencies",
            DocTotalDetentions => "doc_total_detentions",
            RedFlags => "red_flags",
            Profile(_) => "profile",
        }
    }

    fn from_tag(tag: &str) -> Option<Measure> {
        Measure::WINDOWED.iter().copied().find(|m| m.tag() == tag)
    }

    /// (plain noun phrase, decayed noun phrase) used in descriptions.
    fn phrases(&self) -> (&'static str, &'static str) {
        use Measure::*;
        match self {
            IncidentsA => ("Number of Category A incidents", "Decayed number of Category A incidents"),
            IncidentsB => ("Number of Category B incidents", "Decayed number of Category B incidents"),
            IncidentsC => ("Number of Category C incidents", "Decayed number of Category C incidents"),
            IncidentSeverity => (
                "Sum of severity across all the incidents",
                "Decayed sum of severity across all the incidents",
            ),
            Deficiencies => ("Number of deficiencies", "Decayed sum of PSC deficiencies"),
            Detentions => ("Number of detentions", "Decayed number of detentions"),
            SailingDistance => ("Sailing distance", "Decayed sailing distance"),
            SailingDays => ("Number of sailing days", "Decayed number of sailing days"),
            AvgDailyDistance => ("Average sailing distance", "Decayed average sailing distance"),
            DocAvgSeverity => (
                "Average incident severity over the vessels that belong to the DOC company",
                "Decayed average incident severity over the vessels that belong to the DOC company",
            ),
            DocAvgDeficiencies => (
                "Average deficiencies over the vessels that belong to the DOC company",
                "Decayed average deficiencies over the vessels that belong to the DOC company",
            ),
            DocAvgDetentions => (
                "Average detentions over the vessels that belong to the DOC company",
                "Decayed average detentions over the vessels that belong to the DOC company",
            ),
            DocTotalSeverity => (
                "Total incident severity of the vessels that belong to the DOC company",
                "Decayed total incident severity of the vessels that belong to the DOC company",
            ),
            DocTotalDeficiencies => (
                "Total deficiencies of the vessels that belong to the DOC company",
                "Decayed total deficiencies of the vessels that belong to the DOC company",
            ),
            DocTotalDetentions => (
                "Total detentions of the vessels that belong to the DOC company",
                "Decayed total detentions of the vessels that belong to the DOC company",
            ),
            RedFlags => ("Number of red flags", "Decayed number of red flags"),
            Profile(p) => (p.description(), p.description()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorFormat {
    /// The single past year `k` (1 = most recent).
    Annual(u8),
    /// Plain total over the past `n` years.
    Cumulative(u8),
    /// Decay-weighted sum of the past `n` annual values.
    DecayedCumulative(u8),
}

impl FactorFormat {
    pub fn years(&self) -> u8 {
        match self {
            FactorFormat::Annual(k) | FactorFormat::Cumulative(k) | FactorFormat::DecayedCumulative(k) => *k,
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            FactorFormat::Annual(_) => "annual",
            FactorFormat::Cumulative(_) => "cumulative",
            FactorFormat::DecayedCumulative(_) => "decayed",
        }
    }
}

const ORDINALS: [&str; 6] = ["", "", "second", "third", "fourth", "fifth"];
const COUNTS: [&str; 6] = ["", "one", "two", "three", "four", "five"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorDescriptor {
    pub id: String,
    pub measure: Measure,
    pub format: Option<FactorFormat>,
}

impl FactorDescriptor {
    pub fn new(measure: Measure, format: Option<FactorFormat>) -> Result<Self, FactorError> {
        match (measure, format) {
            (Measure::Profile(_), None) => {}
            (Measure::Profile(_), Some(_)) => {
                return Err(FactorError::InvalidFactor("profile factors carry no time format".into()))
            }
            (_, None) => return Err(FactorError::InvalidFactor(format!("`{}` needs a time format", measure.tag()))),
            (_, Some(f)) => {
                let n = f.years();
                if !(1..=5).contains(&n) {
                    return Err(FactorError::InvalidFactor(format!("year count {n} outside 1..=5")));
                }
            }
        }
        let id = match (measure, format) {
            (Measure::Profile(p), _) => format!("profile.{}", p.tag()),
            (m, Some(f)) => format!("{}.{}.{}", m.tag(), f.tag(), f.years()),
            (_, None) => unreachable!(),
        };
        Ok(FactorDescriptor { id, measure, format })
    }

    pub fn category(&self) -> PrimaryCategory {
        self.measure.category()
    }

    pub fn scope_group(&self) -> &'static str {
        self.measure.scope_group()
    }

    /// Human-readable description generated from (measure, format).
    pub fn description(&self) -> String {
        let (plain, decayed) = self.measure.phrases();
        match self.format {
            None => plain.to_string(),
            Some(FactorFormat::Annual(1)) | Some(FactorFormat::Cumulative(1)) => format!("{plain} in the past year"),
            Some(FactorFormat::Annual(k)) => format!("{plain} in the past {} year", ORDINALS[k as usize]),
            Some(FactorFormat::Cumulative(n)) => format!("{plain} in the past {} years", COUNTS[n as usize]),
            Some(FactorFormat::DecayedCumulative(1)) => format!("{decayed} in the past year"),
            Some(FactorFormat::DecayedCumulative(n)) => format!("{decayed} in the past {} years", COUNTS[n as usize]),
        }
    }
}

impl FromStr for FactorDescriptor {
    type Err = FactorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FactorError::InvalidFactor(format!("unrecognised factor id `{s}`"));
        let parts: Vec<&str> = s.trim().split('.').collect();
        match parts.as_slice() {
            ["profile", field] => {
                let p = ProfileField::ALL.iter().find(|p| p.tag() == *field).ok_or_else(bad)?;
                FactorDescriptor::new(Measure::Profile(*p), None)
            }
            [measure, format, years] => {
                let m = Measure::from_tag(measure).ok_or_else(bad)?;
                let n: u8 = years.parse().map_err(|_| bad())?;
                let f = match *format {
                    "annual" => FactorFormat::Annual(n),
                    "cumulative" => FactorFormat::Cumulative(n),
                    "decayed" => FactorFormat::DecayedCumulative(n),
                    _ => return Err(bad()),
                };
                FactorDescriptor::new(m, Some(f))
            }
            _ => Err(bad()),
        }
    }
}

/// Recency weights k1..k5 for decayed-cumulative factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DecaySchedule {
    weights: [f64; 5],
}

impl DecaySchedule {
    pub fn new(weights: &[f64]) -> Result<Self, FactorError> {
        if weights.len() != 5 {
            return Err(FactorError::InvalidConfig(format!(
                "decay schedule needs 5 weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(FactorError::InvalidConfig("decay weights must be positive".into()));
        }
        let mut arr = [0.0; 5];
        arr.copy_from_slice(weights);
        Ok(DecaySchedule { weights: arr })
    }

    pub fn uniform() -> Self {
        DecaySchedule { weights: [1.0; 5] }
    }

    pub fn weights(&self) -> &[f64; 5] {
        &self.weights
    }
}

impl Default for DecaySchedule {
    fn default() -> Self {
        DecaySchedule {
            weights: [5.0, 4.0, 3.0, 3.0, 2.0],
        }
    }
}

impl TryFrom<Vec<f64>> for DecaySchedule {
    type Error = FactorError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        DecaySchedule::new(&v)
    }
}

impl From<DecaySchedule> for Vec<f64> {
    fn from(d: DecaySchedule) -> Self {
        d.weights.to_vec()
    }
}

/// Incident-category weights used in severity sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityWeights {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SeverityWeights {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, FactorError> {
        let w = SeverityWeights { a, b, c };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), FactorError> {
        if !(self.a >= self.b && self.b >= self.c && self.c > 0.0 && self.a.is_finite()) {
            return Err(FactorError::InvalidConfig(format!(
                "severity weights must satisfy a >= b >= c > 0, got ({}, {}, {})",
                self.a, self.b, self.c
            )));
        }
        Ok(())
    }
}

impl Default for SeverityWeights {
    fn default() -> Self {
        SeverityWeights { a: 6.0, b: 2.0, c: 1.0 }
    }
}

/// How the catalog builder enumerates factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogConfig {
    pub measures: Vec<Measure>,
    pub annual_years: Vec<u8>,
    pub cumulative_years: Vec<u8>,
    pub decayed_years: Vec<u8>,
    pub include_profile: bool,
    /// Explicit factor ids; replaces the enumeration when present.
    pub factors: Option<Vec<String>>,
    pub decay: DecaySchedule,
    pub severity: SeverityWeights,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            measures: Measure::WINDOWED.to_vec(),
            annual_years: vec![1, 2, 3, 4, 5],
            cumulative_years: vec![1, 2, 3, 4, 5],
            decayed_years: vec![2, 3, 4, 5],
            include_profile: true,
            factors: None,
            decay: DecaySchedule::default(),
            severity: SeverityWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCatalog {
    descriptors: Vec<FactorDescriptor>,
    decay: DecaySchedule,
    severity: SeverityWeights,
}

impl FactorCatalog {
    pub fn new(
        descriptors: Vec<FactorDescriptor>,
        decay: DecaySchedule,
        severity: SeverityWeights,
    ) -> Result<Self, FactorError> {
        severity.validate()?;
        let mut seen = HashSet::new();
        for d in &descriptors {
            if !seen.insert(d.id.as_str()) {
                return Err(FactorError::InvalidConfig(format!("duplicate factor `{}`", d.id)));
            }
        }
        Ok(FactorCatalog {
            descriptors,
            decay,
            severity,
        })
    }

    pub fn build(config: &CatalogConfig) -> Result<Self, FactorError> {
        let descriptors = match &config.factors {
            Some(ids) => ids.iter().map(|s| s.parse()).collect::<Result<Vec<_>, _>>()?,
            None => {
                let mut out = Vec::new();
                for m in &config.measures {
                    if matches!(m, Measure::Profile(_)) {
                        return Err(FactorError::InvalidConfig(
                            "profile fields are controlled by include_profile".into(),
                        ));
                    }
                    for k in &config.annual_years {
                        out.push(FactorDescriptor::new(*m, Some(FactorFormat::Annual(*k)))?);
                    }
                    for n in &config.cumulative_years {
                        out.push(FactorDescriptor::new(*m, Some(FactorFormat::Cumulative(*n)))?);
                    }
                    for n in &config.decayed_years {
                        out.push(FactorDescriptor::new(*m, Some(FactorFormat::DecayedCumulative(*n)))?);
                    }
                }
                if config.include_profile {
                    for p in ProfileField::ALL {
                        out.push(FactorDescriptor::new(Measure::Profile(p), None)?);
                    }
                }
                out
            }
        };
        FactorCatalog::new(descriptors, config.decay.clone(), config.severity)
    }

    pub fn descriptors(&self) -> &[FactorDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.descriptors.iter().map(|d| d.id.clone()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.descriptors.iter().position(|d| d.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&FactorDescriptor> {
        self.descriptors.iter().find(|d| d.id == id)
    }

    pub fn decay(&self) -> &DecaySchedule {
        &self.decay
    }

    pub fn severity(&self) -> &SeverityWeights {
        &self.severity
    }

    /// Longest look-back any factor needs, in years.
    pub fn max_years(&self) -> u8 {
        self.descriptors
            .iter()
            .filter_map(|d| d.format.map(|f| f.years()))
            .max()
            .unwrap_or(0)
    }

    /// Keeps only the descriptors at `keep` (in that order).
    pub fn retain_indices(&self, keep: &[usize]) -> FactorCatalog {
        FactorCatalog {
            descriptors: keep.iter().map(|&i| self.descriptors[i].clone()).collect(),
            decay: self.decay.clone(),
            severity: self.severity,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_size_and_uniqueness() {
        let cat = FactorCatalog::build(&CatalogConfig::default()).unwrap();
        assert_eq!(cat.len(), 16 * 14 + 8);
        assert_eq!(cat.max_years(), 5);
    }

    #[test]
    fn ids_round_trip_through_parser() {
        let cat = FactorCatalog::build(&CatalogConfig::default()).unwrap();
        for d in cat.descriptors() {
            let back: FactorDescriptor = d.id.parse().unwrap();
            assert_eq!(&back, d);
        }
    }

    #[test]
    fn descriptions_follow_table_grammar() {
        let d: FactorDescriptor = "deficiencies.decayed.2".parse().unwrap();
        assert_eq!(d.description(), "Decayed sum of PSC deficiencies in the past two years");
        let d: FactorDescriptor = "deficiencies.cumulative.4".parse().unwrap();
        assert_eq!(d.description(), "Number of deficiencies in the past four years");
        let d: FactorDescriptor = "avg_daily_distance.annual.1".parse().unwrap();
        assert_eq!(d.description(), "Average sailing distance in the past year");
        let d: FactorDescriptor = "avg_daily_distance.annual.2".parse().unwrap();
        assert_eq!(d.description(), "Average sailing distance in the past second year");
        let d: FactorDescriptor = "doc_avg_detentions.decayed.5".parse().unwrap();
        assert_eq!(
            d.description(),
            "Decayed average detentions over the vessels that belong to the DOC company in the past five years"
        );
        let d: FactorDescriptor = "profile.length_bp".parse().unwrap();
        assert_eq!(d.description(), "Length between perpendiculars");
        assert_eq!(d.category(), PrimaryCategory::Profile);
    }

    #[test]
    fn rejects_bad_ids_and_configs() {
        assert!("profile.nope".parse::<FactorDescriptor>().is_err());
        assert!("deficiencies.annual.6".parse::<FactorDescriptor>().is_err());
        assert!("deficiencies.weekly.2".parse::<FactorDescriptor>().is_err());
        assert!(DecaySchedule::new(&[1.0, 2.0]).is_err());
        assert!(SeverityWeights::new(1.0, 2.0, 3.0).is_err());
        let d: FactorDescriptor = "detentions.annual.1".parse().unwrap();
        assert!(FactorCatalog::new(vec![d.clone(), d], DecaySchedule::default(), SeverityWeights::default()).is_err());
    }

    #[test]
    fn doc_measures_split_into_secondary_scopes() {
        assert_ne!(
            Measure::DocAvgDetentions.scope_group(),
            Measure::DocAvgDeficiencies.scope_group()
        );
        assert_eq!(Measure::DocAvgDetentions.scope_group(), Measure::DocTotalDetentions.scope_group());
        assert_eq!(Measure::SailingDays.scope_group(), "Sailing");
    }
}
