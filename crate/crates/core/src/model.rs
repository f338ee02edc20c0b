//! Domain types shared across the pipeline: the 13-way action taxonomy,
//! per-student session logs, cohorts and fitted model weights.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category of a design action. The discriminant is the numeric code used
/// in sequence features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionCategory {
    Door = 0,
    Floor = 1,
    Foundation = 2,
    Wall = 3,
    Window = 4,
    Roof = 5,
    SolarPanel = 6,
    Tree = 7,
    Building = 8,
    Analysis = 9,
    Parameters = 10,
    Thermal = 11,
    Color = 12,
}

impl ActionCategory {
    pub const COUNT: usize = 13;

    /// All categories in code order.
    pub const ALL: [ActionCategory; Self::COUNT] = [
        ActionCategory::Door,
        ActionCategory::Floor,
        ActionCategory::Foundation,
        ActionCategory::Wall,
        ActionCategory::Window,
        ActionCategory::Roof,
        ActionCategory::SolarPanel,
        ActionCategory::Tree,
        ActionCategory::Building,
        ActionCategory::Analysis,
        ActionCategory::Parameters,
        ActionCategory::Thermal,
        ActionCategory::Color,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionCategory::Door => "Door",
            ActionCategory::Floor => "Floor",
            ActionCategory::Foundation => "Foundation",
            ActionCategory::Wall => "Wall",
            ActionCategory::Window => "Window",
            ActionCategory::Roof => "Roof",
            ActionCategory::SolarPanel => "SolarPanel",
            ActionCategory::Tree => "Tree",
            ActionCategory::Building => "Building",
            ActionCategory::Analysis => "Analysis",
            ActionCategory::Parameters => "Parameters",
            ActionCategory::Thermal => "Thermal",
            ActionCategory::Color => "Color",
        }
    }
}

/// Looks up the category for a numeric code in `0..=12`.
pub fn category_of_code(code: i64) -> Result<ActionCategory> {
    usize::try_from(code)
        .ok()
        .and_then(|c| ActionCategory::ALL.get(c).copied())
        .ok_or_else(|| Error::domain(format!("category code {code} outside 0..=12")))
}

impl fmt::Display for ActionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActionCategory::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown category name {s:?}")))
    }
}

/// One timestamped log event.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignAction {
    pub timestamp: DateTime<Utc>,
    pub raw_name: String,
    pub category: ActionCategory,
}

/// One student's ordered action list and the outcome read from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub student_id: String,
    pub actions: Vec<DesignAction>,
    /// Annual net energy of the final design in kWh, if the log recorded one.
    pub final_net_energy: Option<f64>,
}

impl SessionLog {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub sessions: Vec<SessionLog>,
    /// Where the sessions came from: a directory path or a generator descriptor.
    pub provenance: String,
}

impl Cohort {
    /// Builds a cohort, rejecting duplicate student ids.
    pub fn new(sessions: Vec<SessionLog>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &sessions {
            if !seen.insert(s.student_id.as_str()) {
                return Err(Error::domain(format!("duplicate student id {:?}", s.student_id)));
            }
        }
        Ok(Cohort {
            sessions,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Final net energies of every session, `None` where absent.
    pub fn energies(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.sessions.iter().map(|s| s.final_net_energy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Tally,
    Sequence,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Tally => "tally",
            FeatureKind::Sequence => "sequence",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tally" => Ok(FeatureKind::Tally),
            "sequence" => Ok(FeatureKind::Sequence),
            other => Err(Error::domain(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// Mean and standard deviation for one feature column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub stddev: f64,
}

/// How an iterative fit ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
}

/// Fitted coefficients for either regression family.
///
/// When `standardization` is present, raw features are standardized with it
/// before the coefficients are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub family: Family,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub standardization: Option<Vec<ColumnStats>>,
    pub feature_kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_code: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
}

impl ModelWeights {
    pub fn zeros(family: Family, feature_kind: FeatureKind, width: usize) -> Self {
        ModelWeights {
            family,
            intercept: 0.0,
            coefficients: vec![0.0; width],
            standardization: None,
            feature_kind,
            pad_length: None,
            pad_code: None,
            fit: None,
        }
    }

    pub fn width(&self) -> usize {
        self.coefficients.len()
    }

    /// Serializes to the model file format.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: ModelWeights = serde_json::from_str(text)?;
        if let Some(stats) = &w.standardization {
            if stats.len() != w.coefficients.len() {
                return Err(Error::domain("standardization length differs from coefficient count"));
            }
            if stats.iter().any(|s| s.stddev.is_nan() || s.stddev <= 0.0) {
                return Err(Error::domain("standardization stddev must be positive"));
            }
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_codes() {
        assert_eq!(category_of_code(0).unwrap(), ActionCategory::Door);
        assert_eq!(category_of_code(6).unwrap(), ActionCategory::SolarPanel);
        assert_eq!(category_of_code(12).unwrap(), ActionCategory::Color);
        assert!(matches!(category_of_code(13), Err(Error::Domain(_))));
        assert!(category_of_code(-1).is_err());
    }

    #[test]
    fn codes_round_trip_and_are_dense() {
        for (i, c) in ActionCategory::ALL.iter().enumerate() {
            assert_eq!(c.code() as usize, i);
            assert_eq!(category_of_code(c.code() as i64).unwrap(), *c);
            assert_eq!(c.name().parse::<ActionCategory>().unwrap(), *c);
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = SessionLog {
            student_id: "a".into(),
            actions: vec![],
            final_net_energy: None,
        };
        assert!(Cohort::new(vec![s.clone(), s], "test").is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let mut w = ModelWeights::zeros(Family::Logistic, FeatureKind::Sequence, 2);
        w.coefficients = vec![0.5, -1.25];
        w.intercept = 0.1;
        w.standardization = Some(vec![
            ColumnStats { mean: 1.0, stddev: 2.0 },
            ColumnStats { mean: 0.0, stddev: 1.0 },
        ]);
        w.pad_length = Some(2);
        w.pad_code = Some(13);
        let text = w.to_json().unwrap();
        assert!(text.contains("\"family\": \"logistic\""));
        assert_eq!(ModelWeights::from_json(&text).unwrap(), w);
    }
}
