use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{EnrollError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Inclusion,
    Exclusion,
}

impl CriterionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CriterionKind::Inclusion => "inclusion",
            CriterionKind::Exclusion => "exclusion",
        }
    }
}

/// One free-text eligibility criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcStatement {
    pub id: String,
    pub kind: CriterionKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialCriteria {
    pub trial_id: String,
    pub condition: String,
    #[serde(rename = "criteria")]
    pub statements: Vec<EcStatement>,
}

impl TrialCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.trial_id.is_empty() {
            return Err(EnrollError::Validation("empty trial_id".into()));
        }
        if self.statements.is_empty() {
            return Err(EnrollError::Validation(format!(
                "trial `{}` has no criteria statements",
                self.trial_id
            )));
        }
        let mut seen = HashSet::new();
        for s in &self.statements {
            if !seen.insert(s.id.as_str()) {
                return Err(EnrollError::DuplicateId {
                    kind: "statement",
                    id: format!("{}/{}", self.trial_id, s.id),
                });
            }
            if s.text.trim().is_empty() {
                return Err(EnrollError::Validation(format!(
                    "trial `{}` statement `{}` has empty text",
                    self.trial_id, s.id
                )));
            }
        }
        Ok(())
    }

    pub fn statement(&self, id: &str) -> Option<&EcStatement> {
        self.statements.iter().find(|s| s.id == id)
    }

    /// Resolves `ids` in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&EcStatement>> {
        ids.iter()
            .map(|id| {
                self.statement(id).ok_or_else(|| {
                    EnrollError::Validation(format!(
                        "trial `{}` has no statement `{id}`",
                        self.trial_id
                    ))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub concept: String,
    pub value: f64,
    pub unit: String,
    /// Set at load time when `unit` is missing from the unit table.
    #[serde(skip)]
    pub unknown_unit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Visit {
    pub visit_id: String,
    pub date: NaiveDate,
    pub diagnosis: String,
    pub treatments: Vec<String>,
    #[serde(default)]
    pub measurements: Vec<Measurement>,
}

impl Visit {
    /// Treatment codes with duplicates removed, first occurrence kept.
    pub fn treatment_set(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.treatments
            .iter()
            .map(String::as_str)
            .filter(|t| seen.insert(*t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demographics {
    pub birth_year: i32,
    pub gender: String,
    pub country: String,
    pub geo: String,
    pub ethnicity: String,
    pub blood_type: String,
}

impl Demographics {
    /// `key=value` codes, one per field, in a fixed order.
    pub fn codes(&self) -> [String; 6] {
        [
            format!("birth_year={}", self.birth_year),
            format!("gender={}", self.gender),
            format!("country={}", self.country),
            format!("geo={}", self.geo),
            format!("ethnicity={}", self.ethnicity),
            format!("blood_type={}", self.blood_type),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub demographics: Demographics,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(EnrollError::Validation("empty patient_id".into()));
        }
        if self.visits.is_empty() {
            return Err(EnrollError::Validation(format!(
                "patient `{}` has no visits",
                self.patient_id
            )));
        }
        let mut seen = HashSet::new();
        for v in &self.visits {
            if !seen.insert(v.visit_id.as_str()) {
                return Err(EnrollError::DuplicateId {
                    kind: "visit",
                    id: format!("{}/{}", self.patient_id, v.visit_id),
                });
            }
            if v.diagnosis.is_empty() {
                return Err(EnrollError::Validation(format!(
                    "patient `{}` visit `{}` has no diagnosis",
                    self.patient_id, v.visit_id
                )));
            }
        }
        Ok(())
    }

    /// Orders visits by date, ties broken by visit id.
    pub fn sort_visits(&mut self) {
        self.visits
            .sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.visit_id.cmp(&b.visit_id)));
    }

    pub fn measurements(&self) -> impl Iterator<Item = &Measurement> {
        self.visits.iter().flat_map(|v| v.measurements.iter())
    }
}

/// Three-way entailment label. The declaration order is the argmax
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Contradiction,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }

    /// First index holding the maximum; ties resolve to the earlier label.
    pub fn argmax(scores: &[f64]) -> Label {
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().take(3) {
            if s > scores[best] {
                best = i;
            }
        }
        Label::ALL[best]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = EnrollError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            other => Err(EnrollError::Validation(format!("unknown label `{other}`"))),
        }
    }
}

/// `(criteria subset, patient, gold label)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledExample {
    pub trial_id: String,
    pub statement_ids: Vec<String>,
    pub patient_id: String,
    pub label: Label,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_order() {
        assert_eq!(Label::argmax(&[1.0 / 3.0; 3]), Label::Entailment);
        assert_eq!(Label::argmax(&[0.2, 0.4, 0.4]), Label::Contradiction);
        assert_eq!(Label::argmax(&[0.1, 0.2, 0.7]), Label::Neutral);
    }

    #[test]
    fn treatments_behave_as_a_set() {
        let v = Visit {
            visit_id: "v".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            diagnosis: "d".into(),
            treatments: vec!["a".into(), "b".into(), "a".into()],
            measurements: vec![],
        };
        assert_eq!(v.treatment_set(), ["a", "b"]);
    }

    #[test]
    fn trial_validation() {
        let mut t = TrialCriteria {
            trial_id: "t".into(),
            condition: "c".into(),
            statements: vec![],
        };
        assert!(t.validate().is_err());
        t.statements.push(EcStatement {
            id: "s".into(),
            kind: CriterionKind::Inclusion,
            text: "x".into(),
        });
        t.validate().unwrap();
        t.statements.push(t.statements[0].clone());
        assert!(matches!(t.validate(), Err(EnrollError::DuplicateId { .. })));
    }
}
