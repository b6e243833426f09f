//! Machine-checkable criteria: each rule renders its own statement text
//! and decides satisfaction directly from a patient record.

use crate::datamodel::{CriterionKind, Label, PatientRecord};
use crate::nir::{Interval, UnitTable};

use super::pools::{FILLER_EXCLUSION, FILLER_INCLUSION};

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    HasDiagnosis { code: String, name: String },
    HasTreatment { code: String, name: String, procedure: bool },
    Gender(String),
    Measure {
        concept: String,
        range: Interval,
        unit: String,
        show_unit: bool,
    },
    /// Consent/logistics statements that never exclude anyone.
    Filler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRule {
    pub kind: CriterionKind,
    pub predicate: Predicate,
    /// Template variant index.
    pub phrasing: usize,
}

const DIAGNOSIS: [&str; 4] = ["diagnosis of {}", "history of {}", "diagnosed with {}", "prior {}"];
const DRUG: [&str; 3] = ["currently receiving {}", "prior treatment with {}", "use of {}"];
const PROCEDURE: [&str; 3] = ["previous {} procedure", "underwent {}", "history of {} surgery"];
const GENDER: [&str; 3] = ["{} patients", "{} participants only", "{} sex"];

pub const PHRASINGS_DIAGNOSIS: usize = DIAGNOSIS.len();
pub const PHRASINGS_DRUG: usize = DRUG.len();
pub const PHRASINGS_PROCEDURE: usize = PROCEDURE.len();
pub const PHRASINGS_GENDER: usize = GENDER.len();
pub const PHRASINGS_MEASURE: usize = 3;

fn fill(template: &str, x: &str) -> String {
    template.replacen("{}", x, 1)
}

/// Whole numbers print without a decimal point, others with one.
pub fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x:.1}")
    }
}

fn render_measure(concept: &str, r: &Interval, unit: &str, show_unit: bool, phrasing: usize) -> String {
    let u = if show_unit { format!(" {unit}") } else { String::new() };
    let p = phrasing % PHRASINGS_MEASURE;
    match (r.lower, r.upper) {
        (Some(a), Some(b)) => {
            let (a, b) = (fmt_num(a), fmt_num(b));
            match p {
                0 => format!("{concept} between {a} and {b}{u}"),
                1 => format!("{concept} from {a} to {b}{u}"),
                _ => format!("{concept} {a}-{b}{u}"),
            }
        }
        (Some(x), None) => {
            let x = fmt_num(x);
            match (r.lower_closed, p) {
                (false, 0) => format!("{concept} greater than {x}{u}"),
                (false, 1) => format!("{concept} above {x}{u}"),
                (false, _) => format!("{concept} > {x}{u}"),
                (true, 0) => format!("{concept} at least {x}{u}"),
                (true, 1) => format!("{concept} ≥ {x}{u}"),
                (true, _) => format!("{concept} of {x}{u} or more"),
            }
        }
        (None, Some(x)) => {
            let x = fmt_num(x);
            match (r.upper_closed, p) {
                (false, 0) => format!("{concept} less than {x}{u}"),
                (false, 1) => format!("{concept} below {x}{u}"),
                (false, _) => format!("{concept} < {x}{u}"),
                (true, 0) => format!("{concept} at most {x}{u}"),
                (true, 1) => format!("{concept} ≤ {x}{u}"),
                (true, _) => format!("{concept} of {x}{u} or less"),
            }
        }
        (None, None) => concept.to_string(),
    }
}

impl OracleRule {
    pub fn render(&self) -> String {
        match &self.predicate {
            Predicate::HasDiagnosis { name, .. } => fill(DIAGNOSIS[self.phrasing % DIAGNOSIS.len()], name),
            Predicate::HasTreatment {
                name,
                procedure: false,
                ..
            } => fill(DRUG[self.phrasing % DRUG.len()], name),
            Predicate::HasTreatment {
                name,
                procedure: true,
                ..
            } => fill(PROCEDURE[self.phrasing % PROCEDURE.len()], name),
            Predicate::Gender(g) => fill(GENDER[self.phrasing % GENDER.len()], g),
            Predicate::Measure {
                concept,
                range,
                unit,
                show_unit,
            } => render_measure(concept, range, unit, *show_unit, self.phrasing),
            Predicate::Filler => match self.kind {
                CriterionKind::Inclusion => FILLER_INCLUSION[self.phrasing % FILLER_INCLUSION.len()].to_string(),
                CriterionKind::Exclusion => FILLER_EXCLUSION[self.phrasing % FILLER_EXCLUSION.len()].to_string(),
            },
        }
    }

    /// The code this rule names, if any.
    pub fn code(&self) -> Option<&str> {
        match &self.predicate {
            Predicate::HasDiagnosis { code, .. } | Predicate::HasTreatment { code, .. } => Some(code),
            _ => None,
        }
    }

    /// Truth of the bare predicate, ignoring inclusion/exclusion.
    pub fn holds(&self, patient: &PatientRecord, units: &UnitTable) -> bool {
        match &self.predicate {
            Predicate::HasDiagnosis { code, .. } => patient.visits.iter().any(|v| &v.diagnosis == code),
            Predicate::HasTreatment { code, .. } => patient
                .visits
                .iter()
                .any(|v| v.treatments.iter().any(|t| t == code)),
            Predicate::Gender(g) => &patient.demographics.gender == g,
            Predicate::Measure {
                concept,
                range,
                unit,
                ..
            } => {
                let Some(rule_unit) = units.lookup(unit) else {
                    return false;
                };
                let bounds = range.scaled(rule_unit.scale);
                patient.measurements().any(|m| {
                    &m.concept == concept
                        && units
                            .normalize(m.value, &m.unit)
                            .ok()
                            .is_some_and(|(v, dim)| dim == rule_unit.dimension && bounds.contains(v))
                })
            }
            Predicate::Filler => self.kind == CriterionKind::Inclusion,
        }
    }

    /// Inclusion rules must hold; exclusion rules must not.
    pub fn satisfied(&self, patient: &PatientRecord, units: &UnitTable) -> bool {
        match self.kind {
            CriterionKind::Inclusion => self.holds(patient, units),
            CriterionKind::Exclusion => !self.holds(patient, units),
        }
    }
}

/// Ground-truth label of a patient against a set of rules.
///
/// Neutral when the rules name at least one code and the patient has none
/// of them; otherwise entailment iff every rule is satisfied.
pub fn label_oracle(rules: &[&OracleRule], patient: &PatientRecord, units: &UnitTable) -> Label {
    let codes: Vec<&str> = rules.iter().filter_map(|r| r.code()).collect();
    let has_code = |c: &str| {
        patient
            .visits
            .iter()
            .any(|v| v.diagnosis == c || v.treatments.iter().any(|t| t == c))
    };
    if !codes.is_empty() && !codes.iter().any(|c| has_code(c)) {
        return Label::Neutral;
    }
    if rules.iter().all(|r| r.satisfied(patient, units)) {
        Label::Entailment
    } else {
        Label::Contradiction
    }
}
