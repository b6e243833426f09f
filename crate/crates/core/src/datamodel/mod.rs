//! Records, JSONL ingestion, code vocabularies and the patient-level split.

mod io;
mod records;
mod split;
mod vocab;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use io::{
    jsonl_string, load_labels, load_patients, load_trials, write_jsonl, Dataset, LABELS_FILE,
    PATIENTS_FILE, TRIALS_FILE,
};
pub use records::{
    CriterionKind, Demographics, EcStatement, Label, LabeledExample, Measurement, PatientRecord,
    TrialCriteria, Visit,
};
pub use split::{split_dataset, SplitName, Splits, MIN_SPLIT_PATIENTS};
pub use vocab::{one_hot, Vocabulary};

/// Separate closed vocabularies for diagnosis, treatment and demographic
/// codes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocabularies {
    pub diagnosis: Vocabulary,
    pub treatment: Vocabulary,
    pub demographic: Vocabulary,
}

impl Vocabularies {
    /// Built from the patients referenced by `examples` only, so held-out
    /// patients cannot leak codes into the model.
    pub fn from_examples(ds: &Dataset, examples: &[LabeledExample]) -> Self {
        let ids: HashSet<&str> = examples.iter().map(|e| e.patient_id.as_str()).collect();
        let patients: Vec<&PatientRecord> = ds
            .patients
            .iter()
            .filter(|p| ids.contains(p.patient_id.as_str()))
            .collect();
        Self::from_patients(patients)
    }

    pub fn from_patients<'a>(patients: impl IntoIterator<Item = &'a PatientRecord>) -> Self {
        let mut d = Vec::new();
        let mut t = Vec::new();
        let mut g = Vec::new();
        for p in patients {
            g.extend(p.demographics.codes());
            for v in &p.visits {
                d.push(v.diagnosis.clone());
                t.extend(v.treatments.iter().cloned());
            }
        }
        Self {
            diagnosis: Vocabulary::from_codes(d),
            treatment: Vocabulary::from_codes(t),
            demographic: Vocabulary::from_codes(g),
        }
    }
}
