//! JSON Lines ingestion and emission for trials, patients and labels.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::records::{LabeledExample, PatientRecord, TrialCriteria};
use crate::error::{EnrollError, Result};
use crate::nir::UnitTable;

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const PATIENTS_FILE: &str = "patients.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = std::fs::read_to_string(path).map_err(|e| EnrollError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| EnrollError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push((n + 1, rec));
    }
    Ok(out)
}

pub fn jsonl_string<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| EnrollError::io(path, e))?;
    f.write_all(jsonl_string(records)?.as_bytes())
        .map_err(|e| EnrollError::io(path, e))
}

fn at_line(path: &Path, line: usize, err: EnrollError) -> EnrollError {
    match err {
        EnrollError::Validation(message) => EnrollError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    }
}

pub fn load_trials(path: &Path) -> Result<Vec<TrialCriteria>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, t) in read_jsonl::<TrialCriteria>(path)? {
        t.validate().map_err(|e| at_line(path, line, e))?;
        if !seen.insert(t.trial_id.clone()) {
            return Err(EnrollError::DuplicateId {
                kind: "trial",
                id: t.trial_id,
            });
        }
        out.push(t);
    }
    Ok(out)
}

/// Loads patients, sorting visits chronologically and flagging measurement
/// units absent from `units`.
pub fn load_patients(path: &Path, units: &UnitTable) -> Result<Vec<PatientRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, mut p) in read_jsonl::<PatientRecord>(path)? {
        p.validate().map_err(|e| at_line(path, line, e))?;
        if !seen.insert(p.patient_id.clone()) {
            return Err(EnrollError::DuplicateId {
                kind: "patient",
                id: p.patient_id,
            });
        }
        p.sort_visits();
        for v in &mut p.visits {
            for m in &mut v.measurements {
                m.unknown_unit = !units.contains(&m.unit);
            }
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<LabeledExample>> {
    Ok(read_jsonl::<LabeledExample>(path)?
        .into_iter()
        .map(|(_, e)| e)
        .collect())
}

/// Trials, patients and labeled examples with resolved cross references.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub trials: Vec<TrialCriteria>,
    pub patients: Vec<PatientRecord>,
    pub examples: Vec<LabeledExample>,
    trial_index: HashMap<String, usize>,
    patient_index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(
        trials: Vec<TrialCriteria>,
        patients: Vec<PatientRecord>,
        examples: Vec<LabeledExample>,
    ) -> Result<Self> {
        let trial_index: HashMap<_, _> = trials
            .iter()
            .enumerate()
            .map(|(i, t)| (t.trial_id.clone(), i))
            .collect();
        let patient_index: HashMap<_, _> = patients
            .iter()
            .enumerate()
            .map(|(i, p)| (p.patient_id.clone(), i))
            .collect();
        if trial_index.len() != trials.len() {
            return Err(EnrollError::Validation("duplicate trial ids".into()));
        }
        if patient_index.len() != patients.len() {
            return Err(EnrollError::Validation("duplicate patient ids".into()));
        }
        let ds = Self {
            trials,
            patients,
            examples,
            trial_index,
            patient_index,
        };
        for e in &ds.examples {
            let trial = ds.trial(&e.trial_id).ok_or_else(|| {
                EnrollError::Validation(format!("label references unknown trial `{}`", e.trial_id))
            })?;
            if e.statement_ids.is_empty() {
                return Err(EnrollError::Validation(format!(
                    "label for `{}`/`{}` selects no statements",
                    e.trial_id, e.patient_id
                )));
            }
            trial.select(&e.statement_ids)?;
            if ds.patient(&e.patient_id).is_none() {
                return Err(EnrollError::Validation(format!(
                    "label references unknown patient `{}`",
                    e.patient_id
                )));
            }
        }
        Ok(ds)
    }

    pub fn trial(&self, id: &str) -> Option<&TrialCriteria> {
        self.trial_index.get(id).map(|&i| &self.trials[i])
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patient_index.get(id).map(|&i| &self.patients[i])
    }

    pub fn load(dir: &Path, units: &UnitTable) -> Result<Self> {
        Self::new(
            load_trials(&dir.join(TRIALS_FILE))?,
            load_patients(&dir.join(PATIENTS_FILE), units)?,
            load_labels(&dir.join(LABELS_FILE))?,
        )
    }

    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| EnrollError::io(dir, e))?;
        let paths = [TRIALS_FILE, PATIENTS_FILE, LABELS_FILE].map(|f| dir.join(f));
        write_jsonl(&paths[0], &self.trials)?;
        write_jsonl(&paths[1], &self.patients)?;
        write_jsonl(&paths[2], &self.examples)?;
        Ok(paths.to_vec())
    }
}
