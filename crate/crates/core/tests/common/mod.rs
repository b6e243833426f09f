#![allow(dead_code)]

use enroll_core::datamodel::{Dataset, LabeledExample, PatientRecord, TrialCriteria};
use enroll_core::model::{Model, ModelConfig};
use enroll_core::numkernel::ParameterStore;
use enroll_core::pipeline::build_spec;

pub const TRIALS: &str = r#"{"trial_id":"T1","condition":"gofusi","criteria":[{"id":"s0","kind":"inclusion","text":"diagnosis of gofusi"},{"id":"s1","kind":"exclusion","text":"use of konoro"},{"id":"s2","kind":"inclusion","text":"age at least 40 years"}]}"#;

pub const PATIENTS: [&str; 2] = [
    r#"{"patient_id":"P1","demographics":{"birth_year":1970,"gender":"female","country":"us","geo":"north","ethnicity":"hispanic","blood_type":"a"},"visits":[{"visit_id":"v01","date":"2015-01-01","diagnosis":"dx.gofusi","treatments":["rx.pemo","px.tali","rx.pemo"],"measurements":[{"concept":"age","value":54,"unit":"years"}]},{"visit_id":"v02","date":"2015-03-01","diagnosis":"dx.kazida","treatments":["rx.konoro"]}]}"#,
    r#"{"patient_id":"P2","demographics":{"birth_year":1990,"gender":"male","country":"uk","geo":"east","ethnicity":"unreported","blood_type":"o"},"visits":[{"visit_id":"v01","date":"2016-05-01","diagnosis":"dx.gofusi","treatments":[]},{"visit_id":"v02","date":"2016-06-01","diagnosis":"dx.mobe","treatments":["px.tali"]}]}"#,
];

pub fn dataset() -> Dataset {
    let trial: TrialCriteria = serde_json::from_str(TRIALS).unwrap();
    let patients: Vec<PatientRecord> = PATIENTS.iter().map(|p| serde_json::from_str(p).unwrap()).collect();
    let ex = |stmts: &[&str], pid: &str, label: &str| LabeledExample {
        trial_id: "T1".into(),
        statement_ids: stmts.iter().map(|s| s.to_string()).collect(),
        patient_id: pid.into(),
        label: label.parse().unwrap(),
    };
    let examples = vec![
        ex(&["s0", "s1"], "P1", "contradiction"),
        ex(&["s0", "s2"], "P2", "contradiction"),
    ];
    Dataset::new(vec![trial], patients, examples).unwrap()
}

/// Small dims and wide init so every gradient is well above the
/// finite-difference noise floor.
pub fn small_config(hidden: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        code_dim: 3,
        token_dim: 5,
        hash_buckets: 7,
        hidden,
        embedding_std: 0.5,
        init_std: Some(0.5),
    }
}

pub fn small_model(ds: &Dataset, hidden: usize, seed: u64) -> (Model, ParameterStore) {
    let spec = build_spec(ds, &ds.examples, small_config(hidden)).unwrap();
    Model::init(spec, seed).unwrap()
}
