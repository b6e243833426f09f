use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::records::LabeledExample;
use crate::error::{EnrollError, Result};

pub const TRAIN_FRACTION: f64 = 0.6;
pub const VALIDATION_FRACTION: f64 = 0.2;
pub const MIN_SPLIT_PATIENTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[LabeledExample] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

/// Assigns whole patients to train / validation / test at 60/20/20.
/// Example order within each split follows the input order.
pub fn split_dataset(examples: &[LabeledExample], seed: u64) -> Result<Splits> {
    let patients: BTreeSet<&str> = examples.iter().map(|e| e.patient_id.as_str()).collect();
    let n = patients.len();
    if n < MIN_SPLIT_PATIENTS {
        return Err(EnrollError::TooFewPatients {
            needed: MIN_SPLIT_PATIENTS,
            found: n,
        });
    }
    let mut order: Vec<&str> = patients.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let n_val = (VALIDATION_FRACTION * n as f64).round() as usize;
    let assign: HashMap<&str, SplitName> = order
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = if i < n_train {
                SplitName::Train
            } else if i < n_train + n_val {
                SplitName::Validation
            } else {
                SplitName::Test
            };
            (*p, s)
        })
        .collect();
    let mut out = Splits::default();
    for e in examples {
        match assign[e.patient_id.as_str()] {
            SplitName::Train => out.train.push(e.clone()),
            SplitName::Validation => out.validation.push(e.clone()),
            SplitName::Test => out.test.push(e.clone()),
        }
    }
    Ok(out)
}
