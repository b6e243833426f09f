//! Final per-example decision: the neural label, overruled to
//! contradiction when a predicted entailment fails the quantity check.

use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::{Dataset, Label, LabeledExample};
use crate::error::{EnrollError, Result};
use crate::model::{Model, Prediction};
use crate::nir::{Nir, QuantityMatch, QuantityVerdict};
use crate::numkernel::ParameterStore;

/// Combines the two verdicts.
///
/// | neural | quantity | final |
/// |---|---|---|
/// | entailment | entailment | entailment |
/// | entailment | other | contradiction |
/// | contradiction | any | contradiction |
/// | neutral | any | neutral |
pub fn decide(neural: Label, quantity: QuantityVerdict) -> Label {
    match neural {
        Label::Entailment if quantity == QuantityVerdict::Entailment => Label::Entailment,
        Label::Entailment | Label::Contradiction => Label::Contradiction,
        Label::Neutral => Label::Neutral,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub trial_id: String,
    pub patient_id: String,
    pub statement_ids: Vec<String>,
    pub neural: Prediction,
    pub quantity: QuantityMatch,
    pub final_label: Label,
}

impl MatchResult {
    pub fn neural_label(&self) -> Label {
        self.neural.output.label
    }
}

/// One line of `match` output.
#[derive(Debug, Clone, Serialize)]
pub struct MatchRecord {
    pub trial_id: String,
    pub patient_id: String,
    pub statement_ids: Vec<String>,
    pub neural_label: Label,
    pub neural_probs: [f64; 3],
    pub quantity_verdict: QuantityVerdict,
    pub final_label: Label,
}

impl From<&MatchResult> for MatchRecord {
    fn from(r: &MatchResult) -> Self {
        Self {
            trial_id: r.trial_id.clone(),
            patient_id: r.patient_id.clone(),
            statement_ids: r.statement_ids.clone(),
            neural_label: r.neural.output.label,
            neural_probs: r.neural.output.probs,
            quantity_verdict: r.quantity.verdict,
            final_label: r.final_label,
        }
    }
}

pub struct Matcher<'a> {
    pub model: &'a Model,
    pub params: &'a ParameterStore,
    pub nir: &'a Nir,
    /// `false` reproduces the "without quantity reasoning" ablation.
    pub use_nir: bool,
}

impl Matcher<'_> {
    pub fn match_example(&self, ds: &Dataset, ex: &LabeledExample) -> Result<MatchResult> {
        let trial = ds
            .trial(&ex.trial_id)
            .ok_or_else(|| EnrollError::Validation(format!("unknown trial `{}`", ex.trial_id)))?;
        let patient = ds
            .patient(&ex.patient_id)
            .ok_or_else(|| EnrollError::Validation(format!("unknown patient `{}`", ex.patient_id)))?;
        let statements = trial.select(&ex.statement_ids)?;
        let neural = self
            .model
            .predict(self.params, &trial.trial_id, &statements, patient)?;
        let quantity = self.nir.quantity_match(&statements, patient);
        let final_label = if self.use_nir {
            decide(neural.output.label, quantity.verdict)
        } else {
            neural.output.label
        };
        Ok(MatchResult {
            trial_id: ex.trial_id.clone(),
            patient_id: ex.patient_id.clone(),
            statement_ids: ex.statement_ids.clone(),
            neural,
            quantity,
            final_label,
        })
    }

    /// Matches every example in parallel; output order follows the input.
    pub fn match_all(&self, ds: &Dataset, examples: &[LabeledExample]) -> Result<Vec<MatchResult>> {
        examples
            .par_iter()
            .map(|e| self.match_example(ds, e))
            .collect()
    }
}
