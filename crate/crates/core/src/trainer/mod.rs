//! Joint SGD training with the dev-accuracy learning-rate schedule, plus
//! evaluation metrics.

mod metrics;

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    accuracy, confusion, evaluate, majority_baseline, micro_f1, pr_auc, pr_auc_micro, ClassMetrics,
    MetricsReport, Scored,
};

use crate::aligner::Dropout;
use crate::datamodel::{Dataset, Label, LabeledExample};
use crate::error::{EnrollError, Result};
use crate::model::{EncodingCache, Model};
use crate::numkernel::{clip_global_norm, sgd_step, ParameterStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub lr_divisor: f64,
    pub stop_lr: f64,
    pub dropout: f64,
    pub aux_weight: f64,
    pub l2: f64,
    /// Global gradient-norm cap per batch; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            batch_size: 64,
            lr_divisor: 5.0,
            stop_lr: 1e-4,
            dropout: 0.5,
            aux_weight: 0.1,
            l2: 1e-4,
            clip_norm: Some(5.0),
            max_epochs: 20,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnrollError::Config(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_divisor > 1.0) {
            return bad("lr_divisor must exceed 1");
        }
        if !(self.stop_lr > 0.0) {
            return bad("stop_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        if !(self.aux_weight >= 0.0 && self.l2 >= 0.0) {
            return bad("aux_weight and l2 must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrStep {
    Continue(f64),
    Stop,
}

/// Divides `lr` when the latest dev accuracy fell below the previous one;
/// stops once the rate is under `stop_lr`.
pub fn lr_schedule(history: &[f64], lr: f64, divisor: f64, stop_lr: f64) -> LrStep {
    let next = match history {
        [.., prev, last] if last < prev => lr / divisor,
        _ => lr,
    };
    if next < stop_lr {
        LrStep::Stop
    } else {
        LrStep::Continue(next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_accuracy: f64,
    pub lr: f64,
}

pub fn write_log_csv<W: Write>(log: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if log.is_empty() {
        w.write_record(["epoch", "loss", "dev_accuracy", "lr"])
            .map_err(|e| EnrollError::Validation(format!("csv: {e}")))?;
    }
    for row in log {
        w.serialize(row)
            .map_err(|e| EnrollError::Validation(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| EnrollError::io("<training log>", e))
}

/// Mean batch objective: 3-class cross-entropy plus `aux_weight` times the
/// mean per-visit diagnosis cross-entropy and treatment BCE of the
/// example's patient.
pub fn compute_loss(
    tape: &mut Tape,
    model: &Model,
    ds: &Dataset,
    batch: &[&LabeledExample],
    aux_weight: f64,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(EnrollError::EmptySplit("batch"));
    }
    let mut cache = EncodingCache::default();
    let mut aux_cache: HashMap<&str, Option<Var>> = HashMap::new();
    let mut terms = Vec::with_capacity(batch.len() * 2);
    for ex in batch {
        let trial = ds
            .trial(&ex.trial_id)
            .ok_or_else(|| EnrollError::Validation(format!("unknown trial `{}`", ex.trial_id)))?;
        let patient = ds
            .patient(&ex.patient_id)
            .ok_or_else(|| EnrollError::Validation(format!("unknown patient `{}`", ex.patient_id)))?;
        let statements = trial.select(&ex.statement_ids)?;
        let (out, enc) = model.forward(
            tape,
            &mut cache,
            &trial.trial_id,
            &statements,
            patient,
            dropout.as_deref_mut(),
        )?;
        terms.push(tape.softmax_xent(out.logits, ex.label.index())?);

        if aux_weight > 0.0 {
            let aux = match aux_cache.get(patient.patient_id.as_str()) {
                Some(a) => *a,
                None => {
                    let mut diag = Vec::new();
                    let mut treat = Vec::new();
                    for (v, visit) in enc.visits.iter().zip(&patient.visits) {
                        let a = model.ehr.aux_loss(tape, *v, visit)?;
                        diag.extend(a.diagnosis);
                        treat.extend(a.treatment);
                    }
                    let mut parts = Vec::new();
                    for xs in [diag, treat] {
                        if !xs.is_empty() {
                            let s = tape.sum(&xs)?;
                            parts.push(tape.scale(s, aux_weight / xs.len() as f64));
                        }
                    }
                    let a = if parts.is_empty() {
                        None
                    } else {
                        Some(tape.sum(&parts)?)
                    };
                    aux_cache.insert(&patient.patient_id, a);
                    a
                }
            };
            terms.extend(aux);
        }
    }
    let total = tape.sum(&terms)?;
    Ok(tape.scale(total, 1.0 / batch.len() as f64))
}

/// Neural predictions (dropout off) for every example, in input order.
pub fn predict_all(
    model: &Model,
    params: &ParameterStore,
    ds: &Dataset,
    examples: &[LabeledExample],
) -> Result<Vec<Scored>> {
    examples
        .par_iter()
        .map(|ex| {
            let trial = ds
                .trial(&ex.trial_id)
                .ok_or_else(|| EnrollError::Validation(format!("unknown trial `{}`", ex.trial_id)))?;
            let patient = ds.patient(&ex.patient_id).ok_or_else(|| {
                EnrollError::Validation(format!("unknown patient `{}`", ex.patient_id))
            })?;
            let statements = trial.select(&ex.statement_ids)?;
            let p = model.predict(params, &trial.trial_id, &statements, patient)?;
            Ok(Scored {
                trial_id: ex.trial_id.clone(),
                label: p.output.label,
                probs: p.output.probs,
            })
        })
        .collect()
}

pub fn neural_accuracy(
    model: &Model,
    params: &ParameterStore,
    ds: &Dataset,
    examples: &[LabeledExample],
) -> Result<f64> {
    let preds = predict_all(model, params, ds, examples)?;
    let pred: Vec<Label> = preds.iter().map(|p| p.label).collect();
    let gold: Vec<Label> = examples.iter().map(|e| e.label).collect();
    accuracy(&pred, &gold)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the best dev accuracy (the
    /// initialization when no epoch ran).
    pub params: ParameterStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_dev_accuracy: Option<f64>,
}

/// Trains `params` in place order: shuffle, mini-batch SGD, dev accuracy,
/// schedule. Deterministic for a fixed config.
pub fn fit(
    model: &Model,
    params: ParameterStore,
    ds: &Dataset,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<FitResult> {
    fit_with(model, params, ds, train, dev, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<F: FnMut(&EpochLog)>(
    model: &Model,
    mut params: ParameterStore,
    ds: &Dataset,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(EnrollError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(EnrollError::EmptySplit("validation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = cfg.lr0;
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ParameterStore)> = None;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut grads = {
                let mut tape = Tape::new(&params);
                let mut drop = Dropout {
                    rate: cfg.dropout,
                    rng: &mut rng,
                };
                let d = (cfg.dropout > 0.0).then_some(&mut drop);
                let loss = compute_loss(&mut tape, model, ds, &batch, cfg.aux_weight, d)?;
                loss_sum += tape.scalar(loss) * batch.len() as f64;
                tape.backward(loss)
            };
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            sgd_step(&mut params, &grads, lr, cfg.l2)?;
        }
        if !params.all_finite() {
            return Err(EnrollError::Validation(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
        let dev_acc = neural_accuracy(model, &params, ds, dev)?;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / train.len() as f64,
            dev_accuracy: dev_acc,
            lr,
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|b| dev_acc > b.1) {
            best = Some((epoch, dev_acc, params.clone()));
        }
        history.push(dev_acc);
        match lr_schedule(&history, lr, cfg.lr_divisor, cfg.stop_lr) {
            LrStep::Continue(next) => lr = next,
            LrStep::Stop => break,
        }
    }

    Ok(match best {
        Some((epoch, acc, p)) => FitResult {
            params: p,
            log,
            best_epoch: Some(epoch),
            best_dev_accuracy: Some(acc),
        },
        None => FitResult {
            params,
            log,
            best_epoch: None,
            best_dev_accuracy: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_cases() {
        assert_eq!(lr_schedule(&[0.5, 0.4], 0.1, 5.0, 1e-4), LrStep::Continue(0.02));
        assert_eq!(lr_schedule(&[0.4, 0.5], 0.1, 5.0, 1e-4), LrStep::Continue(0.1));
        assert_eq!(lr_schedule(&[0.4], 0.1, 5.0, 1e-4), LrStep::Continue(0.1));
        assert_eq!(lr_schedule(&[0.4, 0.5], 5e-5, 5.0, 1e-4), LrStep::Stop);
        assert_eq!(lr_schedule(&[0.5, 0.4], 4e-4, 5.0, 1e-4), LrStep::Stop);
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let c = TrainConfig {
            lr_divisor: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
