use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aligner::NUM_CLASSES;
use crate::datamodel::Label;
use crate::error::{EnrollError, Result};

/// A prediction with its class probabilities and the trial it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub trial_id: String,
    pub label: Label,
    pub probs: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub examples: u64,
    pub accuracy: f64,
    pub micro_f1: f64,
    /// Mean of per-trial micro-F1.
    pub averaged_f1: f64,
    pub pr_auc: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]`, class order entailment, contradiction,
    /// neutral.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(EnrollError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

pub fn confusion(pred: &[Label], gold: &[Label]) -> Result<[[u64; NUM_CLASSES]; NUM_CLASSES]> {
    check_len(pred.len(), gold.len())?;
    let mut c = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (p, g) in pred.iter().zip(gold) {
        c[g.index()][p.index()] += 1;
    }
    Ok(c)
}

pub fn accuracy(pred: &[Label], gold: &[Label]) -> Result<f64> {
    check_len(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Pooled F1 over all classes, `2·TP / (2·TP + FP + FN)` from global
/// counts.
pub fn micro_f1(pred: &[Label], gold: &[Label]) -> Result<f64> {
    let c = confusion(pred, gold)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for k in 0..NUM_CLASSES {
        tp += c[k][k];
        fp += (0..NUM_CLASSES).filter(|&g| g != k).map(|g| c[g][k]).sum::<u64>();
        fn_ += (0..NUM_CLASSES).filter(|&p| p != k).map(|p| c[k][p]).sum::<u64>();
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 0.0 } else { (2 * tp) as f64 / denom as f64 })
}

/// Area under the precision-recall curve for binary relevance, sweeping
/// every distinct score as a threshold (`score ≥ t` is positive) and
/// integrating with the trapezoid rule from the anchor (recall 0,
/// precision 1). Zero when there are no positives.
pub fn pr_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    check_len(scores.len(), positive.len())?;
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_r, mut prev_p) = (0.0, 1.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let r = tp as f64 / total_pos as f64;
        let p = tp as f64 / (tp + fp) as f64;
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    Ok(area)
}

/// Micro-averaged one-vs-rest PR-AUC: every (example, class) pair is one
/// binary item scored by that class probability.
pub fn pr_auc_micro(probs: &[[f64; NUM_CLASSES]], gold: &[Label]) -> Result<f64> {
    check_len(probs.len(), gold.len())?;
    let mut scores = Vec::with_capacity(probs.len() * NUM_CLASSES);
    let mut pos = Vec::with_capacity(probs.len() * NUM_CLASSES);
    for (p, g) in probs.iter().zip(gold) {
        for (k, &s) in p.iter().enumerate() {
            scores.push(s);
            pos.push(g.index() == k);
        }
    }
    pr_auc(&scores, &pos)
}

pub fn evaluate(preds: &[Scored], gold: &[Label]) -> Result<MetricsReport> {
    check_len(preds.len(), gold.len())?;
    let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
    let conf = confusion(&labels, gold)?;
    let per_class = Label::ALL
        .iter()
        .map(|&l| {
            let k = l.index();
            let tp = conf[k][k];
            let predicted: u64 = (0..NUM_CLASSES).map(|g| conf[g][k]).sum();
            let support: u64 = conf[k].iter().sum();
            let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = ratio(2 * tp, predicted + support);
            ClassMetrics {
                label: l,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();

    let mut by_trial: BTreeMap<&str, (Vec<Label>, Vec<Label>)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(gold) {
        let e = by_trial.entry(p.trial_id.as_str()).or_default();
        e.0.push(p.label);
        e.1.push(*g);
    }
    let mut averaged_f1 = 0.0;
    for (p, g) in by_trial.values() {
        averaged_f1 += micro_f1(p, g)?;
    }
    if !by_trial.is_empty() {
        averaged_f1 /= by_trial.len() as f64;
    }

    let probs: Vec<[f64; NUM_CLASSES]> = preds.iter().map(|p| p.probs).collect();
    Ok(MetricsReport {
        examples: gold.len() as u64,
        accuracy: accuracy(&labels, gold)?,
        micro_f1: micro_f1(&labels, gold)?,
        averaged_f1,
        pr_auc: pr_auc_micro(&probs, gold)?,
        per_class,
        confusion: conf,
    })
}

/// Micro-F1 of always predicting the most frequent training label (ties
/// by label order).
pub fn majority_baseline(train: &[Label], test: &[Label]) -> Result<f64> {
    let mut counts = [0usize; NUM_CLASSES];
    for l in train {
        counts[l.index()] += 1;
    }
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    let pred = vec![Label::ALL[best]; test.len()];
    micro_f1(&pred, test)
}
