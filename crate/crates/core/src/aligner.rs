//! Decomposable soft alignment between premise rows `U` (criteria) and
//! hypothesis rows `V` (patient), followed by comparison, aggregation and
//! the 3-way classifier.
//!
//! ```text
//! s_ij = ReLU(W_c u_i + b_c) · ReLU(W_c v_j + b_c)
//! β_i  = Σ_j softmax_j(s_i·) v_j          α_j = Σ_i softmax_i(s_·j) u_i
//! r1_i = ReLU(W_a [u_i; β_i] + b_a)       r2_j = ReLU(W_a [v_j; α_j] + b_a)
//! m    = [r1; r2; r1 ⊙ r2; r1 − r2]       r1 = Σ r1_i, r2 = Σ r2_j
//! y    = softmax(W_f ReLU(W_h m + b_h) + b_f)
//! ```

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datamodel::Label;
use crate::error::{EnrollError, Result};
use crate::numkernel::{dropout_mask, softmax, InitStd, ParamId, ParameterStore, Tape, Tensor, Var};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Aligner {
    pub latent_dim: usize,
    pub hidden: usize,
    c: Dense,
    a: Dense,
    h: Option<Dense>,
    f: Dense,
}

/// Inverted dropout applied to the classifier input and hidden layer.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct Aligned {
    pub beta: Vec<Var>,
    pub alpha: Vec<Var>,
    /// Row `i` holds the normalized weights forming `β_i`.
    pub beta_weights: Vec<Var>,
    pub alpha_weights: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub logits: Var,
    pub aligned: Aligned,
    /// Shared comparison-layer invocations for this example.
    pub comparisons: usize,
}

/// Probabilities and label read off the classifier logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntailmentOutput {
    pub probs: [f64; NUM_CLASSES],
    pub label: Label,
}

impl EntailmentOutput {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() != NUM_CLASSES {
            return Err(EnrollError::Dimension {
                op: "classify",
                left: vec![logits.len()],
                right: vec![NUM_CLASSES],
            });
        }
        let p = softmax(&Tensor::vector(logits.to_vec()));
        let probs = [p.data()[0], p.data()[1], p.data()[2]];
        Ok(Self {
            probs,
            label: Label::argmax(&probs),
        })
    }
}

fn dense<R: Rng + ?Sized>(
    params: &mut ParameterStore,
    name: &str,
    out: usize,
    inp: usize,
    std: InitStd,
    rng: &mut R,
) -> Result<Dense> {
    Ok(Dense {
        w: params.insert_weight(&format!("{name}.w"), out, inp, std, rng)?,
        b: params.insert_zeros(&format!("{name}.b"), &[out])?,
    })
}

impl Aligner {
    /// `hidden = 0` drops the hidden layer (bare affine + softmax head).
    pub fn init<R: Rng + ?Sized>(
        latent_dim: usize,
        hidden: usize,
        params: &mut ParameterStore,
        std: InitStd,
        rng: &mut R,
    ) -> Result<Self> {
        let o = latent_dim;
        let c = dense(params, "align.c", o, o, std, rng)?;
        let a = dense(params, "align.a", o, 2 * o, std, rng)?;
        let (h, head_in) = if hidden > 0 {
            (Some(dense(params, "align.h", hidden, 4 * o, std, rng)?), hidden)
        } else {
            (None, 4 * o)
        };
        let f = dense(params, "align.f", NUM_CLASSES, head_in, std, rng)?;
        Ok(Self {
            latent_dim,
            hidden,
            c,
            a,
            h,
            f,
        })
    }

    fn transform(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = tape.affine(self.c.w, x, Some(self.c.b))?;
        Ok(tape.relu(z))
    }

    /// Unnormalized scores, `scores[i][j]` a scalar for premise `i`,
    /// hypothesis `j`.
    pub fn attention_scores(&self, tape: &mut Tape, u: &[Var], v: &[Var]) -> Result<Vec<Vec<Var>>> {
        let tu = u.iter().map(|&x| self.transform(tape, x)).collect::<Result<Vec<_>>>()?;
        let tv = v.iter().map(|&x| self.transform(tape, x)).collect::<Result<Vec<_>>>()?;
        tu.iter()
            .map(|&a| tv.iter().map(|&b| tape.dot(a, b)).collect())
            .collect()
    }

    /// `β` normalizes each row over hypotheses, `α` each column over
    /// premises.
    pub fn soft_align(tape: &mut Tape, scores: &[Vec<Var>], u: &[Var], v: &[Var]) -> Result<Aligned> {
        let (m, n) = (u.len(), v.len());
        if scores.len() != m || scores.iter().any(|r| r.len() != n) || m == 0 || n == 0 {
            return Err(EnrollError::Dimension {
                op: "soft_align",
                left: vec![scores.len(), scores.first().map_or(0, Vec::len)],
                right: vec![m, n],
            });
        }
        let mut beta = Vec::with_capacity(m);
        let mut beta_weights = Vec::with_capacity(m);
        for row in scores {
            let s = tape.stack(row);
            let w = tape.softmax(s);
            beta.push(tape.mix(w, v)?);
            beta_weights.push(w);
        }
        let mut alpha = Vec::with_capacity(n);
        let mut alpha_weights = Vec::with_capacity(n);
        for j in 0..n {
            let col: Vec<Var> = scores.iter().map(|r| r[j]).collect();
            let s = tape.stack(&col);
            let w = tape.softmax(s);
            alpha.push(tape.mix(w, u)?);
            alpha_weights.push(w);
        }
        Ok(Aligned {
            beta,
            alpha,
            beta_weights,
            alpha_weights,
        })
    }

    /// The shared comparison layer `ReLU(W_a [x; y] + b_a)`.
    pub fn compare_one(&self, tape: &mut Tape, x: Var, y: Var, counter: &mut usize) -> Result<Var> {
        *counter += 1;
        let cat = tape.concat(&[x, y]);
        let z = tape.affine(self.a.w, cat, Some(self.a.b))?;
        Ok(tape.relu(z))
    }

    pub fn compare(
        &self,
        tape: &mut Tape,
        u: &[Var],
        aligned: &Aligned,
        v: &[Var],
        counter: &mut usize,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let r1 = u
            .iter()
            .zip(&aligned.beta)
            .map(|(&x, &b)| self.compare_one(tape, x, b, counter))
            .collect::<Result<Vec<_>>>()?;
        let r2 = v
            .iter()
            .zip(&aligned.alpha)
            .map(|(&x, &a)| self.compare_one(tape, x, a, counter))
            .collect::<Result<Vec<_>>>()?;
        Ok((r1, r2))
    }

    /// `[r1; r2; r1 ⊙ r2; r1 − r2]` over the summed comparison vectors.
    pub fn aggregate(tape: &mut Tape, r1: &[Var], r2: &[Var]) -> Result<Var> {
        let s1 = tape.sum(r1)?;
        let s2 = tape.sum(r2)?;
        let prod = tape.mul(s1, s2)?;
        let diff = tape.sub(s1, s2)?;
        Ok(tape.concat(&[s1, s2, prod, diff]))
    }

    /// Class logits; softmax is applied by the loss or by
    /// [`EntailmentOutput::from_logits`].
    pub fn classify(&self, tape: &mut Tape, m: Var, mut dropout: Option<&mut Dropout>) -> Result<Var> {
        let mut x = m;
        if let Some(d) = dropout.as_deref_mut() {
            let mask = dropout_mask(tape.value(x).len(), d.rate, d.rng);
            x = tape.mask(x, mask)?;
        }
        if let Some(h) = self.h {
            let z = tape.affine(h.w, x, Some(h.b))?;
            x = tape.relu(z);
            if let Some(d) = dropout.as_deref_mut() {
                let mask = dropout_mask(tape.value(x).len(), d.rate, d.rng);
                x = tape.mask(x, mask)?;
            }
        }
        tape.affine(self.f.w, x, Some(self.f.b))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        u: &[Var],
        v: &[Var],
        dropout: Option<&mut Dropout>,
    ) -> Result<AlignOutput> {
        let scores = self.attention_scores(tape, u, v)?;
        let aligned = Self::soft_align(tape, &scores, u, v)?;
        let mut comparisons = 0;
        let (r1, r2) = self.compare(tape, u, &aligned, v, &mut comparisons)?;
        let m = Self::aggregate(tape, &r1, &r2)?;
        let logits = self.classify(tape, m, dropout)?;
        Ok(AlignOutput {
            logits,
            aligned,
            comparisons,
        })
    }
}

/// One cell of the premise-to-hypothesis attention heatmap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapRow {
    pub trial_id: String,
    pub statement_id: String,
    pub patient_id: String,
    pub hypothesis_row_id: String,
    pub normalized_weight: f64,
}

/// Flattens `β` weights (`weights[i][j]`) into heatmap rows.
pub fn heatmap_rows(
    trial_id: &str,
    statement_ids: &[String],
    patient_id: &str,
    hypothesis_ids: &[String],
    weights: &[Vec<f64>],
) -> Result<Vec<HeatmapRow>> {
    if weights.len() != statement_ids.len() {
        return Err(EnrollError::LengthMismatch {
            left: weights.len(),
            right: statement_ids.len(),
        });
    }
    let mut out = Vec::new();
    for (sid, row) in statement_ids.iter().zip(weights) {
        if row.len() != hypothesis_ids.len() {
            return Err(EnrollError::LengthMismatch {
                left: row.len(),
                right: hypothesis_ids.len(),
            });
        }
        for (hid, &w) in hypothesis_ids.iter().zip(row) {
            out.push(HeatmapRow {
                trial_id: trial_id.to_string(),
                statement_id: sid.clone(),
                patient_id: patient_id.to_string(),
                hypothesis_row_id: hid.clone(),
                normalized_weight: w,
            });
        }
    }
    Ok(out)
}

pub fn write_heatmap_csv<W: Write>(rows: &[HeatmapRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    // an empty slice still gets a header
    if rows.is_empty() {
        w.write_record([
            "trial_id",
            "statement_id",
            "patient_id",
            "hypothesis_row_id",
            "normalized_weight",
        ])
        .map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| EnrollError::io("<heatmap>", e))
}

fn csv_err(e: csv::Error) -> EnrollError {
    EnrollError::Validation(format!("csv: {e}"))
}
