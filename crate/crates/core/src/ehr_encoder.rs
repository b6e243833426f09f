//! Hierarchical patient embedding (the hypothesis side).
//!
//! ```text
//! r(c)      = ReLU(W_k onehot(c) + b_k)        per vocabulary k
//! g(d, m)   = ReLU(W_m r(d)) ⊙ r(m)
//! v         = ReLU(W_o (r(d) + Σ_m g(d, m)))
//! h         = ReLU(Σ_k W_p1 r(p_k) + Σ_i W_p2 v_i)
//! ```
//!
//! Auxiliary heads read each visit embedding: `softmax(U_d v)` over the
//! diagnosis vocabulary and `sigmoid(U_m v)` per treatment code.

use rand::Rng;

use crate::datamodel::{Demographics, PatientRecord, Visit, Vocabularies, Vocabulary};
use crate::error::Result;
use crate::numkernel::{sigmoid, softmax, InitStd, ParamId, ParameterStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeKind {
    Diagnosis,
    Treatment,
    Demographic,
}

#[derive(Debug, Clone, Copy)]
struct CodeTable {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub struct EhrEncoder {
    pub vocabs: Vocabularies,
    pub code_dim: usize,
    pub latent_dim: usize,
    diagnosis: CodeTable,
    treatment: CodeTable,
    demographic: CodeTable,
    w_m: ParamId,
    w_o: ParamId,
    w_p1: ParamId,
    w_p2: ParamId,
    u_d: Option<ParamId>,
    u_m: Option<ParamId>,
}

/// Visit rows plus the patient-level row, all on one tape.
#[derive(Debug, Clone)]
pub struct PatientEncoding {
    pub visits: Vec<Var>,
    pub patient: Var,
}

impl PatientEncoding {
    /// Hypothesis rows fed to alignment: every visit, then `h`.
    pub fn rows(&self) -> Vec<Var> {
        let mut rows = self.visits.clone();
        rows.push(self.patient);
        rows
    }
}

/// Auxiliary loss terms for one visit; `None` when a head has nothing to
/// predict (empty vocabulary or an out-of-vocabulary diagnosis).
#[derive(Debug, Clone, Copy, Default)]
pub struct AuxLoss {
    pub diagnosis: Option<Var>,
    pub treatment: Option<Var>,
}

impl EhrEncoder {
    pub fn init<R: Rng + ?Sized>(
        vocabs: Vocabularies,
        code_dim: usize,
        latent_dim: usize,
        params: &mut ParameterStore,
        std: InitStd,
        rng: &mut R,
    ) -> Result<Self> {
        let (z, o) = (code_dim, latent_dim);
        let mut table = |name: &str, v: &Vocabulary, params: &mut ParameterStore| -> Result<CodeTable> {
            Ok(CodeTable {
                w: params.insert_gaussian(&format!("ehr.{name}.w"), &[z, v.len_with_unk()], std.embedding, rng)?,
                b: params.insert_zeros(&format!("ehr.{name}.b"), &[z])?,
            })
        };
        let diagnosis = table("diagnosis", &vocabs.diagnosis, params)?;
        let treatment = table("treatment", &vocabs.treatment, params)?;
        let demographic = table("demographic", &vocabs.demographic, params)?;
        let w_m = params.insert_weight("ehr.w_m", z, z, std, rng)?;
        let w_o = params.insert_weight("ehr.w_o", o, z, std, rng)?;
        let w_p1 = params.insert_weight("ehr.w_p1", o, z, std, rng)?;
        let w_p2 = params.insert_weight("ehr.w_p2", o, o, std, rng)?;
        let u_d = match vocabs.diagnosis.len() {
            0 => None,
            n => Some(params.insert_weight("ehr.u_d", n, o, std, rng)?),
        };
        let u_m = match vocabs.treatment.len() {
            0 => None,
            n => Some(params.insert_weight("ehr.u_m", n, o, std, rng)?),
        };
        Ok(Self {
            vocabs,
            code_dim,
            latent_dim,
            diagnosis,
            treatment,
            demographic,
            w_m,
            w_o,
            w_p1,
            w_p2,
            u_d,
            u_m,
        })
    }

    fn table(&self, kind: CodeKind) -> (CodeTable, &Vocabulary) {
        match kind {
            CodeKind::Diagnosis => (self.diagnosis, &self.vocabs.diagnosis),
            CodeKind::Treatment => (self.treatment, &self.vocabs.treatment),
            CodeKind::Demographic => (self.demographic, &self.vocabs.demographic),
        }
    }

    /// `r(code)`; unknown codes share the reserved UNK column.
    pub fn embed_code(&self, tape: &mut Tape, kind: CodeKind, code: &str) -> Result<Var> {
        let (t, vocab) = self.table(kind);
        let z = tape.column(t.w, vocab.index_or_unk(code), Some(t.b))?;
        Ok(tape.relu(z))
    }

    /// `g(d, m) = ReLU(W_m r(d)) ⊙ r(m)`.
    pub fn treatment_interaction(&self, tape: &mut Tape, rd: Var, rm: Var) -> Result<Var> {
        let gate = self.diagnosis_gate(tape, rd)?;
        tape.mul(gate, rm)
    }

    fn diagnosis_gate(&self, tape: &mut Tape, rd: Var) -> Result<Var> {
        let z = tape.affine(self.w_m, rd, None)?;
        Ok(tape.relu(z))
    }

    /// `v = ReLU(W_o (r(d) + Σ g(d, m)))` over the distinct treatments.
    pub fn visit_embed(&self, tape: &mut Tape, diagnosis: &str, treatments: &[&str]) -> Result<Var> {
        let rd = self.embed_code(tape, CodeKind::Diagnosis, diagnosis)?;
        let mut seen = std::collections::HashSet::new();
        let distinct: Vec<&str> = treatments.iter().copied().filter(|t| seen.insert(*t)).collect();
        let inner = if distinct.is_empty() {
            rd
        } else {
            let gate = self.diagnosis_gate(tape, rd)?;
            let mut terms = vec![rd];
            for m in distinct {
                let rm = self.embed_code(tape, CodeKind::Treatment, m)?;
                terms.push(tape.mul(gate, rm)?);
            }
            tape.sum(&terms)?
        };
        let z = tape.affine(self.w_o, inner, None)?;
        Ok(tape.relu(z))
    }

    pub fn embed_visit(&self, tape: &mut Tape, visit: &Visit) -> Result<Var> {
        self.visit_embed(tape, &visit.diagnosis, &visit.treatment_set())
    }

    /// `h = ReLU(W_p1 Σ r(p_k) + W_p2 Σ v_i)`, the sums pulled inside the
    /// linear maps.
    pub fn patient_embed(&self, tape: &mut Tape, demographics: &[Var], visits: &[Var]) -> Result<Var> {
        let mut terms = Vec::with_capacity(2);
        if !demographics.is_empty() {
            let s = tape.sum(demographics)?;
            terms.push(tape.affine(self.w_p1, s, None)?);
        }
        if !visits.is_empty() {
            let s = tape.sum(visits)?;
            terms.push(tape.affine(self.w_p2, s, None)?);
        }
        let pre = if terms.is_empty() {
            tape.input(vec![0.0; self.latent_dim])
        } else {
            tape.sum(&terms)?
        };
        Ok(tape.relu(pre))
    }

    pub fn embed_demographics(&self, tape: &mut Tape, demo: &Demographics) -> Result<Vec<Var>> {
        demo.codes()
            .iter()
            .map(|c| self.embed_code(tape, CodeKind::Demographic, c))
            .collect()
    }

    pub fn encode_patient(&self, tape: &mut Tape, patient: &PatientRecord) -> Result<PatientEncoding> {
        let visits = patient
            .visits
            .iter()
            .map(|v| self.embed_visit(tape, v))
            .collect::<Result<Vec<_>>>()?;
        let demo = self.embed_demographics(tape, &patient.demographics)?;
        let h = self.patient_embed(tape, &demo, &visits)?;
        Ok(PatientEncoding { visits, patient: h })
    }

    /// Diagnosis and treatment logits `(U_d v, U_m v)`.
    pub fn aux_logits(&self, tape: &mut Tape, v: Var) -> Result<(Option<Var>, Option<Var>)> {
        let d = self.u_d.map(|u| tape.affine(u, v, None)).transpose()?;
        let m = self.u_m.map(|u| tape.affine(u, v, None)).transpose()?;
        Ok((d, m))
    }

    /// Diagnosis distribution and per-treatment probabilities for `v`.
    pub fn aux_predict(&self, tape: &mut Tape, v: Var) -> Result<(Vec<f64>, Vec<f64>)> {
        let (d, m) = self.aux_logits(tape, v)?;
        let dist = d
            .map(|d| softmax(&Tensor::vector(tape.value(d).to_vec())).into_data())
            .unwrap_or_default();
        let probs = m
            .map(|m| tape.value(m).iter().map(|&z| sigmoid(z)).collect())
            .unwrap_or_default();
        Ok((dist, probs))
    }

    /// Cross-entropy on the visit's diagnosis and mean binary cross-entropy
    /// on its treatment set.
    pub fn aux_loss(&self, tape: &mut Tape, v: Var, visit: &Visit) -> Result<AuxLoss> {
        let (d, m) = self.aux_logits(tape, v)?;
        let diagnosis = match (d, self.vocabs.diagnosis.index(&visit.diagnosis)) {
            (Some(d), Some(gold)) => Some(tape.softmax_xent(d, gold)?),
            _ => None,
        };
        let treatment = match m {
            Some(m) => {
                let mut targets = vec![0.0; self.vocabs.treatment.len()];
                for t in &visit.treatments {
                    if let Some(i) = self.vocabs.treatment.index(t) {
                        targets[i] = 1.0;
                    }
                }
                Some(tape.sigmoid_bce(m, targets)?)
            }
            None => None,
        };
        Ok(AuxLoss {
            diagnosis,
            treatment,
        })
    }
}
