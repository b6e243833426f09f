//! The full network: premise encoder, patient encoder and aligner over one
//! parameter store.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::{AlignOutput, Aligner, Dropout, EntailmentOutput};
use crate::datamodel::{EcStatement, PatientRecord, Vocabularies, Vocabulary};
use crate::ec_encoder::{EncoderConfig, PrecomputedEncoder, PremiseEncoder, TextEncoder};
use crate::ehr_encoder::{EhrEncoder, PatientEncoding};
use crate::error::{EnrollError, Result};
use crate::numkernel::{InitStd, ParameterStore, Tape, Var};

/// Hypothesis row id of the patient-level embedding in heatmaps.
pub const PATIENT_ROW_ID: &str = "patient";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Shared latent size `o`.
    pub embed_dim: usize,
    /// Code embedding size `z`.
    pub code_dim: usize,
    pub token_dim: usize,
    pub hash_buckets: usize,
    /// Classifier hidden width; 0 for a bare affine head.
    pub hidden: usize,
    /// Init width of token and code embedding tables.
    pub embedding_std: f64,
    /// Init width of every other weight matrix; `None` scales each by
    /// `sqrt(2 / fan_in)`.
    pub init_std: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            code_dim: 64,
            token_dim: 64,
            hash_buckets: crate::ec_encoder::DEFAULT_HASH_BUCKETS,
            hidden: 64,
            embedding_std: 1.0,
            init_std: None,
        }
    }
}

impl ModelConfig {
    pub fn init_std(&self) -> InitStd {
        InitStd {
            embedding: self.embedding_std,
            weight: self.init_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.code_dim == 0 || self.token_dim == 0 || self.hash_buckets == 0 {
            return Err(EnrollError::Config(format!("model dims must be positive: {self:?}")));
        }
        for std in [self.init_std.unwrap_or(1.0), self.embedding_std] {
            if !(std.is_finite() && std >= 0.0) {
                return Err(EnrollError::Config(format!("bad init std {std}")));
            }
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's parameter layout; saved next to
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub vocabularies: Vocabularies,
    pub tokens: Vocabulary,
}

impl ModelSpec {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| EnrollError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EnrollError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub premise: PremiseEncoder,
    pub ehr: EhrEncoder,
    pub aligner: Aligner,
}

/// Per-tape memo of statement and patient encodings, so a batch encodes
/// each distinct input once.
#[derive(Debug, Default)]
pub struct EncodingCache {
    statements: HashMap<(String, String), Var>,
    patients: HashMap<String, PatientEncoding>,
}

/// One inference pass, dropout off.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub output: EntailmentOutput,
    /// `weights[i][j]`: normalized attention of statement `i` on hypothesis
    /// row `j` (visits in record order, then the patient row).
    pub weights: Vec<Vec<f64>>,
    pub comparisons: usize,
}

impl Model {
    /// Fresh parameters from `seed`. Insertion order is fixed, so equal
    /// specs and seeds give identical stores.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<(Self, ParameterStore)> {
        spec.config.validate()?;
        let c = spec.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        let enc = TextEncoder::init(
            EncoderConfig {
                token_dim: c.token_dim,
                latent_dim: c.embed_dim,
                hash_buckets: c.hash_buckets,
            },
            spec.tokens.clone(),
            &mut params,
            c.init_std(),
            &mut rng,
        )?;
        let ehr = EhrEncoder::init(
            spec.vocabularies.clone(),
            c.code_dim,
            c.embed_dim,
            &mut params,
            c.init_std(),
            &mut rng,
        )?;
        let aligner = Aligner::init(c.embed_dim, c.hidden, &mut params, c.init_std(), &mut rng)?;
        Ok((
            Self {
                spec,
                premise: PremiseEncoder::Trainable(enc),
                ehr,
                aligner,
            },
            params,
        ))
    }

    /// Swaps the trainable sentence encoder for fixed vectors. Its
    /// parameters stay in the store, unused.
    pub fn with_precomputed(mut self, pre: PrecomputedEncoder) -> Result<Self> {
        if pre.dim != self.spec.config.embed_dim {
            return Err(EnrollError::Config(format!(
                "precomputed vectors have dim {}, model expects {}",
                pre.dim, self.spec.config.embed_dim
            )));
        }
        self.premise = PremiseEncoder::Precomputed(pre);
        Ok(self)
    }

    pub fn encode_statement(
        &self,
        tape: &mut Tape,
        cache: &mut EncodingCache,
        trial_id: &str,
        stmt: &EcStatement,
    ) -> Result<Var> {
        let key = (trial_id.to_string(), stmt.id.clone());
        if let Some(&v) = cache.statements.get(&key) {
            return Ok(v);
        }
        let v = self.premise.encode_statement(tape, trial_id, stmt)?;
        cache.statements.insert(key, v);
        Ok(v)
    }

    pub fn encode_patient(
        &self,
        tape: &mut Tape,
        cache: &mut EncodingCache,
        patient: &PatientRecord,
    ) -> Result<PatientEncoding> {
        if let Some(e) = cache.patients.get(&patient.patient_id) {
            return Ok(e.clone());
        }
        let e = self.ehr.encode_patient(tape, patient)?;
        cache.patients.insert(patient.patient_id.clone(), e.clone());
        Ok(e)
    }

    /// Builds the example's graph on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        cache: &mut EncodingCache,
        trial_id: &str,
        statements: &[&EcStatement],
        patient: &PatientRecord,
        dropout: Option<&mut Dropout>,
    ) -> Result<(AlignOutput, PatientEncoding)> {
        if statements.is_empty() {
            return Err(EnrollError::Validation(format!(
                "no statements selected for `{trial_id}`"
            )));
        }
        let u = statements
            .iter()
            .map(|s| self.encode_statement(tape, cache, trial_id, s))
            .collect::<Result<Vec<_>>>()?;
        let enc = self.encode_patient(tape, cache, patient)?;
        let out = self.aligner.forward(tape, &u, &enc.rows(), dropout)?;
        Ok((out, enc))
    }

    pub fn predict(
        &self,
        params: &ParameterStore,
        trial_id: &str,
        statements: &[&EcStatement],
        patient: &PatientRecord,
    ) -> Result<Prediction> {
        let mut tape = Tape::new(params);
        let mut cache = EncodingCache::default();
        let (out, _) = self.forward(&mut tape, &mut cache, trial_id, statements, patient, None)?;
        let weights = out
            .aligned
            .beta_weights
            .iter()
            .map(|&w| tape.value(w).to_vec())
            .collect();
        Ok(Prediction {
            output: EntailmentOutput::from_logits(tape.value(out.logits))?,
            weights,
            comparisons: out.comparisons,
        })
    }
}

/// Hypothesis row ids matching [`Prediction::weights`] columns.
pub fn hypothesis_row_ids(patient: &PatientRecord) -> Vec<String> {
    let mut ids: Vec<String> = patient.visits.iter().map(|v| v.visit_id.clone()).collect();
    ids.push(PATIENT_ROW_ID.to_string());
    ids
}
