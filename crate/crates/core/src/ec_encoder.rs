//! Sentence embeddings for criteria statements (the premise side).
//!
//! Two encoders share one contract, tokens in and a length-`o` vector out:
//! a trainable bag-of-tokens encoder (embedding lookup, mean pooling, one
//! affine + ReLU layer) and a file-backed encoder serving precomputed
//! vectors.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{CriterionKind, EcStatement, TrialCriteria, Vocabulary};
use crate::error::{EnrollError, Result};
use crate::numkernel::{InitStd, ParamId, ParameterStore, Tape, Var};
pub use crate::text::tokenize;

pub const DEFAULT_HASH_BUCKETS: usize = 100;
pub const INCLUSION_MARKER: &str = "__inclusion__";
pub const EXCLUSION_MARKER: &str = "__exclusion__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub token_dim: usize,
    pub latent_dim: usize,
    pub hash_buckets: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            token_dim: 64,
            latent_dim: 64,
            hash_buckets: DEFAULT_HASH_BUCKETS,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.latent_dim == 0 || self.hash_buckets == 0 {
            return Err(EnrollError::Config(format!(
                "encoder dims must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn hash_bucket(token: &str, buckets: usize) -> usize {
    (fnv1a(token.as_bytes()) % buckets as u64) as usize
}

pub fn kind_marker(kind: CriterionKind) -> &'static str {
    match kind {
        CriterionKind::Inclusion => INCLUSION_MARKER,
        CriterionKind::Exclusion => EXCLUSION_MARKER,
    }
}

/// Marker token followed by the statement's tokens.
pub fn statement_tokens(stmt: &EcStatement) -> Vec<String> {
    let mut tokens = vec![kind_marker(stmt.kind).to_string()];
    tokens.extend(tokenize(&stmt.text));
    tokens
}

/// Token vocabulary over the given statements, markers included.
pub fn token_vocabulary<'a>(statements: impl IntoIterator<Item = &'a EcStatement>) -> Vocabulary {
    let mut set = BTreeSet::new();
    set.insert(INCLUSION_MARKER.to_string());
    set.insert(EXCLUSION_MARKER.to_string());
    for s in statements {
        set.extend(tokenize(&s.text));
    }
    Vocabulary::from_codes(set)
}

/// Trainable bag-of-tokens encoder.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    embeddings: ParamId,
    w: ParamId,
    b: ParamId,
}

impl TextEncoder {
    /// Registers `enc.embeddings` ((|vocab| + buckets) × token_dim), `enc.w`
    /// and `enc.b`.
    pub fn init<R: Rng + ?Sized>(
        config: EncoderConfig,
        vocab: Vocabulary,
        params: &mut ParameterStore,
        std: InitStd,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let rows = vocab.len() + config.hash_buckets;
        let embeddings = params.insert_gaussian("enc.embeddings", &[rows, config.token_dim], std.embedding, rng)?;
        let w = params.insert_weight("enc.w", config.latent_dim, config.token_dim, std, rng)?;
        let b = params.insert_zeros("enc.b", &[config.latent_dim])?;
        Ok(Self {
            config,
            vocab,
            embeddings,
            w,
            b,
        })
    }

    /// Embedding row for a token: its vocabulary slot, else a hash bucket.
    pub fn token_row(&self, token: &str) -> usize {
        match self.vocab.index(token) {
            Some(i) => i,
            None => self.vocab.len() + hash_bucket(token, self.config.hash_buckets),
        }
    }

    /// Mean-pooled token embeddings, before the output layer.
    pub fn pooled(&self, tape: &mut Tape, tokens: &[String]) -> Result<Var> {
        let rows: Vec<usize> = tokens.iter().map(|t| self.token_row(t)).collect();
        tape.mean_rows(self.embeddings, &rows)
    }

    /// `ReLU(W · mean(emb(tokens)) + b)`; the empty sentence maps to zero.
    pub fn encode_sentence(&self, tape: &mut Tape, tokens: &[String]) -> Result<Var> {
        if tokens.is_empty() {
            return Ok(tape.input(vec![0.0; self.config.latent_dim]));
        }
        let pooled = self.pooled(tape, tokens)?;
        let z = tape.affine(self.w, pooled, Some(self.b))?;
        Ok(tape.relu(z))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrecomputedLine {
    trial_id: String,
    statement_id: String,
    vector: Vec<f64>,
}

/// Fixed per-statement vectors loaded from JSON Lines.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEncoder {
    pub dim: usize,
    vectors: HashMap<(String, String), Vec<f64>>,
}

impl PrecomputedEncoder {
    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut out = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| EnrollError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let rec: PrecomputedLine =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            if out.vectors.is_empty() {
                out.dim = rec.vector.len();
            }
            if rec.vector.len() != out.dim || out.dim == 0 {
                return Err(parse_err(format!(
                    "vector length {} (expected {})",
                    rec.vector.len(),
                    out.dim
                )));
            }
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite vector entry".into()));
            }
            let key = (rec.trial_id, rec.statement_id);
            if out.vectors.contains_key(&key) {
                return Err(EnrollError::DuplicateId {
                    kind: "embedding",
                    id: format!("{}/{}", key.0, key.1),
                });
            }
            out.vectors.insert(key, rec.vector);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EnrollError::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    pub fn get(&self, trial_id: &str, statement_id: &str) -> Option<&[f64]> {
        self.vectors
            .get(&(trial_id.to_string(), statement_id.to_string()))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Either encoder behind the premise contract.
#[derive(Debug, Clone)]
pub enum PremiseEncoder {
    Trainable(TextEncoder),
    Precomputed(PrecomputedEncoder),
}

impl PremiseEncoder {
    pub fn latent_dim(&self) -> usize {
        match self {
            PremiseEncoder::Trainable(e) => e.config.latent_dim,
            PremiseEncoder::Precomputed(p) => p.dim,
        }
    }

    pub fn encode_statement(&self, tape: &mut Tape, trial_id: &str, stmt: &EcStatement) -> Result<Var> {
        match self {
            PremiseEncoder::Trainable(e) => e.encode_sentence(tape, &statement_tokens(stmt)),
            PremiseEncoder::Precomputed(p) => {
                let v = p.get(trial_id, &stmt.id).ok_or_else(|| {
                    EnrollError::Validation(format!(
                        "no precomputed embedding for `{trial_id}`/`{}`",
                        stmt.id
                    ))
                })?;
                Ok(tape.input(v.to_vec()))
            }
        }
    }

    /// One row per statement, in statement order.
    pub fn encode_trial(&self, tape: &mut Tape, trial: &TrialCriteria) -> Result<Vec<Var>> {
        trial
            .statements
            .iter()
            .map(|s| self.encode_statement(tape, &trial.trial_id, s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn encoder() -> (TextEncoder, ParameterStore) {
        let mut params = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vocab = Vocabulary::from_codes(["more", "than", "mg"]);
        let cfg = EncoderConfig {
            token_dim: 6,
            latent_dim: 4,
            hash_buckets: 7,
        };
        let enc = TextEncoder::init(cfg, vocab, &mut params, InitStd::uniform(0.5), &mut rng).unwrap();
        (enc, params)
    }

    #[test]
    fn empty_sentence_is_zero() {
        let (enc, params) = encoder();
        let mut tape = Tape::new(&params);
        let v = enc.encode_sentence(&mut tape, &[]).unwrap();
        assert_eq!(tape.value(v), &[0.0; 4]);
    }

    #[test]
    fn deterministic_and_order_free_pooling() {
        let (enc, params) = encoder();
        let mut tape = Tape::new(&params);
        let a = enc.encode_sentence(&mut tape, &toks("more than 20 mg")).unwrap();
        let b = enc.encode_sentence(&mut tape, &toks("more than 20 mg")).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        let p = enc.pooled(&mut tape, &toks("more than 20 mg")).unwrap();
        let q = enc.pooled(&mut tape, &toks("mg 20 than more")).unwrap();
        for (x, y) in tape.value(p).iter().zip(tape.value(q)) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn unseen_tokens_hash_stably() {
        let (enc, _) = encoder();
        assert_eq!(enc.token_row("mg"), enc.vocab.index("mg").unwrap());
        let r = enc.token_row("zebra");
        assert!(r >= 3 && r < 10);
        assert_eq!(r, enc.token_row("zebra"));
        assert_eq!(hash_bucket("zebra", 100), hash_bucket("zebra", 100));
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn trial_rows_follow_statements() {
        let (enc, params) = encoder();
        let trial = TrialCriteria {
            trial_id: "t".into(),
            condition: "c".into(),
            statements: vec![
                EcStatement {
                    id: "a".into(),
                    kind: CriterionKind::Inclusion,
                    text: "more than 20 mg".into(),
                },
                EcStatement {
                    id: "b".into(),
                    kind: CriterionKind::Exclusion,
                    text: "mg".into(),
                },
            ],
        };
        let pe = PremiseEncoder::Trainable(enc.clone());
        let mut tape = Tape::new(&params);
        let rows = pe.encode_trial(&mut tape, &trial).unwrap();
        assert_eq!(rows.len(), 2);
        for (row, s) in rows.iter().zip(&trial.statements) {
            let single = enc.encode_sentence(&mut tape, &statement_tokens(s)).unwrap();
            assert_eq!(tape.value(*row), tape.value(single));
        }
        let mut swapped = trial.clone();
        swapped.statements.reverse();
        let rows2 = pe.encode_trial(&mut tape, &swapped).unwrap();
        assert_eq!(tape.value(rows[0]), tape.value(rows2[1]));
    }

    #[test]
    fn precomputed_roundtrip() {
        let text = r#"{"trial_id":"t","statement_id":"a","vector":[1.0,2.0]}
{"trial_id":"t","statement_id":"b","vector":[3.0,4.0]}
"#;
        let p = PrecomputedEncoder::from_jsonl(text, Path::new("x")).unwrap();
        assert_eq!((p.dim, p.len()), (2, 2));
        assert_eq!(p.get("t", "b"), Some(&[3.0, 4.0][..]));
        let bad = r#"{"trial_id":"t","statement_id":"a","vector":[1.0]}
{"trial_id":"t","statement_id":"b","vector":[3.0,4.0]}"#;
        assert!(matches!(
            PrecomputedEncoder::from_jsonl(bad, Path::new("x")),
            Err(EnrollError::Parse { line: 2, .. })
        ));
    }
}
