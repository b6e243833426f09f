use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{EnrollError, Result};
use crate::numkernel::Tensor;

/// Closed code ↔ dense index bijection. Indices follow sorted code order, so
/// rebuilding from the same corpus reproduces them exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    codes: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(codes: Vec<String>) -> Self {
        Self::from_codes(codes)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.codes
    }
}

impl Vocabulary {
    /// Sorts and deduplicates `codes`.
    pub fn from_codes<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = codes.into_iter().map(Into::into).collect();
        let codes: Vec<String> = set.into_iter().collect();
        let index = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Self { codes, index }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Size including the reserved unknown slot at index `len()`.
    pub fn len_with_unk(&self) -> usize {
        self.codes.len() + 1
    }

    pub fn unk_index(&self) -> usize {
        self.codes.len()
    }

    pub fn index(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn index_or_unk(&self, code: &str) -> usize {
        self.index(code).unwrap_or(self.unk_index())
    }

    pub fn code(&self, index: usize) -> Option<&str> {
        self.codes.get(index).map(String::as_str)
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }
}

/// One-hot vector of the vocabulary size. Unknown codes are rejected.
pub fn one_hot(code: &str, vocab: &Vocabulary) -> Result<Tensor> {
    let i = vocab
        .index(code)
        .ok_or_else(|| EnrollError::UnknownCode(code.to_string()))?;
    let mut t = Tensor::zeros(&[vocab.len()]);
    t.data_mut()[i] = 1.0;
    Ok(t)
}
