use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use crate::error::{EnrollError, Result};
use crate::text::tokenize;

const DEFAULT_LEXICON: &str = include_str!("data/comparators.json");

/// Which side of a range a comparator phrase bounds, and whether inclusively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    LowerOpen,
    LowerClosed,
    UpperOpen,
    UpperClosed,
    Point,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    lower_open: Vec<String>,
    lower_closed: Vec<String>,
    upper_open: Vec<String>,
    upper_closed: Vec<String>,
    point: Vec<String>,
    postfix_lower_closed: Vec<String>,
    postfix_upper_closed: Vec<String>,
    range_lead: Vec<String>,
    range_joiners: Vec<String>,
    written_numbers: BTreeMap<String, f64>,
    stopwords: Vec<String>,
}

/// Comparator phrases, written numbers and stopwords (`comparators.json`).
#[derive(Debug, Clone)]
pub struct Lexicon {
    /// Tokenized phrases, longest first.
    prefix: Vec<(Vec<String>, Comparator)>,
    postfix: Vec<(Vec<String>, Comparator)>,
    range_lead: HashSet<String>,
    range_joiners: HashSet<String>,
    written_numbers: BTreeMap<String, f64>,
    stopwords: HashSet<String>,
    phrase_words: HashSet<String>,
}

impl Lexicon {
    pub fn from_json(json: &str) -> Result<Self> {
        let f: LexiconFile = serde_json::from_str(json)?;
        let mut phrase_words = HashSet::new();
        let mut build = |groups: Vec<(Vec<String>, Comparator)>| {
            let mut out: Vec<(Vec<String>, Comparator)> = Vec::new();
            for (phrases, cmp) in groups {
                for p in phrases {
                    let toks = tokenize(&p);
                    if toks.is_empty() {
                        return Err(EnrollError::Validation(format!("empty comparator `{p}`")));
                    }
                    phrase_words.extend(toks.iter().cloned());
                    out.push((toks, cmp));
                }
            }
            // stable sort keeps file order among equal lengths
            out.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
            Ok(out)
        };
        let prefix = build(vec![
            (f.lower_open, Comparator::LowerOpen),
            (f.lower_closed, Comparator::LowerClosed),
            (f.upper_open, Comparator::UpperOpen),
            (f.upper_closed, Comparator::UpperClosed),
            (f.point, Comparator::Point),
        ])?;
        let postfix = build(vec![
            (f.postfix_lower_closed, Comparator::LowerClosed),
            (f.postfix_upper_closed, Comparator::UpperClosed),
        ])?;
        let range_lead: HashSet<String> = f.range_lead.into_iter().collect();
        let range_joiners: HashSet<String> = f.range_joiners.into_iter().collect();
        phrase_words.extend(range_lead.iter().cloned());
        Ok(Self {
            prefix,
            postfix,
            range_lead,
            range_joiners,
            written_numbers: f.written_numbers,
            stopwords: f.stopwords.into_iter().collect(),
            phrase_words,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| EnrollError::io(path, e))?;
        Self::from_json(&json)
    }

    /// Longest comparator phrase ending just before `end`.
    pub(crate) fn prefix_ending_at(&self, tokens: &[String], end: usize) -> Option<(usize, Comparator)> {
        self.prefix.iter().find_map(|(p, cmp)| {
            (p.len() <= end && tokens[end - p.len()..end] == p[..]).then_some((p.len(), *cmp))
        })
    }

    /// Longest postfix comparator starting at `start`.
    pub(crate) fn postfix_at(&self, tokens: &[String], start: usize) -> Option<(usize, Comparator)> {
        self.postfix.iter().find_map(|(p, cmp)| {
            (start + p.len() <= tokens.len() && tokens[start..start + p.len()] == p[..])
                .then_some((p.len(), *cmp))
        })
    }

    pub fn is_range_lead(&self, token: &str) -> bool {
        self.range_lead.contains(token)
    }

    pub fn is_range_joiner(&self, token: &str) -> bool {
        self.range_joiners.contains(token)
    }

    pub fn written_number(&self, token: &str) -> Option<f64> {
        self.written_numbers.get(token).copied()
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn is_phrase_word(&self, token: &str) -> bool {
        self.phrase_words.contains(token)
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}
