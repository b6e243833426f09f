//! Numeric-quantity reasoning over criteria text.
//!
//! Quantities in a criterion become `(range, unit, concept)` triples; a
//! patient's measurements are then checked against every triple whose
//! concept they share and whose unit they can be converted to.
//!
//! Extraction rules, in order, for each number token (digits, ordinals,
//! written numbers):
//!
//! | pattern | range |
//! |---|---|
//! | `between X [u] and Y u`, `X - Y u`, `X to Y u` | `[X, Y]` |
//! | prefix comparator, e.g. `more than X u` | see lexicon groups |
//! | `X u or older` (postfix comparator) | `[X, +inf)` / `(-inf, X]` |
//! | `X u` with a unit but no comparator | `[X, X]` |
//! | bare number, no comparator, no unit | nothing |
//!
//! Comparator groups: `more than`, `over`, `>` open lower; `at least`, `≥`
//! closed lower; `less than`, `under`, `<` open upper; `at most`, `within`,
//! `≤`, `in the last` closed upper; `exactly`, `=` point.
//!
//! The concept is up to three content tokens immediately before the
//! quantity phrase (skipping at most two stopwords), else up to three after
//! it.

mod lexicon;
mod quantity;
mod units;

use std::path::Path;

pub use lexicon::{Comparator, Lexicon};
pub use quantity::{Interval, QuantityTriple, QuantityVerdict};
pub use units::{UnitEntry, UnitTable, DIMENSIONLESS};

use crate::datamodel::{CriterionKind, EcStatement, PatientRecord};
use crate::error::Result;
use crate::text::{parse_number, parse_ordinal, tokenize};

const MAX_CONCEPT_TOKENS: usize = 3;
const MAX_SKIPPED_STOPWORDS: usize = 2;

/// Extractor and comparator sharing one unit table and lexicon.
#[derive(Debug, Clone, Default)]
pub struct Nir {
    pub units: UnitTable,
    pub lexicon: Lexicon,
}

/// One measurement checked against one extracted triple.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantityCheck {
    pub statement_id: String,
    pub kind: CriterionKind,
    pub triple: QuantityTriple,
    pub concept: String,
    pub value: f64,
    pub unit: String,
    /// Raw containment verdict, before the criterion's polarity is applied.
    pub verdict: QuantityVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityMatch {
    /// `Entailment` or `Contradiction`; never `NotComparable`.
    pub verdict: QuantityVerdict,
    pub checks: Vec<QuantityCheck>,
}

impl Nir {
    pub fn new(units: UnitTable, lexicon: Lexicon) -> Self {
        Self { units, lexicon }
    }

    pub fn with_unit_file(path: &Path) -> Result<Self> {
        Ok(Self::new(UnitTable::load(path)?, Lexicon::default()))
    }

    fn number_at(&self, tokens: &[String], i: usize) -> Option<f64> {
        let t = tokens.get(i)?;
        parse_number(t)
            .or_else(|| parse_ordinal(t))
            .or_else(|| self.lexicon.written_number(t))
    }

    fn unit_at(&self, tokens: &[String], i: usize) -> Option<&str> {
        let t = tokens.get(i)?;
        self.units.canonical(t)
    }

    fn is_content(&self, token: &str) -> bool {
        token.chars().any(char::is_alphabetic)
            && !self.lexicon.is_stopword(token)
            && !self.lexicon.is_phrase_word(token)
            && !self.lexicon.is_range_joiner(token)
            && self.lexicon.written_number(token).is_none()
            && parse_ordinal(token).is_none()
            && !self.units.contains(token)
    }

    fn concept_around(&self, tokens: &[String], start: usize, end: usize) -> String {
        let mut back = Vec::new();
        let mut skipped = 0;
        let mut i = start;
        while i > 0 && back.len() < MAX_CONCEPT_TOKENS {
            let t = &tokens[i - 1];
            if self.is_content(t) {
                back.push(t.as_str());
            } else if back.is_empty()
                && self.lexicon.is_stopword(t)
                && skipped < MAX_SKIPPED_STOPWORDS
            {
                skipped += 1;
            } else {
                break;
            }
            i -= 1;
        }
        if !back.is_empty() {
            back.reverse();
            return back.join(" ");
        }
        let mut fwd = Vec::new();
        let mut skipped = 0;
        for t in &tokens[end.min(tokens.len())..] {
            if fwd.len() >= MAX_CONCEPT_TOKENS {
                break;
            }
            if self.is_content(t) {
                fwd.push(t.as_str());
            } else if fwd.is_empty()
                && self.lexicon.is_stopword(t)
                && skipped < MAX_SKIPPED_STOPWORDS
            {
                skipped += 1;
            } else {
                break;
            }
        }
        fwd.join(" ")
    }

    /// Best-effort extraction of every quantity constraint in `text`.
    pub fn extract_quantities(&self, text: &str) -> Vec<QuantityTriple> {
        let tokens = tokenize(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let Some(x) = self.number_at(&tokens, i) else {
                i += 1;
                continue;
            };
            if let Some((triple, end)) = self.try_range(&tokens, i, x) {
                out.push(triple);
                i = end;
                continue;
            }

            let prefix = self.lexicon.prefix_ending_at(&tokens, i);
            let start = i - prefix.map_or(0, |(len, _)| len);
            let unit = self.unit_at(&tokens, i + 1);
            let mut end = i + 1 + usize::from(unit.is_some());
            let mut cmp = prefix.map(|(_, c)| c);
            if cmp.is_none() {
                if let Some((len, c)) = self.lexicon.postfix_at(&tokens, end) {
                    cmp = Some(c);
                    end += len;
                }
            }
            let range = match (cmp, unit) {
                (Some(Comparator::LowerOpen), _) => Interval::above(x, false),
                (Some(Comparator::LowerClosed), _) => Interval::above(x, true),
                (Some(Comparator::UpperOpen), _) => Interval::below(x, false),
                (Some(Comparator::UpperClosed), _) => Interval::below(x, true),
                (Some(Comparator::Point), _) | (None, Some(_)) => Interval::point(x),
                (None, None) => {
                    i += 1;
                    continue;
                }
            };
            out.push(QuantityTriple {
                range,
                unit: unit.unwrap_or(DIMENSIONLESS).to_string(),
                concept: self.concept_around(&tokens, start, end),
            });
            i = end;
        }
        out
    }

    /// `between X [u] and Y [u]`, `X [u] - Y [u]`, `X [u] to Y [u]`.
    fn try_range(&self, tokens: &[String], i: usize, lo: f64) -> Option<(QuantityTriple, usize)> {
        let lead = i > 0 && self.lexicon.is_range_lead(&tokens[i - 1]);
        let mut j = i + 1;
        let unit_lo = self.unit_at(tokens, j);
        if unit_lo.is_some() {
            j += 1;
        }
        let joiner = tokens.get(j)?;
        if !self.lexicon.is_range_joiner(joiner) || (!lead && joiner == "and") {
            return None;
        }
        let hi = self.number_at(tokens, j + 1)?;
        if hi < lo {
            return None;
        }
        let mut end = j + 2;
        let unit_hi = self.unit_at(tokens, end);
        if unit_hi.is_some() {
            end += 1;
        }
        let unit = match (unit_lo, unit_hi) {
            (Some(a), Some(b)) if a != b => return None,
            (a, b) => a.or(b),
        };
        // bare "X to Y" with neither lead nor unit is too ambiguous
        if !lead && unit.is_none() && joiner != "-" {
            return None;
        }
        let start = if lead { i - 1 } else { i };
        Some((
            QuantityTriple {
                range: Interval::closed(lo, hi),
                unit: unit.unwrap_or(DIMENSIONLESS).to_string(),
                concept: self.concept_around(tokens, start, end),
            },
            end,
        ))
    }

    /// Checks a fixed record value against an extracted range.
    ///
    /// A dimensionless triple (a bare number) is read in the record's unit.
    pub fn compare_quantity(&self, ec: &QuantityTriple, value: f64, unit: &str) -> QuantityVerdict {
        let Some(ehr) = self.units.lookup(unit) else {
            return QuantityVerdict::NotComparable;
        };
        let (range, v) = if ec.unit == DIMENSIONLESS {
            (ec.range, value)
        } else {
            let Some(spec) = self.units.lookup(&ec.unit) else {
                return QuantityVerdict::NotComparable;
            };
            if spec.dimension != ehr.dimension {
                return QuantityVerdict::NotComparable;
            }
            (ec.range.scaled(spec.scale), value * ehr.scale)
        };
        if range.contains(v) {
            QuantityVerdict::Entailment
        } else {
            QuantityVerdict::Contradiction
        }
    }

    fn content_tokens(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| !self.lexicon.is_stopword(t))
            .collect()
    }

    /// Quantity verdict for a set of criteria against one patient.
    ///
    /// Each triple is checked against every measurement sharing a concept
    /// token and a convertible unit. An inclusion criterion is violated by a
    /// value outside its range; an exclusion criterion by a value inside it.
    /// Any violation yields `Contradiction`; otherwise (including when
    /// nothing is comparable) `Entailment`.
    pub fn quantity_match(&self, statements: &[&EcStatement], patient: &PatientRecord) -> QuantityMatch {
        let measurements: Vec<_> = patient
            .measurements()
            .map(|m| (m, self.content_tokens(&m.concept)))
            .collect();
        let mut checks = Vec::new();
        let mut violated = false;
        for stmt in statements {
            for triple in self.extract_quantities(&stmt.text) {
                let concept = self.content_tokens(&triple.concept);
                if concept.is_empty() {
                    continue;
                }
                for (m, m_tokens) in &measurements {
                    if m.unknown_unit || !concept.iter().any(|c| m_tokens.contains(c)) {
                        continue;
                    }
                    let verdict = self.compare_quantity(&triple, m.value, &m.unit);
                    if verdict == QuantityVerdict::NotComparable {
                        continue;
                    }
                    violated |= match stmt.kind {
                        CriterionKind::Inclusion => verdict == QuantityVerdict::Contradiction,
                        CriterionKind::Exclusion => verdict == QuantityVerdict::Entailment,
                    };
                    checks.push(QuantityCheck {
                        statement_id: stmt.id.clone(),
                        kind: stmt.kind,
                        triple: triple.clone(),
                        concept: m.concept.clone(),
                        value: m.value,
                        unit: m.unit.clone(),
                        verdict,
                    });
                }
            }
        }
        QuantityMatch {
            verdict: if violated {
                QuantityVerdict::Contradiction
            } else {
                QuantityVerdict::Entailment
            },
            checks,
        }
    }
}
