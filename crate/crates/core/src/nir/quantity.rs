use std::fmt;

use serde::{Deserialize, Serialize};

/// Interval with optionally infinite, open or closed ends. An absent bound
/// is infinite (and therefore open).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Option<f64>,
    pub lower_closed: bool,
    pub upper: Option<f64>,
    pub upper_closed: bool,
}

impl Interval {
    pub fn above(x: f64, closed: bool) -> Self {
        Self {
            lower: Some(x),
            lower_closed: closed,
            upper: None,
            upper_closed: false,
        }
    }

    pub fn below(x: f64, closed: bool) -> Self {
        Self {
            lower: None,
            lower_closed: false,
            upper: Some(x),
            upper_closed: closed,
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lower: Some(lo),
            lower_closed: true,
            upper: Some(hi),
            upper_closed: true,
        }
    }

    pub fn point(x: f64) -> Self {
        Self::closed(x, x)
    }

    /// At least one finite bound, finite values, `lower ≤ upper`.
    pub fn is_valid(&self) -> bool {
        let finite = |b: Option<f64>| b.is_none_or(f64::is_finite);
        if self.lower.is_none() && self.upper.is_none() {
            return false;
        }
        if !finite(self.lower) || !finite(self.upper) {
            return false;
        }
        match (self.lower, self.upper) {
            (Some(l), Some(u)) => l < u || (l == u && self.lower_closed && self.upper_closed),
            _ => true,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = match self.lower {
            None => true,
            Some(l) if self.lower_closed => v >= l,
            Some(l) => v > l,
        };
        let below = match self.upper {
            None => true,
            Some(u) if self.upper_closed => v <= u,
            Some(u) => v < u,
        };
        above && below
    }

    /// Multiplies both bounds by a positive factor.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lower: self.lower.map(|l| l * factor),
            upper: self.upper.map(|u| u * factor),
            ..*self
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lower {
            None => write!(f, "(-inf")?,
            Some(l) => write!(f, "{}{l}", if self.lower_closed { '[' } else { '(' })?,
        }
        match self.upper {
            None => write!(f, ", +inf)"),
            Some(u) => write!(f, ", {u}{}", if self.upper_closed { ']' } else { ')' }),
        }
    }
}

/// A numeric constraint extracted from criteria text: range, unit, concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityTriple {
    #[serde(flatten)]
    pub range: Interval,
    /// Canonical unit id, or `dimensionless`.
    pub unit: String,
    /// Space-joined concept tokens; empty when nothing nearby qualifies.
    pub concept: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityVerdict {
    Entailment,
    Contradiction,
    NotComparable,
}

impl QuantityVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantityVerdict::Entailment => "entailment",
            QuantityVerdict::Contradiction => "contradiction",
            QuantityVerdict::NotComparable => "not_comparable",
        }
    }
}

impl fmt::Display for QuantityVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
