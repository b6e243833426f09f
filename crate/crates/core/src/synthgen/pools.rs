//! Invented code names and the global measurement catalogue.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// A pronounceable, digit-free name of three syllables not already in
/// `taken`.
pub fn fresh_name<R: Rng + ?Sized>(rng: &mut R, taken: &mut HashSet<String>) -> String {
    loop {
        let mut s = String::new();
        for _ in 0..3 {
            s.push_str(ONSETS.choose(rng).unwrap());
            s.push_str(VOWELS.choose(rng).unwrap());
        }
        if taken.insert(s.clone()) {
            return s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Code {
    pub code: String,
    pub name: String,
}

impl Code {
    pub fn new(prefix: &str, name: String) -> Self {
        Self {
            code: format!("{prefix}.{name}"),
            name,
        }
    }
}

/// Codes owned by one condition group. Groups never share codes.
#[derive(Debug, Clone)]
pub struct Group {
    pub condition: Code,
    pub diagnoses: Vec<Code>,
    pub drugs: Vec<Code>,
    pub procedures: Vec<Code>,
}

impl Group {
    pub fn treatments(&self) -> impl Iterator<Item = &Code> {
        self.drugs.iter().chain(&self.procedures)
    }
}

/// Measurement kind with a plausible value domain in its primary unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measure {
    pub concept: &'static str,
    pub unit: &'static str,
    pub lo: f64,
    pub hi: f64,
    /// Alternative surface unit and the factor converting primary values
    /// into it.
    pub alt: Option<(&'static str, f64)>,
    /// Whole numbers only.
    pub integer: bool,
    /// Criteria may omit the unit (a bare bound).
    pub bare_ok: bool,
}

pub const AGE: Measure = Measure {
    concept: "age",
    unit: "years",
    lo: 18.0,
    hi: 90.0,
    alt: None,
    integer: true,
    bare_ok: false,
};

pub const LABS: [Measure; 9] = [
    Measure {
        concept: "hba1c",
        unit: "%",
        lo: 4.5,
        hi: 13.0,
        alt: None,
        integer: false,
        bare_ok: false,
    },
    Measure {
        concept: "hemoglobin",
        unit: "g/dl",
        lo: 7.0,
        hi: 18.0,
        alt: Some(("g/l", 10.0)),
        integer: false,
        bare_ok: false,
    },
    Measure {
        concept: "egfr",
        unit: "ml/min",
        lo: 15.0,
        hi: 120.0,
        alt: None,
        integer: false,
        bare_ok: false,
    },
    Measure {
        concept: "ejection fraction",
        unit: "%",
        lo: 15.0,
        hi: 75.0,
        alt: None,
        integer: false,
        bare_ok: true,
    },
    Measure {
        concept: "bmi",
        unit: "kg/m2",
        lo: 16.0,
        hi: 45.0,
        alt: None,
        integer: false,
        bare_ok: false,
    },
    Measure {
        concept: "systolic blood pressure",
        unit: "mmhg",
        lo: 90.0,
        hi: 200.0,
        alt: None,
        integer: false,
        bare_ok: false,
    },
    Measure {
        concept: "ldl cholesterol",
        unit: "mmol/l",
        lo: 1.0,
        hi: 6.0,
        alt: None,
        integer: false,
        bare_ok: false,
    },
    Measure {
        concept: "platelet count",
        unit: "x10^9/l",
        lo: 50.0,
        hi: 450.0,
        alt: None,
        integer: false,
        bare_ok: false,
    },
    Measure {
        concept: "creatinine",
        unit: "mg/dl",
        lo: 0.4,
        hi: 4.0,
        alt: Some(("mg/l", 10.0)),
        integer: false,
        bare_ok: false,
    },
];

/// Every measure a patient carries, age first.
pub fn all_measures() -> impl Iterator<Item = &'static Measure> {
    std::iter::once(&AGE).chain(LABS.iter())
}

pub const GENDERS: [&str; 2] = ["female", "male"];
pub const COUNTRIES: [&str; 6] = ["us", "canada", "uk", "germany", "france", "japan"];
pub const GEOS: [&str; 4] = ["north", "south", "east", "west"];
pub const ETHNICITIES: [&str; 3] = ["hispanic", "nonhispanic", "unreported"];
pub const BLOOD_TYPES: [&str; 4] = ["a", "b", "ab", "o"];

/// Always-satisfied statements (consent, logistics). Inclusion texts are
/// met by everyone; exclusion texts apply to no one.
pub const FILLER_INCLUSION: [&str; 4] = [
    "willing to provide informed consent",
    "able to comply with scheduled study visits",
    "life expectancy judged adequate by the investigator",
    "willing to follow study procedures",
];
pub const FILLER_EXCLUSION: [&str; 3] = [
    "unable to provide informed consent",
    "participation in another interventional study",
    "unwilling to follow study procedures",
];
