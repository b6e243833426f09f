//! Synthetic trials, patients and oracle labels.
//!
//! Trials belong to condition groups with disjoint code vocabularies. Every
//! trial opens with the inclusion "diagnosis of {condition}" and adds 2-9
//! statements rendered from rules (code presence, gender, measurement or
//! age ranges, consent filler). Each patient is generated against a home
//! trial as either a satisfier or a violator of exactly one statement, and
//! contributes:
//!
//! * `matched_per_patient` examples on subsets of the home trial (always
//!   keeping statement 0); for violators, `violating_per_patient` of them
//!   contain the violated statement;
//! * `neutral_per_patient` examples against trials of other groups.
//!
//! Labels always come from [`label_oracle`] on the rules, never from text.

mod pools;
mod rules;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use pools::{all_measures, Code, Group, Measure, AGE, LABS};
pub use rules::{fmt_num, label_oracle, OracleRule, Predicate};

use crate::datamodel::{
    CriterionKind, Dataset, Demographics, EcStatement, Label, LabeledExample, Measurement,
    PatientRecord, TrialCriteria, Visit,
};
use crate::error::{EnrollError, Result};
use crate::nir::{Interval, UnitTable};

/// Ages are measured at this calendar year.
pub const REFERENCE_YEAR: i32 = 2024;

/// Per-class share bounds enforced on generated label histograms.
pub const MIN_CLASS_SHARE: f64 = 0.23;
pub const MAX_CLASS_SHARE: f64 = 0.43;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub trials: usize,
    pub patients: usize,
    pub groups: usize,
    pub min_statements: usize,
    pub max_statements: usize,
    /// Probability that a non-condition statement is a numeric criterion.
    pub numeric_fraction: f64,
    /// Share of numeric criteria that constrain age.
    pub age_fraction: f64,
    pub mix_demographic: f64,
    pub mix_condition: f64,
    pub mix_procedure: f64,
    pub mix_drug: f64,
    pub mix_observation: f64,
    pub exclusion_fraction: f64,
    pub diagnoses_per_group: usize,
    pub drugs_per_group: usize,
    pub procedures_per_group: usize,
    pub background_diagnoses: usize,
    pub background_treatments: usize,
    pub max_visits: usize,
    pub max_treatments_per_visit: usize,
    pub satisfier_fraction: f64,
    pub matched_per_patient: usize,
    pub violating_per_patient: usize,
    pub neutral_per_patient: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: 100,
            patients: 2000,
            groups: 10,
            min_statements: 3,
            max_statements: 10,
            numeric_fraction: 0.3,
            age_fraction: 0.25,
            mix_demographic: 1.0,
            mix_condition: 2.0,
            mix_procedure: 1.0,
            mix_drug: 2.0,
            mix_observation: 1.0,
            exclusion_fraction: 0.4,
            diagnoses_per_group: 3,
            drugs_per_group: 3,
            procedures_per_group: 2,
            background_diagnoses: 3,
            background_treatments: 3,
            max_visits: 20,
            max_treatments_per_visit: 2,
            satisfier_fraction: 0.4,
            matched_per_patient: 7,
            violating_per_patient: 5,
            neutral_per_patient: 3,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EnrollError::Config(m));
        for (name, f) in [
            ("numeric_fraction", self.numeric_fraction),
            ("age_fraction", self.age_fraction),
            ("exclusion_fraction", self.exclusion_fraction),
            ("satisfier_fraction", self.satisfier_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must be in [0, 1], got {f}"));
            }
        }
        for (name, w) in [
            ("mix_demographic", self.mix_demographic),
            ("mix_condition", self.mix_condition),
            ("mix_procedure", self.mix_procedure),
            ("mix_drug", self.mix_drug),
            ("mix_observation", self.mix_observation),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be a non-negative weight"));
            }
        }
        if self.mix_demographic + self.mix_condition + self.mix_procedure + self.mix_drug <= 0.0 {
            return bad("at least one violable category needs positive weight".into());
        }
        if self.trials == 0 || self.patients == 0 || self.groups == 0 {
            return bad("trials, patients and groups must be positive".into());
        }
        if self.trials < self.groups {
            return bad(format!("{} trials cannot cover {} groups", self.trials, self.groups));
        }
        if self.neutral_per_patient > 0 && self.groups < 2 {
            return bad("neutral examples need at least two groups".into());
        }
        if self.min_statements < 2 || self.max_statements < self.min_statements {
            return bad("need 2 <= min_statements <= max_statements".into());
        }
        if self.max_visits == 0 {
            return bad("max_visits must be positive".into());
        }
        if self.violating_per_patient > self.matched_per_patient {
            return bad("violating_per_patient exceeds matched_per_patient".into());
        }
        if self.diagnoses_per_group == 0 || self.drugs_per_group == 0 || self.procedures_per_group == 0 {
            return bad("per-group vocabularies must be non-empty".into());
        }
        let cap = self.statement_capacity();
        if cap < self.max_statements {
            return bad(format!(
                "max_statements {} exceeds the {cap} distinct statements the enabled categories can supply",
                self.max_statements
            ));
        }
        Ok(())
    }

    /// Most distinct statements one trial can hold: every statement names
    /// a different code or measure, except fillers and the single gender
    /// rule.
    pub fn statement_capacity(&self) -> usize {
        let mut cap = 1;
        if self.numeric_fraction > 0.0 {
            if self.age_fraction > 0.0 {
                cap += 1;
            }
            if self.age_fraction < 1.0 {
                cap += LABS.len();
            }
        }
        if self.numeric_fraction < 1.0 {
            if self.mix_observation > 0.0 {
                return usize::MAX;
            }
            let on = |w: f64, n: usize| if w > 0.0 { n } else { 0 };
            cap += on(self.mix_demographic, 1)
                + on(self.mix_condition, self.diagnoses_per_group)
                + on(self.mix_procedure, self.procedures_per_group)
                + on(self.mix_drug, self.drugs_per_group);
        }
        cap
    }

    /// Parses flat `key = value` lines (`#` comments); unset keys keep
    /// their defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| EnrollError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EnrollError::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn to_kv_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

/// A generated dataset plus the rules behind every statement.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    /// Rules per trial id, aligned with the trial's statements.
    pub rules: BTreeMap<String, Vec<OracleRule>>,
    pub groups: Vec<Group>,
    /// Examples dropped to keep the label histogram within bounds.
    pub dropped: usize,
}

impl Generated {
    pub fn rules_for(&self, ex: &LabeledExample) -> Result<Vec<&OracleRule>> {
        let trial = self
            .dataset
            .trial(&ex.trial_id)
            .ok_or_else(|| EnrollError::Validation(format!("unknown trial `{}`", ex.trial_id)))?;
        let rules = &self.rules[&ex.trial_id];
        ex.statement_ids
            .iter()
            .map(|sid| {
                trial
                    .statements
                    .iter()
                    .position(|s| &s.id == sid)
                    .map(|i| &rules[i])
                    .ok_or_else(|| EnrollError::Validation(format!("unknown statement `{sid}`")))
            })
            .collect()
    }
}

fn make_groups<R: Rng + ?Sized>(rng: &mut R, cfg: &GenConfig, taken: &mut HashSet<String>) -> Vec<Group> {
    (0..cfg.groups)
        .map(|_| Group {
            condition: Code::new("dx", pools::fresh_name(rng, taken)),
            diagnoses: (0..cfg.diagnoses_per_group)
                .map(|_| Code::new("dx", pools::fresh_name(rng, taken)))
                .collect(),
            drugs: (0..cfg.drugs_per_group)
                .map(|_| Code::new("rx", pools::fresh_name(rng, taken)))
                .collect(),
            procedures: (0..cfg.procedures_per_group)
                .map(|_| Code::new("px", pools::fresh_name(rng, taken)))
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Demographic,
    Condition,
    Procedure,
    Drug,
    Observation,
}

fn round_to(x: f64, integer: bool) -> f64 {
    if integer {
        x.round()
    } else {
        (x * 10.0).round() / 10.0
    }
}

fn measure_rule<R: Rng + ?Sized>(rng: &mut R, m: &Measure, kind: CriterionKind) -> OracleRule {
    let (unit, factor) = match m.alt {
        Some((alt, f)) if rng.random_bool(0.3) => (alt, f),
        _ => (m.unit, 1.0),
    };
    let show_unit = !(m.bare_ok && unit == m.unit && rng.random_bool(0.5));
    let (lo, hi) = (m.lo * factor, m.hi * factor);
    let span = hi - lo;
    let at = |rng: &mut R, a: f64, b: f64| round_to(lo + span * rng.random_range(a..b), m.integer);
    let range = match rng.random_range(0..5) {
        0 => Interval::above(at(rng, 0.25, 0.75), false),
        1 => Interval::above(at(rng, 0.25, 0.75), true),
        2 => Interval::below(at(rng, 0.25, 0.75), false),
        3 => Interval::below(at(rng, 0.25, 0.75), true),
        _ => {
            let a = at(rng, 0.15, 0.4);
            let b = at(rng, 0.6, 0.85);
            Interval::closed(a, b)
        }
    };
    OracleRule {
        kind,
        predicate: Predicate::Measure {
            concept: m.concept.to_string(),
            range,
            unit: unit.to_string(),
            show_unit,
        },
        phrasing: rng.random_range(0..rules::PHRASINGS_MEASURE),
    }
}

/// One trial for `group`: the condition statement plus rule-rendered
/// statements.
pub fn gen_trial<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &GenConfig,
    trial_id: &str,
    group: &Group,
) -> (TrialCriteria, Vec<OracleRule>) {
    let n = rng.random_range(cfg.min_statements..=cfg.max_statements);
    let mut rules = vec![OracleRule {
        kind: CriterionKind::Inclusion,
        predicate: Predicate::HasDiagnosis {
            code: group.condition.code.clone(),
            name: group.condition.name.clone(),
        },
        phrasing: 0,
    }];
    let mut used_codes: HashSet<String> = HashSet::new();
    let mut used_measures: HashSet<&str> = HashSet::new();
    let mut gender_used = false;

    while rules.len() < n {
        let kind = if rng.random_bool(cfg.exclusion_fraction) {
            CriterionKind::Exclusion
        } else {
            CriterionKind::Inclusion
        };
        if rng.random_bool(cfg.numeric_fraction) {
            let m = if rng.random_bool(cfg.age_fraction) {
                &AGE
            } else {
                LABS.choose(rng).unwrap()
            };
            if used_measures.insert(m.concept) {
                rules.push(measure_rule(rng, m, kind));
            }
            continue;
        }
        // the first added statement must be violable
        let filler_weight = if rules.len() == 1 { 0.0 } else { cfg.mix_observation };
        let cats = [
            (Category::Demographic, cfg.mix_demographic),
            (Category::Condition, cfg.mix_condition),
            (Category::Procedure, cfg.mix_procedure),
            (Category::Drug, cfg.mix_drug),
            (Category::Observation, filler_weight),
        ];
        let cat = cats.choose_weighted(rng, |c| c.1).unwrap().0;
        let pick_code = |rng: &mut R, pool: &[Code], used: &mut HashSet<String>| -> Option<Code> {
            let free: Vec<&Code> = pool.iter().filter(|c| !used.contains(&c.code)).collect();
            let c = (*free.choose(rng)?).clone();
            used.insert(c.code.clone());
            Some(c)
        };
        let predicate = match cat {
            Category::Demographic if !gender_used => {
                gender_used = true;
                Predicate::Gender(pools::GENDERS.choose(rng).unwrap().to_string())
            }
            Category::Condition => match pick_code(rng, &group.diagnoses, &mut used_codes) {
                Some(c) => Predicate::HasDiagnosis {
                    code: c.code,
                    name: c.name,
                },
                None => continue,
            },
            Category::Procedure | Category::Drug => {
                let procedure = cat == Category::Procedure;
                let pool = if procedure { &group.procedures } else { &group.drugs };
                match pick_code(rng, pool, &mut used_codes) {
                    Some(c) => Predicate::HasTreatment {
                        code: c.code,
                        name: c.name,
                        procedure,
                    },
                    None => continue,
                }
            }
            Category::Observation => Predicate::Filler,
            Category::Demographic => continue,
        };
        let phrasing = match &predicate {
            Predicate::HasDiagnosis { .. } => rng.random_range(1..rules::PHRASINGS_DIAGNOSIS),
            Predicate::HasTreatment { procedure: false, .. } => rng.random_range(0..rules::PHRASINGS_DRUG),
            Predicate::HasTreatment { procedure: true, .. } => {
                rng.random_range(0..rules::PHRASINGS_PROCEDURE)
            }
            Predicate::Gender(_) => rng.random_range(0..rules::PHRASINGS_GENDER),
            _ => rng.random_range(0..pools::FILLER_INCLUSION.len()),
        };
        rules.push(OracleRule {
            kind,
            predicate,
            phrasing,
        });
    }

    let statements = rules
        .iter()
        .enumerate()
        .map(|(i, r)| EcStatement {
            id: format!("s{i}"),
            kind: r.kind,
            text: r.render(),
        })
        .collect();
    (
        TrialCriteria {
            trial_id: trial_id.to_string(),
            condition: group.condition.name.clone(),
            statements,
        },
        rules,
    )
}

fn is_violable(r: &OracleRule) -> bool {
    !matches!(r.predicate, Predicate::Filler)
}

/// Draws a value of `m` in `unit` (its primary or alternative surface).
/// With a target, the value lies inside/outside the rule range as asked
/// and clear of every finite bound by 1% of the domain.
fn sample_value<R: Rng + ?Sized>(
    rng: &mut R,
    m: &Measure,
    unit: &str,
    target: Option<(&Interval, &str, bool)>,
    units: &UnitTable,
) -> Result<f64> {
    let factor = if unit == m.unit { 1.0 } else { m.alt.map_or(1.0, |a| a.1) };
    let integer = m.integer;
    for _ in 0..10_000 {
        let x = round_to(rng.random_range(m.lo..m.hi) * factor, integer);
        let Some((range, rule_unit, inside)) = target else {
            return Ok(x);
        };
        let (v, _) = units.normalize(x, unit)?;
        let scale = units
            .lookup(rule_unit)
            .ok_or_else(|| EnrollError::UnknownUnit(rule_unit.to_string()))?
            .scale;
        let bounds = range.scaled(scale);
        let margin = 0.01 * (m.hi - m.lo) * factor * units.lookup(unit).map_or(1.0, |u| u.scale);
        let clear = [bounds.lower, bounds.upper]
            .iter()
            .flatten()
            .all(|b| (v - b).abs() >= margin);
        if clear && bounds.contains(v) == inside {
            return Ok(x);
        }
    }
    Err(EnrollError::Validation(format!(
        "could not place a {} value for {range:?}",
        m.concept,
        range = target.map(|t| *t.0)
    )))
}

struct Background {
    diagnoses: Vec<Code>,
    treatments: Vec<Code>,
}

/// A patient satisfying every home-trial rule except `violated`.
#[allow(clippy::too_many_arguments)]
fn gen_patient<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &GenConfig,
    patient_id: &str,
    rules: &[OracleRule],
    violated: Option<usize>,
    group: &Group,
    background: &Background,
    units: &UnitTable,
) -> Result<PatientRecord> {
    let mut req_dx: Vec<String> = Vec::new();
    let mut req_tx: Vec<String> = Vec::new();
    let mut forbid: HashSet<String> = HashSet::new();
    let mut gender: Option<String> = None;
    let mut targets: HashMap<&str, (&Interval, &str, bool)> = HashMap::new();
    for (k, r) in rules.iter().enumerate() {
        let satisfy = violated != Some(k);
        let holds = match r.kind {
            CriterionKind::Inclusion => satisfy,
            CriterionKind::Exclusion => !satisfy,
        };
        match &r.predicate {
            Predicate::HasDiagnosis { code, .. } if holds => req_dx.push(code.clone()),
            Predicate::HasTreatment { code, .. } if holds => req_tx.push(code.clone()),
            Predicate::HasDiagnosis { code, .. } | Predicate::HasTreatment { code, .. } => {
                forbid.insert(code.clone());
            }
            Predicate::Gender(g) => {
                let other = pools::GENDERS.iter().find(|x| **x != g).unwrap();
                gender = Some(if holds { g.clone() } else { other.to_string() });
            }
            Predicate::Measure {
                concept,
                range,
                unit,
                ..
            } => {
                targets.insert(concept.as_str(), (range, unit.as_str(), holds));
            }
            Predicate::Filler => {}
        }
    }

    let dx_pool: Vec<&Code> = std::iter::once(&group.condition)
        .chain(&group.diagnoses)
        .chain(&background.diagnoses)
        .filter(|c| !forbid.contains(&c.code))
        .collect();
    let tx_pool: Vec<&Code> = group
        .treatments()
        .chain(&background.treatments)
        .filter(|c| !forbid.contains(&c.code))
        .collect();

    // short histories are more common than long ones
    let a = rng.random_range(1..=cfg.max_visits);
    let b = rng.random_range(1..=cfg.max_visits);
    let n_visits = a.min(b).max(req_dx.len());
    let mut slots: Vec<usize> = (0..n_visits).collect();
    slots.shuffle(rng);
    let mut diagnoses: Vec<String> = (0..n_visits)
        .map(|_| dx_pool.choose(rng).unwrap().code.clone())
        .collect();
    for (code, &slot) in req_dx.iter().zip(&slots) {
        diagnoses[slot] = code.clone();
    }
    let mut treatments: Vec<Vec<String>> = (0..n_visits)
        .map(|_| {
            let k = rng.random_range(0..=cfg.max_treatments_per_visit);
            tx_pool
                .choose_multiple(rng, k)
                .map(|c| c.code.clone())
                .collect()
        })
        .collect();
    for code in &req_tx {
        let v = rng.random_range(0..n_visits);
        if !treatments[v].contains(code) {
            treatments[v].push(code.clone());
        }
    }

    let mut measurements: Vec<Vec<Measurement>> = vec![Vec::new(); n_visits];
    let mut age = 0.0;
    for m in all_measures() {
        let unit = match m.alt {
            Some((alt, _)) if rng.random_bool(0.5) => alt,
            _ => m.unit,
        };
        let value = sample_value(rng, m, unit, targets.get(m.concept).copied(), units)?;
        if m.concept == AGE.concept {
            age = value;
        }
        measurements[rng.random_range(0..n_visits)].push(Measurement {
            concept: m.concept.to_string(),
            value,
            unit: unit.to_string(),
            unknown_unit: false,
        });
    }

    let start = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
    let mut date = start + Days::new(rng.random_range(0..3000));
    let mut visits = Vec::with_capacity(n_visits);
    for (i, ((diagnosis, treatments), measurements)) in
        diagnoses.into_iter().zip(treatments).zip(measurements).enumerate()
    {
        visits.push(Visit {
            visit_id: format!("v{:02}", i + 1),
            date,
            diagnosis,
            treatments,
            measurements,
        });
        date = date + Days::new(rng.random_range(7..200));
    }

    let demographics = Demographics {
        birth_year: REFERENCE_YEAR - age as i32,
        gender: gender.unwrap_or_else(|| pools::GENDERS.choose(rng).unwrap().to_string()),
        country: pools::COUNTRIES.choose(rng).unwrap().to_string(),
        geo: pools::GEOS.choose(rng).unwrap().to_string(),
        ethnicity: pools::ETHNICITIES.choose(rng).unwrap().to_string(),
        blood_type: pools::BLOOD_TYPES.choose(rng).unwrap().to_string(),
    };
    Ok(PatientRecord {
        patient_id: patient_id.to_string(),
        demographics,
        visits,
    })
}

/// Statement 0 plus each other statement with probability 1/2, with
/// optional forced membership of one index.
fn subset<R: Rng + ?Sized>(rng: &mut R, n: usize, force_in: Option<usize>, force_out: Option<usize>) -> Vec<usize> {
    let mut out = vec![0];
    for i in 1..n {
        let keep = if Some(i) == force_in {
            true
        } else if Some(i) == force_out {
            false
        } else {
            rng.random_bool(0.5)
        };
        if keep {
            out.push(i);
        }
    }
    out
}

fn label_histogram(examples: &[LabeledExample]) -> [usize; 3] {
    let mut h = [0; 3];
    for e in examples {
        h[e.label.index()] += 1;
    }
    h
}

/// Drops random examples of the largest class until every class share is
/// within bounds. Skipped when a class is absent altogether.
fn enforce_balance<R: Rng + ?Sized>(rng: &mut R, examples: &mut Vec<LabeledExample>) -> usize {
    let mut dropped = 0;
    loop {
        let h = label_histogram(examples);
        let total = examples.len() as f64;
        if h.contains(&0) {
            return dropped;
        }
        let share = |k: usize| h[k] as f64 / total;
        if (0..3).all(|k| (MIN_CLASS_SHARE..=MAX_CLASS_SHARE).contains(&share(k))) {
            return dropped;
        }
        let big = (0..3).max_by_key(|&k| (h[k], std::cmp::Reverse(k))).unwrap();
        let idx: Vec<usize> = (0..examples.len())
            .filter(|&i| examples[i].label.index() == big)
            .collect();
        let victim = *idx.choose(rng).unwrap();
        examples.remove(victim);
        dropped += 1;
    }
}

pub fn gen_dataset(cfg: &GenConfig, units: &UnitTable) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = HashSet::new();
    let groups = make_groups(&mut rng, cfg, &mut taken);
    let background = Background {
        diagnoses: (0..cfg.background_diagnoses)
            .map(|_| Code::new("dx", pools::fresh_name(&mut rng, &mut taken)))
            .collect(),
        treatments: (0..cfg.background_treatments)
            .map(|_| Code::new("rx", pools::fresh_name(&mut rng, &mut taken)))
            .collect(),
    };

    let width = cfg.trials.to_string().len().max(3);
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut rules: BTreeMap<String, Vec<OracleRule>> = BTreeMap::new();
    let mut trial_group = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let g = t % cfg.groups;
        let id = format!("T{:0width$}", t + 1);
        let (trial, r) = gen_trial(&mut rng, cfg, &id, &groups[g]);
        rules.insert(id, r);
        trials.push(trial);
        trial_group.push(g);
    }

    let pwidth = cfg.patients.to_string().len().max(4);
    let mut patients = Vec::with_capacity(cfg.patients);
    let mut examples = Vec::new();
    for p in 0..cfg.patients {
        let home = rng.random_range(0..cfg.trials);
        let g = trial_group[home];
        let trial = &trials[home];
        let trial_rules = &rules[&trial.trial_id];
        let violable: Vec<usize> = (1..trial_rules.len())
            .filter(|&i| is_violable(&trial_rules[i]))
            .collect();
        let violated = if rng.random_bool(cfg.satisfier_fraction) {
            None
        } else {
            violable.choose(&mut rng).copied()
        };
        let pid = format!("P{:0pwidth$}", p + 1);
        let patient = gen_patient(&mut rng, cfg, &pid, trial_rules, violated, &groups[g], &background, units)?;

        let n = trial.statements.len();
        let mut subsets = Vec::new();
        for k in 0..cfg.matched_per_patient {
            let s = match violated {
                Some(v) if k < cfg.violating_per_patient => subset(&mut rng, n, Some(v), None),
                Some(v) => subset(&mut rng, n, None, Some(v)),
                None => subset(&mut rng, n, None, None),
            };
            subsets.push((home, s));
        }
        let others: Vec<usize> = (0..cfg.trials).filter(|&t| trial_group[t] != g).collect();
        for _ in 0..cfg.neutral_per_patient {
            let t = *others.choose(&mut rng).unwrap();
            let s = subset(&mut rng, trials[t].statements.len(), None, None);
            subsets.push((t, s));
        }

        for (t, s) in subsets {
            let tr = &trials[t];
            let tr_rules = &rules[&tr.trial_id];
            let selected: Vec<&OracleRule> = s.iter().map(|&i| &tr_rules[i]).collect();
            let label = label_oracle(&selected, &patient, units);
            let expected = if t != home {
                Label::Neutral
            } else if violated.is_some_and(|v| s.contains(&v)) {
                Label::Contradiction
            } else {
                Label::Entailment
            };
            if label != expected {
                return Err(EnrollError::Validation(format!(
                    "oracle gave {label} for {pid} on {} {:?}, generator intended {expected}",
                    tr.trial_id, s
                )));
            }
            examples.push(LabeledExample {
                trial_id: tr.trial_id.clone(),
                statement_ids: s.iter().map(|&i| tr.statements[i].id.clone()).collect(),
                patient_id: pid.clone(),
                label,
            });
        }
        patients.push(patient);
    }

    let dropped = enforce_balance(&mut rng, &mut examples);
    Ok(Generated {
        dataset: Dataset::new(trials, patients, examples)?,
        rules,
        groups,
        dropped,
    })
}
