//! Property tests over random seeds for every module's invariants.

mod common;

use std::collections::BTreeSet;

use enroll_core::aligner::Aligner;
use enroll_core::datamodel::{split_dataset, Dataset, Label, LabeledExample, Vocabularies, Vocabulary};
use enroll_core::ec_encoder::{hash_bucket, statement_tokens, PremiseEncoder};
use enroll_core::matcher::{decide, Matcher};
use enroll_core::model::Model;
use enroll_core::nir::{Interval, Nir, QuantityTriple, QuantityVerdict, UnitTable};
use enroll_core::numkernel::{sgd_step, softmax, ParameterStore, Tape, Tensor};
use enroll_core::pipeline::build_spec;
use enroll_core::synthgen::{gen_dataset, label_oracle, GenConfig, Predicate};
use enroll_core::trainer::{accuracy, confusion, evaluate, fit, lr_schedule, micro_f1, LrStep, Scored, TrainConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u32 = 100;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rows(r: &mut ChaCha8Rng, t: &mut Tape, k: usize, dim: usize) -> Vec<enroll_core::numkernel::Var> {
    (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            t.input(v)
        })
        .collect()
}

fn tiny_gen(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        trials: 6,
        patients: 40,
        groups: 3,
        ..GenConfig::default()
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    // ---- numkernel ----

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        xs in prop::collection::vec(-30.0f64..30.0, 1..12),
        c in -100.0f64..100.0,
    ) {
        let p = softmax(&Tensor::vector(xs.clone()));
        let sum: f64 = p.data().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(p.data().iter().all(|&x| x > 0.0 && x <= 1.0));
        let shifted = softmax(&Tensor::vector(xs.iter().map(|x| x + c).collect()));
        prop_assert!(close(p.data(), shifted.data(), 1e-12));
    }

    #[test]
    fn sgd_with_zero_lr_is_identity(seed in any::<u64>(), l2 in 0.0f64..1.0) {
        let mut r = rng(seed);
        let mut params = ParameterStore::new();
        let mut grads = ParameterStore::new();
        for (name, shape) in [("a", vec![3, 4]), ("b", vec![5])] {
            params.insert_gaussian(name, &shape, 1.0, &mut r).unwrap();
            grads.insert_gaussian(name, &shape, 1.0, &mut r).unwrap();
        }
        let before = params.to_bytes();
        sgd_step(&mut params, &grads, 0.0, l2).unwrap();
        prop_assert_eq!(before, params.to_bytes());
    }

    #[test]
    fn init_is_deterministic(seed in any::<u64>()) {
        let ds = common::dataset();
        let (_, a) = common::small_model(&ds, 4, seed);
        let (_, b) = common::small_model(&ds, 4, seed);
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }

    // ---- datamodel ----

    #[test]
    fn split_partitions_patients_in_proportion(
        seed in any::<u64>(),
        patients in 5usize..120,
        per in 1usize..4,
    ) {
        let mut r = rng(seed);
        let mut examples = Vec::new();
        for p in 0..patients {
            for _ in 0..r.random_range(1..=per) {
                examples.push(LabeledExample {
                    trial_id: "T1".into(),
                    statement_ids: vec!["s0".into()],
                    patient_id: format!("P{p}"),
                    label: Label::Entailment,
                });
            }
        }
        let s = split_dataset(&examples, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), examples.len());
        let ids = |xs: &[LabeledExample]| xs.iter().map(|e| e.patient_id.clone()).collect::<BTreeSet<_>>();
        let (a, b, c) = (ids(&s.train), ids(&s.validation), ids(&s.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        prop_assert_eq!(a.len() + b.len() + c.len(), patients);
        let n = patients as f64;
        prop_assert!((a.len() as f64 - 0.6 * n).abs() <= 1.0);
        prop_assert!((b.len() as f64 - 0.2 * n).abs() <= 1.0);
        prop_assert!((c.len() as f64 - 0.2 * n).abs() <= 1.0);
    }

    #[test]
    fn vocabulary_is_a_bijection_with_unk(codes in prop::collection::vec("[a-e]{1,3}", 0..30), probe in "[a-z]{4}") {
        let v = Vocabulary::from_codes(codes.iter().cloned());
        prop_assert_eq!(v.len(), codes.iter().collect::<BTreeSet<_>>().len());
        for i in 0..v.len() {
            prop_assert_eq!(v.index(v.code(i).unwrap()), Some(i));
        }
        prop_assert_eq!(v.index_or_unk(&probe), v.unk_index());
        prop_assert_eq!(v.unk_index(), v.len());
    }

    // ---- ec_encoder ----

    #[test]
    fn trial_rows_match_sentence_encodings(seed in any::<u64>(), token in "[a-z]{3,9}", buckets in 1usize..50) {
        let ds = common::dataset();
        let (model, params) = common::small_model(&ds, 4, seed);
        let trial = &ds.trials[0];
        let mut t = Tape::new(&params);
        let rows = model.premise.encode_trial(&mut t, trial).unwrap();
        prop_assert_eq!(rows.len(), trial.statements.len());
        let PremiseEncoder::Trainable(enc) = &model.premise else { unreachable!() };
        for (row, s) in rows.iter().zip(&trial.statements) {
            let mut t2 = Tape::new(&params);
            let one = enc.encode_sentence(&mut t2, &statement_tokens(s)).unwrap();
            prop_assert_eq!(t.value(*row), t2.value(one));
        }
        prop_assert_eq!(hash_bucket(&token, buckets), hash_bucket(&token, buckets));
        prop_assert!(hash_bucket(&token, buckets) < buckets);
    }

    // ---- ehr_encoder ----

    #[test]
    fn zero_code_embedding_absorbs_treatment_interaction(seed in any::<u64>()) {
        let ds = common::dataset();
        let (model, params) = common::small_model(&ds, 4, seed);
        let mut t = Tape::new(&params);
        let mut r = rng(seed);
        let z = params.by_name("ehr.w_m").unwrap().shape()[1];
        let zero = t.input(vec![0.0; z]);
        let other = random_rows(&mut r, &mut t, 1, z)[0];
        let g1 = model.ehr.treatment_interaction(&mut t, zero, other).unwrap();
        let g2 = model.ehr.treatment_interaction(&mut t, other, zero).unwrap();
        prop_assert!(t.value(g1).iter().all(|&x| x == 0.0));
        prop_assert!(t.value(g2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn visit_and_patient_embeddings_ignore_order(seed in any::<u64>()) {
        let ds = common::dataset();
        let (model, params) = common::small_model(&ds, 4, seed);
        let mut r = rng(seed);
        let mut treatments = vec!["rx.pemo", "px.tali", "rx.konoro", "rx.unseen"];
        let mut t = Tape::new(&params);
        let a = model.ehr.visit_embed(&mut t, "dx.gofusi", &treatments).unwrap();
        treatments.shuffle(&mut r);
        let b = model.ehr.visit_embed(&mut t, "dx.gofusi", &treatments).unwrap();
        prop_assert!(close(t.value(a), t.value(b), 1e-12));

        let dim = t.value(a).len();
        let mut demo = random_rows(&mut r, &mut t, 3, params.by_name("ehr.w_p1").unwrap().shape()[1]);
        let mut visits = random_rows(&mut r, &mut t, 5, dim);
        let h1 = model.ehr.patient_embed(&mut t, &demo, &visits).unwrap();
        demo.shuffle(&mut r);
        visits.shuffle(&mut r);
        let h2 = model.ehr.patient_embed(&mut t, &demo, &visits).unwrap();
        prop_assert!(close(t.value(h1), t.value(h2), 1e-12));
    }

    // ---- aligner ----

    #[test]
    fn aligned_vectors_are_convex_combinations(seed in any::<u64>(), m in 1usize..6, n in 1usize..6) {
        let ds = common::dataset();
        let (model, params) = common::small_model(&ds, 4, seed);
        let mut r = rng(seed);
        let mut t = Tape::new(&params);
        let u = random_rows(&mut r, &mut t, m, 4);
        let v = random_rows(&mut r, &mut t, n, 4);
        let scores = model.aligner.attention_scores(&mut t, &u, &v).unwrap();
        let a = Aligner::soft_align(&mut t, &scores, &u, &v).unwrap();
        let check = |t: &Tape, weights: &[enroll_core::numkernel::Var], mixed: &[enroll_core::numkernel::Var], rows: &[enroll_core::numkernel::Var]| {
            for (w, x) in weights.iter().zip(mixed) {
                let w = t.value(*w);
                assert_eq!(w.len(), rows.len());
                assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(w.iter().all(|&x| x >= 0.0));
                for k in 0..4 {
                    let expect: f64 = w.iter().zip(rows).map(|(wj, r)| wj * t.value(*r)[k]).sum();
                    let lo = rows.iter().map(|r| t.value(*r)[k]).fold(f64::INFINITY, f64::min);
                    let hi = rows.iter().map(|r| t.value(*r)[k]).fold(f64::NEG_INFINITY, f64::max);
                    let got = t.value(*x)[k];
                    assert!((got - expect).abs() <= 1e-12);
                    assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
                }
            }
        };
        check(&t, &a.beta_weights, &a.beta, &v);
        check(&t, &a.alpha_weights, &a.alpha, &u);
    }

    #[test]
    fn aligner_is_permutation_equivariant(seed in any::<u64>(), m in 1usize..6, n in 1usize..6) {
        let ds = common::dataset();
        let (model, params) = common::small_model(&ds, 4, seed);
        let mut r = rng(seed);
        let mut t = Tape::new(&params);
        let u = random_rows(&mut r, &mut t, m, 4);
        let v = random_rows(&mut r, &mut t, n, 4);
        let out = model.aligner.forward(&mut t, &u, &v, None).unwrap();
        let mut pu: Vec<usize> = (0..m).collect();
        let mut pv: Vec<usize> = (0..n).collect();
        pu.shuffle(&mut r);
        pv.shuffle(&mut r);
        let u2: Vec<_> = pu.iter().map(|&i| u[i]).collect();
        let v2: Vec<_> = pv.iter().map(|&j| v[j]).collect();
        let out2 = model.aligner.forward(&mut t, &u2, &v2, None).unwrap();

        // per-row comparisons follow the permutation
        let aligned = |out: &enroll_core::aligner::AlignOutput, t: &mut Tape, u: &[_], v: &[_]| {
            let mut c = 0;
            model.aligner.compare(t, u, &out.aligned, v, &mut c).unwrap()
        };
        let (r1, r2) = aligned(&out, &mut t, &u, &v);
        let (s1, s2) = aligned(&out2, &mut t, &u2, &v2);
        for (k, &i) in pu.iter().enumerate() {
            prop_assert!(close(t.value(s1[k]), t.value(r1[i]), 1e-12));
        }
        for (k, &j) in pv.iter().enumerate() {
            prop_assert!(close(t.value(s2[k]), t.value(r2[j]), 1e-12));
        }
        let p1 = enroll_core::aligner::EntailmentOutput::from_logits(t.value(out.logits)).unwrap();
        let p2 = enroll_core::aligner::EntailmentOutput::from_logits(t.value(out2.logits)).unwrap();
        prop_assert!(close(&p1.probs, &p2.probs, 1e-10));
        let mut sorted = p1.probs;
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted[0] - sorted[1] > 1e-9 {
            prop_assert_eq!(p1.label, p2.label);
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_earlier_labels(a in -5i32..5, b in -5i32..5, c in -5i32..5) {
        let s = [a as f64, b as f64, c as f64];
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = s.iter().position(|&x| x == max).unwrap();
        prop_assert_eq!(Label::argmax(&s), Label::ALL[first]);
    }

    // ---- nir ----

    #[test]
    fn compare_quantity_is_trichotomous_and_unit_consistent(
        lo in -1000.0f64..1000.0,
        width in 0.0f64..500.0,
        closed in any::<(bool, bool)>(),
        shape in 0usize..3,
        value in -2000.0f64..2000.0,
    ) {
        let nir = Nir::default();
        let range = match shape {
            0 => Interval::above(lo, closed.0),
            1 => Interval::below(lo, closed.1),
            _ => Interval { lower: Some(lo), lower_closed: closed.0, upper: Some(lo + width), upper_closed: closed.1 },
        };
        prop_assume!(range.is_valid());
        let ec = QuantityTriple { range, unit: "mg".into(), concept: "dose".into() };
        let mg = nir.compare_quantity(&ec, value, "mg");
        prop_assert_ne!(mg, QuantityVerdict::NotComparable);
        prop_assert_eq!(mg == QuantityVerdict::Entailment, range.contains(value));
        // the same amount in grams; skip values whose scaling is inexact
        let g = value / 1000.0;
        prop_assume!(g * 1000.0 == value && (g * 1.0) * 1000.0 == value);
        let in_g = nir.compare_quantity(&ec, g, "g");
        let ehr_exact = range.scaled(0.001).contains(g) == range.contains(value);
        prop_assume!(ehr_exact);
        prop_assert_eq!(mg, in_g);
    }

    #[test]
    fn raising_an_upper_bound_never_breaks_entailment(
        lo in -100.0f64..100.0,
        width in 0.0f64..100.0,
        raise in 0.0f64..100.0,
        value in -200.0f64..300.0,
    ) {
        let nir = Nir::default();
        let r1 = Interval::closed(lo, lo + width);
        let r2 = Interval::closed(lo, lo + width + raise);
        let q = |r| QuantityTriple { range: r, unit: "kg".into(), concept: "weight".into() };
        let before = nir.compare_quantity(&q(r1), value, "kg");
        let after = nir.compare_quantity(&q(r2), value, "kg");
        if before == QuantityVerdict::Entailment {
            prop_assert_eq!(after, QuantityVerdict::Entailment);
        }
    }

    #[test]
    fn extraction_is_deterministic(
        concept in prop::sample::select(vec!["hemoglobin", "ejection fraction", "creatinine", "age", "dose"]),
        cmp in prop::sample::select(vec!["more than", "at least", "less than", "no more than", "≤", ">=", "within", "greater than or equal to"]),
        x in 0u32..500,
        unit in prop::sample::select(vec!["mg", "g/dl", "%", "weeks", "years", "", "months"]),
    ) {
        let nir = Nir::default();
        let text = format!("{concept} {cmp} {x} {unit}");
        prop_assert_eq!(nir.extract_quantities(&text), nir.extract_quantities(&text));
    }

    // ---- matcher ----

    #[test]
    fn disabling_nir_only_changes_neural_entailments(seed in 0u64..1_000_000) {
        let generated = gen_dataset(&GenConfig { numeric_fraction: 0.8, ..tiny_gen(seed) }, &UnitTable::default()).unwrap();
        let ds = &generated.dataset;
        let spec = build_spec(ds, &ds.examples, common::small_config(4)).unwrap();
        let (model, params) = Model::init(spec, seed).unwrap();
        let nir = Nir::default();
        let on = Matcher { model: &model, params: &params, nir: &nir, use_nir: true };
        let off = Matcher { model: &model, params: &params, nir: &nir, use_nir: false };
        let sample: Vec<_> = ds.examples.iter().take(25).cloned().collect();
        let a = on.match_all(ds, &sample).unwrap();
        let b = off.match_all(ds, &sample).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.neural_label(), y.neural_label());
            prop_assert_eq!(y.final_label, y.neural_label());
            if x.final_label != y.final_label {
                prop_assert_eq!(x.neural_label(), Label::Entailment);
            }
        }
    }

    // ---- synthgen ----

    #[test]
    fn oracle_reproduces_every_stored_label(seed in any::<u64>()) {
        let units = UnitTable::default();
        let g = gen_dataset(&tiny_gen(seed), &units).unwrap();
        prop_assert!(!g.dataset.examples.is_empty());
        for ex in &g.dataset.examples {
            let rules = g.rules_for(ex).unwrap();
            let patient = g.dataset.patient(&ex.patient_id).unwrap();
            prop_assert_eq!(label_oracle(&rules, patient, &units), ex.label);
        }
    }

    #[test]
    fn crossing_a_numeric_bound_flips_the_label(seed in any::<u64>()) {
        let units = UnitTable::default();
        let g = gen_dataset(&GenConfig { numeric_fraction: 0.8, ..tiny_gen(seed) }, &units).unwrap();
        let mut checked = 0;
        for ex in &g.dataset.examples {
            let rules = g.rules_for(ex).unwrap();
            let patient = g.dataset.patient(&ex.patient_id).unwrap();
            for (k, rule) in rules.iter().enumerate() {
                let Predicate::Measure { concept, range, unit, .. } = &rule.predicate else { continue };
                let others_ok = rules.iter().enumerate().all(|(j, r)| j == k || r.satisfied(patient, &units));
                if !others_ok || label_oracle(&rules, patient, &units) == Label::Neutral {
                    continue;
                }
                let inside = range.lower.zip(range.upper).map(|(a, b)| (a + b) / 2.0)
                    .or(range.lower.map(|a| a + 1.0))
                    .or(range.upper.map(|b| b - 1.0))
                    .unwrap();
                let outside = range.lower.map(|a| a - 1.0).or(range.upper.map(|b| b + 1.0)).unwrap();
                let with_value = |x: f64| {
                    let mut p = patient.clone();
                    for v in &mut p.visits {
                        for m in &mut v.measurements {
                            if &m.concept == concept {
                                m.value = x;
                                m.unit = unit.clone();
                            }
                        }
                    }
                    p
                };
                let (pin, pout) = (with_value(inside), with_value(outside));
                if !rule.holds(&pin, &units) || rule.holds(&pout, &units) {
                    continue; // concept not recorded for this patient
                }
                let a = label_oracle(&rules, &pin, &units);
                let b = label_oracle(&rules, &pout, &units);
                prop_assert_ne!(a, b);
                prop_assert!(a != Label::Neutral && b != Label::Neutral);
                checked += 1;
            }
        }
        prop_assert!(checked > 0);
    }

    // ---- trainer ----

    #[test]
    fn lr_schedule_never_increases_and_stops(seed in any::<u64>(), dev in 1usize..50) {
        let mut r = rng(seed);
        let cfg = TrainConfig::default();
        let mut lr = cfg.lr0;
        let mut history = Vec::new();
        let mut stopped = false;
        let mut decreases = 0;
        for _ in 0..500 {
            history.push(r.random_range(0..=dev) as f64 / dev as f64);
            match lr_schedule(&history, lr, cfg.lr_divisor, cfg.stop_lr) {
                LrStep::Continue(next) => {
                    prop_assert!(next <= lr);
                    if next < lr {
                        decreases += 1;
                    }
                    lr = next;
                }
                LrStep::Stop => {
                    stopped = true;
                    break;
                }
            }
        }
        // 0.1 / 5^k drops under 1e-4 at the fifth division
        prop_assert!(decreases <= 4);
        prop_assert!(stopped || decreases < 5);
    }

    #[test]
    fn metrics_are_consistent(seed in any::<u64>(), n in 1usize..80) {
        let mut r = rng(seed);
        let gold: Vec<Label> = (0..n).map(|_| Label::ALL[r.random_range(0..3)]).collect();
        let scored: Vec<Scored> = (0..n)
            .map(|i| {
                let raw: [f64; 3] = [r.random(), r.random(), r.random()];
                let s: f64 = raw.iter().sum();
                let probs = raw.map(|x| x / s);
                Scored { trial_id: format!("T{}", i % 4), label: Label::argmax(&probs), probs }
            })
            .collect();
        let pred: Vec<Label> = scored.iter().map(|s| s.label).collect();
        prop_assert_eq!(micro_f1(&pred, &gold).unwrap(), accuracy(&pred, &gold).unwrap());
        let report = evaluate(&scored, &gold).unwrap();
        for x in [report.micro_f1, report.accuracy, report.averaged_f1, report.pr_auc] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        let cm = confusion(&pred, &gold).unwrap();
        for (k, row) in cm.iter().enumerate() {
            let expect = gold.iter().filter(|g| g.index() == k).count() as u64;
            prop_assert_eq!(row.iter().sum::<u64>(), expect);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn normalize_round_trips_every_unit(v in -1e6f64..1e6) {
        let units = UnitTable::default();
        for e in units.entries() {
            let base = units.denormalize(v, &e.surface).unwrap();
            let (back, _) = units.normalize(base, &e.surface).unwrap();
            prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn best_checkpoint_dominates_final_epoch(seed in 0u64..1_000_000) {
        let ds = common::dataset();
        let (model, params) = common::small_model(&ds, 4, seed);
        let cfg = TrainConfig { max_epochs: 4, batch_size: 1, lr0: 0.5, seed, ..TrainConfig::default() };
        let out = fit(&model, params, &ds, &ds.examples, &ds.examples, &cfg).unwrap();
        prop_assert!(!out.log.is_empty() && out.log.len() <= cfg.max_epochs);
        let last = out.log.last().unwrap().dev_accuracy;
        prop_assert!(out.best_dev_accuracy.unwrap() >= last);
        prop_assert!(out.log.windows(2).all(|w| w[1].lr <= w[0].lr));
    }
}

#[test]
fn decide_follows_the_override_table() {
    use QuantityVerdict::*;
    for q in [Entailment, Contradiction, NotComparable] {
        let expect_e = if q == Entailment { Label::Entailment } else { Label::Contradiction };
        assert_eq!(decide(Label::Entailment, q), expect_e);
        assert_eq!(decide(Label::Contradiction, q), Label::Contradiction);
        assert_eq!(decide(Label::Neutral, q), Label::Neutral);
    }
}

#[test]
fn dataset_round_trip_is_byte_stable() {
    let units = UnitTable::default();
    for seed in 0..5 {
        let g = gen_dataset(&tiny_gen(seed), &units).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let files = g.dataset.save(d1.path()).unwrap();
        let back = Dataset::load(d1.path(), &units).unwrap();
        back.save(d2.path()).unwrap();
        for f in files {
            let name = f.file_name().unwrap();
            assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(d2.path().join(name)).unwrap());
        }
        assert_eq!(Vocabularies::from_patients(&g.dataset.patients), Vocabularies::from_patients(&back.patients));
    }
}
