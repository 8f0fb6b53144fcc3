use std::collections::BTreeMap;

use proptest::prelude::*;
use rta_core::corpus::{parse_case, CorpusCase};
use rta_core::divergence::{
    compare_on_corpus, find_witness, grid_units, sweep_weights, synthetic_problem, Coupling, SweepConfig, Witness,
    WitnessSpec,
};
use rta_core::{evaluate, parse_constraint_set, parse_decision, score, Schema, ScoringModel, Timestamp};

fn clock() -> Timestamp {
    Timestamp::parse("2026-01-01T00:00:00Z").unwrap()
}

fn pairwise(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise(&xs[..n / 2]) + pairwise(&xs[n / 2..]),
    }
}

fn model_and_features() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..=8).prop_flat_map(|m| {
        (
            prop::collection::vec(0.0f64..2.0, m),
            prop::collection::vec(-0.5f64..1.5, m),
            -0.5f64..3.0,
        )
    })
}

fn decision_with(features: &[f64]) -> rta_core::DecisionObject {
    let mut d = parse_decision(br#"{"decision_class":"c","operation":"o","target":"t","scope":"s","timing":"2026-01-01T00:00:00Z"}"#).unwrap();
    for (i, x) in features.iter().enumerate() {
        d.features.insert(format!("x{i}"), *x);
    }
    d
}

fn names(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("x{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn score_matches_pairwise_dot_product((w, x, theta) in model_and_features()) {
        let model = ScoringModel::new(names(w.len()), w.clone(), theta, true).unwrap();
        let r = score(&model, &decision_with(&x)).unwrap();
        let terms: Vec<f64> = w.iter().zip(&x).map(|(w, x)| w * x.clamp(0.0, 1.0)).collect();
        let expected = pairwise(&terms);
        prop_assert!((r.score - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        prop_assert_eq!(r.allowed, r.score >= theta);
        let parts: f64 = r.contributions.iter().map(|c| c.value).sum();
        prop_assert!((parts - r.score).abs() <= 1e-12 * r.score.abs().max(1.0));
    }

    #[test]
    fn compensation_witness((w, _x, theta) in model_and_features(), k in 0usize..8) {
        let k = k % w.len();
        let rest: f64 = w.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, w)| w).sum();
        prop_assume!(rest >= theta);
        let mut x = vec![1.0; w.len()];
        x[k] = 0.0;
        let model = ScoringModel::new(names(w.len()), w, theta, true).unwrap();
        prop_assert!(score(&model, &decision_with(&x)).unwrap().allowed);
    }

    #[test]
    fn raising_a_feature_never_lowers_the_score((w, x, theta) in model_and_features(), i in 0usize..8, bump in 0.0f64..1.0) {
        let i = i % w.len();
        let model = ScoringModel::new(names(w.len()), w, theta, true).unwrap();
        let mut y = x.clone();
        y[i] += bump;
        prop_assert!(score(&model, &decision_with(&y)).unwrap().score >= score(&model, &decision_with(&x)).unwrap().score);
    }

    #[test]
    fn allowed_is_permutation_invariant((w, x, _) in model_and_features(), seed in any::<u64>()) {
        // Exactly representable quarters keep the sum order-independent.
        let w: Vec<f64> = w.iter().map(|v| (v * 4.0).round() / 4.0).collect();
        let x: Vec<f64> = x.iter().map(|v| (v * 4.0).round() / 4.0).collect();
        let theta = (pairwise(&w) / 2.0 * 4.0).round() / 4.0;
        let mut order: Vec<usize> = (0..w.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let d = decision_with(&x);
        let a = ScoringModel::new(names(w.len()), w.clone(), theta, true).unwrap();
        let b = ScoringModel::new(order.iter().map(|&i| format!("x{i}")).collect(), order.iter().map(|&i| w[i]).collect(), theta, true).unwrap();
        prop_assert_eq!(score(&a, &d).unwrap().allowed, score(&b, &d).unwrap().allowed);
    }
}

#[test]
fn two_features_half_step_by_hand() {
    // θ = 0.4, coupled: witness iff the other weight is 0.5 or 1.
    // Rows: (w0, w1) -> (witness for k=0, witness for k=1).
    let table = [
        ((0.0, 0.0), (false, false)),
        ((0.0, 0.5), (true, false)),
        ((0.0, 1.0), (true, false)),
        ((0.5, 0.0), (false, true)),
        ((0.5, 0.5), (true, true)),
        ((0.5, 1.0), (true, true)),
        ((1.0, 0.0), (false, true)),
        ((1.0, 0.5), (true, true)),
        ((1.0, 1.0), (true, true)),
    ];
    let (set, names, ids) = synthetic_problem(2);
    let cfg = SweepConfig::new(2, 0.5, vec![0.4], Coupling::Coupled);
    let r = sweep_weights(&cfg, &set, &names, &ids, &clock()).unwrap();
    assert_eq!(r.cells.len(), 18);
    for (row, pair) in table.iter().zip(r.cells.chunks(2)) {
        let ((w0, w1), (k0, k1)) = *row;
        assert_eq!(pair[0].weights, [w0, w1]);
        assert_eq!((pair[0].k, pair[1].k), (0, 1));
        assert_eq!((pair[0].witness_found, pair[1].witness_found), (k0, k1), "{row:?}");
        assert_eq!((pair[0].feasible_predicted, pair[1].feasible_predicted), (k0, k1));
    }
    assert_eq!(r.summary.per_theta[0].witness_cells, 12);
}

/// Independent enumeration in integer grid units.
fn brute_force(n: usize, divisions: u32, theta_units: f64, coupling: Coupling) -> Vec<bool> {
    let mut out = Vec::new();
    let mut u = vec![0u32; n];
    loop {
        let total: u32 = u.iter().sum();
        for &uk in &u {
            let avail = match coupling {
                Coupling::Coupled => total - uk,
                Coupling::Decoupled => total,
            };
            out.push(f64::from(avail) >= theta_units);
        }
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if u[i] < divisions {
                u[i] += 1;
                break;
            }
            u[i] = 0;
        }
    }
}

#[test]
fn four_features_quarter_step_matches_enumeration() {
    let (set, names, ids) = synthetic_problem(4);
    for coupling in [Coupling::Coupled, Coupling::Decoupled] {
        let cfg = SweepConfig::new(4, 0.25, vec![0.5], coupling);
        let r = sweep_weights(&cfg, &set, &names, &ids, &clock()).unwrap();
        let expected = brute_force(4, 4, 2.0, coupling);
        let got: Vec<bool> = r.cells.iter().map(|c| c.witness_found).collect();
        assert_eq!(got, expected, "{coupling}");
        let frac = expected.iter().filter(|b| **b).count() as f64 / expected.len() as f64;
        assert_eq!(r.summary.per_theta[0].witness_fraction, frac);
        assert!(r.summary.all_match());
    }
}

#[test]
fn unreachable_and_zero_thresholds() {
    let (set, names, ids) = synthetic_problem(3);
    for coupling in [Coupling::Coupled, Coupling::Decoupled] {
        let mut cfg = SweepConfig::new(3, 0.25, vec![1.5], coupling);
        cfg.simplex = true;
        let r = sweep_weights(&cfg, &set, &names, &ids, &clock()).unwrap();
        assert_eq!(r.summary.per_theta[0].witness_cells, 0);
        assert!(r.summary.all_match());
        assert!(grid_units(3, 4, true).iter().all(|u| u.iter().sum::<u32>() <= 4));

        let cfg = SweepConfig::new(3, 0.25, vec![0.0], coupling);
        let r = sweep_weights(&cfg, &set, &names, &ids, &clock()).unwrap();
        assert!(r.cells.iter().all(|c| c.witness_found));
    }
}

#[test]
fn worked_witness_examples() {
    let (set, names, ids) = synthetic_problem(4);
    let spec = WitnessSpec {
        model: ScoringModel::new(names, vec![0.25; 4], 0.7, true).unwrap(),
        failed_index: 0,
        coupling: Coupling::Coupled,
        coupling_map: ids,
    };
    let Witness::Found(rec) = find_witness(&spec, &set, &clock()).unwrap() else { panic!() };
    // Recompute with an independent sum: 0.25 * 3.
    assert_eq!(rec.baseline.score, 0.25 + 0.25 + 0.25);
    assert!(!evaluate(&set, &rec.decision, &clock()).unwrap().outcome.kind.is_allow());
}

fn suspension_set() -> rta_core::ConstraintSet {
    let text = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus/constraints/account_suspension.toml")).unwrap();
    parse_constraint_set(&text, &Schema::default()).unwrap()
}

fn random_case(i: usize, bits: u32, feats: [f64; 4]) -> CorpusCase {
    let mut ctx = serde_json::Map::new();
    if bits & 1 != 0 {
        ctx.insert("identity_verified".into(), (bits & 2 != 0).into());
    }
    if bits & 4 != 0 {
        ctx.insert("approved_by".into(), "lead".into());
    }
    let scope = if bits & 8 != 0 { "single_account" } else { "global" };
    let v = serde_json::json!({
        "id": format!("r{i}"),
        "decision": {
            "decision_class": "account_suspension", "operation": "disable_account", "target": format!("u{i}"),
            "scope": scope, "timing": "2026-04-01T12:00:00Z", "context": ctx,
            "features": {"flags": feats[0], "similarity": feats[1], "confidence": feats[2], "prior_history": feats[3]},
        },
        "expected_gate": "ALLOW",
    });
    parse_case(v.to_string().as_bytes()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn corpus_comparison_equals_join_of_independent_runs(
        rows in prop::collection::vec((0u32..16, prop::array::uniform4(0.0f64..1.0)), 50)
    ) {
        let cases: Vec<CorpusCase> = rows.iter().enumerate().map(|(i, (b, f))| random_case(i, *b, *f)).collect();
        let set = suspension_set();
        let model = ScoringModel::from_json(&std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus/model.json")).unwrap()).unwrap();
        let sets = BTreeMap::from([(set.decision_class().to_owned(), set.clone())]);
        let got = compare_on_corpus(&cases, &sets, &model, |c| c.decision.timing.clone()).unwrap();
        let expected: Vec<&str> = cases
            .iter()
            .filter(|c| {
                let allowed = score(&model, &c.decision).unwrap().allowed;
                let gate = evaluate(&set, &c.decision, &c.decision.timing).unwrap();
                allowed && !gate.outcome.kind.is_allow()
            })
            .map(|c| c.id.as_str())
            .collect();
        let ids: Vec<&str> = got.records.iter().map(|r| r.case_id.as_str()).collect();
        prop_assert_eq!(ids, expected);
        prop_assert_eq!(got.records.len() + got.both_allow + got.both_reject + got.baseline_only_rejects, 50);
        for r in &got.records {
            prop_assert!(r.record.baseline.allowed && !r.record.gate_outcome.kind.is_allow());
        }
    }
}
