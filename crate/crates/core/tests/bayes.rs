mod support;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeflow_core::bayes::*;
use shapeflow_core::fixtures::*;
use shapeflow_core::grammar::walk::walk_corpus;
use shapeflow_core::grammar::{DesignSequence, RuleApplication};
use support::*;

fn map(nodes: &[&str], edges: &[(&str, &str, f64)], sink: &str) -> CausalMap {
    CausalMap {
        nodes: nodes.iter().map(|s| s.to_string()).collect(),
        edges: edges
            .iter()
            .map(|(f, t, w)| Edge {
                from: f.to_string(),
                to: t.to_string(),
                weight: *w,
            })
            .collect(),
        biases: BTreeMap::new(),
        sink: sink.to_string(),
    }
}

#[test]
fn single_root_is_even() {
    let net = causal_map_to_bayesnet(&map(&["s"], &[], "s")).unwrap();
    assert_eq!(net.cpts[0], vec![0.5]);
    assert_eq!(net.infer_score(&Evidence::new()).unwrap(), 0.5);
}

#[test]
fn zero_weight_child_ignores_parent() {
    let net = causal_map_to_bayesnet(&map(&["a", "b"], &[("a", "b", 0.0)], "b")).unwrap();
    assert_eq!(net.p_high(1, &[true]), net.p_high(1, &[false]));
}

#[test]
fn chain_matches_hand_value() {
    let net = causal_map_to_bayesnet(&map(&["a", "b"], &[("a", "b", 1.0)], "b")).unwrap();
    assert!((net.p_high(1, &[true]) - 0.731_058_578_630_0049).abs() < 1e-12);
    let ev = Evidence::from([("a".to_string(), Level::High)]);
    assert!((net.infer_score(&ev).unwrap() - 0.731_058_578_630_0049).abs() < 1e-12);
}

#[test]
fn cpt_rows_are_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = causal_map_to_bayesnet(&random_map(&mut rng, 12, false)).unwrap();
    for cpt in &net.cpts {
        assert!(cpt.iter().all(|p| *p > 0.0 && *p < 1.0));
    }
}

#[test]
fn malformed_maps_are_rejected() {
    let cyc = map(&["a", "b", "s"], &[("a", "b", 0.5), ("b", "a", 0.5), ("b", "s", 0.5)], "s");
    assert!(matches!(causal_map_to_bayesnet(&cyc), Err(BayesError::Cycle(_))));
    let two = map(&["a", "b", "s"], &[("a", "s", 0.5)], "s");
    assert!(matches!(causal_map_to_bayesnet(&two), Err(BayesError::Sinks { .. })));
    let heavy = map(&["a", "s"], &[("a", "s", 1.5)], "s");
    assert!(matches!(causal_map_to_bayesnet(&heavy), Err(BayesError::Weight { .. })));
    let ghost = map(&["a", "s"], &[("a", "x", 0.5)], "s");
    assert!(matches!(causal_map_to_bayesnet(&ghost), Err(BayesError::UnknownNode(_))));
    let names: Vec<String> = (0..26).map(|i| format!("n{i}")).collect();
    let big = CausalMap {
        nodes: names.clone(),
        edges: (0..25)
            .map(|i| Edge {
                from: names[i].clone(),
                to: names[25].clone(),
                weight: 0.1,
            })
            .collect(),
        biases: BTreeMap::new(),
        sink: names[25].clone(),
    };
    assert!(matches!(causal_map_to_bayesnet(&big), Err(BayesError::TooLarge(26))));
}

#[test]
fn unknown_evidence_is_an_error() {
    let net = drone_bayesnet();
    let ev = Evidence::from([("wingspan".to_string(), Level::High)]);
    assert!(matches!(net.infer_score(&ev), Err(BayesError::UnknownNode(_))));
}

#[test]
fn matches_enumeration_on_random_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let n = rng.gen_range(1..=12);
        let m = random_map(&mut rng, n, false);
        let net = causal_map_to_bayesnet(&m).unwrap();
        let observed = rng.gen_range(0..n);
        let ev = random_evidence(&mut rng, &m, observed);
        let (got, want) = (net.infer_score(&ev).unwrap(), enumerate(&m, &ev));
        assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
    }
}

#[test]
fn seven_of_ten_observed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let m = random_map(&mut rng, 11, false);
        let net = causal_map_to_bayesnet(&m).unwrap();
        let ev = random_evidence(&mut rng, &m, 7);
        assert_eq!(ev.len(), 7);
        assert!((net.infer_score(&ev).unwrap() - enumerate(&m, &ev)).abs() < 1e-9);
    }
}

#[test]
fn every_evidence_subset_is_scored() {
    let m = drone_causal_map();
    let net = causal_map_to_bayesnet(&m).unwrap();
    let observable: Vec<&String> = m.nodes.iter().filter(|n| **n != m.sink).collect();
    for mask in 0..1u32 << observable.len() {
        let ev: Evidence = observable
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(i, n)| ((*n).clone(), Level::from_bool(i % 2 == 0)))
            .collect();
        let p = net.infer_score(&ev).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!((p - enumerate(&m, &ev)).abs() < 1e-9);
    }
}

/// Roots are independent a priori, so with positive weights raising an
/// observed root cannot lower the sink. Observed non-roots can explain away.
#[test]
fn positive_weights_are_monotone_in_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.gen_range(2..=9);
        let m = random_map(&mut rng, n, true);
        let net = causal_map_to_bayesnet(&m).unwrap();
        let roots: Vec<&String> = m
            .nodes
            .iter()
            .filter(|name| m.edges.iter().all(|e| e.to != **name) && **name != m.sink)
            .collect();
        let ev: Evidence = roots
            .iter()
            .map(|r| ((*r).clone(), Level::from_bool(rng.gen_bool(0.5))))
            .collect();
        for (name, level) in &ev {
            if *level == Level::Low {
                let mut up = ev.clone();
                up.insert(name.clone(), Level::High);
                assert!(net.infer_score(&up).unwrap() >= net.infer_score(&ev).unwrap() - 1e-12);
            }
        }
    }
}

#[test]
fn causal_map_json_round_trips() {
    let m = drone_causal_map();
    let text = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<CausalMap>(&text).unwrap(), m);
    assert_eq!(m.nodes.len(), 7);
}

#[test]
fn demo_drone_evidence_is_all_high() {
    let g = drone_grammar();
    let ev = derive_evidence(&g, &demo_drone(), &EvidenceConfig::default()).unwrap();
    assert_eq!(ev.len(), 5);
    assert!(ev.values().all(|l| *l == Level::High), "{ev:?}");
    let score = drone_bayesnet().infer_score(&ev).unwrap();
    assert!(score > 0.5);
}

#[test]
fn duplicate_arms_collide() {
    let g = drone_grammar();
    let mut s = DesignSequence::empty(QUAD);
    s.applications.push(RuleApplication::new("arm_quad", 0, vec![120.0]));
    s.applications.push(RuleApplication::new("arm_quad", 0, vec![100.0]));
    let ev = derive_evidence(&g, &s, &EvidenceConfig::default()).unwrap();
    assert_eq!(ev[NO_COLLISION], Level::Low);
}

#[test]
fn empty_design_evidence() {
    let g = drone_grammar();
    let ev = derive_evidence(&g, &DesignSequence::empty(QUAD), &EvidenceConfig::default()).unwrap();
    // symmetry, collision and mass hold vacuously
    assert_eq!(ev[SYMMETRY_CONSISTENT], Level::High);
    assert_eq!(ev[NO_COLLISION], Level::High);
    assert_eq!(ev[MASS_BELOW_BOUND], Level::High);
    assert_eq!(ev[MOTOR_COUNT_MATCHES_TYPE], Level::Low);
    assert_eq!(ev[HAS_LANDING_GEAR], Level::Low);
}

#[test]
fn wrong_motor_count_is_low() {
    let g = drone_grammar();
    let mut s = demo_drone();
    s.shape_type = TWIN.to_string();
    let ev = derive_evidence(&g, &s, &EvidenceConfig::default()).unwrap();
    assert_eq!(ev[MOTOR_COUNT_MATCHES_TYPE], Level::Low);
}

#[test]
fn selection_on_fixture_corpus() {
    let g = drone_grammar();
    let m = drone_causal_map();
    let net = causal_map_to_bayesnet(&m).unwrap();
    let cfg = EvidenceConfig::default();
    // relabel every third walk so its motor count no longer matches
    let mut corpus = walk_corpus(&g, 60, 3, &drone_walk_config());
    for s in corpus.iter_mut().step_by(3) {
        s.shape_type = if s.shape_type == QUAD { TWIN } else { QUAD }.to_string();
    }
    let sel = select(&corpus, &net, &g, &cfg, SelectPolicy::Threshold { tau: 0.5 }).unwrap();
    let oracle: Vec<usize> = corpus
        .iter()
        .enumerate()
        .filter(|(_, s)| enumerate(&m, &derive_evidence(&g, s, &cfg).unwrap()) >= 0.5)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(sel.kept, oracle);
    assert!(!sel.kept.is_empty() && sel.kept.len() < corpus.len());

    // selecting the kept set again keeps all of it
    let kept: Vec<DesignSequence> = sel.kept.iter().map(|&i| corpus[i].clone()).collect();
    let again = select(&kept, &net, &g, &cfg, SelectPolicy::Threshold { tau: 0.5 }).unwrap();
    assert_eq!(again.kept, (0..kept.len()).collect::<Vec<_>>());

    let all = select(&corpus, &net, &g, &cfg, SelectPolicy::Threshold { tau: 0.0 }).unwrap();
    assert_eq!(all.kept.len(), corpus.len());
    let none = select(&corpus, &net, &g, &cfg, SelectPolicy::TopK { k: 0 }).unwrap();
    assert!(none.kept.is_empty());
    let top = select(&corpus, &net, &g, &cfg, SelectPolicy::TopK { k: 5 }).unwrap();
    assert_eq!(top.kept.len(), 5);
    let worst_kept = top.kept.iter().map(|&i| top.scores[i]).fold(f64::INFINITY, f64::min);
    let dropped_best = (0..corpus.len())
        .filter(|i| !top.kept.contains(i))
        .map(|i| top.scores[i])
        .fold(0.0, f64::max);
    assert!(worst_kept >= dropped_best);
}

#[test]
fn score_report_is_keyed_by_id() {
    let sel = Selection {
        kept: vec![1],
        scores: vec![0.2, 0.8],
    };
    let ids = vec!["a".to_string(), "b".to_string()];
    let policy = SelectPolicy::Threshold { tau: 0.5 };
    let r = ScoreReport::new(&ids, &sel, policy);
    assert_eq!(r.kept, ["b"]);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["scores"]["a"], 0.2);
    assert_eq!(json["policy"]["policy"], "threshold");
}
