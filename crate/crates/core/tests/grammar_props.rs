mod support;

use proptest::prelude::*;
use shapeflow_core::fixtures::*;
use shapeflow_core::grammar::walk::walk_corpus;
use shapeflow_core::grammar::*;
use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_grammars_round_trip(seed in any::<u64>()) {
        let g = random_grammar(seed);
        prop_assert_eq!(validate_grammar(&g), vec![]);
        let text = serialize_grammar(&g);
        let back = parse_grammar(&text).unwrap();
        prop_assert_eq!(&back, &g, "{}", text);
        prop_assert_eq!(serialize_grammar(&back), text);
        let json = serde_json::to_string(&g).unwrap();
        prop_assert_eq!(serde_json::from_str::<Grammar>(&json).unwrap(), g);
    }
}

#[test]
fn fixture_round_trips_through_text() {
    let g = drone_grammar();
    assert_eq!(parse_grammar(&serialize_grammar(&g)).unwrap(), g);
}

#[test]
fn inverted_range_is_one_issue() {
    let mut g = drone_grammar();
    g.rules[2].params[0].min = 50.0;
    g.rules[2].params[0].max = 10.0;
    let issues = validate_grammar(&g);
    assert_eq!(issues.len(), 1, "{issues:?}");
    assert_eq!(issues[0].code, "bad-range");
    assert!(issues[0].message.contains("motor"));
}

#[test]
fn duplicate_rule_id_is_one_issue() {
    let mut g = drone_grammar();
    g.rules[7].id = "skid".into();
    let issues = validate_grammar(&g);
    assert_eq!(issues.len(), 1, "{issues:?}");
    assert_eq!(issues[0].code, "duplicate-id");
}

#[test]
fn undefined_port_is_rejected_by_the_parser() {
    let src = include_str!("../fixtures/drone.sg").replace("on arm.tip", "on arm.wingtip");
    match parse_grammar(&src) {
        Err(GrammarError::Semantic { issues }) => {
            assert_eq!(issues.len(), 1);
            assert_eq!(issues[0].code, "dangling-reference");
            assert!(issues[0].message.contains("wingtip"));
        }
        other => panic!("expected a semantic error, got {other:?}"),
    }
    assert!(parse_unchecked(&src).is_ok());
}

#[test]
fn minimal_grammar_has_only_the_axiom() {
    let g = parse_grammar(
        "product Puck\nshape-type \"flat\"\naxiom disc\nunit disc cylinder center\n  size r mm [5, 5]\n  size h mm [1, 1]\nend\n",
    )
    .unwrap();
    let empty = DesignSequence::empty("flat");
    assert!(legal_rules(&g, &empty).unwrap().is_empty());
    assert!(check_constraints(&g, &empty).is_empty());
    let asm = realize(&g, &empty).unwrap();
    assert_eq!(asm.occurrences.len(), 1);
}

#[test]
fn replay_is_deterministic() {
    let g = drone_grammar();
    for s in walk_corpus(&g, 50, 9, &drone_walk_config()) {
        let a = realize(&g, &s).unwrap();
        let b = realize(&g, &s).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_obj(), b.to_obj());
        assert_eq!(DesignState::replay(&g, &s).unwrap().to_sequence(), s);
    }
}

#[test]
fn two_units_on_one_port() {
    let g = drone_grammar();
    let mut s = DesignSequence::empty(QUAD);
    s.applications.push(RuleApplication::new("skid", 0, vec![30.0, 40.0]));
    s.applications.push(RuleApplication::new("skid", 0, vec![20.0, 30.0]));
    let v = check_constraints(&g, &s);
    assert!(v.iter().any(|v| v.kind == ViolationKind::PortOccupied && v.application == Some(1)), "{v:?}");

    // forcing the placement past the prefix checks shows the overlap
    let mut state = DesignState::new(&g, QUAD).unwrap();
    for a in &s.applications {
        state.apply_structural(a).unwrap();
    }
    let v = state.final_violations();
    assert!(v.iter().any(|v| v.kind == ViolationKind::NoCollision), "{v:?}");
}
