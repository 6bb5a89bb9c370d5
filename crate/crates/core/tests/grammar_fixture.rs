use shapeflow_core::fixtures::{demo_drone, drone_grammar, drone_walk_config, QUAD, TWIN};
use shapeflow_core::grammar::walk::walk_corpus;
use shapeflow_core::grammar::{
    apply_rule, check_constraints, legal_rules, realize, validate_grammar, DesignSequence,
    RuleApplication, ViolationKind,
};

#[test]
fn fixture_validates_cleanly() {
    let g = drone_grammar();
    assert!(validate_grammar(&g).is_empty());
    let names: Vec<_> = g.units.iter().map(|u| u.name.as_str()).collect();
    assert_eq!(names, ["body", "arm", "motor", "propeller", "camera", "skid"]);
    assert_eq!(g.shape_types, [QUAD, TWIN]);
}

#[test]
fn demo_drone_is_valid() {
    let g = drone_grammar();
    let s = demo_drone();
    assert_eq!(s.len(), 11);
    assert_eq!(check_constraints(&g, &s), vec![]);
}

#[test]
fn empty_sequence_offers_only_body_hosted_rules() {
    let g = drone_grammar();
    let legal = legal_rules(&g, &DesignSequence::empty(QUAD)).unwrap();
    let ids: Vec<_> = legal.iter().map(|l| l.rule_id.as_str()).collect();
    // arm_pair can never reach four arms once it excludes arm_quad
    assert_eq!(ids, ["arm_quad", "camera_belly", "camera_top", "skid"]);
    for l in &legal {
        assert_eq!(l.hosts, [0]);
        assert_eq!(g.rule(&l.rule_id).unwrap().host.unit, "body");
    }
    let twin = legal_rules(&g, &DesignSequence::empty(TWIN)).unwrap();
    assert!(twin.iter().any(|l| l.rule_id == "arm_pair"));
    assert!(!twin.iter().any(|l| l.rule_id == "arm_quad"));
}

#[test]
fn walks_are_valid() {
    let g = drone_grammar();
    let corpus = walk_corpus(&g, 200, 1, &drone_walk_config());
    assert_eq!(corpus.len(), 200);
    for s in &corpus {
        assert_eq!(check_constraints(&g, s), vec![], "{s:?}");
    }
    assert!(corpus.iter().all(|s| s.len() <= 32));
}

#[test]
fn symmetric_arms_at_quarter_turns() {
    let g = drone_grammar();
    let s = DesignSequence {
        shape_type: QUAD.into(),
        applications: vec![RuleApplication::new("arm_quad", 0, vec![100.0])],
        author_tags: vec![],
    };
    let a = realize(&g, &s).unwrap();
    assert_eq!(a.occurrences.len(), 5);
    let dirs: Vec<[f64; 3]> = a.occurrences[1..]
        .iter()
        .map(|o| [o.frame.rotation[0][0], o.frame.rotation[1][0], o.frame.rotation[2][0]])
        .collect();
    assert_eq!(dirs, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]);
}

#[test]
fn fifth_motor_and_range_errors() {
    let g = drone_grammar();
    let s = demo_drone();
    let extra = RuleApplication::new("motor", 1, vec![10.0, 30.0]);
    let err = apply_rule(&g, &s, &extra).unwrap_err();
    assert_eq!(err.kind, ViolationKind::CountRange, "{err}");
    let low = RuleApplication::new("arm_quad", 0, vec![10.0]);
    let err = apply_rule(&g, &DesignSequence::empty(QUAD), &low).unwrap_err();
    assert_eq!(err.kind, ViolationKind::ParamRange);
}
