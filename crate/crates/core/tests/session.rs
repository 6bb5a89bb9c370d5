use std::sync::Arc;

use shapeflow_core::fixtures::*;
use shapeflow_core::grammar::{check_constraints, RuleApplication, ViolationKind};
use shapeflow_core::session::*;

fn arms() -> RuleApplication {
    RuleApplication::new("arm_quad", 0, vec![120.0])
}

/// The demo drone without its camera: ten applications.
fn ten_rules() -> Vec<RuleApplication> {
    let mut apps = demo_drone().applications;
    apps.pop();
    apps
}

fn quad_task(store: &SessionStore) -> Task {
    store
        .publish_task("pub", FIXTURE_GRAMMAR, QUAD, "a quadcopter frame")
        .unwrap()
}

#[test]
fn publishing_checks_grammar_and_shape_type() {
    let store = SessionStore::in_memory();
    let t = quad_task(&store);
    assert_eq!(t.status, TaskStatus::Open);
    assert_eq!(t.product_kind, "Drone");
    assert!(store.progress(&t.id).unwrap().events.is_empty());
    assert!(matches!(
        store.publish_task("pub", FIXTURE_GRAMMAR, "boat", ""),
        Err(SessionError::UnknownShapeType(_))
    ));
    assert!(matches!(
        store.publish_task("pub", "nope", QUAD, ""),
        Err(SessionError::UnknownGrammar(_))
    ));
    let broken = DRONE_GRAMMAR.replace("[8, 20]", "[20, 8]");
    match store.register_grammar("broken", &broken) {
        Err(SessionError::GrammarIssues(issues)) => {
            assert!(!issues.is_empty());
            assert!(issues.iter().all(|i| i.code == "bad-range"));
        }
        other => panic!("expected issues, got {other:?}"),
    }
    store.register_grammar("copy", DRONE_GRAMMAR).unwrap();
    store.register_grammar("copy", DRONE_GRAMMAR).unwrap();
    assert!(matches!(
        store.register_grammar("copy", &DRONE_GRAMMAR.replace("[60, 160]", "[60, 150]")),
        Err(SessionError::GrammarExists(_))
    ));
}

#[test]
fn accepted_and_rejected_submissions() {
    let store = SessionStore::in_memory();
    let t = quad_task(&store);
    let ev = store.submit(&t.id, Submission::append("ana", "main", vec![arms()])).unwrap();
    assert!(ev.accepted());
    assert_eq!(ev.seq, 1);
    assert_eq!(store.branch(&t.id, "main").unwrap().sequence.len(), 1);

    let bad = RuleApplication::new("motor", 1, vec![50.0, 30.0]);
    let ev = store.submit(&t.id, Submission::append("ben", "main", vec![bad])).unwrap();
    match &ev.outcome {
        Outcome::Rejected { violation } => {
            assert_eq!(violation.kind, ViolationKind::ParamRange);
            assert_eq!(violation.constraint_id, "param-range");
            assert_eq!(violation.application, Some(1));
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    // rejected events never mutate the design
    assert_eq!(store.branch(&t.id, "main").unwrap().sequence.len(), 1);
    let apps = demo_drone().applications;
    for a in &apps[1..3] {
        assert!(store.submit(&t.id, Submission::append("ana", "main", vec![a.clone()])).unwrap().accepted());
    }
    let log = store.progress(&t.id).unwrap();
    assert_eq!(log.events.len(), 4);
    assert_eq!(log.events.iter().filter(|e| e.accepted()).count(), 3);
    assert_eq!(log.branches["main"].sequence.len(), 3);
    assert_eq!(log.events.iter().map(|e| e.seq).collect::<Vec<_>>(), [1, 2, 3, 4]);
    assert_eq!(log, store.progress(&t.id).unwrap());
}

#[test]
fn author_tags_follow_alternating_designers() {
    let store = SessionStore::in_memory();
    let t = quad_task(&store);
    for (i, a) in demo_drone().applications.into_iter().enumerate() {
        let who = if i % 2 == 0 { "ana" } else { "ben" };
        assert!(store.submit(&t.id, Submission::append(who, "main", vec![a])).unwrap().accepted());
    }
    let seq = store.branch(&t.id, "main").unwrap().sequence;
    for (i, tag) in seq.author_tags.iter().enumerate() {
        assert_eq!(tag.as_deref(), Some(if i % 2 == 0 { "ana" } else { "ben" }));
    }
}

#[test]
fn finalize_and_collect() {
    let store = SessionStore::in_memory();
    let t = quad_task(&store);
    assert!(store.collect_solutions(&t.id).unwrap().is_empty());

    store.submit(&t.id, Submission::append("ana", "half", ten_rules()[..5].to_vec())).unwrap();
    let ev = store.submit(&t.id, Submission::finalize("ana", "half")).unwrap();
    assert!(matches!(&ev.outcome, Outcome::Rejected { violation } if violation.kind == ViolationKind::CountRange));
    assert!(!store.branch(&t.id, "half").unwrap().finalized);

    store.submit(&t.id, Submission::append("ana", "main", demo_drone().applications)).unwrap();
    assert!(store.submit(&t.id, Submission::finalize("ben", "main")).unwrap().accepted());
    let sols = store.collect_solutions(&t.id).unwrap();
    assert_eq!(sols.len(), 1);
    assert_eq!(sols[0].id, format!("{}.main", t.id));
    assert!(sols[0].sequence.same_design(&demo_drone()));
    assert!(check_constraints(&drone_grammar(), &sols[0].sequence).is_empty());

    assert!(matches!(
        store.submit(&t.id, Submission::append("ana", "main", vec![arms()])),
        Err(SessionError::Finalized(_))
    ));
    assert!(matches!(
        store.submit(&t.id, Submission::finalize("ana", "ghost")),
        Err(SessionError::UnknownBranch(_))
    ));
    assert!(matches!(
        store.estimate_contribution(&t.id, "half"),
        Err(SessionError::NotFinalized(_))
    ));
}

#[test]
fn contribution_shares() {
    let store = SessionStore::in_memory();
    let t = quad_task(&store);
    let apps = ten_rules();
    store.submit(&t.id, Submission::append("solo", "one", apps.clone())).unwrap();
    store.submit(&t.id, Submission::finalize("solo", "one")).unwrap();
    let r = store.estimate_contribution(&t.id, "one").unwrap();
    assert_eq!(r.shares.len(), 1);
    assert_eq!(r.shares["solo"], 1.0);

    store.submit(&t.id, Submission::append("A", "ab", apps[..6].to_vec())).unwrap();
    store.submit(&t.id, Submission::append("B", "ab", apps[6..].to_vec())).unwrap();
    store.submit(&t.id, Submission::finalize("A", "ab")).unwrap();
    let r = store.estimate_contribution(&t.id, "ab").unwrap();
    assert_eq!(r.shares["A"], 0.6);
    assert_eq!(r.shares["B"], 0.4);
    assert!((r.shares.values().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(store.contributions(&t.id).unwrap().len(), 2);
}

#[test]
fn replacing_a_rule_credits_the_replacer() {
    let store = SessionStore::in_memory();
    let t = quad_task(&store);
    let apps = demo_drone().applications;
    store.submit(&t.id, Submission::append("A", "main", apps.clone())).unwrap();
    // B swaps the last rule (the camera) for an identical one
    let last = apps.len() - 1;
    assert!(store
        .submit(&t.id, Submission::replace("B", "main", last, vec![apps[last].clone()]))
        .unwrap()
        .accepted());
    store.submit(&t.id, Submission::finalize("A", "main")).unwrap();
    let r = store.estimate_contribution(&t.id, "main").unwrap();
    assert_eq!(r.shares["B"], 1.0 / 11.0);
    assert_eq!(r.shares["A"], 10.0 / 11.0);

    // a fork leaves the finalized source alone
    let fork = Submission {
        designer_id: "C".into(),
        branch: "main".into(),
        kind: SubmissionKind::ReplaceFromIndex {
            index: last,
            applications: vec![],
            fork: Some("nocam".into()),
        },
    };
    assert!(store.submit(&t.id, fork.clone()).unwrap().accepted());
    assert_eq!(store.branch(&t.id, "nocam").unwrap().sequence.len(), last);
    assert_eq!(store.branch(&t.id, "main").unwrap().sequence.len(), last + 1);
    assert!(matches!(store.submit(&t.id, fork), Err(SessionError::BranchExists(_))));
    assert!(matches!(
        store.submit(&t.id, Submission::replace("C", "nocam", 99, vec![])),
        Err(SessionError::BadIndex { index: 99, len: 10 })
    ));
}

#[test]
fn closing_is_publisher_only() {
    let store = SessionStore::in_memory();
    let t = quad_task(&store);
    assert!(matches!(store.close_task(&t.id, "ana"), Err(SessionError::NotPublisher(_))));
    assert!(store.close_task(&t.id, "pub").unwrap().accepted());
    assert_eq!(store.task(&t.id).unwrap().status, TaskStatus::Closed);
    assert!(matches!(
        store.submit(&t.id, Submission::append("ana", "main", vec![arms()])),
        Err(SessionError::TaskClosed(_))
    ));
    assert!(matches!(store.progress("task-99"), Err(SessionError::UnknownTask(_))));
}

/// A scripted session touching every kind of event.
fn script(store: &SessionStore) -> String {
    let t = quad_task(store);
    let apps = demo_drone().applications;
    store.submit(&t.id, Submission::append("A", "main", apps[..6].to_vec())).unwrap();
    store
        .submit(&t.id, Submission::append("B", "main", vec![RuleApplication::new("skid", 0, vec![99.0, 40.0])]))
        .unwrap();
    store.submit(&t.id, Submission::append("B", "main", apps[6..].to_vec())).unwrap();
    store.submit(&t.id, Submission::replace("A", "main", 9, apps[9..].to_vec())).unwrap();
    store.submit(&t.id, Submission::finalize("B", "main")).unwrap();
    store.submit(&t.id, Submission::append("C", "alt", vec![arms()])).unwrap();
    t.id
}

#[test]
fn restart_replays_to_the_same_state() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let store = SessionStore::open(dir.path()).unwrap();
        store.register_grammar("custom", DRONE_GRAMMAR).unwrap();
        let id = script(&store);
        let snap = store.progress(&id).unwrap();
        (id, snap)
    };
    let store = SessionStore::open(dir.path()).unwrap();
    assert_eq!(store.progress(&id).unwrap(), before);
    assert!(store.grammar_refs().contains(&"custom".to_string()));
    // ids continue after a restart
    assert_eq!(quad_task(&store).id, "task-2");

    let mem = SessionStore::in_memory();
    let mem_id = script(&mem);
    assert_eq!(mem.progress(&mem_id).unwrap(), before);
}

#[test]
fn torn_tail_is_ignored_and_tampering_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let id = script(&SessionStore::open(dir.path()).unwrap());
    let events = dir.path().join("tasks").join(&id).join("events.jsonl");
    let original = std::fs::read_to_string(&events).unwrap();

    std::fs::write(&events, format!("{original}{{\"seq\": 8, \"taskId")).unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    assert_eq!(store.progress(&id).unwrap().events.len(), original.lines().count());
    drop(store);

    std::fs::write(&events, original.replacen("120", "999", 1)).unwrap();
    assert!(matches!(SessionStore::open(dir.path()), Err(SessionError::Corrupt(_))));

    let lines: Vec<&str> = original.lines().collect();
    std::fs::write(&events, lines[..3].join("\n")).unwrap();
    assert!(matches!(SessionStore::open(dir.path()), Err(SessionError::Corrupt(_))));
}

#[test]
fn concurrent_submits_lose_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(SessionStore::open(dir.path()).unwrap());
    let t = quad_task(&store);
    let results: Vec<SubmissionEvent> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..100)
            .map(|i| {
                let store = store.clone();
                let id = t.id.clone();
                s.spawn(move || {
                    let who = format!("d{i}");
                    // half contend for one branch, half work on their own
                    let sub = if i % 2 == 0 {
                        Submission::append(&who, "shared", vec![RuleApplication::new("skid", 0, vec![20.0, 20.0])])
                    } else {
                        Submission::append(&who, &format!("b{i}"), vec![arms()])
                    };
                    store.submit(&id, sub).unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let accepted = results.iter().filter(|e| e.accepted()).count();
    // one skid fits the base port; every own-branch append succeeds
    assert_eq!(accepted, 51);
    let log = store.progress(&t.id).unwrap();
    assert_eq!(log.events.len(), 100);
    assert_eq!(log.events.iter().filter(|e| e.accepted()).count(), accepted);
    let mut seqs: Vec<u64> = results.iter().map(|e| e.seq).collect();
    seqs.sort();
    assert_eq!(seqs, (1..=100).collect::<Vec<_>>());
    for e in &results {
        assert_eq!(&log.events[e.seq as usize - 1], e);
    }
    drop(store);
    assert_eq!(SessionStore::open(dir.path()).unwrap().progress(&t.id).unwrap(), log);
}

#[test]
fn events_serialize_in_a_stable_shape() {
    let store = SessionStore::in_memory();
    let t = quad_task(&store);
    let ev = store.submit(&t.id, Submission::append("ana", "main", vec![arms()])).unwrap();
    let v = serde_json::to_value(&ev).unwrap();
    assert_eq!(v["kind"], "append-rules");
    assert_eq!(v["designerId"], "ana");
    assert_eq!(v["outcome"]["status"], "accepted");
    let sub: Submission =
        serde_json::from_str(r#"{"designerId": "ben", "kind": "finalize"}"#).unwrap();
    assert_eq!(sub, Submission::finalize("ben", DEFAULT_BRANCH));
}
