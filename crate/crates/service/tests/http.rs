use std::path::Path;

use serde_json::{json, Value};
use shapeflow_core::fixtures::{demo_drone, drone_grammar, DRONE_GRAMMAR, QUAD};
use shapeflow_core::grammar::{check_constraints, DesignSequence, RuleApplication};
use shapeflow_core::session::{SessionStore, Submission, FIXTURE_GRAMMAR};
use shapeflow_service::{start, ApiConfig, ServiceHandle};
use ureq::Agent;

fn agent() -> Agent {
    Agent::config_builder().http_status_as_error(false).build().into()
}

fn config(dir: &Path) -> ApiConfig {
    ApiConfig::new("127.0.0.1:0".parse().unwrap(), dir)
}

fn boot(dir: &Path) -> ServiceHandle {
    start(config(dir)).unwrap()
}

fn get(svc: &ServiceHandle, path: &str) -> (u16, Value) {
    let mut res = agent().get(&svc.url(path)).call().unwrap();
    (res.status().as_u16(), res.body_mut().read_json().unwrap())
}

fn post(svc: &ServiceHandle, path: &str, body: Value) -> (u16, Value) {
    let mut res = agent().post(&svc.url(path)).send_json(&body).unwrap();
    (res.status().as_u16(), res.body_mut().read_json().unwrap())
}

fn apps(list: &[RuleApplication]) -> Value {
    serde_json::to_value(list).unwrap()
}

#[test]
fn health_and_unknown_routes() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    assert_eq!(get(&svc, "/health"), (200, json!({"status": "ok"})));
    let (status, body) = get(&svc, "/nope");
    assert_eq!(status, 404);
    assert_eq!(body["error"]["code"], "not_found");
    let (status, body) = get(&svc, "/tasks/task-9");
    assert_eq!(status, 404);
    assert_eq!(body["error"]["code"], "not_found");
    svc.shutdown().unwrap();
}

#[test]
fn malformed_bodies_are_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    let mut res = agent()
        .post(&svc.url("/tasks"))
        .header("content-type", "application/json")
        .send("{not json")
        .unwrap();
    assert_eq!(res.status().as_u16(), 400);
    let body: Value = res.body_mut().read_json().unwrap();
    assert_eq!(body["error"]["code"], "bad_request");
    let (status, body) = post(&svc, "/tasks", json!({"publisher": "p"}));
    assert_eq!(status, 400);
    assert!(body["error"]["message"].as_str().unwrap().contains("shapeType"));
}

#[test]
fn grammar_validation_route() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    let (status, body) = post(&svc, "/grammar/validate", json!({"source": DRONE_GRAMMAR}));
    assert_eq!(status, 200);
    assert_eq!(body, json!({"valid": true, "issues": []}));
    let broken = DRONE_GRAMMAR.replace("[8, 20]", "[20, 8]");
    let (_, body) = post(&svc, "/grammar/validate", json!({"source": broken}));
    assert_eq!(body["valid"], false);
    assert_eq!(body["issues"][0]["code"], "bad-range");
    let (status, body) = post(&svc, "/grammar/validate", json!({"source": "grammar {"}));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "bad_request");
}

#[test]
fn legal_rules_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    let g = drone_grammar();
    let drone = demo_drone();
    for n in 0..=drone.applications.len() {
        let prefix = DesignSequence {
            applications: drone.applications[..n].to_vec(),
            ..drone.clone()
        };
        let expected = shapeflow_core::grammar::legal_rules(&g, &prefix).unwrap();
        let (status, body) = post(&svc, "/grammar/legal-rules", json!({"sequence": prefix}));
        assert_eq!(status, 200);
        assert_eq!(body["rules"], serde_json::to_value(&expected).unwrap(), "prefix {n}");
    }
}

#[test]
fn publishing_returns_created_task() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    let (status, body) = post(
        &svc,
        "/tasks",
        json!({"publisher": "pub", "shapeType": QUAD, "description": "frame"}),
    );
    assert_eq!(status, 201);
    assert_eq!(body["id"], "task-1");
    assert_eq!(body["grammarRef"], FIXTURE_GRAMMAR);
    assert_eq!(body["status"], "open");
    assert_eq!(get(&svc, "/tasks/task-1").1, body);
    assert_eq!(get(&svc, "/tasks").1, json!([body]));

    // custom grammars register under their ref
    let (status, body) = post(
        &svc,
        "/tasks",
        json!({"publisher": "pub", "grammarRef": "mine", "grammar": DRONE_GRAMMAR, "shapeType": QUAD}),
    );
    assert_eq!(status, 201);
    assert_eq!(body["grammarRef"], "mine");
    let (status, _) = post(
        &svc,
        "/tasks",
        json!({"publisher": "pub", "grammar": DRONE_GRAMMAR, "shapeType": QUAD}),
    );
    assert_eq!(status, 400);
    let (status, body) = post(&svc, "/tasks", json!({"publisher": "pub", "shapeType": "boat"}));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "bad_request");
}

#[test]
fn out_of_range_submission_names_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    post(&svc, "/tasks", json!({"publisher": "pub", "shapeType": QUAD}));
    let body_rule = demo_drone().applications[0].clone();
    let ok = post(
        &svc,
        "/tasks/task-1/submit",
        json!({"designerId": "ana", "kind": "append-rules", "applications": apps(&[body_rule])}),
    );
    assert_eq!(ok.0, 200);
    assert_eq!(ok.1["outcome"]["status"], "accepted");

    let arm = RuleApplication::new("arm_quad", 0, vec![500.0]);
    let (status, body) = post(
        &svc,
        "/tasks/task-1/submit",
        json!({"designerId": "ben", "kind": "append-rules", "applications": apps(&[arm])}),
    );
    assert_eq!(status, 422);
    let err = &body["error"];
    assert_eq!(err["code"], "grammar_violation");
    assert_eq!(err["violation"]["constraintId"], "param-range");
    assert_eq!(err["violation"]["application"], 1);

    // the rejection is on the record but the design is unchanged
    let (_, log) = get(&svc, "/tasks/task-1/progress");
    let events = log["events"].as_array().unwrap();
    assert_eq!(events.len(), 2);
    assert_eq!(events[1]["outcome"]["status"], "rejected");
    assert_eq!(log["branches"]["main"]["sequence"]["applications"].as_array().unwrap().len(), 1);
}

#[test]
fn missing_models_leave_the_service_up() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.completer_model = Some(dir.path().join("absent.json"));
    cfg.gan_model = Some(dir.path().join("absent-gan.json"));
    let svc = start(cfg).unwrap();
    let prefix = DesignSequence {
        applications: demo_drone().applications[..1].to_vec(),
        ..demo_drone()
    };
    let (status, body) = post(&svc, "/complete", json!({"prefix": prefix, "k": 3}));
    assert_eq!(status, 503);
    assert_eq!(body["error"]["code"], "model_missing");
    let (status, body) = post(&svc, "/expand/sample", json!({"n": 4}));
    assert_eq!(status, 503);
    assert_eq!(body["error"]["code"], "model_missing");
    assert_eq!(get(&svc, "/health").0, 200);
}

#[test]
fn cors_allowlist() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.cors_allow = vec!["http://localhost:8000".into()];
    let svc = start(cfg).unwrap();
    let res = agent()
        .get(&svc.url("/health"))
        .header("origin", "http://localhost:8000")
        .call()
        .unwrap();
    assert_eq!(
        res.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:8000"
    );
    let res = agent()
        .get(&svc.url("/health"))
        .header("origin", "http://evil.example")
        .call()
        .unwrap();
    assert!(res.headers().get("access-control-allow-origin").is_none());
    let res = agent()
        .options(&svc.url("/tasks"))
        .header("origin", "http://localhost:8000")
        .header("access-control-request-method", "POST")
        .call()
        .unwrap();
    assert_eq!(res.status().as_u16(), 204);
    assert!(res.headers().get("access-control-allow-methods").is_some());
}

#[test]
fn body_size_cap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.max_body_bytes = 1024;
    let svc = start(cfg).unwrap();
    let big = "x".repeat(4096);
    let (status, body) = post(&svc, "/grammar/validate", json!({"source": big}));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "bad_request");
    assert!(body["error"]["message"].as_str().unwrap().contains("too large"), "{body}");
}

#[test]
fn unwritable_data_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    std::fs::write(&file, b"x").unwrap();
    assert!(start(config(&file)).is_err());
}

/// Scripted two-designer session with a rejection, a fork and a finalize.
enum Step {
    Submit(Submission),
    Finalize(&'static str, &'static str),
}

fn script() -> Vec<Step> {
    let d = demo_drone().applications;
    let mut fork = Submission::replace("ben", "main", 5, d[5..9].to_vec());
    if let shapeflow_core::session::SubmissionKind::ReplaceFromIndex { fork: f, .. } = &mut fork.kind {
        *f = Some("alt".into());
    }
    vec![
        Step::Submit(Submission::append("ana", "main", d[..3].to_vec())),
        Step::Submit(Submission::append("ben", "main", vec![RuleApplication::new("motor", 1, vec![50.0, 30.0])])),
        Step::Submit(Submission::append("ben", "main", d[3..6].to_vec())),
        Step::Submit(Submission::append("ana", "main", d[6..].to_vec())),
        Step::Submit(fork),
        Step::Submit(Submission::replace("ana", "main", 9, d[9..].to_vec())),
        Step::Finalize("ana", "main"),
        Step::Submit(Submission::append("ben", "alt", d[9..].to_vec())),
        Step::Finalize("ben", "alt"),
    ]
}

fn drive_http(svc: &ServiceHandle) -> String {
    let (_, task) = post(svc, "/tasks", json!({"publisher": "pub", "shapeType": QUAD}));
    let id = task["id"].as_str().unwrap().to_string();
    for step in script() {
        let (status, _) = match step {
            Step::Submit(sub) => post(svc, &format!("/tasks/{id}/submit"), serde_json::to_value(sub).unwrap()),
            Step::Finalize(who, branch) => post(
                svc,
                &format!("/tasks/{id}/finalize"),
                json!({"designerId": who, "branch": branch}),
            ),
        };
        assert!(status == 200 || status == 422, "{status}");
    }
    id
}

fn drive_library(store: &SessionStore) -> String {
    let t = store.publish_task("pub", FIXTURE_GRAMMAR, QUAD, "").unwrap();
    for step in script() {
        match step {
            Step::Submit(sub) => store.submit(&t.id, sub).unwrap(),
            Step::Finalize(who, branch) => store.submit(&t.id, Submission::finalize(who, branch)).unwrap(),
        };
    }
    t.id
}

fn http_state(svc: &ServiceHandle, id: &str) -> Value {
    json!({
        "task": get(svc, &format!("/tasks/{id}")).1,
        "progress": get(svc, &format!("/tasks/{id}/progress")).1,
        "solutions": get(svc, &format!("/tasks/{id}/solutions")).1,
        "contributions": get(svc, &format!("/tasks/{id}/contributions")).1,
    })
}

#[test]
fn http_session_matches_library_session() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    let id = drive_http(&svc);

    let store = SessionStore::in_memory();
    let lib_id = drive_library(&store);
    assert_eq!(id, lib_id);
    let lib = json!({
        "task": store.task(&id).unwrap(),
        "progress": store.progress(&id).unwrap(),
        "solutions": store.collect_solutions(&id).unwrap(),
        "contributions": store.contributions(&id).unwrap(),
    });
    let http = http_state(&svc, &id);
    assert_eq!(http, lib);
    assert_eq!(http["solutions"].as_array().unwrap().len(), 2);
    assert_eq!(http["progress"]["events"].as_array().unwrap().len(), 9);

    // assembly of a finalized solution, both formats
    let (status, asm) = get(&svc, &format!("/assembly/{id}.main"));
    assert_eq!(status, 200);
    assert_eq!(asm["solutionId"], format!("{id}.main"));
    assert!(!asm["assembly"]["occurrences"].as_array().unwrap().is_empty());
    let obj = agent()
        .get(&svc.url(&format!("/assembly/{id}.main?format=obj")))
        .call()
        .unwrap()
        .body_mut()
        .read_to_string()
        .unwrap();
    assert!(obj.lines().any(|l| l.starts_with("v ")));
    assert!(obj.lines().any(|l| l.starts_with("f ")));
    assert_eq!(get(&svc, &format!("/assembly/{id}.nope")).0, 404);
}

#[test]
fn restart_replays_to_the_same_state() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    let id = drive_http(&svc);
    let before = http_state(&svc, &id);
    svc.shutdown().unwrap();

    let svc = boot(dir.path());
    assert_eq!(http_state(&svc, &id), before);
    // the log keeps growing after a restart
    let (status, body) = post(&svc, &format!("/tasks/{id}/close"), json!({"publisher": "pub"}));
    assert_eq!(status, 200);
    assert_eq!(body["seq"], 10);
    let (status, _) = post(&svc, &format!("/tasks/{id}/close"), json!({"publisher": "pub"}));
    assert_eq!(status, 400);
}

#[test]
fn completions_are_grammar_valid() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    let (status, body) = post(&svc, "/complete/train", json!({"seedWalks": 60, "walkSeed": 3, "epochs": 2}));
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["trainingDesigns"], 60);
    assert!(dir.path().join("models/completer.json").exists());

    post(&svc, "/tasks", json!({"publisher": "pub", "shapeType": QUAD}));
    let d = demo_drone().applications;
    post(
        &svc,
        "/tasks/task-1/submit",
        json!({"designerId": "ana", "kind": "append-rules", "applications": apps(&d[..5])}),
    );
    let g = drone_grammar();
    let (status, body) = post(&svc, "/complete", json!({"taskId": "task-1", "k": 3}));
    assert_eq!(status, 200, "{body}");
    let completions = body["completions"].as_array().unwrap();
    assert_eq!(completions.len(), 3);
    assert_eq!(body["rejected"], 0);
    for c in completions {
        let seq: DesignSequence = serde_json::from_value(c["sequence"].clone()).unwrap();
        assert_eq!(seq.applications[..5], d[..5]);
        assert!(check_constraints(&g, &seq).is_empty());
        assert!(c["score"].as_f64().unwrap().is_finite());
    }

    let (status, _) = post(&svc, "/complete", json!({"k": 3}));
    assert_eq!(status, 400);
    let (status, _) = post(&svc, "/complete", json!({"taskId": "task-1", "k": 0}));
    assert_eq!(status, 400);

    // a restarted service picks the saved checkpoint up
    svc.shutdown().unwrap();
    let svc = boot(dir.path());
    let (status, again) = post(&svc, "/complete", json!({"taskId": "task-1", "k": 3}));
    assert_eq!(status, 200);
    assert_eq!(again, body);
}

#[test]
fn expansion_routes() {
    let dir = tempfile::tempdir().unwrap();
    let svc = boot(dir.path());
    let (status, body) = post(&svc, "/expand/train-gan", json!({"seedWalks": 40, "epochs": 2}));
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["trainingDesigns"], 40);
    assert_eq!(body["epochs"], 2);
    let (status, body) = post(
        &svc,
        "/expand/sample",
        json!({"label": QUAD, "n": 6, "seed": 1, "includeEmbeddings": true}),
    );
    assert_eq!(status, 200, "{body}");
    let samples = body["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 6);
    assert!(samples.iter().all(|s| s.get("embedding").is_some()));
    let valid = samples.iter().filter(|s| s["valid"] == true).count();
    assert_eq!(body["validCount"], valid);
    let (status, _) = post(&svc, "/expand/sample", json!({"label": "boat", "n": 2}));
    assert_eq!(status, 400);

    // the demo drone is a well-formed design; an empty design is not
    let drone = demo_drone();
    let empty = DesignSequence {
        applications: Vec::new(),
        ..drone.clone()
    };
    let (status, report) = post(
        &svc,
        "/expand/select",
        json!({
            "solutions": [{"id": "good", "sequence": drone}, {"id": "bare", "sequence": empty}],
            "policy": {"policy": "threshold", "tau": 0.5},
        }),
    );
    assert_eq!(status, 200, "{report}");
    let good = report["scores"]["good"].as_f64().unwrap();
    let bare = report["scores"]["bare"].as_f64().unwrap();
    assert!(good > bare, "{good} vs {bare}");
    assert!((0.0..=1.0).contains(&good));
    assert_eq!(report["policy"]["policy"], "threshold");
}
