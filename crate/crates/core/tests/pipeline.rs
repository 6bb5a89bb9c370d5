use shapeflow_core::fixtures::*;
use shapeflow_core::gan::GanConfig;
use shapeflow_core::grammar::check_constraints;
use shapeflow_core::pipeline::*;
use shapeflow_core::transformer::CompleterConfig;
use shapeflow_core::vecspace::read_dataset;

fn tiny() -> DemoManifest {
    DemoManifest {
        seed_walks: 60,
        held_out: 10,
        samples: 40,
        gan: GanConfig {
            gen_channels: 16,
            disc_channels: 8,
            epochs: 3,
            ..GanConfig::default()
        },
        completer: CompleterConfig {
            epochs: 2,
            ..CompleterConfig::default()
        },
        ..DemoManifest::with_seed(3)
    }
}

#[test]
fn small_demo_is_reproducible_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_demo(&tiny(), Some(dir.path())).unwrap();
    let b = run_demo(&tiny(), None).unwrap();
    assert_eq!(summary_json(&a), summary_json(&b));
    assert!(a.synthetic);
    assert_eq!(a.grammar_issues, 0);
    assert_eq!(a.seed_designs, 60);
    assert_eq!(a.samples.total, 40);
    assert_eq!(a.samples.quad_samples, 20);
    assert!(a.selection.kept <= a.selection.scored && a.selection.scored == a.samples.valid);
    assert_eq!(a.completer_training_designs, 60 + a.selection.kept);
    assert_eq!(a.completion.prefix.len(), 3);
    let g = drone_grammar();
    for c in &a.completion.completions {
        assert!(check_constraints(&g, &c.sequence).is_empty());
        assert_eq!(c.sequence.applications[..3], a.completion.prefix.applications[..]);
    }
    assert_eq!(a.completion.all_valid, !a.completion.completions.is_empty());

    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert_eq!(summary, summary_json(&a));
    let seeds = read_dataset(std::io::BufReader::new(
        std::fs::File::open(dir.path().join("datasets/seed.jsonl")).unwrap(),
    ))
    .unwrap();
    assert_eq!(seeds.len(), 60);
    let generated = std::fs::read_to_string(dir.path().join("datasets/generated.jsonl")).unwrap();
    assert_eq!(generated.lines().count(), a.selection.kept);
    assert!(dir.path().join("models/gan.json").exists());
    assert!(dir.path().join("models/completer.json").exists());
}

#[test]
fn presets_are_valid_prefixes() {
    let g = drone_grammar();
    for name in ["body", "body+4arms", "body+2arms"] {
        let p = preset_prefix(name).unwrap();
        assert!(shapeflow_core::grammar::DesignState::replay_checked(&g, &p).is_ok(), "{name}");
    }
    assert!(preset_prefix("body+3arms").is_none());
}
