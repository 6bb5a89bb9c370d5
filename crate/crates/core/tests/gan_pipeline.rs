use shapeflow_core::fixtures::*;
use shapeflow_core::gan::*;
use shapeflow_core::grammar::check_constraints;
use shapeflow_core::grammar::walk::walk_corpus;
use shapeflow_core::vecspace::*;

/// Default-size training on the 500-walk corpus, checked the way the demo does.
#[test]
fn trained_samples_snap_and_respect_labels() {
    let g = drone_grammar();
    let space = SpaceConfig::for_grammar(&g);
    let data: Vec<_> = walk_corpus(&g, 500, 7, &drone_walk_config())
        .iter()
        .map(|s| embed_sequence(&g, &space, s).unwrap())
        .collect();
    let m = train_gan(&data, space.clone(), g.shape_types.clone(), GanConfig::default()).unwrap();

    let mut samples = m.sample(QUAD, 100, 11).unwrap();
    samples.extend(m.sample(TWIN, 100, 12).unwrap());
    let valid = samples
        .iter()
        .filter(|e| snap_sequence(&g, &space, e).is_ok_and(|s| check_constraints(&g, &s).is_empty()))
        .count();

    let quads = m.sample(QUAD, 200, 13).unwrap();
    let four = quads
        .iter()
        .filter(|e| snap_sequence(&g, &space, e).is_ok_and(|s| s.count_rule("motor") == 4))
        .count();
    eprintln!("valid {valid}/200, four-motor {four}/200");
    assert!(valid >= 160, "valid {valid}/200");
    assert!(four >= 140, "four-motor {four}/200");
}
