use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeflow_core::fixtures::*;
use shapeflow_core::gan::*;
use shapeflow_core::grammar::walk::walk_corpus;
use shapeflow_core::nn::Checkpoint;
use shapeflow_core::vecspace::*;

fn fixture(n: usize) -> (SpaceConfig, Vec<EmbeddedSequence>) {
    let g = drone_grammar();
    let space = SpaceConfig::for_grammar(&g);
    let data = walk_corpus(&g, n, 7, &drone_walk_config())
        .iter()
        .map(|s| embed_sequence(&g, &space, s).unwrap())
        .collect();
    (space, data)
}

fn small() -> GanConfig {
    GanConfig {
        gen_channels: 16,
        disc_channels: 8,
        batch: 16,
        ..GanConfig::default()
    }
}

fn types() -> Vec<String> {
    drone_grammar().shape_types
}

#[test]
fn zero_epochs_equal_initialization() {
    let (space, data) = fixture(20);
    let fresh = GanModel::new(space.clone(), types(), small()).unwrap();
    let cfg = GanConfig { epochs: 0, ..small() };
    let trained = train_gan(&data, space, types(), cfg.clone()).unwrap();
    assert_eq!(trained.generator, fresh.generator);
    assert_eq!(trained.discriminator, fresh.discriminator);
    assert!(trained.loss_history.is_empty());
}

#[test]
fn rejects_bad_inputs() {
    let (space, data) = fixture(4);
    assert!(matches!(
        train_gan(&[], space.clone(), types(), small()),
        Err(GanError::EmptyDataset)
    ));
    let mut odd = data[0].clone();
    odd.matrix.pop();
    assert!(matches!(
        train_gan(&[odd.clone()], space.clone(), types(), small()),
        Err(GanError::Shape(_))
    ));
    let m = GanModel::new(space.clone(), types(), small()).unwrap();
    assert!(matches!(m.discriminate(&odd), Err(GanError::Shape(_))));
    assert!(matches!(m.sample("hexacopter", 3, 0), Err(GanError::UnknownLabel(_))));
    assert!(GanModel::new(space.with_max_rules(30), types(), small()).is_err());
}

#[test]
fn sampling_is_deterministic_and_bounded() {
    let (space, data) = fixture(40);
    let cfg = GanConfig { epochs: 2, ..small() };
    let m = train_gan(&data, space.clone(), types(), cfg).unwrap();
    assert!(m.sample(QUAD, 0, 1).unwrap().is_empty());
    let a = m.sample(QUAD, 70, 9).unwrap();
    assert_eq!(a, m.sample(QUAD, 70, 9).unwrap());
    assert_ne!(a, m.sample(QUAD, 70, 10).unwrap());
    assert_eq!(a.len(), 70);
    for e in &a {
        assert_eq!(e.shape_type, QUAD);
        assert_eq!(e.matrix.len(), space.max_rules);
        for row in &e.matrix {
            assert_eq!(row.len(), space.row_width());
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let p = m.discriminate(e).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn training_is_deterministic() {
    let (space, data) = fixture(40);
    let cfg = GanConfig { epochs: 2, ..small() };
    let a = train_gan(&data, space.clone(), types(), cfg.clone()).unwrap();
    let b = train_gan(&data, space, types(), cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn losses_stay_finite_across_seeds() {
    let (space, data) = fixture(120);
    for seed in [1, 2, 3] {
        let cfg = GanConfig {
            epochs: 6,
            seed,
            ..small()
        };
        let m = train_gan(&data, space.clone(), types(), cfg).unwrap();
        assert_eq!(m.loss_history.len(), 6);
        for r in &m.loss_history {
            assert!(r.d_loss.is_finite() && r.g_loss.is_finite(), "seed {seed}: {r:?}");
        }
    }
}

#[test]
fn label_changes_output() {
    let (space, data) = fixture(60);
    let cfg = GanConfig { epochs: 3, ..small() };
    let m = train_gan(&data, space, types(), cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z: Vec<f64> = (0..m.config.noise_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let quad = m.generate_with_noise(QUAD, std::slice::from_ref(&z)).unwrap();
    let twin = m.generate_with_noise(TWIN, &[z]).unwrap();
    let diff = quad[0]
        .iter()
        .flatten()
        .zip(twin[0].iter().flatten())
        .fold(0.0f64, |d, (a, b)| d.max((a - b).abs()));
    assert!(diff > 0.0);
}

#[test]
#[ignore = "adversarial training does not converge on a point-mass dataset; run with --ignored"]
fn identical_designs_are_reproduced() {
    let g = drone_grammar();
    let space = SpaceConfig::for_grammar(&g);
    let demo = embed_sequence(&g, &space, &demo_drone()).unwrap();
    let data = vec![demo.clone(); 32];
    let cfg = GanConfig {
        epochs: 200,
        seed: 7,
        ..small()
    };
    let m = train_gan(&data, space.clone(), types(), cfg).unwrap();
    let samples = m.sample(QUAD, 64, 1).unwrap();
    let rows = demo.occupied_rows(&space);
    let mut worst = 0.0f64;
    for r in 0..rows {
        for c in 0..space.row_width() {
            let mean = samples.iter().map(|s| s.matrix[r][c]).sum::<f64>() / samples.len() as f64;
            worst = worst.max((mean - demo.matrix[r][c]).abs());
        }
    }
    assert!(worst <= 0.15, "L-inf gap {worst}");
}

#[test]
fn discriminator_separates_real_from_noise() {
    let (space, data) = fixture(200);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise: Vec<EmbeddedSequence> = data
        .iter()
        .map(|e| EmbeddedSequence {
            matrix: e
                .matrix
                .iter()
                .map(|row| row.iter().map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect(),
            ..e.clone()
        })
        .collect();
    let (train_real, test_real) = data.split_at(150);
    let (train_noise, test_noise) = noise.split_at(150);
    let mut m = GanModel::new(space, types(), small()).unwrap();
    let frozen = m.generator.clone();
    m.train_discriminator(train_real, train_noise, 10).unwrap();
    assert_eq!(m.generator, frozen);
    let real_ok = test_real.iter().filter(|e| m.discriminate(e).unwrap() > 0.5).count();
    let noise_ok = test_noise.iter().filter(|e| m.discriminate(e).unwrap() < 0.5).count();
    let acc = (real_ok + noise_ok) as f64 / 100.0;
    assert!(acc > 0.95, "accuracy {acc}");
}

#[test]
fn checkpoint_round_trips() {
    let (space, data) = fixture(20);
    let cfg = GanConfig { epochs: 1, ..small() };
    let m = train_gan(&data, space, types(), cfg).unwrap();
    let c = m.to_checkpoint();
    let back = GanModel::from_checkpoint(&Checkpoint::from_json(&c.to_json()).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.sample(TWIN, 5, 3).unwrap(), m.sample(TWIN, 5, 3).unwrap());
    let mut wrong = c.clone();
    wrong.kind = "completer".into();
    assert!(GanModel::from_checkpoint(&wrong).is_err());
}
