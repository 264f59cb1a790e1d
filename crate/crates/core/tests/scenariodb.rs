use std::sync::OnceLock;

use leakhunt::hydraulics::{solve_steady_state, SolverSettings};
use leakhunt::network::{MeterConfig, MeterTag};
use leakhunt::scenariodb::{
    build_random_db, build_scenario_db, DbError, GridConfig, LeakSimulator, Range, RandomConfig,
    ScenarioDatabase,
};
use leakhunt::synthetic;

fn grid_db() -> &'static ScenarioDatabase {
    static DB: OnceLock<ScenarioDatabase> = OnceLock::new();
    DB.get_or_init(|| {
        let net = synthetic::three_dma();
        build_scenario_db(&net, &net.meters, &GridConfig::default()).unwrap()
    })
}

#[test]
fn grid_has_one_scenario_per_cell() {
    let db = grid_db();
    assert_eq!(db.len(), 30 * 10 * 10);
    assert!(db.header.failures.is_empty());
    assert_eq!(db.header.pipes.len(), 30);
    let n_meters = synthetic::three_dma().meters.len();
    assert!(db.scenarios.iter().all(|s| s.meter_deltas.len() == n_meters));
    assert!(db.scenarios.iter().all(|s| s.dma_amsi_deltas.len() == 3));
}

#[test]
fn every_scenario_raises_its_own_district_amsi() {
    let db = grid_db();
    for s in &db.scenarios {
        let own = &db.pipe_id(s)[..1];
        let slot = db.header.dmas.iter().position(|d| d == own).unwrap();
        assert!(s.dma_amsi_deltas[slot] > 0.0, "{} d={}", db.pipe_id(s), s.orifice_diameter);
        for (i, delta) in s.dma_amsi_deltas.iter().enumerate() {
            if i != slot {
                assert!(*delta <= 1e-12);
            }
        }
        assert!(s.leak_outflow > 0.0);
    }
}

#[test]
fn smallest_outflow_is_at_the_smallest_orifice_on_the_weakest_pipe() {
    let db = grid_db();
    let min = db
        .scenarios
        .iter()
        .min_by(|a, b| a.leak_outflow.total_cmp(&b.leak_outflow))
        .unwrap();
    assert_eq!(min.orifice_diameter, db.header.orifice.min);
    assert_eq!(min.demand_multiplier, db.header.demand.max);
    let net = synthetic::three_dma();
    let s = solve_steady_state(&net, min.demand_multiplier, &SolverSettings::default()).unwrap();
    let weakest = (0..net.n_pipes())
        .min_by(|&a, &b| s.pipe_pressures[a].total_cmp(&s.pipe_pressures[b]))
        .unwrap();
    assert_eq!(db.pipe_id(min), net.pipes[weakest].id);
}

#[test]
fn vanishing_orifice_reproduces_the_baseline() {
    let net = synthetic::three_dma();
    let sim = LeakSimulator::new(&net, &net.meters, SolverSettings::default()).unwrap();
    let base = sim.baseline(1.0, None).unwrap();
    for k in [2, 14, 27] {
        let s = sim.scenario(&base, k, 0.005 * 1e-3).unwrap();
        assert!(s.meter_deltas.iter().all(|d| d.abs() < 1e-6), "{:?}", s.meter_deltas);
        assert!(s.dma_amsi_deltas.iter().all(|d| d.abs() < 1e-6));
    }
}

#[test]
fn signal_grows_with_orifice_diameter() {
    let db = grid_db();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for p in 0..db.header.pipes.len() {
        for j in 0..10 {
            let cells: Vec<_> = (0..10).map(|i| &db.scenarios[p * 100 + i * 10 + j]).collect();
            for w in cells.windows(2) {
                assert_eq!(w[0].pipe, p);
                assert!(w[1].orifice_diameter > w[0].orifice_diameter);
                assert!(w[1].leak_outflow > w[0].leak_outflow);
                assert!(norm(&w[1].meter_deltas) >= norm(&w[0].meter_deltas) - 1e-6);
            }
        }
    }
}

#[test]
fn scenarios_reproduce_when_resolved() {
    let db = grid_db();
    let net = synthetic::three_dma();
    let sim = LeakSimulator::new(&net, &net.meters, db.header.solver).unwrap();
    for idx in [0, 1234, 2999] {
        let s = &db.scenarios[idx];
        let base = sim.baseline(s.demand_multiplier, None).unwrap();
        let k = net.pipe_index(db.pipe_id(s)).unwrap();
        let again = sim.scenario(&base, k, s.orifice_diameter).unwrap();
        for (a, b) in again.meter_deltas.iter().zip(&s.meter_deltas) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn grid_build_does_not_depend_on_worker_count() {
    let net = synthetic::three_dma();
    let cfg = GridConfig { orifice_steps: 5, demand_steps: 2, ..GridConfig::default() };
    let one = leakhunt::scenariodb::with_workers(Some(1), || build_scenario_db(&net, &net.meters, &cfg).unwrap());
    let many = leakhunt::scenariodb::with_workers(Some(4), || build_scenario_db(&net, &net.meters, &cfg).unwrap());
    assert_eq!(one.to_bytes(), many.to_bytes());
}

#[test]
fn too_few_orifice_sizes_are_rejected() {
    let net = synthetic::three_dma();
    let cfg = GridConfig { orifice_steps: 4, ..GridConfig::default() };
    assert!(matches!(build_scenario_db(&net, &net.meters, &cfg), Err(DbError::Config(_))));
}

#[test]
fn random_db_is_reproducible_and_in_range() {
    let net = synthetic::three_dma();
    let cfg = RandomConfig { n_events: 300, seed: 42, ..RandomConfig::default() };
    let a = build_random_db(&net, &net.meters, &cfg).unwrap();
    let b = build_random_db(&net, &net.meters, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.len(), 300);
    for s in &a.scenarios {
        assert!((0.005..=0.02).contains(&s.orifice_diameter));
        assert!((0.5..=1.5).contains(&s.demand_multiplier));
    }
    let c = build_random_db(&net, &net.meters, &RandomConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn random_pipe_choice_is_uniform() {
    // chi-square on 10,000 draws over 30 pipes, 29 degrees of freedom
    let (o, d) = (Range::new(0.005, 0.02), Range::new(0.5, 1.5));
    let mut counts = [0usize; 30];
    for i in 0..10_000 {
        counts[leakhunt::scenariodb::random_event_draw(7, i, 30, o, d).0] += 1;
    }
    let expected = 10_000.0 / 30.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // mean 29, sd sqrt(58) ≈ 7.6: 4 sigma
    assert!(chi2 < 29.0 + 4.0 * 58f64.sqrt(), "chi2 = {chi2}");
}

#[test]
fn save_and_load_round_trip() {
    let db = grid_db();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.bin");
    db.save(&path).unwrap();
    let back = ScenarioDatabase::load(&path).unwrap();
    assert_eq!(&back, db);
    let net = synthetic::three_dma();
    back.verify(&net, &net.meters).unwrap();
}

#[test]
fn load_rejects_foreign_networks_and_damaged_files() {
    let db = grid_db();
    let mut edited = synthetic::three_dma();
    edited.pipes[3].diameter *= 1.1;
    assert!(matches!(
        db.verify(&edited, &edited.meters),
        Err(DbError::Fingerprint { what: "network", .. })
    ));
    let net = synthetic::three_dma();
    let fewer = MeterConfig { pressure: net.meters.pressure[..3].to_vec(), ..net.meters.clone() };
    assert!(matches!(db.verify(&net, &fewer), Err(DbError::Fingerprint { .. })));

    let bytes = db.to_bytes();
    for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
        let err = ScenarioDatabase::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, DbError::Truncated(_)), "cut {cut}: {err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(ScenarioDatabase::from_bytes(&bad), Err(DbError::BadMagic)));
    let mut bad = bytes;
    bad[4] = 9;
    assert!(matches!(ScenarioDatabase::from_bytes(&bad), Err(DbError::Version { found: 9 })));
}

#[test]
fn projecting_meters_matches_a_rebuild() {
    let spec = synthetic::three_dma_spec();
    let net = synthetic::three_dma();
    let cfg = GridConfig { orifice_steps: 5, demand_steps: 2, ..GridConfig::default() };
    let full = build_scenario_db(&net, &net.meters, &cfg).unwrap();
    let boundary = synthetic::meter_layout(&spec, MeterTag::Boundary);
    let rebuilt = build_scenario_db(&net, &boundary, &cfg).unwrap();
    let projected = full.project_meters(&boundary).unwrap();
    assert_eq!(projected, rebuilt);
    let bogus = MeterConfig {
        pressure: vec![leakhunt::network::PressureMeter { node: "nope".into(), tag: MeterTag::Boundary }],
        ..boundary
    };
    assert!(matches!(full.project_meters(&bogus), Err(DbError::UnknownMeter(_))));
}

#[test]
fn csv_export_has_one_row_per_scenario() {
    let db = grid_db();
    let csv = db.to_csv();
    assert_eq!(csv.lines().count(), db.len() + 1);
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("pipe,orifice_diameter_m,demand_multiplier,leak_outflow_lps,delta_"));
    assert!(header.ends_with("amsi_delta_C"));
}
