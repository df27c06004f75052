use std::sync::OnceLock;
use std::time::Instant;

use stormsim::engine::{
    fit_all, simulate_catalog, storm_seed, ModelBundle, SamplerTag, SimulationOptions, Simulator,
    TerminationCause,
};
use stormsim::synthetic::{toy_catalog, ToyConfig};
use stormsim::Error;

fn bundle() -> &'static ModelBundle {
    static B: OnceLock<ModelBundle> = OnceLock::new();
    B.get_or_init(|| {
        let t = Instant::now();
        let catalog = toy_catalog(&ToyConfig::default()).unwrap();
        let (b, report) = fit_all(&catalog, &Default::default()).unwrap();
        eprintln!("{report}fit in {:?}", t.elapsed());
        b
    })
}

#[test]
fn bundle_json_round_trips() {
    let b = bundle();
    let text = b.to_json().unwrap();
    let back = ModelBundle::from_json(&text).unwrap();
    assert_eq!(&back, b);
    assert_eq!(back.to_json().unwrap(), text);
}

#[test]
fn wrong_schema_version_rejected() {
    let text = bundle().to_json().unwrap().replacen("\"schema_version\":1", "\"schema_version\":99", 1);
    assert!(matches!(ModelBundle::from_json(&text), Err(Error::Schema { found: 99, .. })));
}

#[test]
fn every_active_cell_is_served() {
    let b = bundle();
    for c in b.grid.active_cells() {
        let f = b.grid.flat(c);
        for m in [&b.genesis_conditions, &b.bearing, &b.speed, &b.vorticity] {
            assert!(m.get(f).is_some(), "cell {f} has no model");
        }
    }
}

#[test]
fn forced_termination_gives_eight_points() {
    let opts = SimulationOptions {
        forced_hazard: Some(1.0),
        ..Default::default()
    };
    let cat = simulate_catalog(bundle(), 40, 3, 1, &opts).unwrap();
    assert_eq!(cat.storms.len(), 40);
    for s in &cat.storms {
        assert_eq!(s.track.len(), 8);
        assert_eq!(s.cause, TerminationCause::Hazard);
    }
}

#[test]
fn zero_hazard_runs_to_max_age_or_leaves() {
    let opts = SimulationOptions {
        forced_hazard: Some(0.0),
        max_age: 60,
        ..Default::default()
    };
    let cat = simulate_catalog(bundle(), 20, 4, 1, &opts).unwrap();
    for s in &cat.storms {
        match s.cause {
            TerminationCause::MaxAge => assert_eq!(s.track.len(), 60),
            TerminationCause::Geographic => assert!(s.track.len() < 60),
            TerminationCause::Hazard => panic!("hazard fired at zero probability"),
        }
    }
}

#[test]
fn simulated_points_stay_in_active_cells() {
    let b = bundle();
    let cat = simulate_catalog(b, 100, 5, 1, &Default::default()).unwrap();
    for s in &cat.storms {
        assert!(s.track.len() >= 8);
        assert_eq!(s.tags[0], SamplerTag::Genesis);
        assert!(s.tags[1..].iter().all(|&t| t != SamplerTag::Genesis));
        for p in s.track.points() {
            assert!(b.grid.active_cell(p.position()).is_some());
            assert!(p.vorticity > 0.0);
        }
    }
}

#[test]
fn storms_regenerate_from_their_seed() {
    let b = bundle();
    let sim = Simulator::new(b).unwrap();
    let opts = SimulationOptions::default();
    let cat = sim.simulate_catalog(10, 11, 2, &opts).unwrap();
    for (i, s) in cat.storms.iter().enumerate() {
        assert_eq!(s.seed, storm_seed(11, i as u64));
        let again = sim.simulate_storm(s.seed, &opts).unwrap();
        assert_eq!(again.track.points(), s.track.points());
        assert_eq!(again.tags, s.tags);
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let b = bundle();
    let opts = SimulationOptions::default();
    let a = simulate_catalog(b, 30, 9, 1, &opts).unwrap();
    let c = simulate_catalog(b, 30, 9, 4, &opts).unwrap();
    assert_eq!(a, c);
}

#[test]
fn years_scale_with_training_rate() {
    let b = bundle();
    let cat = simulate_catalog(b, 60, 1, 1, &Default::default()).unwrap();
    assert!((cat.years_of_record - 60.0 / b.storms_per_year).abs() < 1e-12);
}

#[test]
fn one_storm_catalog_is_insufficient() {
    let one = toy_catalog(&ToyConfig {
        storms: 1,
        ..Default::default()
    })
    .unwrap();
    let err = fit_all(&one, &Default::default()).unwrap_err();
    assert!(matches!(err, Error::InsufficientData { .. }), "{err}");
}
