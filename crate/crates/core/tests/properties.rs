//! Property tests for module invariants.

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;

use stormsim::catalog::{
    destination_point, great_circle_distance, grid_cell, initial_bearing, Catalog, GridSpec, LonLat, StormTrack,
    TrackPoint, STEP_SECONDS,
};
use stormsim::condex::fit_condex;
use stormsim::evt::{gpd_survival, gpd_survival_inverse, MixtureMarginal, GpdOptions};
use stormsim::kde::{fit_kde, KdeStructure};
use stormsim::risk::{
    bootstrap_ci, exceedance_prob, return_level, return_period, spatial_density, BootstrapOptions, Region, Status,
    Statistic, Subset,
};

fn lonlat() -> impl Strategy<Value = LonLat> {
    (-179.0..179.0f64, -75.0..75.0f64).prop_map(|(lon, lat)| LonLat::new(lon, lat))
}

/// Small random catalogs of eight-point storms inside a 20° x 20° box.
fn catalog() -> impl Strategy<Value = Catalog> {
    let storm = prop::collection::vec((-10.0..10.0f64, 40.0..60.0f64, 0.5..15.0f64), 8..12);
    (prop::collection::vec(storm, 1..12), 1.0..30.0f64).prop_map(|(storms, years)| {
        let tracks = storms
            .into_iter()
            .enumerate()
            .map(|(i, pts)| {
                let points = pts
                    .into_iter()
                    .enumerate()
                    .map(|(t, (lon, lat, w))| TrackPoint {
                        lon,
                        lat,
                        time_index: t as i64,
                        vorticity: w,
                    })
                    .collect();
                StormTrack::new(format!("s{i}"), points).unwrap()
            })
            .collect();
        Catalog::new(tracks, years).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn destination_reproduces_next_point(p in lonlat(), speed in 1.0..40.0f64, bearing in -PI..PI) {
        let q = destination_point(p, speed, bearing, STEP_SECONDS).unwrap();
        let d = great_circle_distance(p, q);
        let expected = speed * STEP_SECONDS;
        prop_assert!((d - expected).abs() <= 1e-6 * expected);
        let b = initial_bearing(p, q).unwrap();
        let back = destination_point(p, d / STEP_SECONDS, b, STEP_SECONDS).unwrap();
        prop_assert!(great_circle_distance(back, q) <= 1e-6 * expected);
    }

    #[test]
    fn distance_is_a_metric(a in lonlat(), b in lonlat(), c in lonlat()) {
        let (ab, ba) = (great_circle_distance(a, b), great_circle_distance(b, a));
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        let (bc, ac) = (great_circle_distance(b, c), great_circle_distance(a, c));
        prop_assert!(ac <= ab + bc + 1e-6);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn grid_cells_partition_points(cat in catalog(), dlon in 1.0..8.0f64, dlat in 1.0..6.0f64) {
        let grid = GridSpec::covering(&cat, dlon, dlat, 1).unwrap();
        let counts = grid.counts(cat.points().map(|p| p.position()));
        prop_assert_eq!(counts.iter().sum::<usize>(), cat.n_points());
        for p in cat.points() {
            let c = grid_cell(p.position(), &grid).expect("covering grid holds every point");
            let lo = grid.lon0 + c.ix as f64 * grid.dlon;
            let bo = grid.lat0 + c.iy as f64 * grid.dlat;
            prop_assert!(p.lon >= lo - 1e-9 && p.lon < lo + grid.dlon + 1e-9);
            prop_assert!(p.lat >= bo - 1e-9 && p.lat < bo + grid.dlat + 1e-9);
            prop_assert!(grid.is_active(c));
        }
    }

    #[test]
    fn kde_density_nonnegative_and_periodic(seed in 0u64..1000, x in -4.0..4.0f64, y in -PI..PI) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![n.sample(&mut rng), (2.8f64 + 0.6 * n.sample(&mut rng)).rem_euclid(2.0 * PI) - PI])
            .collect();
        let m = fit_kde(&data, KdeStructure::Diagonal, 1.0, &[1]).unwrap();
        prop_assert!(m.density(&[x, y]).unwrap() >= 0.0);
        let lo = m.density(&[x, -PI]).unwrap();
        let hi = m.density(&[x, PI]).unwrap();
        prop_assert!((lo - hi).abs() <= 1e-12 * lo.max(1e-300));
    }

    #[test]
    fn conditional_weights_form_a_distribution(seed in 0u64..1000, v in -3.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let a = n.sample(&mut rng);
                vec![a, 0.5 * a + n.sample(&mut rng)]
            })
            .collect();
        let m = fit_kde(&data, KdeStructure::Oriented, 1.0, &[]).unwrap();
        let w = m.conditional(&[0], &[1]).unwrap().weights(&[v]).unwrap();
        prop_assert!(w.iter().all(|x| *x >= 0.0 && x.is_finite()));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gpd_quantile_round_trip(scale in 0.05..5.0f64, shape in -0.45..0.6f64, tail in 1e-6..1.0f64) {
        let z = gpd_survival_inverse(scale, shape, tail);
        prop_assert!((gpd_survival(scale, shape, z) - tail).abs() <= 1e-10 * tail.max(1e-3));
    }

    #[test]
    fn exceedance_matches_brute_force(cat in catalog(), w in 0.0..16.0f64) {
        let region = Region::new(-5.0, 5.0, 45.0, 55.0).unwrap();
        let (mut e, mut n) = (0usize, 0usize);
        for s in &cat.storms {
            for p in s.points() {
                if p.lon > -5.0 && p.lon < 5.0 && p.lat > 45.0 && p.lat < 55.0 {
                    n += 1;
                    if p.vorticity > w {
                        e += 1;
                    }
                }
            }
        }
        match exceedance_prob(&cat, &region, w) {
            Ok(r) => {
                prop_assert_eq!((r.numerator, r.denominator), (e, n));
                prop_assert_eq!(r.estimate, e as f64 / n as f64);
            }
            Err(_) => prop_assert_eq!(n, 0),
        }
    }

    #[test]
    fn return_period_non_increasing_in_level(cat in catalog(), a in 0.0..16.0f64, b in 0.0..16.0f64) {
        let region = Region::new(-10.0, 10.0, 40.0, 60.0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = return_period(&cat, &region, lo).unwrap();
        let p_hi = return_period(&cat, &region, hi).unwrap();
        prop_assert!(p_lo.estimate <= p_hi.estimate);
    }

    #[test]
    fn return_level_non_decreasing_in_period(cat in catalog(), a in 0.01..40.0f64, b in 0.01..40.0f64) {
        let region = Region::new(-10.0, 10.0, 40.0, 60.0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let l_lo = return_level(&cat, &region, lo).unwrap();
        let l_hi = return_level(&cat, &region, hi).unwrap();
        if l_lo.status == Status::Ok && l_hi.status == Status::Ok {
            prop_assert!(l_lo.estimate <= l_hi.estimate);
        }
        if l_lo.status == Status::ExtrapolationUnsupported {
            prop_assert_eq!(l_hi.status, Status::ExtrapolationUnsupported);
        }
    }

    #[test]
    fn spatial_density_sums_to_one(cat in catalog(), area in any::<bool>()) {
        let grid = GridSpec::covering(&cat, 4.0, 3.0, 1).unwrap();
        for subset in [Subset::All, Subset::Genesis, Subset::Lysis] {
            let d = spatial_density(&cat.storms, &grid, subset, area).unwrap();
            prop_assert!(d.iter().all(|x| *x >= 0.0));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bootstrap_deterministic_under_seed(cat in catalog(), seed in any::<u64>()) {
        let region = Region::new(-10.0, 10.0, 40.0, 60.0).unwrap();
        let stat = Statistic::Exceedance(7.0);
        let opts = BootstrapOptions { replicates: 200, level: 0.95, seed, workers: 1 };
        let years = cat.years_of_record;
        let f = |s: &[&StormTrack]| stat.evaluate(s, years, &region);
        let a = bootstrap_ci(&cat.storms, f, &opts).unwrap();
        let b = bootstrap_ci(&cat.storms, f, &BootstrapOptions { workers: 3, ..opts }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mixture_cdf_monotone_and_continuous(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<f64> = (0..3000).map(|_| n.sample(&mut rng)).collect();
        let m = MixtureMarginal::fit(&data, 1.5, 1.0, &GpdOptions { restarts: 3, ..GpdOptions::default() }).unwrap();
        let u = m.threshold();
        let below = m.cdf(u);
        let above = m.cdf(u + 1e-13);
        prop_assert!((above - below).abs() < 1e-12);
        let mut prev = 0.0;
        for i in 0..400 {
            let z = -5.0 + i as f64 * 0.025;
            let f = m.cdf(z);
            prop_assert!(f >= prev - 1e-15 && (0.0..=1.0).contains(&f));
            prev = f;
        }
        if let Some(zf) = m.gpd.upper_endpoint() {
            prop_assert!(data.iter().all(|x| *x <= zf + 1e-9));
        }
    }

    #[test]
    fn condex_residuals_reconstruct_training_values(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let laplace = |z: f64| {
            let p = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
            if p < 0.5 { (2.0 * p).ln() } else { -(2.0 * (1.0 - p)).ln() }
        };
        let tracks: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let mut z = n.sample(&mut rng);
                (0..40)
                    .map(|_| {
                        z = 0.7 * z + (1.0f64 - 0.49).sqrt() * n.sample(&mut rng);
                        laplace(z)
                    })
                    .collect()
            })
            .collect();
        let k = 2;
        let fit = fit_condex(&tracks, k, 2.0).unwrap();
        let events = stormsim::condex::exceedance_events(&tracks, k, 2.0);
        prop_assert_eq!(events.len(), fit.residuals.len());
        for ((s, next), e) in events.iter().zip(&fit.residuals) {
            for j in 0..k {
                let rebuilt = fit.alpha[j] * s + s.powf(fit.beta[j]) * e[j];
                prop_assert!((rebuilt - next[j]).abs() <= 1e-10 * next[j].abs().max(1.0));
            }
        }
    }
}
