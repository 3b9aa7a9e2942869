//! Joint law of the coupled paths and the censored path.

use maxstab::censor_sets::CensorSet;
use maxstab::coupling_lab::{censored_has_maximum_in, CellMasses};
use maxstab::path_engine::TimeGrid;
use maxstab::rng::{self, tag};
use maxstab::stats_report::Estimate;

const UNIT: (f64, f64) = (0.0, 1.0);

/// Sample covariance of the endpoints and its standard error.
fn endpoint_cov(set: &CensorSet, n: u64, seed: u64) -> (f64, f64) {
    let masses = CellMasses::new(set, &TimeGrid::unit(6)).unwrap();
    let prods: Vec<(f64, f64, f64)> = (0..n)
        .map(|i| {
            let p = masses.draw_core(&mut rng::stream(seed, tag::COUPLED, i));
            (*p.w.last().unwrap(), *p.we.last().unwrap(), 0.0)
        })
        .collect();
    let mx = prods.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = prods.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let e = Estimate::from_values("cov", prods.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    (e.mean(), e.stderr())
}

#[test]
fn half_set_covariance() {
    let set = CensorSet::elementary(UNIT, vec![(0.0, 0.5)]).unwrap();
    let (c, se) = endpoint_cov(&set, 100_000, 1);
    assert!((c - 0.5).abs() <= 3.0 * se, "{c} ± {se}");
}

#[test]
fn full_and_empty_covariance() {
    let (c, se) = endpoint_cov(&CensorSet::full(UNIT).unwrap(), 20_000, 2);
    assert!((c - 1.0).abs() <= 3.0 * se, "{c} ± {se}");
    let (c, se) = endpoint_cov(&CensorSet::empty(UNIT).unwrap(), 20_000, 3);
    assert!(c.abs() <= 3.0 * se, "{c} ± {se}");
}

#[test]
fn covariance_tracks_measure_for_cantor() {
    let set = CensorSet::fat_cantor(UNIT, 12).unwrap();
    let (c, se) = endpoint_cov(&set, 50_000, 4);
    let m = set.total_measure();
    assert!((c - m).abs() <= 3.0 * se, "{c} ± {se} vs {m}");
}

#[test]
fn censored_maxima_only_where_e_has_mass() {
    let set = CensorSet::elementary(UNIT, vec![(0.0, 0.5)]).unwrap();
    let grid = TimeGrid::unit(9);
    let masses = CellMasses::new(&set, &grid).unwrap();
    let inside = grid.node_range(0.1, 0.4).unwrap();
    let outside = grid.node_range(0.6, 0.9).unwrap();
    let mut hits_inside = 0;
    for i in 0..500u64 {
        let p = masses.draw_core(&mut rng::stream(5, tag::COUPLED, i));
        assert!(!censored_has_maximum_in(&p.censored, masses.node_fill(), outside.0, outside.1));
        hits_inside += censored_has_maximum_in(&p.censored, masses.node_fill(), inside.0, inside.1) as u32;
    }
    assert!(hits_inside > 450, "{hits_inside}");
}
