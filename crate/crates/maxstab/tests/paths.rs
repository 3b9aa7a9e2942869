//! Distributional checks of the path sampler.

use maxstab::path_engine::{refine_bridge, sample_increments, sample_path, GridPath, TimeGrid};
use maxstab::rng::{self, tag};
use maxstab::stats_report::{arcsine_cdf, ks_uniformity, Estimate};

#[test]
fn endpoint_variance_is_one() {
    let grid = TimeGrid::unit(8);
    let ends = (0..100_000u64).map(|i| {
        let p = sample_path(&grid, &mut rng::stream(1, tag::PATH, i));
        *p.values.last().unwrap()
    });
    let e = Estimate::from_values("w1", ends);
    assert!((0.98..=1.02).contains(&e.variance()), "{}", e.variance());
    assert!(e.mean().abs() <= 3.0 * e.stderr());
}

#[test]
fn increments_have_cell_variance() {
    let grid = TimeGrid::unit(10);
    let dt = grid.dt();
    let mut buf = Vec::new();
    let mut e = Estimate::from_values("ratio", []);
    for i in 0..200u64 {
        sample_increments(&grid, &mut rng::stream(2, tag::PATH, i), &mut buf);
        assert_eq!(buf.len(), grid.cells());
        buf.iter().for_each(|x| e.push(x * x / dt));
    }
    // x²/dt is chi-square(1): mean 1
    assert!((e.mean() - 1.0).abs() <= 3.0 * e.stderr(), "{} ± {}", e.mean(), e.stderr());
}

#[test]
fn bridge_midpoint_law() {
    let coarse = GridPath::from_increments(TimeGrid::unit(1), &[0.8, -0.3]);
    let n = 100_000u64;
    let mid = (0..n).map(|i| {
        let fine = refine_bridge(&coarse, 2, &mut rng::stream(3, tag::REFINE, i)).unwrap();
        fine.values[1]
    });
    let e = Estimate::from_values("w(1/4)", mid);
    assert!((e.mean() - 0.4).abs() <= 3.0 * e.stderr(), "{}", e.mean());
    // sample variance of a normal: stderr sqrt(2/(n-1)) σ²
    let se = 0.125 * (2.0 / (n - 1) as f64).sqrt();
    assert!((e.variance() - 0.125).abs() <= 3.0 * se, "{}", e.variance());
}

#[test]
fn argmax_time_is_arcsine() {
    let grid = TimeGrid::unit(10);
    let times: Vec<f64> = (0..10_000u64)
        .map(|i| {
            let p = sample_path(&grid, &mut rng::stream(4, tag::PATH, i));
            // endpoints included, so no NONE outcome
            let k = (0..p.values.len()).max_by(|&a, &b| p.values[a].total_cmp(&p.values[b])).unwrap();
            grid.node_time(k)
        })
        .collect();
    let ks = ks_uniformity(&times, arcsine_cdf).unwrap();
    assert!(ks.statistic < 0.02, "sup deviation {}", ks.statistic);
}

#[test]
fn same_seed_same_path_across_levels() {
    let a = sample_path(&TimeGrid::unit(6), &mut rng::stream(9, tag::PATH, 0));
    let b = sample_path(&TimeGrid::unit(6), &mut rng::stream(9, tag::PATH, 0));
    let c = sample_path(&TimeGrid::unit(6), &mut rng::stream(9, tag::PATH, 1));
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
    assert_eq!(a.values[0], 0.0);
}
