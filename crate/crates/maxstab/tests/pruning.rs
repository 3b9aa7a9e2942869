//! Joint survival laws of the pruning tower.

use maxstab::exec::Execution;
use maxstab::spectral_pruning::{
    build_population, check_retention_bound, run_pruning, run_pruning_b, validate_preset, AtomTower, GrowthLaw,
    PresetValidation, ProfileSpec, PruningPreset, Target,
};
use maxstab::stats_report::Estimate;

fn singleton(name: &str, x: f64) -> ProfileSpec {
    ProfileSpec::FinitePoints {
        name: name.into(),
        points: vec![x],
    }
}

#[test]
fn two_point_survival_matches_product() {
    let preset = PruningPreset::shipped_a().with_n_max(20);
    let (x, y) = (0.1, 0.2);
    let pop = build_population(&[singleton("x", x), singleton("y", y)], &preset, 1).unwrap();
    let stats = run_pruning(&pop, &preset, 10_000, 1, Execution::Parallel).unwrap();
    let m = preset.start_level;

    let mut both = 1.0;
    let mut single = 1.0;
    for n in m..=preset.n_max {
        let keep = 1.0 - preset.p(n);
        single *= keep;
        both *= if AtomTower::atom_of(x, n) == AtomTower::atom_of(y, n) { keep } else { keep * keep };
    }
    let hits = stats.records.iter().filter(|r| r[0] < m && r[1] < m).count() as u64;
    let joint = Estimate::proportion("both", hits, stats.runs());
    let sd = (both * (1.0 - both) / stats.runs() as f64).sqrt();
    assert!((joint.mean() - both).abs() <= 3.0 * sd, "{} vs {both}", joint.mean());

    let cov = both - single * single;
    assert!(cov > 0.0);
    let a = stats.survival(0, m).mean();
    let b = stats.survival(1, m).mean();
    assert!(joint.mean() - a * b > 0.0, "empirical covariance not positive");
}

#[test]
fn full_occupancy_survives_at_most_product_of_zeta() {
    let preset = PruningPreset::shipped_b().with_n_max(12);
    let specs = vec![
        singleton("s", 0.3),
        ProfileSpec::Growth {
            name: "all".into(),
            law: GrowthLaw::Everything,
            block_depth: 0,
            block_index: 0,
        },
    ];
    let pop = build_population(&specs, &preset, 2).unwrap();
    let report = run_pruning_b(&pop, &[Target::left_half()], &preset, 2000, 2, Execution::Parallel).unwrap();
    let k = report.survival.index_of("all").unwrap();
    let bound: f64 = preset.levels().map(|n| (n as f64).powi(-3)).product();
    let e = report.survival.survival(k, preset.start_level);
    assert!(e.mean() <= bound + 3.0 * (bound / 2000.0).sqrt(), "{} vs {bound}", e.mean());
    let s = report.survival.survival(report.survival.index_of("s").unwrap(), preset.start_level);
    assert!(s.mean() > 0.0);
}

#[test]
fn merged_batches_concatenate() {
    let preset = PruningPreset::shipped_a().with_n_max(12);
    let specs = vec![ProfileSpec::RandomSingletons {
        prefix: "s".into(),
        count: 5,
        lo: 0.0,
        hi: 1.0,
    }];
    let pop = build_population(&specs, &preset, 3).unwrap();
    let batch = |seed| run_pruning(&pop, &preset, 100, seed, Execution::Sequential).unwrap();
    let (a, b, c) = (batch(4), batch(5), batch(6));
    let left = a.merge(&b).unwrap().merge(&c).unwrap();
    let right = a.merge(&b.merge(&c).unwrap()).unwrap();
    assert_eq!(left.records, right.records);
    assert_eq!(left.runs(), 300);

    let other = build_population(&specs, &preset.with_n_max(11), 3).unwrap();
    let d = run_pruning(&other, &preset.with_n_max(11), 10, 7, Execution::Sequential).unwrap();
    assert!(a.merge(&d).is_err());
}

#[test]
fn large_delta_is_vacuous() {
    let preset = PruningPreset::shipped_a().with_n_max(12);
    let specs = vec![ProfileSpec::RandomSingletons {
        prefix: "s".into(),
        count: 20,
        lo: 0.0,
        hi: 1.0,
    }];
    let pop = build_population(&specs, &preset, 8).unwrap();
    let stats = run_pruning(&pop, &preset, 500, 8, Execution::Parallel).unwrap();
    let fake = PresetValidation {
        conditions: vec![],
        delta: vec![(2, 1.5)],
        all_pass: true,
    };
    let report = check_retention_bound(&stats, &fake, &[2]).unwrap();
    assert!(report.rows[0].vacuous && report.rows[0].pass);

    let real = validate_preset(&preset).unwrap();
    assert!(check_retention_bound(&stats, &real, &[3]).unwrap().rows[0].pass);
}

#[test]
fn retention_needs_enough_runs() {
    let preset = PruningPreset::shipped_a().with_n_max(12);
    let pop = build_population(&[singleton("x", 0.4)], &preset, 9).unwrap();
    let stats = run_pruning(&pop, &preset, 100, 9, Execution::Sequential).unwrap();
    let v = validate_preset(&preset).unwrap();
    assert!(check_retention_bound(&stats, &v, &[3]).is_err());
}
