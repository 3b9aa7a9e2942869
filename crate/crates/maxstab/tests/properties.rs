//! Property tests for the invariants of sets, paths, couplings, estimates
//! and pruning.

use maxstab::censor_sets::{
    g_integral_classify, sample_subordinator_range, CensorSet, IntegralClass, RateFamily, SubordinatorParams, Tail,
};
use maxstab::coupling_lab::{draw_coupled, level_counts, CellMasses, MatchConfig};
use maxstab::exec::Execution;
use maxstab::path_engine::{detect_maxima, refine_bridge, sample_path, TimeGrid};
use maxstab::rng;
use maxstab::spectral_pruning::{build_population, run_pruning, run_pruning_eager, GrowthLaw, ProfileSpec, PruningPreset};
use maxstab::stats_report::{merge, Estimate};
use proptest::prelude::*;

const UNIT: (f64, f64) = (0.0, 1.0);

/// Disjoint sorted intervals in [0, 1] from random cut points.
fn intervals() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec(0.0f64..1.0, 0..10).prop_map(|mut cuts| {
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.chunks_exact(2).filter(|c| c[1] > c[0]).map(|c| (c[0], c[1])).collect()
    })
}

fn gaps() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..0.9, 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measure_is_additive(iv in intervals(), g in gaps(), x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
        let mut pts = [x, y, z];
        pts.sort_by(f64::total_cmp);
        let [a, b, c] = pts;
        for set in [CensorSet::elementary(UNIT, iv.clone()).unwrap(), CensorSet::cantor(UNIT, g.clone()).unwrap()] {
            let lhs = set.measure(a, b).unwrap() + set.measure(b, c).unwrap();
            let rhs = set.measure(a, c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn complement_fills_the_window(iv in intervals(), g in gaps(), x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        for set in [CensorSet::elementary(UNIT, iv.clone()).unwrap(), CensorSet::cantor(UNIT, g.clone()).unwrap()] {
            let total = set.measure(a, b).unwrap() + set.complement().measure(a, b).unwrap();
            prop_assert!((total - (b - a)).abs() <= 1e-12);
        }
    }

    #[test]
    fn cantor_measure_is_a_product(g in gaps()) {
        let set = CensorSet::cantor(UNIT, g.clone()).unwrap();
        let product: f64 = g.iter().map(|r| 1.0 - r).product();
        prop_assert!((set.total_measure() - product).abs() <= 1e-12 * product.max(1e-300) + 1e-15);
    }

    #[test]
    fn subordinator_range_measure_is_drift_times_horizon(d in 0.2f64..2.0, horizon in 0.5f64..3.0, seed in any::<u64>()) {
        let params = SubordinatorParams {
            drift: d,
            tail: Tail::Stable { index: 0.5, scale: 0.05 },
            x_min: 1e-4,
        };
        let mut r = rng::stream(seed, rng::tag::SUBORDINATOR, 0);
        let s = sample_subordinator_range(&params, horizon, &mut r).unwrap();
        let m = s.set.total_measure();
        prop_assert!((m - d * horizon).abs() <= 1e-9 * (1.0 + d * horizon), "{m} vs {}", d * horizon);
    }

    #[test]
    fn translation_keeps_maxima(seed in any::<u64>(), shift in -10.0f64..10.0) {
        let grid = TimeGrid::unit(9);
        let mut r = rng::stream(seed, rng::tag::PATH, 0);
        let p = sample_path(&grid, &mut r);
        let a: Vec<usize> = detect_maxima(&p, 3).unwrap().iter().map(|m| m.index).collect();
        let b: Vec<usize> = detect_maxima(&p.shifted(shift), 3).unwrap().iter().map(|m| m.index).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn refine_then_restrict_is_identity(seed in any::<u64>(), coarse in 2u32..8, extra in 1u32..5) {
        let mut r = rng::stream(seed, rng::tag::REFINE, 0);
        let p = sample_path(&TimeGrid::unit(coarse), &mut r);
        let fine = refine_bridge(&p, coarse + extra, &mut r).unwrap();
        prop_assert_eq!(fine.restrict(coarse).unwrap().values, p.values);
    }

    #[test]
    fn merge_is_associative(k in prop::collection::vec((0u64..500, 0u64..500), 3)) {
        let e: Vec<Estimate> = k.iter().map(|&(s, f)| Estimate::proportion("p", s, s + f)).collect();
        let left = merge(&merge(&e[0], &e[1]).unwrap(), &e[2]).unwrap();
        let right = merge(&e[0], &merge(&e[1], &e[2]).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn coupled_paths_reconstruct(iv in intervals(), seed in any::<u64>()) {
        let set = CensorSet::elementary(UNIT, iv).unwrap();
        let grid = TimeGrid::unit(8);
        let mut r = rng::stream(seed, rng::tag::COUPLED, 0);
        let s = draw_coupled(&set, &grid, &mut r).unwrap();
        let (mut off, mut off_prime) = (0.0, 0.0);
        for k in 0..grid.cells() {
            off += s.b[k];
            off_prime += s.b_prime[k];
            let w = s.censored.values[k + 1] + off;
            let we = s.censored.values[k + 1] + off_prime;
            prop_assert!((w - s.w.values[k + 1]).abs() <= 1e-12);
            prop_assert!((we - s.we.values[k + 1]).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn tabulated_log_power_matches_closed_form(beta in prop_oneof![0.0f64..0.8, 1.2f64..3.0]) {
        let hs: Vec<f64> = (2..40).map(|k| 2f64.powi(-k)).collect();
        let gs: Vec<f64> = hs.iter().map(|&h| (1.0 / h).ln().powf(-beta)).collect();
        let tab = g_integral_classify(&RateFamily::Tabulated { h: hs, g: gs }, 0.0).unwrap();
        let exact = g_integral_classify(&RateFamily::LogPower { beta }, 0.0).unwrap();
        prop_assert_eq!(tab.class, exact.class);
        prop_assert_ne!(tab.class, IntegralClass::Inconclusive);
    }

    #[test]
    fn lazy_and_eager_pruning_agree(seed in any::<u64>(), count in 1usize..30) {
        let preset = PruningPreset::shipped_a().with_n_max(12);
        let specs = vec![
            ProfileSpec::RandomSingletons { prefix: "s".into(), count, lo: 0.0, hi: 0.5 },
            ProfileSpec::Growth { name: "g".into(), law: GrowthLaw::Everything, block_depth: 1, block_index: 1 },
        ];
        let pop = build_population(&specs, &preset, seed).unwrap();
        let lazy = run_pruning(&pop, &preset, 40, seed, Execution::Sequential).unwrap();
        let eager = run_pruning_eager(&pop, &preset, 40, seed, Execution::Sequential).unwrap();
        prop_assert_eq!(lazy.records, eager.records);
    }
}

/// Swapping the roles of W and W_E leaves the shared fraction unchanged in
/// law.
#[test]
fn shared_fraction_is_symmetric() {
    let set = CensorSet::elementary(UNIT, vec![(0.1, 0.35), (0.5, 0.8)]).unwrap();
    let grid = TimeGrid::unit(10);
    let masses = CellMasses::new(&set, &grid).unwrap();
    let cfg = MatchConfig::default();
    let a = level_counts(&masses, &cfg, 2000, 11, Execution::Parallel, false).unwrap();
    let b = level_counts(&masses, &cfg, 2000, 12, Execution::Parallel, true).unwrap();
    let pa = Estimate::proportion("a", a.shared, a.w_in_e);
    let pb = Estimate::proportion("b", b.shared, b.w_in_e);
    let z = (pa.mean() - pb.mean()).abs() / (pa.stderr().powi(2) + pb.stderr().powi(2)).sqrt();
    assert!(z <= 3.0, "{} vs {} (z = {z:.2})", pa.mean(), pb.mean());
}
