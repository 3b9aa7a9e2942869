//! Constructed sets and their certificates.

use maxstab::censor_sets::{
    build_cantor, predicted_label, CensorSet, PredictedLabel, RateVerdict, SetDescriptor, SetError, SetRecipe, Tail,
};

const UNIT: (f64, f64) = (0.0, 1.0);

#[test]
fn alpha_four_exponent_band() {
    let (set, report) = build_cantor(4.0, 20, UNIT).unwrap();
    let r = report.unwrap();
    assert!((3.5..=4.5).contains(&r.exponent), "{}", r.exponent);
    assert_eq!(r.verdict, RateVerdict::StableCriterionMet);
    assert!(set.total_measure() > 0.5);
}

#[test]
fn alpha_two_exponent_band() {
    let (set, report) = build_cantor(2.0, 20, UNIT).unwrap();
    let r = report.unwrap();
    assert!((1.6..=2.4).contains(&r.exponent), "{}", r.exponent);
    assert_eq!(r.verdict, RateVerdict::UnstableCriterionMet);
    assert!(set.total_measure() > 0.0);
}

#[test]
fn infinite_alpha_is_the_window() {
    let (set, report) = build_cantor(f64::INFINITY, 10, UNIT).unwrap();
    assert!(report.is_none());
    assert_eq!(set.total_measure(), 1.0);
}

#[test]
fn flat_deficits_fail_certification() {
    let recipe = SetRecipe::CantorAlpha {
        window: [0.0, 1.0],
        alpha: 2.0,
        depth: 20,
        constant: None,
        cap: Some(1e-9),
    };
    match recipe.build(0) {
        Err(SetError::Certification { estimate, lo, .. }) => assert!(estimate < lo),
        other => panic!("expected a certification failure, got {:?}", other.map(|b| b.set.descriptor())),
    }
}

#[test]
fn subordinator_labels() {
    assert_eq!(predicted_label(&Tail::None), PredictedLabel::Stable);
    assert_eq!(
        predicted_label(&Tail::Stable {
            index: 0.5,
            scale: 1.0
        }),
        PredictedLabel::Stable
    );
    assert_eq!(
        predicted_label(&Tail::LogTail {
            gamma: 3.0,
            x0: (-3.0f64).exp()
        }),
        PredictedLabel::Unstable
    );
    assert_eq!(
        predicted_label(&Tail::LogTail {
            gamma: 3.2,
            x0: (-3.2f64).exp()
        }),
        PredictedLabel::Gap
    );
}

#[test]
fn descriptors_rebuild_bit_for_bit() {
    let sets = [
        CensorSet::elementary(UNIT, vec![(0.0, 0.25), (0.5, 0.75)]).unwrap(),
        CensorSet::fat_cantor(UNIT, 12).unwrap(),
        CensorSet::middle_third(UNIT, 8).unwrap().complement(),
    ];
    for s in sets {
        let text = toml::to_string(&s.descriptor()).unwrap();
        let back: SetDescriptor = toml::from_str(&text).unwrap();
        let t = CensorSet::from_descriptor(&back).unwrap();
        for k in 0..=64 {
            let x = k as f64 / 64.0;
            assert_eq!(s.measure(0.0, x).unwrap().to_bits(), t.measure(0.0, x).unwrap().to_bits());
        }
    }
}
