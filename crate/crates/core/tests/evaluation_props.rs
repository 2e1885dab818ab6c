mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use rfq::evaluation::{
    bin_by_quality, calibrate_threshold, compute_det, compute_det_full, compute_erc, det_thresholds, fraction_grid,
    pairs_eer, perfect_curve, VerificationPair,
};

use common::*;

fn pair(a: usize, b: usize, mated: bool, similarity: f64) -> VerificationPair {
    VerificationPair {
        id_a: format!("i{a:03}"),
        id_b: format!("i{b:03}"),
        mated,
        similarity,
    }
}

fn arb_pairs() -> impl Strategy<Value = (Vec<VerificationPair>, HashMap<String, f64>)> {
    (4usize..30).prop_flat_map(|n_images| {
        let pairs = proptest::collection::vec(
            (0..n_images, 0..n_images, any::<bool>(), (0u32..20).prop_map(|v| v as f64 / 20.0)),
            1..80,
        );
        let qualities = proptest::collection::vec((0u32..6).prop_map(f64::from), n_images);
        (pairs, qualities).prop_map(|(raw, q)| {
            let pairs: Vec<VerificationPair> = raw
                .into_iter()
                .filter(|(a, b, ..)| a != b)
                .map(|(a, b, m, s)| pair(a, b, m, s))
                .collect();
            let q = q.into_iter().enumerate().map(|(i, v)| (format!("i{i:03}"), v)).collect();
            (pairs, q)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn erc_matches_brute_force((pairs, q) in arb_pairs(), t in 0.0f64..1.0) {
        prop_assume!(!pairs.is_empty());
        let grid = fraction_grid(0.1, 1.0);
        let curve = compute_erc(&pairs, &q, t, &grid).unwrap();
        for (r, f) in grid.iter().zip(&curve.fnmr) {
            prop_assert_eq!(*f, brute_force_fnmr(&pairs, &q, t, *r));
        }
        prop_assert!(curve.surviving_mated.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn det_rates_are_monotone((pairs, _) in arb_pairs()) {
        prop_assume!(pairs.iter().any(|p| p.mated) && pairs.iter().any(|p| !p.mated));
        let det = compute_det_full(&pairs).unwrap();
        for w in det.points.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[1].fmr <= w[0].fmr);
            prop_assert!(w[1].fnmr >= w[0].fnmr);
        }
        let e = pairs_eer(&pairs).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn bins_partition_and_are_ordered(q in proptest::collection::vec(0u32..5, 3..60), k in 1usize..5) {
        prop_assume!(k <= q.len());
        let items: Vec<(String, f64)> = q.iter().enumerate().map(|(i, v)| (format!("x{i:02}"), f64::from(*v))).collect();
        let bins = bin_by_quality(&items, k).unwrap();
        let sizes: Vec<usize> = bins.iter().map(Vec::len).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), items.len());
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        let quality: HashMap<&str, f64> = items.iter().map(|(i, v)| (i.as_str(), *v)).collect();
        for w in bins.windows(2) {
            let hi = w[0].iter().map(|i| quality[i.as_str()]).fold(f64::MIN, f64::max);
            let lo = w[1].iter().map(|i| quality[i.as_str()]).fold(f64::MAX, f64::min);
            prop_assert!(hi <= lo);
        }
        let mut all: Vec<&String> = bins.iter().flatten().collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), items.len());
    }

    #[test]
    fn perfect_curve_formula(f0 in 0.0f64..1.0) {
        let grid = fraction_grid(0.05, 1.0);
        let c = perfect_curve(f0, &grid).unwrap();
        for (r, f) in grid.iter().zip(&c.fnmr) {
            prop_assert_eq!(*f, (f0 - r).max(0.0));
        }
    }
}

#[test]
fn calibration_enumerates_candidates() {
    let sims: Vec<f64> = (1..=10).map(|v| v as f64 / 10.0).collect();
    let cal = calibrate_threshold(&sims, 0.2).unwrap();
    assert_eq!(cal.threshold, 0.3);
    assert_eq!(sims.iter().filter(|s| **s < cal.threshold).count(), 2);
    let flat = calibrate_threshold(&[0.4; 7], 0.5).unwrap();
    assert_eq!((flat.threshold, flat.achieved_fnmr), (0.4, 0.0));
    assert!(calibrate_threshold(&[], 0.1).is_err());
}

#[test]
fn identical_distributions_sum_to_one_between_samples() {
    let values = [0.1, 0.25, 0.4, 0.55, 0.7, 0.85];
    let mut pairs = Vec::new();
    for (i, v) in values.iter().enumerate() {
        pairs.push(pair(i, i + 10, true, *v));
        pairs.push(pair(i, i + 20, false, *v));
    }
    let mids: Vec<f64> = values.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let det = compute_det(&pairs, &mids).unwrap();
    for p in &det.points {
        assert!((p.fmr + p.fnmr - 1.0).abs() < 1e-12);
    }
    let separated = vec![pair(0, 1, true, 0.9), pair(0, 2, false, 0.1), pair(1, 3, true, 0.8)];
    let det = compute_det(&separated, &det_thresholds(&separated)).unwrap();
    assert!(det.points.iter().any(|p| p.fmr == 0.0 && p.fnmr == 0.0));
}

#[test]
fn severity_oracle_lowers_fnmr_on_testbed() {
    let bed = testbed(1000);
    let mated: Vec<f64> = bed.pairs.iter().filter(|p| p.mated).map(|p| p.similarity).collect();
    let cal = calibrate_threshold(&mated, 0.10).unwrap();
    let oracle: HashMap<String, f64> = bed.severity.iter().map(|(k, v)| (k.clone(), -v)).collect();
    let grid = [0.0, 0.3];
    let curve = compute_erc(&bed.pairs, &oracle, cal.threshold, &grid).unwrap();
    assert!(curve.fnmr[1] < curve.fnmr[0], "{:?}", curve.fnmr);
    for (r, f) in grid.iter().zip(&curve.fnmr) {
        assert_eq!(*f, brute_force_fnmr(&bed.pairs, &oracle, cal.threshold, *r));
    }
}

/// Measured once for the bundled comparator on testbed seed 1000: anchors
/// against variants of severity >= 0.7 give an EER of 7/146.
#[test]
fn comparator_separates_anchors_from_heavy_degradations() {
    let bed = testbed(1000);
    let anchor = |id: &str| id.ends_with("anchor.png");
    let heavy = |id: &str| bed.severity[id] >= 0.7;
    let subset: Vec<VerificationPair> = bed
        .pairs
        .iter()
        .filter(|p| (anchor(&p.id_a) && heavy(&p.id_b)) || (anchor(&p.id_b) && heavy(&p.id_a)))
        .cloned()
        .collect();
    assert!(subset.iter().any(|p| p.mated) && subset.iter().any(|p| !p.mated));
    let e = pairs_eer(&subset).unwrap();
    assert!(e < 0.1, "{e}");
    assert!((e - 7.0 / 146.0).abs() < 1e-9, "baseline EER moved: {e}");
}
