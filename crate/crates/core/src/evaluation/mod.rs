//! Verification-based validation of quality scores: pair construction,
//! threshold calibration, error-versus-reject curves and DET curves.

mod comparator;
mod io;

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use comparator::{pair_similarities, Comparator, DefaultComparator, DEFAULT_EMBED_SIZE};
pub use io::{
    load_similarities_csv, read_similarities_csv, save_det_csv, save_erc_csv, save_similarities_csv,
    write_det_csv, write_erc_csv, write_similarities_csv,
};

use crate::error::{Error, Result};
use crate::imaging::DatasetManifest;

/// Unscored verification pair as produced by [`build_pairs`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub id_a: String,
    pub id_b: String,
    pub mated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationPair {
    pub id_a: String,
    pub id_b: String,
    pub mated: bool,
    pub similarity: f64,
}

/// All within-subject pairs, followed by `n_nonmated_per_image` seeded
/// cross-subject partners drawn for every image. Non-mated pairs are
/// unordered and deduplicated; an image keeps fewer partners only when the
/// other subjects run out of unused candidates.
pub fn build_pairs(manifest: &DatasetManifest, n_nonmated_per_image: usize, seed: u64) -> Result<Vec<PairKey>> {
    let images = manifest.images();
    let mut out = Vec::new();
    for s in &manifest.subjects {
        let ids: Vec<&str> = std::iter::once(s.anchor.as_str())
            .chain(s.variants.iter().map(String::as_str))
            .collect();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                out.push(PairKey {
                    id_a: ids[i].to_string(),
                    id_b: ids[j].to_string(),
                    mated: true,
                });
            }
        }
    }
    if n_nonmated_per_image == 0 {
        return Ok(out);
    }
    if manifest.subjects.len() < 2 {
        return Err(Error::Evaluation(
            "non-mated pairs need at least two subjects".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for (a, (id_a, subj_a)) in images.iter().enumerate() {
        let others: Vec<usize> = (0..images.len()).filter(|b| images[*b].1 != *subj_a).collect();
        let mut candidates: Vec<usize> = others
            .iter()
            .copied()
            .filter(|b| !seen.contains(&(a.min(*b), a.max(*b))))
            .collect();
        for _ in 0..n_nonmated_per_image {
            if candidates.is_empty() {
                break;
            }
            let b = candidates.swap_remove(rng.random_range(0..candidates.len()));
            seen.insert((a.min(b), a.max(b)));
            out.push(PairKey {
                id_a: id_a.to_string(),
                id_b: images[b].0.to_string(),
                mated: false,
            });
        }
    }
    Ok(out)
}

/// Decision threshold together with the FNMR it yields on the calibration set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub achieved_fnmr: f64,
    pub target_fnmr: f64,
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("non-finite {what}")))
    }
}

/// Picks the threshold whose FNMR (`s < t` counts as a non-match) is the
/// largest achievable value not exceeding `target_fnmr`. Among thresholds
/// with that FNMR, the smallest sample value is returned.
pub fn calibrate_threshold(mated: &[f64], target_fnmr: f64) -> Result<Calibration> {
    if mated.is_empty() {
        return Err(Error::Evaluation("no mated similarities to calibrate on".into()));
    }
    if !(target_fnmr > 0.0 && target_fnmr < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target FNMR must be in (0, 1), got {target_fnmr}"
        )));
    }
    check_finite(mated.iter().copied(), "similarity")?;
    let mut s = mated.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let budget = target_fnmr * n as f64 + 1e-9;
    // With t = s[k], exactly k samples fall below t iff k is the first index of its value.
    let mut best = 0;
    for k in 1..n {
        if k as f64 > budget {
            break;
        }
        if s[k] != s[k - 1] {
            best = k;
        }
    }
    Ok(Calibration {
        threshold: s[best],
        achieved_fnmr: best as f64 / n as f64,
        target_fnmr,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErcCurve {
    pub fractions: Vec<f64>,
    pub fnmr: Vec<f64>,
    /// Verification threshold; `None` for the analytic reference curve.
    pub threshold: Option<f64>,
    pub initial_fnmr: f64,
    /// Mated pairs left at each fraction (empty for the reference curve).
    pub surviving_mated: Vec<usize>,
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::InvalidParameter("empty rejection fraction grid".into()));
    }
    if fractions.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidParameter("rejection fractions must lie in [0, 1]".into()));
    }
    if fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("rejection fractions must be strictly increasing".into()));
    }
    Ok(())
}

/// Number of images removed at rejection fraction `r` out of `n`.
pub fn rejected_count(r: f64, n: usize) -> usize {
    ((r * n as f64) + 1e-9).floor().min(n as f64) as usize
}

fn fnmr_of<'a>(mated: impl Iterator<Item = &'a VerificationPair>, threshold: f64) -> (f64, usize) {
    let (mut fails, mut total) = (0usize, 0usize);
    for p in mated {
        total += 1;
        if p.similarity < threshold {
            fails += 1;
        }
    }
    if total == 0 {
        (0.0, 0)
    } else {
        (fails as f64 / total as f64, total)
    }
}

/// Images referenced by `pairs`, lowest quality first, ties broken by id.
pub fn rejection_order(pairs: &[VerificationPair], qualities: &HashMap<String, f64>) -> Result<Vec<String>> {
    let ids: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()])
        .collect();
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !qualities.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingQuality(missing));
    }
    let mut order: Vec<(&str, f64)> = ids.into_iter().map(|id| (id, qualities[id])).collect();
    check_finite(order.iter().map(|(_, q)| *q), "quality")?;
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(order.into_iter().map(|(id, _)| id.to_string()).collect())
}

/// FNMR after discarding the lowest-quality images. A pair is dropped when
/// either of its images is rejected; non-mated pairs never enter the FNMR.
/// When no mated pair survives the FNMR is reported as 0.
pub fn compute_erc(
    pairs: &[VerificationPair],
    qualities: &HashMap<String, f64>,
    threshold: f64,
    fractions: &[f64],
) -> Result<ErcCurve> {
    check_fractions(fractions)?;
    let order = rejection_order(pairs, qualities)?;
    let rank: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mated: Vec<(&VerificationPair, usize)> = pairs
        .iter()
        .filter(|p| p.mated)
        .map(|p| (p, rank[p.id_a.as_str()].min(rank[p.id_b.as_str()])))
        .collect();
    let (initial_fnmr, _) = fnmr_of(mated.iter().map(|(p, _)| *p), threshold);
    let mut fnmr = Vec::with_capacity(fractions.len());
    let mut surviving = Vec::with_capacity(fractions.len());
    for &r in fractions {
        let cut = rejected_count(r, order.len());
        let (f, n) = fnmr_of(mated.iter().filter(|(_, lo)| *lo >= cut).map(|(p, _)| *p), threshold);
        fnmr.push(f);
        surviving.push(n);
    }
    Ok(ErcCurve {
        fractions: fractions.to_vec(),
        fnmr,
        threshold: Some(threshold),
        initial_fnmr,
        surviving_mated: surviving,
    })
}

/// Ideal rejection: `max(initial_fnmr - r, 0)`.
pub fn perfect_curve(initial_fnmr: f64, fractions: &[f64]) -> Result<ErcCurve> {
    if !(0.0..=1.0).contains(&initial_fnmr) {
        return Err(Error::InvalidParameter(format!("initial FNMR {initial_fnmr} outside [0, 1]")));
    }
    check_fractions(fractions)?;
    Ok(ErcCurve {
        fractions: fractions.to_vec(),
        fnmr: fractions.iter().map(|r| (initial_fnmr - r).max(0.0)).collect(),
        threshold: None,
        initial_fnmr,
        surviving_mated: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    /// Ordered by increasing threshold.
    pub points: Vec<DetPoint>,
    pub mated: usize,
    pub nonmated: usize,
}

fn split_sorted(pairs: &[VerificationPair]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mated: Vec<f64> = pairs.iter().filter(|p| p.mated).map(|p| p.similarity).collect();
    let mut non: Vec<f64> = pairs.iter().filter(|p| !p.mated).map(|p| p.similarity).collect();
    if mated.is_empty() || non.is_empty() {
        return Err(Error::Evaluation(format!(
            "DET needs both pair classes ({} mated, {} non-mated)",
            mated.len(),
            non.len()
        )));
    }
    check_finite(mated.iter().chain(&non).copied(), "similarity")?;
    mated.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    Ok((mated, non))
}

/// FNMR = P(mated < t) and FMR = P(non-mated >= t) at each threshold.
pub fn compute_det(pairs: &[VerificationPair], thresholds: &[f64]) -> Result<DetCurve> {
    let (mated, non) = split_sorted(pairs)?;
    let mut ts = thresholds.to_vec();
    if ts.iter().any(|t| t.is_nan()) {
        return Err(Error::InvalidParameter("NaN threshold".into()));
    }
    ts.sort_by(f64::total_cmp);
    let points = ts
        .into_iter()
        .map(|t| DetPoint {
            threshold: t,
            fnmr: mated.partition_point(|s| *s < t) as f64 / mated.len() as f64,
            fmr: (non.len() - non.partition_point(|s| *s < t)) as f64 / non.len() as f64,
        })
        .collect();
    Ok(DetCurve {
        points,
        mated: mated.len(),
        nonmated: non.len(),
    })
}

/// Every distinct similarity plus `+inf`, which together visit every
/// attainable (FMR, FNMR) operating point.
pub fn det_thresholds(pairs: &[VerificationPair]) -> Vec<f64> {
    let mut t: Vec<f64> = pairs.iter().map(|p| p.similarity).filter(|s| s.is_finite()).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.push(f64::INFINITY);
    t
}

/// Full-resolution DET curve over [`det_thresholds`].
pub fn compute_det_full(pairs: &[VerificationPair]) -> Result<DetCurve> {
    compute_det(pairs, &det_thresholds(pairs))
}

/// Equal error rate, interpolated linearly between the two sweep points
/// where FNMR - FMR changes sign.
pub fn eer(curve: &DetCurve) -> Result<f64> {
    let pts = &curve.points;
    let first = pts
        .iter()
        .position(|p| p.fnmr >= p.fmr)
        .ok_or_else(|| Error::Evaluation("DET sweep never reaches FNMR >= FMR".into()))?;
    let p1 = pts[first];
    if first == 0 {
        return Ok((p1.fnmr + p1.fmr) / 2.0);
    }
    let p0 = pts[first - 1];
    let d0 = p0.fnmr - p0.fmr;
    let d1 = p1.fnmr - p1.fmr;
    let a = d0 / (d0 - d1);
    Ok(p0.fmr + a * (p1.fmr - p0.fmr))
}

/// EER over the full-resolution sweep of `pairs`.
pub fn pairs_eer(pairs: &[VerificationPair]) -> Result<f64> {
    eer(&compute_det_full(pairs)?)
}

/// Splits images into `k` contiguous quality groups (ascending, ties by id).
/// Group sizes differ by at most one; the lowest groups take the remainder.
pub fn bin_by_quality(qualities: &[(String, f64)], k: usize) -> Result<Vec<Vec<String>>> {
    let n = qualities.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("cannot split {n} images into {k} groups")));
    }
    check_finite(qualities.iter().map(|(_, q)| *q), "quality")?;
    let mut sorted: Vec<&(String, f64)> = qualities.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut it = sorted.into_iter();
    for g in 0..k {
        let size = base + usize::from(g < extra);
        out.push(it.by_ref().take(size).map(|(id, _)| id.clone()).collect());
    }
    Ok(out)
}

/// Pairs whose two images both belong to `group`.
pub fn pairs_within(pairs: &[VerificationPair], group: &[String]) -> Vec<VerificationPair> {
    let set: HashSet<&str> = group.iter().map(String::as_str).collect();
    pairs
        .iter()
        .filter(|p| set.contains(p.id_a.as_str()) && set.contains(p.id_b.as_str()))
        .cloned()
        .collect()
}

/// `0, step, 2 step, ...` strictly below `end`.
pub fn fraction_grid(step: f64, end: f64) -> Vec<f64> {
    let n = ((end / step) - 1e-9).ceil().max(0.0) as usize;
    (0..n).map(|i| (i as f64 * step * 1e12).round() / 1e12).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::SubjectRecord;

    fn vp(a: &str, b: &str, mated: bool, s: f64) -> VerificationPair {
        VerificationPair {
            id_a: a.into(),
            id_b: b.into(),
            mated,
            similarity: s,
        }
    }

    fn manifest(subjects: usize, per: usize) -> DatasetManifest {
        let subjects = (0..subjects)
            .map(|s| SubjectRecord {
                subject_id: format!("s{s}"),
                anchor: format!("s{s}/a.png"),
                variants: (1..per).map(|v| format!("s{s}/v{v}.png")).collect(),
            })
            .collect();
        DatasetManifest::new("/x", subjects).unwrap()
    }

    #[test]
    fn pair_counts_and_determinism() {
        let m = manifest(2, 2);
        let mated = build_pairs(&m, 0, 1).unwrap();
        assert_eq!(mated.len(), 2);
        assert!(mated.iter().all(|p| p.mated));
        let m = manifest(5, 3);
        let a = build_pairs(&m, 2, 9).unwrap();
        assert_eq!(a, build_pairs(&m, 2, 9).unwrap());
        let non: Vec<_> = a.iter().filter(|p| !p.mated).collect();
        assert_eq!(non.len(), 30);
        for p in non {
            assert_ne!(p.id_a.split('/').next(), p.id_b.split('/').next());
        }
        assert!(matches!(build_pairs(&manifest(1, 3), 1, 0), Err(Error::Evaluation(_))));
        assert_eq!(build_pairs(&manifest(1, 3), 0, 0).unwrap().len(), 3);
    }

    #[test]
    fn calibration_examples() {
        let s: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let c = calibrate_threshold(&s, 0.2).unwrap();
        assert_eq!(c.threshold, 0.3);
        assert_eq!(c.achieved_fnmr, 0.2);
        let c = calibrate_threshold(&[0.4; 7], 0.5).unwrap();
        assert_eq!((c.threshold, c.achieved_fnmr), (0.4, 0.0));
        assert!(calibrate_threshold(&[], 0.1).is_err());
        assert!(calibrate_threshold(&s, 1.0).is_err());
    }

    #[test]
    fn perfect_curve_formula() {
        let c = perfect_curve(0.1, &[0.0, 0.05, 0.1, 0.5]).unwrap();
        assert_eq!(c.fnmr, vec![0.1, 0.05, 0.0, 0.0]);
    }

    #[test]
    fn erc_missing_quality_lists_ids() {
        let pairs = vec![vp("a", "b", true, 0.5), vp("c", "d", true, 0.5)];
        let q: HashMap<String, f64> = [("a".to_string(), 1.0), ("c".to_string(), 1.0)].into();
        match compute_erc(&pairs, &q, 0.5, &[0.0]) {
            Err(Error::MissingQuality(ids)) => assert_eq!(ids, vec!["b", "d"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn erc_rejects_lowest_quality_images() {
        let pairs = vec![
            vp("a", "b", true, 0.1),
            vp("c", "d", true, 0.9),
            vp("a", "c", false, 0.95),
        ];
        let q: HashMap<String, f64> = [("a", 0.0), ("b", 1.0), ("c", 2.0), ("d", 3.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let c = compute_erc(&pairs, &q, 0.5, &[0.0, 0.25, 0.75]).unwrap();
        assert_eq!(c.fnmr, vec![0.5, 0.0, 0.0]);
        assert_eq!(c.surviving_mated, vec![2, 1, 0]);
        assert_eq!(c.initial_fnmr, 0.5);
        assert!(compute_erc(&pairs, &q, 0.5, &[0.2, 0.1]).is_err());
    }

    #[test]
    fn det_counts_and_eer() {
        let pairs = vec![
            vp("a", "b", true, 0.9),
            vp("c", "d", true, 0.8),
            vp("a", "c", false, 0.1),
            vp("b", "d", false, 0.2),
        ];
        let det = compute_det_full(&pairs).unwrap();
        assert!(det.points.iter().any(|p| p.fmr == 0.0 && p.fnmr == 0.0));
        assert_eq!(eer(&det).unwrap(), 0.0);
        assert!(compute_det(&pairs[..2], &[0.5]).is_err());
    }

    #[test]
    fn binning_remainder_goes_low() {
        let q: Vec<(String, f64)> = (0..10).map(|i| (format!("i{i:02}"), (9 - i) as f64)).collect();
        let bins = bin_by_quality(&q, 3).unwrap();
        assert_eq!(bins.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
        assert_eq!(bins[0][0], "i09");
        let eq: Vec<(String, f64)> = (0..9).map(|i| (format!("i{i}"), 0.5)).collect();
        let bins = bin_by_quality(&eq, 3).unwrap();
        assert_eq!(bins[0], vec!["i0", "i1", "i2"]);
        assert!(bin_by_quality(&eq, 10).is_err());
    }

    #[test]
    fn default_grid() {
        let g = fraction_grid(0.05, 1.0);
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[19], 0.95);
        assert_eq!(g[3], 0.15);
    }
}
