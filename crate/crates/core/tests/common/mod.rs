//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rfq::evaluation::{build_pairs, DefaultComparator, VerificationPair};
use rfq::imaging::{synthesize, FaceImage, Image, SynthConfig, SynthCorpus};
use rfq::training::TrainingPair;
use rfq::Scalar;

/// Every (variant, anchor) pair of an in-memory corpus.
pub fn corpus_pairs<T: Scalar>(corpus: &SynthCorpus<T>) -> Vec<TrainingPair<T>> {
    corpus
        .subjects
        .iter()
        .flat_map(|s| {
            s.variants.iter().map(|v| TrainingPair {
                subject_id: s.subject_id.clone(),
                input_id: v.image_id.clone(),
                input: v.face.clone(),
                target: s.anchor.clone(),
            })
        })
        .collect()
}

pub fn corpus_faces<T: Scalar>(corpus: &SynthCorpus<T>) -> HashMap<String, FaceImage<T>> {
    let mut faces = HashMap::new();
    for s in &corpus.subjects {
        faces.insert(s.anchor_id.clone(), s.anchor.clone());
        for v in &s.variants {
            faces.insert(v.image_id.clone(), v.face.clone());
        }
    }
    faces
}

/// Verification testbed: 50 unseen subjects, 6 variants each, 5 non-mated
/// partners per image, default comparator.
pub struct Testbed {
    pub corpus: SynthCorpus<f32>,
    pub faces: HashMap<String, FaceImage<f32>>,
    pub pairs: Vec<VerificationPair>,
    pub severity: HashMap<String, f64>,
}

pub fn testbed(seed: u64) -> Testbed {
    let corpus = synthesize::<f32>(&SynthConfig {
        n_subjects: 50,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let manifest = corpus.manifest(Path::new("testbed")).unwrap();
    let faces = corpus_faces(&corpus);
    let keys = build_pairs(&manifest, 5, seed).unwrap();
    let pairs = DefaultComparator::default().score_pairs(&keys, &faces).unwrap();
    let severity = corpus.severities().into_iter().collect();
    Testbed {
        corpus,
        faces,
        pairs,
        severity,
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Image<f64> {
    Image::from_fn(h, w, 3, |_, _, _| rng.random_range(lo..hi))
}

/// `base` plus uniform noise of half-width `amp`, clamped to [0, 1].
pub fn perturbed(rng: &mut ChaCha8Rng, base: &Image<f64>, amp: f64) -> Image<f64> {
    let (h, w, c) = base.shape();
    Image::from_fn(h, w, c, |y, x, ch| {
        (base.get(y, x, ch) + rng.random_range(-amp..amp)).clamp(0.0, 1.0)
    })
}

/// Straightforward per-window SSIM: 11x11 Gaussian (sigma 1.5) weights built
/// in two dimensions, two-pass moments at every valid position.
pub fn ssim_window_loop(a: &Image<f64>, b: &Image<f64>, k1: f64, k2: f64, range: f64) -> f64 {
    let (h, w, channels) = a.shape();
    let k = 11.min(h).min(w);
    let center = (k as f64 - 1.0) / 2.0;
    let mut weights = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - center).powi(2) + (j as f64 - center).powi(2);
            weights[i * k + j] = (-d2 / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    let c1 = (k1 * range).powi(2);
    let c2 = (k2 * range).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for ch in 0..channels {
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = weights[i * k + j];
                        ma += wt * a.get(y0 + i, x0 + j, ch);
                        mb += wt * b.get(y0 + i, x0 + j, ch);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = weights[i * k + j];
                        let da = a.get(y0 + i, x0 + j, ch) - ma;
                        let db = b.get(y0 + i, x0 + j, ch) - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// ERC point recomputed from scratch: sort images by (quality, id), reject
/// the first `floor(r n)`, keep mated pairs with neither image rejected.
pub fn brute_force_fnmr(pairs: &[VerificationPair], quality: &HashMap<String, f64>, threshold: f64, r: f64) -> f64 {
    let ids: BTreeSet<&str> = pairs.iter().flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()]).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_by(|a, b| quality[*a].partial_cmp(&quality[*b]).unwrap().then(a.cmp(b)));
    let k = (r * ids.len() as f64 + 1e-9).floor() as usize;
    let rejected: HashSet<&str> = ids[..k].iter().copied().collect();
    let kept: Vec<&VerificationPair> = pairs
        .iter()
        .filter(|p| p.mated && !rejected.contains(p.id_a.as_str()) && !rejected.contains(p.id_b.as_str()))
        .collect();
    if kept.is_empty() {
        return 0.0;
    }
    kept.iter().filter(|p| p.similarity < threshold).count() as f64 / kept.len() as f64
}

/// Max over entries of `|a - n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
