use std::collections::HashMap;

use nalgebra::DMatrix;

use super::{PairKey, VerificationPair};
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, FaceImage};
use crate::Scalar;

/// Face similarity, higher meaning more alike. Implementations must be
/// symmetric and deterministic.
pub trait Comparator<T> {
    fn compare(&self, a: &FaceImage<T>, b: &FaceImage<T>) -> f64;
}

pub const DEFAULT_EMBED_SIZE: usize = 16;

/// Training-free baseline: bilinear downsampling, per-image
/// standardization, an optional principal-component projection and cosine
/// similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct DefaultComparator {
    size: usize,
    projection: Option<Projection>,
}

#[derive(Clone, Debug, PartialEq)]
struct Projection {
    mean: Vec<f64>,
    components: DMatrix<f64>,
}

impl Default for DefaultComparator {
    fn default() -> Self {
        Self {
            size: DEFAULT_EMBED_SIZE,
            projection: None,
        }
    }
}

impl DefaultComparator {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("embedding size must be positive".into()));
        }
        Ok(Self { size, projection: None })
    }

    /// Fits `components` principal axes on the standardized pixel vectors
    /// of `faces` (typically held-out anchors).
    pub fn fit_pca<T: Scalar>(mut self, faces: &[FaceImage<T>], components: usize) -> Result<Self> {
        self.projection = None;
        let rows: Vec<Vec<f64>> = faces.iter().map(|f| self.embed(f)).collect();
        let dim = self.dim();
        let k = components.min(rows.len().saturating_sub(1)).min(dim);
        if k == 0 {
            return Err(Error::InvalidParameter(format!(
                "cannot fit {components} components on {} faces",
                faces.len()
            )));
        }
        let n = rows.len();
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let x = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
        let svd = x.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Evaluation("SVD did not produce right singular vectors".into()))?;
        self.projection = Some(Projection {
            mean,
            components: v_t.rows(0, k).into_owned(),
        });
        Ok(self)
    }

    pub fn embed_size(&self) -> usize {
        self.size
    }

    fn dim(&self) -> usize {
        self.size * self.size * 3
    }

    /// Embedding vector compared by cosine similarity.
    pub fn embed<T: Scalar>(&self, face: &FaceImage<T>) -> Vec<f64> {
        let small = resize_bilinear(face.image(), self.size, self.size);
        let mut v: Vec<f64> = small.data().iter().map(|x| x.to_f64_lossy()).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        v.iter_mut().for_each(|x| *x = (*x - mean) * inv);
        match &self.projection {
            None => v,
            Some(p) => {
                let centered: Vec<f64> = v.iter().zip(&p.mean).map(|(x, m)| x - m).collect();
                (0..p.components.nrows())
                    .map(|r| p.components.row(r).iter().zip(&centered).map(|(a, b)| a * b).sum())
                    .collect()
            }
        }
    }

    pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    }

    /// Similarities for `pairs`, embedding each referenced face once.
    pub fn score_pairs<T: Scalar>(
        &self,
        pairs: &[PairKey],
        faces: &HashMap<String, FaceImage<T>>,
    ) -> Result<Vec<VerificationPair>> {
        let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
        for p in pairs {
            for id in [&p.id_a, &p.id_b] {
                if !cache.contains_key(id.as_str()) {
                    let face = lookup(faces, id)?;
                    cache.insert(id, self.embed(face));
                }
            }
        }
        Ok(pairs
            .iter()
            .map(|p| VerificationPair {
                id_a: p.id_a.clone(),
                id_b: p.id_b.clone(),
                mated: p.mated,
                similarity: Self::cosine(&cache[p.id_a.as_str()], &cache[p.id_b.as_str()]),
            })
            .collect())
    }
}

impl<T: Scalar> Comparator<T> for DefaultComparator {
    fn compare(&self, a: &FaceImage<T>, b: &FaceImage<T>) -> f64 {
        Self::cosine(&self.embed(a), &self.embed(b))
    }
}

fn lookup<'a, T>(faces: &'a HashMap<String, FaceImage<T>>, id: &str) -> Result<&'a FaceImage<T>> {
    faces
        .get(id)
        .ok_or_else(|| Error::Evaluation(format!("no image loaded for id {id}")))
}

/// Scores `pairs` with any comparator.
pub fn pair_similarities<T, C: Comparator<T> + ?Sized>(
    comparator: &C,
    pairs: &[PairKey],
    faces: &HashMap<String, FaceImage<T>>,
) -> Result<Vec<VerificationPair>> {
    pairs
        .iter()
        .map(|p| {
            let a = lookup(faces, &p.id_a)?;
            let b = lookup(faces, &p.id_b)?;
            Ok(VerificationPair {
                id_a: p.id_a.clone(),
                id_b: p.id_b.clone(),
                mated: p.mated,
                similarity: comparator.compare(a, b),
            })
        })
        .collect()
}
