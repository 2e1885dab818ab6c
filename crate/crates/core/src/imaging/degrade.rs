use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{resize_bilinear, sample_bilinear, FaceImage, Image, Provenance, FACE_SIZE};
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    Blur,
    Downsample,
    AdditiveNoise,
    BrightnessShift,
    Occlusion,
    AffineWarp,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 6] = [
        DegradationKind::Blur,
        DegradationKind::Downsample,
        DegradationKind::AdditiveNoise,
        DegradationKind::BrightnessShift,
        DegradationKind::Occlusion,
        DegradationKind::AffineWarp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Blur => "blur",
            DegradationKind::Downsample => "downsample",
            DegradationKind::AdditiveNoise => "additive_noise",
            DegradationKind::BrightnessShift => "brightness_shift",
            DegradationKind::Occlusion => "occlusion",
            DegradationKind::AffineWarp => "affine_warp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub severity: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, severity: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            kind,
            severity,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.severity) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "severity {} outside [0, 1]",
                self.severity
            )))
        }
    }
}

/// Gaussian blur standard deviation at severity 1, in pixels.
pub const MAX_BLUR_SIGMA: f64 = 2.5;
pub const NOISE_STD_PER_SEVERITY: f64 = 0.25;
pub const BRIGHTNESS_PER_SEVERITY: f64 = 0.5;
pub const OCCLUDED_AREA_PER_SEVERITY: f64 = 0.5;
pub const MAX_ROTATION_DEG: f64 = 30.0;
pub const MAX_TRANSLATION_PX: f64 = 4.0;

/// Applies one synthetic degradation. Pure in `(face, spec)`; severity 0 is
/// the identity for every kind and the result is clamped to [0, 1].
pub fn degrade<T: Scalar>(face: &FaceImage<T>, spec: &DegradationSpec) -> Result<FaceImage<T>> {
    spec.validate()?;
    if spec.severity == 0.0 {
        return Ok(face.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let src = face.image();
    let s = spec.severity;
    let mut out = match spec.kind {
        DegradationKind::Blur => gaussian_blur(src, MAX_BLUR_SIGMA * s),
        DegradationKind::Downsample => {
            let side = ((FACE_SIZE as f64 * (1.0 - s)).round() as usize).max(4);
            let small = resize_bilinear(src, side, side);
            resize_bilinear(&small, FACE_SIZE, FACE_SIZE)
        }
        DegradationKind::AdditiveNoise => {
            let normal = Normal::new(0.0, NOISE_STD_PER_SEVERITY * s)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let mut img = src.clone();
            for v in img.data_mut() {
                *v += T::lit(normal.sample(&mut rng));
            }
            img
        }
        DegradationKind::BrightnessShift => {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let shift = T::lit(sign * BRIGHTNESS_PER_SEVERITY * s);
            let mut img = src.clone();
            for v in img.data_mut() {
                *v += shift;
            }
            img
        }
        DegradationKind::Occlusion => {
            let side = ((OCCLUDED_AREA_PER_SEVERITY * s).sqrt() * FACE_SIZE as f64).round() as usize;
            let side = side.min(FACE_SIZE);
            let mut img = src.clone();
            if side > 0 {
                let y0 = rng.random_range(0..=FACE_SIZE - side);
                let x0 = rng.random_range(0..=FACE_SIZE - side);
                let gray = T::lit(0.5);
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        for c in 0..img.channels() {
                            img.set(y, x, c, gray);
                        }
                    }
                }
            }
            img
        }
        DegradationKind::AffineWarp => {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let angle = (sign * MAX_ROTATION_DEG * s).to_radians();
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let shift = MAX_TRANSLATION_PX * s;
            affine_warp(src, angle, shift * dir.cos(), shift * dir.sin())
        }
    };
    out.clamp_unit();
    FaceImage::new(out, Provenance::Synthetic)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian low-pass with replicated borders.
fn gaussian_blur<T: Scalar>(img: &Image<T>, sigma: f64) -> Image<T> {
    let kernel: Vec<T> = gaussian_kernel(sigma).into_iter().map(T::lit).collect();
    let r = (kernel.len() / 2) as isize;
    let (h, w, ch) = img.shape();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let horiz = Image::from_fn(h, w, ch, |y, x, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| *k * img.get(y, clampi(x as isize + i as isize - r, w), c))
            .sum()
    });
    Image::from_fn(h, w, ch, |y, x, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| *k * horiz.get(clampi(y as isize + i as isize - r, h), x, c))
            .sum()
    })
}

/// Rotation by `angle` about the image center followed by a translation,
/// resampled by inverse mapping.
fn affine_warp<T: Scalar>(img: &Image<T>, angle: f64, dx: f64, dy: f64) -> Image<T> {
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    Image::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
        let ox = x as f64 - dx - cx;
        let oy = y as f64 - dy - cy;
        let sx = cos * ox + sin * oy + cx;
        let sy = -sin * ox + cos * oy + cy;
        sample_bilinear(img, T::lit(sy), T::lit(sx), c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::FACE_LEN;

    fn textured() -> FaceImage<f64> {
        FaceImage::from_values(
            (0..FACE_LEN)
                .map(|i| {
                    let p = i / 3;
                    let (y, x) = ((p / 32) as f64, (p % 32) as f64);
                    0.5 + 0.4 * ((x * 0.7).sin() * (y * 0.45).cos())
                })
                .collect(),
            Provenance::Original,
        )
        .unwrap()
    }

    #[test]
    fn severity_zero_is_identity_for_every_kind() {
        let face = textured();
        for kind in DegradationKind::ALL {
            let out = degrade(&face, &DegradationSpec::new(kind, 0.0, 99).unwrap()).unwrap();
            assert_eq!(out.values(), face.values(), "{kind:?}");
        }
    }

    #[test]
    fn degradation_is_deterministic_and_clamped() {
        let face = textured();
        for kind in DegradationKind::ALL {
            let spec = DegradationSpec::new(kind, 0.7, 1234).unwrap();
            let a = degrade(&face, &spec).unwrap();
            let b = degrade(&face, &spec).unwrap();
            assert_eq!(a.values(), b.values(), "{kind:?}");
            assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_ne!(a.values(), face.values(), "{kind:?} at 0.7 changed nothing");
        }
    }

    #[test]
    fn invalid_severity_rejected() {
        assert!(DegradationSpec::new(DegradationKind::Blur, 1.5, 0).is_err());
        assert!(DegradationSpec::new(DegradationKind::Blur, -0.1, 0).is_err());
    }

    #[test]
    fn occlusion_area_tracks_severity() {
        let face = FaceImage::<f64>::constant(0.0, Provenance::Original).unwrap();
        let spec = DegradationSpec::new(DegradationKind::Occlusion, 1.0, 5).unwrap();
        let out = degrade(&face, &spec).unwrap();
        let gray = out.values().iter().filter(|v| **v == 0.5).count() / 3;
        // side = round(sqrt(0.5) * 32) = 23
        assert_eq!(gray, 23 * 23);
    }

    #[test]
    fn blur_kernel_normalized() {
        let k = gaussian_kernel(1.3);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len(), 2 * 4 + 1);
    }
}
