//! Procedural face-like composites and seeded degraded variants, standing in
//! for licensed face corpora.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    degrade, DatasetManifest, DegradationKind, DegradationSpec, FaceImage, Image, Provenance,
    SubjectRecord, FACE_CHANNELS, FACE_SIZE,
};
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub variants_per_subject: usize,
    /// Variant severities are evenly spaced over `[severity_min, severity_max]`.
    pub severity_min: f64,
    pub severity_max: f64,
    /// Degradation kinds drawn (uniformly, seeded) for each variant.
    pub kinds: Vec<DegradationKind>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 50,
            variants_per_subject: 6,
            severity_min: 0.1,
            severity_max: 0.9,
            kinds: DegradationKind::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_subjects == 0 {
            return bad("n_subjects must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.severity_min)
            || !(0.0..=1.0).contains(&self.severity_max)
            || self.severity_min > self.severity_max
        {
            return bad("severities must satisfy 0 <= min <= max <= 1");
        }
        if self.kinds.is_empty() {
            return bad("at least one degradation kind is required");
        }
        Ok(())
    }

    pub fn severity_grid(&self) -> Vec<f64> {
        let n = self.variants_per_subject;
        match n {
            0 => Vec::new(),
            1 => vec![self.severity_min],
            _ => (0..n)
                .map(|i| {
                    self.severity_min + (self.severity_max - self.severity_min) * i as f64 / (n - 1) as f64
                })
                .collect(),
        }
    }
}

/// Per-subject geometry and colours, in unit image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    pub background: [f64; 3],
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub iris: [f64; 3],
    pub lips: [f64; 3],
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub hairline: f64,
    pub eye_y: f64,
    pub eye_dx: f64,
    pub eye_r: f64,
    pub brow_tilt: f64,
    pub nose_len: f64,
    pub nose_w: f64,
    pub mouth_y: f64,
    pub mouth_w: f64,
    pub mouth_h: f64,
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [(); 3].map(|_| rng.random_range(lo..hi))
}

impl FaceParams {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        let tone: f64 = rng.random_range(0.25..0.9);
        let skin = [
            (tone + 0.08).min(1.0),
            tone * rng.random_range(0.75..0.95),
            tone * rng.random_range(0.55..0.8),
        ];
        Self {
            background: color(rng, 0.05, 0.95),
            skin,
            hair: color(rng, 0.0, 0.6),
            iris: color(rng, 0.0, 0.5),
            lips: [rng.random_range(0.5..0.9), rng.random_range(0.1..0.35), rng.random_range(0.15..0.4)],
            center: (rng.random_range(0.47..0.55), rng.random_range(0.45..0.55)),
            radii: (rng.random_range(0.33..0.43), rng.random_range(0.24..0.34)),
            hairline: rng.random_range(0.12..0.32),
            eye_y: rng.random_range(0.38..0.48),
            eye_dx: rng.random_range(0.09..0.15),
            eye_r: rng.random_range(0.035..0.06),
            brow_tilt: rng.random_range(-0.04..0.04),
            nose_len: rng.random_range(0.08..0.16),
            nose_w: rng.random_range(0.03..0.06),
            mouth_y: rng.random_range(0.66..0.76),
            mouth_w: rng.random_range(0.07..0.15),
            mouth_h: rng.random_range(0.015..0.04),
        }
    }

    /// Colour at unit coordinates `(y, x)`; later features paint over earlier ones.
    fn shade(&self, y: f64, x: f64) -> [f64; 3] {
        let (cy, cx) = self.center;
        let (ry, rx) = self.radii;
        let inside = |py: f64, px: f64, ay: f64, ax: f64| {
            let (u, v) = ((y - py) / ay, (x - px) / ax);
            u * u + v * v <= 1.0
        };
        let mut c = self.background;
        // head of hair slightly larger than the face
        if inside(cy - 0.04, cx, ry + 0.06, rx + 0.05) && y < cy + 0.1 {
            c = self.hair;
        }
        if inside(cy, cx, ry, rx) && y >= self.hairline {
            c = self.skin;
            let dark = |k: f64| self.skin.map(|v| v * k);
            let ey = cy - ry + 2.0 * ry * self.eye_y;
            for side in [-1.0, 1.0] {
                let ex = cx + side * self.eye_dx * 2.0 * rx / 0.6;
                let by = ey - 2.2 * self.eye_r + side * self.brow_tilt;
                if (y - by).abs() < 0.018 && (x - ex).abs() < 1.6 * self.eye_r {
                    c = self.hair;
                }
                if inside(ey, ex, self.eye_r * 0.75, self.eye_r * 1.5) {
                    c = [0.95, 0.95, 0.95];
                    if inside(ey, ex, self.eye_r * 0.7, self.eye_r * 0.7) {
                        c = self.iris;
                    }
                }
            }
            let ny = ey + 0.02;
            if y >= ny && y <= ny + self.nose_len {
                let t = (y - ny) / self.nose_len;
                if (x - cx).abs() <= self.nose_w * t {
                    c = dark(0.8);
                }
            }
            let my = cy - ry + 2.0 * ry * self.mouth_y;
            if inside(my, cx, self.mouth_h, self.mouth_w) {
                c = self.lips;
            }
        }
        c
    }
}

const SUPERSAMPLE: usize = 4;

/// Renders a face with `SUPERSAMPLE`² samples per pixel, in [0, 1].
pub fn render_face<T: Scalar>(p: &FaceParams) -> FaceImage<T> {
    let n = FACE_SIZE as f64;
    let ss = SUPERSAMPLE as f64;
    let img = Image::from_fn(FACE_SIZE, FACE_SIZE, FACE_CHANNELS, |y, x, c| {
        let mut acc = 0.0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let uy = (y as f64 + (sy as f64 + 0.5) / ss) / n;
                let ux = (x as f64 + (sx as f64 + 0.5) / ss) / n;
                acc += p.shade(uy, ux)[c];
            }
        }
        T::lit((acc / (ss * ss)).clamp(0.0, 1.0))
    });
    FaceImage::new(img, Provenance::Original).expect("rendered faces are 32x32x3 in [0, 1]")
}

#[derive(Clone, Debug)]
pub struct SynthVariant<T> {
    pub image_id: String,
    pub face: FaceImage<T>,
    pub degradation: DegradationSpec,
}

#[derive(Clone, Debug)]
pub struct SynthSubject<T> {
    pub subject_id: String,
    pub anchor_id: String,
    pub anchor: FaceImage<T>,
    pub variants: Vec<SynthVariant<T>>,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus<T> {
    pub subjects: Vec<SynthSubject<T>>,
}

fn stream(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates the corpus in memory. Identical configs give identical corpora.
pub fn synthesize<T: Scalar>(cfg: &SynthConfig) -> Result<SynthCorpus<T>> {
    cfg.validate()?;
    let severities = cfg.severity_grid();
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    for s in 0..cfg.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, s as u64, 0));
        let params = FaceParams::sample(&mut rng);
        let anchor = render_face::<T>(&params);
        let subject_id = format!("s{s:04}");
        let mut variants = Vec::with_capacity(severities.len());
        for (v, &severity) in severities.iter().enumerate() {
            let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
            let spec = DegradationSpec::new(kind, severity, stream(cfg.seed, s as u64, v as u64 + 1))?;
            variants.push(SynthVariant {
                image_id: format!("{subject_id}/v{v:02}.png"),
                face: degrade(&anchor, &spec)?,
                degradation: spec,
            });
        }
        subjects.push(SynthSubject {
            anchor_id: format!("{subject_id}/anchor.png"),
            subject_id,
            anchor,
            variants,
        });
    }
    Ok(SynthCorpus { subjects })
}

impl<T: Scalar> SynthCorpus<T> {
    pub fn manifest(&self, root: &Path) -> Result<DatasetManifest> {
        DatasetManifest::new(
            root,
            self.subjects
                .iter()
                .map(|s| SubjectRecord {
                    subject_id: s.subject_id.clone(),
                    anchor: s.anchor_id.clone(),
                    variants: s.variants.iter().map(|v| v.image_id.clone()).collect(),
                })
                .collect(),
        )
    }

    /// Severity per image id; anchors are severity 0.
    pub fn severities(&self) -> Vec<(String, f64)> {
        self.subjects
            .iter()
            .flat_map(|s| {
                std::iter::once((s.anchor_id.clone(), 0.0))
                    .chain(s.variants.iter().map(|v| (v.image_id.clone(), v.degradation.severity)))
            })
            .collect()
    }

    /// Writes PNGs, `manifest.json` and `degradations.csv`
    /// (`image_id,subject_id,kind,severity,seed`) under `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in &self.subjects {
            s.anchor.save_png(&dir.join(&s.anchor_id))?;
            for v in &s.variants {
                v.face.save_png(&dir.join(&v.image_id))?;
            }
        }
        let manifest = self.manifest(dir)?;
        manifest.save(&dir.join("manifest.json"))?;
        let path = dir.join("degradations.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
        w.write_record(["image_id", "subject_id", "kind", "severity", "seed"])?;
        for s in &self.subjects {
            w.write_record([s.anchor_id.as_str(), &s.subject_id, "none", "0", ""])?;
            for v in &s.variants {
                let d = &v.degradation;
                w.write_record([
                    v.image_id.as_str(),
                    &s.subject_id,
                    d.kind.name(),
                    &d.severity.to_string(),
                    &d.seed.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        w.into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?
            .flush()
            .map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_subjects: 3,
            variants_per_subject: 4,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_and_grid() {
        let c = synthesize::<f32>(&small(1)).unwrap();
        assert_eq!(c.subjects.len(), 3);
        assert!(c.subjects.iter().all(|s| s.variants.len() == 4));
        let sev: Vec<f64> = c.subjects[0].variants.iter().map(|v| v.degradation.severity).collect();
        assert!((sev[0] - 0.1).abs() < 1e-12 && (sev[3] - 0.9).abs() < 1e-12);
        assert_eq!(SynthConfig::default().severity_grid().len(), 6);
    }

    #[test]
    fn seeded_and_subject_specific() {
        let a = synthesize::<f32>(&small(4)).unwrap();
        let b = synthesize::<f32>(&small(4)).unwrap();
        let c = synthesize::<f32>(&small(5)).unwrap();
        assert_eq!(a.subjects[1].variants[2].face, b.subjects[1].variants[2].face);
        assert_ne!(a.subjects[0].anchor, a.subjects[1].anchor);
        assert_ne!(a.subjects[0].anchor, c.subjects[0].anchor);
    }

    #[test]
    fn rendered_face_has_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = render_face::<f64>(&FaceParams::sample(&mut rng));
        let v = f.values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(var > 1e-3, "{var}");
    }

    #[test]
    fn invalid_configs() {
        assert!(synthesize::<f32>(&SynthConfig { n_subjects: 0, ..small(0) }).is_err());
        assert!(synthesize::<f32>(&SynthConfig { severity_min: 0.9, severity_max: 0.1, ..small(0) }).is_err());
    }

    #[test]
    fn writes_manifest_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let c = synthesize::<f32>(&small(2)).unwrap();
        let m = c.write(dir.path()).unwrap();
        assert_eq!(m.num_images(), 15);
        let back = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back.subjects, m.subjects);
        let face = FaceImage::<f32>::load(&back.resolve(&back.subjects[0].anchor)).unwrap();
        let diff = face
            .values()
            .iter()
            .zip(c.subjects[0].anchor.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff <= 0.5 / 255.0 + 1e-6);
        let side = std::fs::read_to_string(dir.path().join("degradations.csv")).unwrap();
        assert_eq!(side.lines().count(), 16);
    }
}
