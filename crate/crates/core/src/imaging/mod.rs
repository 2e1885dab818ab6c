//! Image ingestion, preprocessing to the canonical 32x32x3 network input,
//! and synthetic degradations.

mod degrade;
mod manifest;
mod resample;
mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

pub use degrade::{degrade, DegradationKind, DegradationSpec};
pub use manifest::{DatasetManifest, SubjectRecord};
pub use resample::{resize_bilinear, sample_bilinear};
pub use synth::{render_face, synthesize, FaceParams, SynthConfig, SynthCorpus, SynthSubject, SynthVariant};

/// Side length of the canonical face image.
pub const FACE_SIZE: usize = 32;
pub const FACE_CHANNELS: usize = 3;
pub const FACE_LEN: usize = FACE_SIZE * FACE_SIZE * FACE_CHANNELS;

/// 8-bit raster as decoded from disk, row-major HWC.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty raster {width}x{height}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::InvalidImage(format!(
                "{} bytes for a {width}x{height} RGB raster",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        3
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }
}

/// Dense real-valued H x W x C grid, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidImage(format!(
                "degenerate shape {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Copy of the rectangle starting at (`y0`, `x0`).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(h, w, self.channels, |y, x, c| {
            self.get(y0 + y, x0 + x, c)
        }))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

/// Where a face image came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Restored,
    Synthetic,
}

/// Canonical 32x32x3 face with every value in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage<T> {
    image: Image<T>,
    provenance: Provenance,
}

impl<T: Scalar> FaceImage<T> {
    /// Validates shape and range; values outside [0, 1] (or NaN) are rejected.
    pub fn new(image: Image<T>, provenance: Provenance) -> Result<Self> {
        if image.shape() != (FACE_SIZE, FACE_SIZE, FACE_CHANNELS) {
            return Err(Error::ShapeMismatch(format!(
                "face image must be {FACE_SIZE}x{FACE_SIZE}x{FACE_CHANNELS}, got {:?}",
                image.shape()
            )));
        }
        if let Some(bad) = image
            .data()
            .iter()
            .position(|v| !(*v >= T::zero() && *v <= T::one()))
        {
            return Err(Error::InvalidImage(format!(
                "value {} at offset {bad} outside [0, 1]",
                image.data()[bad]
            )));
        }
        Ok(Self { image, provenance })
    }

    pub fn from_values(values: Vec<T>, provenance: Provenance) -> Result<Self> {
        Self::new(
            Image::new(FACE_SIZE, FACE_SIZE, FACE_CHANNELS, values)?,
            provenance,
        )
    }

    /// Clamps into [0, 1] instead of rejecting.
    pub fn from_values_clamped(values: Vec<T>, provenance: Provenance) -> Result<Self> {
        let mut image = Image::new(FACE_SIZE, FACE_SIZE, FACE_CHANNELS, values)?;
        for v in image.data_mut() {
            if v.is_nan() {
                return Err(Error::InvalidImage("NaN value".into()));
            }
        }
        image.clamp_unit();
        Ok(Self { image, provenance })
    }

    pub fn constant(value: T, provenance: Provenance) -> Result<Self> {
        Self::new(
            Image::filled(FACE_SIZE, FACE_SIZE, FACE_CHANNELS, value),
            provenance,
        )
    }

    pub fn image(&self) -> &Image<T> {
        &self.image
    }

    pub fn values(&self) -> &[T] {
        self.image.data()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn into_image(self) -> Image<T> {
        self.image
    }

    /// Quantizes to 8 bits (round half up) for PNG output.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.values()
            .iter()
            .map(|v| (v.to_f64_lossy() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_rgb_png(path, FACE_SIZE, FACE_SIZE, &self.to_rgb8())
    }

    /// Loads a PNG/JPEG that is already 32x32 RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = load_image(path)?;
        preprocess(&raw, None)
    }
}

impl<T> AsRef<Image<T>> for FaceImage<T> {
    fn as_ref(&self) -> &Image<T> {
        &self.image
    }
}

impl<T> AsRef<Image<T>> for Image<T> {
    fn as_ref(&self) -> &Image<T> {
        self
    }
}

/// Face region in raw-image pixel coordinates, as produced by an external
/// detector or read from a manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub const MIN_EXTENT: usize = 8;

    pub fn whole(raw: &RawImage) -> Self {
        Self {
            x: 0,
            y: 0,
            w: raw.width(),
            h: raw.height(),
        }
    }

    pub fn validate(&self, raw: &RawImage) -> Result<()> {
        let fits = self.w >= Self::MIN_EXTENT
            && self.h >= Self::MIN_EXTENT
            && self.x.checked_add(self.w).is_some_and(|r| r <= raw.width())
            && self.y.checked_add(self.h).is_some_and(|b| b <= raw.height());
        if fits {
            Ok(())
        } else {
            Err(Error::BoxOutOfBounds {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                width: raw.width(),
                height: raw.height(),
            })
        }
    }
}

/// Source of face boxes. Implementations wrap an external detector.
pub trait FaceDetector {
    fn detect(&self, raw: &RawImage) -> Option<BoundingBox>;
}

/// Detector that always returns the whole image.
#[derive(Clone, Copy, Debug, Default)]
pub struct WholeImage;

impl FaceDetector for WholeImage {
    fn detect(&self, raw: &RawImage) -> Option<BoundingBox> {
        Some(BoundingBox::whole(raw))
    }
}

/// Decodes a PNG or JPEG file. Anything that is not 8-bit, 3-channel RGB is
/// rejected rather than converted.
pub fn load_image(path: &Path) -> Result<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match decoded {
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            RawImage::new(h as usize, w as usize, buf.into_raw())
        }
        other => {
            let found = other.color().channel_count() as usize;
            if found == 3 {
                Err(Error::Decode {
                    path: path.to_path_buf(),
                    message: format!("unsupported sample format {:?}", other.color()),
                })
            } else {
                Err(Error::ChannelCount {
                    path: path.to_path_buf(),
                    found,
                })
            }
        }
    }
}

pub fn save_rgb_png(path: &Path, height: usize, width: usize, rgb: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    image::save_buffer_with_format(
        path,
        rgb,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::InvalidImage(other.to_string()),
    })
}

/// Crops `bbox` (whole image when `None`), normalizes to [0, 1] and
/// bilinearly resamples to 32x32x3.
pub fn preprocess<T: Scalar>(raw: &RawImage, bbox: Option<BoundingBox>) -> Result<FaceImage<T>> {
    let bbox = bbox.unwrap_or_else(|| BoundingBox::whole(raw));
    if bbox != BoundingBox::whole(raw) {
        bbox.validate(raw)?;
    } else if bbox.w == 0 || bbox.h == 0 {
        return Err(Error::InvalidImage("empty raster".into()));
    }
    let scale = T::lit(255.0);
    let cropped = Image::from_fn(bbox.h, bbox.w, 3, |y, x, c| {
        T::from_u8(raw.get(bbox.y + y, bbox.x + x, c)).expect("u8 fits") / scale
    });
    let mut resized = resize_bilinear(&cropped, FACE_SIZE, FACE_SIZE);
    resized.clamp_unit();
    FaceImage::new(resized, Provenance::Original)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_from_fn(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> u8) -> RawImage {
        let mut px = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    px.push(f(y, x, c));
                }
            }
        }
        RawImage::new(h, w, px).unwrap()
    }

    #[test]
    fn constant_gray_is_resample_invariant() {
        let raw = raw_from_fn(57, 91, |_, _, _| 128);
        let bbox = BoundingBox {
            x: 10,
            y: 3,
            w: 40,
            h: 50,
        };
        let face: FaceImage<f64> = preprocess(&raw, Some(bbox)).unwrap();
        for v in face.values() {
            assert!((v - 128.0 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_box_on_32x32_is_elementwise_division() {
        let raw = raw_from_fn(32, 32, |y, x, c| ((y * 7 + x * 13 + c * 51) % 256) as u8);
        let face: FaceImage<f64> = preprocess(&raw, None).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                for c in 0..3 {
                    let want = raw.get(y, x, c) as f64 / 255.0;
                    assert_eq!(face.image().get(y, x, c), want);
                }
            }
        }
    }

    #[test]
    fn box_outside_image_is_rejected() {
        let raw = raw_from_fn(20, 20, |_, _, _| 0);
        let bbox = BoundingBox {
            x: 15,
            y: 0,
            w: 10,
            h: 10,
        };
        assert!(matches!(
            preprocess::<f32>(&raw, Some(bbox)),
            Err(Error::BoxOutOfBounds { .. })
        ));
        let tiny = BoundingBox {
            x: 0,
            y: 0,
            w: 4,
            h: 10,
        };
        assert!(preprocess::<f32>(&raw, Some(tiny)).is_err());
    }

    #[test]
    fn load_rejects_grayscale_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let gray = dir.path().join("gray.png");
        image::save_buffer(&gray, &[7u8; 12 * 10], 12, 10, image::ExtendedColorType::L8).unwrap();
        assert!(matches!(
            load_image(&gray),
            Err(Error::ChannelCount { found: 1, .. })
        ));

        let rgb = dir.path().join("rgb.png");
        save_rgb_png(&rgb, 80, 100, &vec![9u8; 80 * 100 * 3]).unwrap();
        let raw = load_image(&rgb).unwrap();
        assert_eq!((raw.height(), raw.width(), raw.channels()), (80, 100, 3));

        let bytes = std::fs::read(&rgb).unwrap();
        let cut = dir.path().join("cut.png");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&cut), Err(Error::Decode { .. })));

        assert!(matches!(
            load_image(&dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let face = FaceImage::<f32>::from_values(
            (0..FACE_LEN).map(|i| (i % 256) as f32 / 255.0).collect(),
            Provenance::Synthetic,
        )
        .unwrap();
        let p = dir.path().join("f.png");
        face.save_png(&p).unwrap();
        let back = FaceImage::<f32>::load(&p).unwrap();
        assert_eq!(back.values(), face.values());
    }

    #[test]
    fn face_image_rejects_out_of_range() {
        let mut v = vec![0.5f64; FACE_LEN];
        v[3] = 1.5;
        assert!(FaceImage::from_values(v.clone(), Provenance::Original).is_err());
        let clamped = FaceImage::from_values_clamped(v, Provenance::Original).unwrap();
        assert_eq!(clamped.values()[3], 1.0);
        assert!(FaceImage::<f64>::from_values(vec![0.5; 10], Provenance::Original).is_err());
    }

    proptest! {
        #[test]
        fn preprocess_output_is_canonical(
            h in 8usize..70, w in 8usize..70, seed in any::<u64>(),
            bx in 0usize..40, by in 0usize..40, bw in 8usize..70, bh in 8usize..70,
        ) {
            let raw = raw_from_fn(h, w, |y, x, c| {
                (seed.wrapping_mul(31).wrapping_add((y * 131 + x * 17 + c * 3) as u64) % 256) as u8
            });
            let bbox = BoundingBox { x: bx.min(w - 8), y: by.min(h - 8), w: bw, h: bh };
            let bbox = BoundingBox { w: bbox.w.min(w - bbox.x), h: bbox.h.min(h - bbox.y), ..bbox };
            let face: FaceImage<f32> = preprocess(&raw, Some(bbox)).unwrap();
            prop_assert_eq!(face.image().shape(), (32, 32, 3));
            prop_assert!(face.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
