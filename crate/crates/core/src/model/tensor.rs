use super::spec::Shape;
use crate::error::{Error, Result};
use crate::imaging::{FaceImage, Image, Provenance};
use crate::Scalar;

/// Batch of activations stored channel-major: `[C, N, H, W]`. With this layout
/// a convolution is one GEMM over the whole batch and per-channel batch
/// statistics are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Shape,
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape, n: usize) -> Self {
        Self {
            shape,
            n,
            data: vec![T::zero(); shape.len() * n],
        }
    }

    pub fn new(shape: Shape, n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() * n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n} x {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, n, data })
    }

    /// Elements of one (channel, example) plane.
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape.h * self.shape.w
    }

    /// Per-channel contiguous run covering the whole batch.
    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let len = self.n * self.plane_len();
        &self.data[c * len..(c + 1) * len]
    }

    /// Packs HWC images of identical shape into a batch tensor.
    pub fn from_images(images: &[&Image<T>]) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyBatch)?;
        let (h, w, c) = first.shape();
        let shape = Shape::new(c, h, w);
        let n = images.len();
        let mut data = vec![T::zero(); shape.len() * n];
        let plane = h * w;
        for (i, img) in images.iter().enumerate() {
            if img.shape() != (h, w, c) {
                return Err(Error::ShapeMismatch(format!(
                    "batch element {i} is {:?}, expected {:?}",
                    img.shape(),
                    (h, w, c)
                )));
            }
            for (p, px) in img.data().chunks_exact(c).enumerate() {
                for (ch, v) in px.iter().enumerate() {
                    data[(ch * n + i) * plane + p] = *v;
                }
            }
        }
        Ok(Self { shape, n, data })
    }

    pub fn from_faces(faces: &[FaceImage<T>]) -> Result<Self> {
        let refs: Vec<&Image<T>> = faces.iter().map(FaceImage::image).collect();
        Self::from_images(&refs)
    }

    /// Unpacks example `i` as an HWC image.
    pub fn image(&self, i: usize) -> Image<T> {
        let Shape { c, h, w } = self.shape;
        let plane = h * w;
        let mut data = vec![T::zero(); c * plane];
        for ch in 0..c {
            let src = &self.data[(ch * self.n + i) * plane..(ch * self.n + i + 1) * plane];
            for (p, v) in src.iter().enumerate() {
                data[p * c + ch] = *v;
            }
        }
        Image::new(h, w, c, data).expect("tensor plane dimensions are consistent")
    }

    pub fn images(&self) -> Vec<Image<T>> {
        (0..self.n).map(|i| self.image(i)).collect()
    }

    pub fn to_faces(&self, provenance: Provenance) -> Result<Vec<FaceImage<T>>> {
        self.images()
            .into_iter()
            .map(|img| FaceImage::new(img, provenance))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_unpack_round_trip() {
        let a = Image::from_fn(2, 3, 3, |y, x, c| (y * 100 + x * 10 + c) as f64);
        let b = Image::from_fn(2, 3, 3, |y, x, c| -((y * 100 + x * 10 + c) as f64));
        let t = Tensor::from_images(&[&a, &b]).unwrap();
        assert_eq!(t.shape, Shape::new(3, 2, 3));
        // channel 1 of example 1 at (1, 2)
        assert_eq!(t.data[(2 + 1) * 6 + 5], -121.0);
        assert_eq!(t.image(0), a);
        assert_eq!(t.image(1), b);
    }

    #[test]
    fn mixed_shapes_rejected() {
        let a = Image::filled(2, 3, 3, 0.0f32);
        let b = Image::filled(3, 2, 3, 0.0f32);
        assert!(Tensor::from_images(&[&a, &b]).is_err());
        assert!(matches!(Tensor::<f32>::from_images(&[]), Err(Error::EmptyBatch)));
    }
}
