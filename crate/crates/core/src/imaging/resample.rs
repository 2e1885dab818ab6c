use super::Image;
use crate::Scalar;

/// Bilinear sample at continuous pixel coordinates (pixel centers at
/// integer positions), clamping to the border.
#[inline]
pub fn sample_bilinear<T: Scalar>(img: &Image<T>, y: T, x: T, c: usize) -> T {
    let max_y = T::from_usize_lossy(img.height() - 1);
    let max_x = T::from_usize_lossy(img.width() - 1);
    let y = y.max(T::zero()).min(max_y);
    let x = x.max(T::zero()).min(max_x);
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let y0 = y0.to_usize().unwrap_or(0);
    let x0 = x0.to_usize().unwrap_or(0);
    let y1 = (y0 + 1).min(img.height() - 1);
    let x1 = (x0 + 1).min(img.width() - 1);
    let one = T::one();
    let top = img.get(y0, x0, c) * (one - fx) + img.get(y0, x1, c) * fx;
    let bottom = img.get(y1, x0, c) * (one - fx) + img.get(y1, x1, c) * fx;
    top * (one - fy) + bottom * fy
}

/// Bilinear resize with half-pixel alignment (no antialiasing prefilter).
pub fn resize_bilinear<T: Scalar>(img: &Image<T>, height: usize, width: usize) -> Image<T> {
    if img.height() == height && img.width() == width {
        return img.clone();
    }
    let sy = T::from_usize_lossy(img.height()) / T::from_usize_lossy(height);
    let sx = T::from_usize_lossy(img.width()) / T::from_usize_lossy(width);
    let half = T::lit(0.5);
    Image::from_fn(height, width, img.channels(), |y, x, c| {
        let src_y = (T::from_usize_lossy(y) + half) * sy - half;
        let src_x = (T::from_usize_lossy(x) + half) * sx - half;
        sample_bilinear(img, src_y, src_x, c)
    })
}
