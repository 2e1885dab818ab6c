//! MSE and SSIM between images of equal shape, plus the analytic gradient of
//! the `1 - SSIM` loss.
//!
//! SSIM follows Wang et al. (2004): per channel, local statistics are taken
//! under a separable window and combined as
//! `(2 mu_a mu_b + C1)(2 cov + C2) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))`,
//! with `C1 = (k1 L)^2`, `C2 = (k2 L)^2`. The map over all valid window
//! positions is averaged, then channels are averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimWindow {
    /// One window covering the whole image with uniform weights.
    Global,
    /// 11x11 Gaussian, sigma 1.5, valid positions only. On images smaller than
    /// 11 pixels the window shrinks to the image side.
    #[serde(rename = "gaussian_11x11_sigma1.5")]
    Gaussian11,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub window: SsimWindow,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            window: SsimWindow::Gaussian11,
        }
    }
}

impl SsimParams {
    pub fn global() -> Self {
        Self {
            window: SsimWindow::Global,
            ..Self::default()
        }
    }

    pub fn windowed() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "SSIM constants must be positive: {self:?}"
            )))
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

pub const GAUSSIAN_WINDOW: usize = 11;
pub const GAUSSIAN_SIGMA: f64 = 1.5;

fn check_shapes<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

/// Mean of squared differences over every value.
pub fn mse<T: Scalar>(a: &impl AsRef<Image<T>>, b: &impl AsRef<Image<T>>) -> Result<T> {
    let (a, b) = (a.as_ref(), b.as_ref());
    check_shapes(a, b)?;
    let sum: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum();
    Ok(sum / T::from_usize_lossy(a.data().len()))
}

/// Normalized 1-D Gaussian taps centered in a window of `len`.
pub fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let center = (len as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..len)
        .map(|i| (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

struct Window<T> {
    rows: Vec<T>,
    cols: Vec<T>,
}

impl<T: Scalar> Window<T> {
    fn for_image(kind: SsimWindow, height: usize, width: usize) -> Self {
        let taps = |len: usize| -> Vec<T> {
            match kind {
                SsimWindow::Global => vec![T::one() / T::from_usize_lossy(len); len],
                SsimWindow::Gaussian11 => gaussian_taps(GAUSSIAN_WINDOW.min(len), GAUSSIAN_SIGMA)
                    .into_iter()
                    .map(T::lit)
                    .collect(),
            }
        };
        Self {
            rows: taps(height),
            cols: taps(width),
        }
    }

    fn out_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height + 1 - self.rows.len(), width + 1 - self.cols.len())
    }

    /// Valid-mode weighted sum of a single plane (row-major `h x w`).
    fn filter(&self, plane: &[T], h: usize, w: usize) -> Vec<T> {
        let (oh, ow) = self.out_dims(h, w);
        let mut horiz = vec![T::zero(); h * ow];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for x in 0..ow {
                let mut acc = T::zero();
                for (k, t) in self.cols.iter().enumerate() {
                    acc += *t * row[x + k];
                }
                horiz[y * ow + x] = acc;
            }
        }
        let mut out = vec![T::zero(); oh * ow];
        for y in 0..oh {
            for (k, t) in self.rows.iter().enumerate() {
                let src = &horiz[(y + k) * ow..(y + k + 1) * ow];
                for (o, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                    *o += *t * *s;
                }
            }
        }
        out
    }

    /// Adjoint of [`Window::filter`]: scatters a map over window positions
    /// back onto the `h x w` plane.
    fn filter_adjoint(&self, map: &[T], h: usize, w: usize) -> Vec<T> {
        let (oh, ow) = self.out_dims(h, w);
        let mut vert = vec![T::zero(); h * ow];
        for y in 0..oh {
            for (k, t) in self.rows.iter().enumerate() {
                let dst = &mut vert[(y + k) * ow..(y + k + 1) * ow];
                for (d, m) in dst.iter_mut().zip(&map[y * ow..(y + 1) * ow]) {
                    *d += *t * *m;
                }
            }
        }
        let mut out = vec![T::zero(); h * w];
        for y in 0..h {
            for x in 0..ow {
                let v = vert[y * ow + x];
                for (k, t) in self.cols.iter().enumerate() {
                    out[y * w + x + k] += *t * v;
                }
            }
        }
        out
    }
}

fn plane<T: Scalar>(img: &Image<T>, c: usize) -> Vec<T> {
    img.data()
        .iter()
        .skip(c)
        .step_by(img.channels())
        .copied()
        .collect()
}

struct ChannelStats<T> {
    mu_a: Vec<T>,
    mu_b: Vec<T>,
    var_a: Vec<T>,
    var_b: Vec<T>,
    cov: Vec<T>,
}

fn channel_stats<T: Scalar>(win: &Window<T>, pa: &[T], pb: &[T], h: usize, w: usize) -> ChannelStats<T> {
    let sq = |p: &[T]| p.iter().map(|v| *v * *v).collect::<Vec<_>>();
    let prod: Vec<T> = pa.iter().zip(pb).map(|(x, y)| *x * *y).collect();
    let mu_a = win.filter(pa, h, w);
    let mu_b = win.filter(pb, h, w);
    let ea2 = win.filter(&sq(pa), h, w);
    let eb2 = win.filter(&sq(pb), h, w);
    let eab = win.filter(&prod, h, w);
    let var_a = ea2.iter().zip(&mu_a).map(|(e, m)| *e - *m * *m).collect();
    let var_b = eb2.iter().zip(&mu_b).map(|(e, m)| *e - *m * *m).collect();
    let cov = eab
        .iter()
        .zip(mu_a.iter().zip(&mu_b))
        .map(|(e, (ma, mb))| *e - *ma * *mb)
        .collect();
    ChannelStats {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

/// Mean SSIM; symmetric in its arguments, 1 for identical inputs.
pub fn ssim<T: Scalar>(
    a: &impl AsRef<Image<T>>,
    b: &impl AsRef<Image<T>>,
    params: &SsimParams,
) -> Result<T> {
    ssim_impl(a.as_ref(), b.as_ref(), params, false).map(|(v, _)| v)
}

/// `1 - ssim(a, b)`, in [0, 2].
pub fn ssim_loss<T: Scalar>(
    a: &impl AsRef<Image<T>>,
    b: &impl AsRef<Image<T>>,
    params: &SsimParams,
) -> Result<T> {
    ssim(a, b, params).map(|s| T::one() - s)
}

/// `1 - ssim(a, b)` and its gradient with respect to every value of `a`
/// (same HWC layout as `a`).
pub fn ssim_loss_grad<T: Scalar>(
    a: &impl AsRef<Image<T>>,
    b: &impl AsRef<Image<T>>,
    params: &SsimParams,
) -> Result<(T, Vec<T>)> {
    let (s, grad) = ssim_impl(a.as_ref(), b.as_ref(), params, true)?;
    let grad = grad.expect("gradient requested").into_iter().map(|g| -g).collect();
    Ok((T::one() - s, grad))
}

fn ssim_impl<T: Scalar>(
    a: &Image<T>,
    b: &Image<T>,
    params: &SsimParams,
    want_grad: bool,
) -> Result<(T, Option<Vec<T>>)> {
    check_shapes(a, b)?;
    params.validate()?;
    let (h, w, channels) = a.shape();
    let win = Window::<T>::for_image(params.window, h, w);
    let (oh, ow) = win.out_dims(h, w);
    let positions = oh * ow;
    let c1 = T::lit(params.c1());
    let c2 = T::lit(params.c2());
    let two = T::lit(2.0);
    let norm = T::one() / T::from_usize_lossy(positions * channels);

    let mut total = T::zero();
    let mut grad = want_grad.then(|| vec![T::zero(); a.data().len()]);
    for c in 0..channels {
        let pa = plane(a, c);
        let pb = plane(b, c);
        let st = channel_stats(&win, &pa, &pb, h, w);
        let mut alpha = Vec::with_capacity(if want_grad { positions } else { 0 });
        let mut beta = Vec::with_capacity(alpha.capacity());
        let mut gamma = Vec::with_capacity(alpha.capacity());
        for p in 0..positions {
            let (ma, mb) = (st.mu_a[p], st.mu_b[p]);
            let lum_num = two * ma * mb + c1;
            let lum_den = ma * ma + mb * mb + c1;
            let cs_num = two * st.cov[p] + c2;
            let cs_den = st.var_a[p] + st.var_b[p] + c2;
            let lum = lum_num / lum_den;
            let cs = cs_num / cs_den;
            total += lum * cs;
            if want_grad {
                let d_mu = cs * (two * mb - two * ma * lum) / lum_den;
                let d_var = -lum * cs / cs_den;
                let d_cov = lum * two / cs_den;
                alpha.push((d_mu - two * ma * d_var - mb * d_cov) * norm);
                beta.push(two * d_var * norm);
                gamma.push(d_cov * norm);
            }
        }
        if let Some(g) = grad.as_mut() {
            let ga = win.filter_adjoint(&alpha, h, w);
            let gb = win.filter_adjoint(&beta, h, w);
            let gc = win.filter_adjoint(&gamma, h, w);
            for i in 0..h * w {
                g[i * channels + c] = ga[i] + gb[i] * pa[i] + gc[i] * pb[i];
            }
        }
    }
    Ok((total * norm, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, c: usize, seed: u64) -> Image<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Image::from_fn(h, w, c, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn mse_identity_and_unit() {
        let a = img(32, 32, 3, 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let zeros = Image::filled(32, 32, 3, 0.0);
        let ones = Image::filled(32, 32, 3, 1.0);
        assert_eq!(mse(&zeros, &ones).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = img(32, 32, 3, 1);
        let b = img(16, 32, 3, 1);
        assert!(mse(&a, &b).is_err());
        assert!(ssim(&a, &b, &SsimParams::default()).is_err());
    }

    #[test]
    fn constant_images_closed_form() {
        let zeros = Image::filled(32, 32, 3, 0.0f64);
        let ones = Image::filled(32, 32, 3, 1.0);
        for p in [SsimParams::global(), SsimParams::windowed()] {
            let s = ssim(&zeros, &ones, &p).unwrap();
            assert!((s - 1e-4 / 1.0001).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn rejects_nonpositive_constants() {
        let a = img(8, 8, 1, 3);
        let p = SsimParams {
            k1: 0.0,
            ..SsimParams::default()
        };
        assert!(ssim(&a, &a, &p).is_err());
    }

    #[test]
    fn adjoint_matches_filter() {
        // <filter(x), y> == <x, adjoint(y)>
        let win = Window::<f64>::for_image(SsimWindow::Gaussian11, 14, 13);
        let x = img(14, 13, 1, 5).into_data();
        let (oh, ow) = win.out_dims(14, 13);
        let y = img(oh, ow, 1, 6).into_data();
        let fx = win.filter(&x, 14, 13);
        let aty = win.filter_adjoint(&y, 14, 13);
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetry_and_bounds(s1 in any::<u64>(), s2 in any::<u64>(), global in any::<bool>()) {
            let a = img(12, 12, 3, s1);
            let b = img(12, 12, 3, s2);
            let p = if global { SsimParams::global() } else { SsimParams::windowed() };
            let ab = ssim(&a, &b, &p).unwrap();
            let ba = ssim(&b, &a, &p).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!(ab < 1.0);
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            let m = mse(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
            let l = ssim_loss(&a, &b, &p).unwrap();
            prop_assert!((0.0..=2.0).contains(&l));
            prop_assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
