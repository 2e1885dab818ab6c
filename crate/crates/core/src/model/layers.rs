//! Batched layer kernels over `[C, N, H, W]` buffers.

use crate::Scalar;

/// Geometry of a "same"-padded strided convolution from `cin x h_in x w_in`
/// to `cout x h_out x w_out`. A transposed convolution runs the adjoint of the
/// convolution with the input and output roles swapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn same(
        cin: usize,
        h_in: usize,
        w_in: usize,
        cout: usize,
        (kh, kw): (usize, usize),
        stride: usize,
    ) -> Self {
        let h_out = h_in.div_ceil(stride);
        let w_out = w_in.div_ceil(stride);
        let pad = |out: usize, k: usize, inp: usize| ((out - 1) * stride + k).saturating_sub(inp) / 2;
        Self {
            cin,
            h_in,
            w_in,
            cout,
            kh,
            kw,
            stride,
            h_out,
            w_out,
            pad_top: pad(h_out, kh, h_in),
            pad_left: pad(w_out, kw, w_in),
        }
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(pad).filter(|i| *i < limit)
    }

    /// Unfolds `x` (`[cin, n, h_in, w_in]`) into `[cin*kh*kw, n*h_out*w_out]`.
    pub fn im2col<T: Scalar>(&self, x: &[T], n: usize) -> Vec<T> {
        let cols = n * self.h_out * self.w_out;
        let mut out = vec![T::zero(); self.patch_len() * cols];
        let plane_in = self.h_in * self.w_in;
        for ci in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut out[row * cols..(row + 1) * cols];
                    for b in 0..n {
                        let src = &x[(ci * n + b) * plane_in..(ci * n + b + 1) * plane_in];
                        for oy in 0..self.h_out {
                            let Some(iy) = self.src(oy, ky, self.pad_top, self.h_in) else {
                                continue;
                            };
                            let base = (b * self.h_out + oy) * self.w_out;
                            for ox in 0..self.w_out {
                                if let Some(ix) = self.src(ox, kx, self.pad_left, self.w_in) {
                                    dst[base + ox] = src[iy * self.w_in + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`ConvGeom::im2col`]: folds patch columns back, summing overlaps.
    pub fn col2im<T: Scalar>(&self, col: &[T], n: usize) -> Vec<T> {
        let cols = n * self.h_out * self.w_out;
        let plane_in = self.h_in * self.w_in;
        let mut x = vec![T::zero(); self.cin * n * plane_in];
        for ci in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for b in 0..n {
                        let dst = &mut x[(ci * n + b) * plane_in..(ci * n + b + 1) * plane_in];
                        for oy in 0..self.h_out {
                            let Some(iy) = self.src(oy, ky, self.pad_top, self.h_in) else {
                                continue;
                            };
                            let base = (b * self.h_out + oy) * self.w_out;
                            for ox in 0..self.w_out {
                                if let Some(ix) = self.src(ox, kx, self.pad_left, self.w_in) {
                                    dst[iy * self.w_in + ix] += src[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

fn row_major(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

fn transposed(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T]) {
    let per = y.len() / bias.len();
    for (chunk, b) in y.chunks_exact_mut(per).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += *b);
    }
}

fn channel_sums<T: Scalar>(dy: &[T], channels: usize) -> Vec<T> {
    let per = dy.len() / channels;
    dy.chunks_exact(per).map(|c| c.iter().copied().sum()).collect()
}

/// Returns `(y, patches)`; `weight` is `[cout, cin*kh*kw]`.
pub fn conv_forward<T: Scalar>(
    g: &ConvGeom,
    weight: &[T],
    bias: &[T],
    x: &[T],
    n: usize,
) -> (Vec<T>, Vec<T>) {
    let k = g.patch_len();
    let np = n * g.h_out * g.w_out;
    let col = g.im2col(x, n);
    let mut y = vec![T::zero(); g.cout * np];
    T::gemm(g.cout, k, np, T::one(), weight, row_major(k), &col, row_major(np), T::zero(), &mut y, row_major(np));
    add_channel_bias(&mut y, bias);
    (y, col)
}

/// Returns `(d_weight, d_bias, d_x)`.
pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    weight: &[T],
    col: &[T],
    dy: &[T],
    n: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let k = g.patch_len();
    let np = n * g.h_out * g.w_out;
    let mut dw = vec![T::zero(); g.cout * k];
    T::gemm(g.cout, np, k, T::one(), dy, row_major(np), col, transposed(np), T::zero(), &mut dw, row_major(k));
    let mut dcol = vec![T::zero(); k * np];
    T::gemm(k, g.cout, np, T::one(), weight, transposed(k), dy, row_major(np), T::zero(), &mut dcol, row_major(np));
    let dx = g.col2im(&dcol, n);
    (dw, channel_sums(dy, g.cout), dx)
}

/// Transposed convolution: `x` is `[g.cout, n, g.h_out, g.w_out]`, the result
/// `[g.cin, n, g.h_in, g.w_in]`; `weight` is `[g.cout, g.cin*kh*kw]`.
pub fn tconv_forward<T: Scalar>(g: &ConvGeom, weight: &[T], bias: &[T], x: &[T], n: usize) -> Vec<T> {
    let k = g.patch_len();
    let np = n * g.h_out * g.w_out;
    let mut col = vec![T::zero(); k * np];
    T::gemm(k, g.cout, np, T::one(), weight, transposed(k), x, row_major(np), T::zero(), &mut col, row_major(np));
    let mut y = g.col2im(&col, n);
    add_channel_bias(&mut y, bias);
    y
}

pub fn tconv_backward<T: Scalar>(
    g: &ConvGeom,
    weight: &[T],
    x: &[T],
    dy: &[T],
    n: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let k = g.patch_len();
    let np = n * g.h_out * g.w_out;
    let dcol = g.im2col(dy, n);
    let mut dx = vec![T::zero(); g.cout * np];
    T::gemm(g.cout, k, np, T::one(), weight, row_major(k), &dcol, row_major(np), T::zero(), &mut dx, row_major(np));
    let mut dw = vec![T::zero(); g.cout * k];
    T::gemm(g.cout, np, k, T::one(), x, row_major(np), &dcol, transposed(np), T::zero(), &mut dw, row_major(k));
    (dw, channel_sums(dy, g.cin), dx)
}

/// Fully connected layer over examples of `channels x plane` values stored
/// `[channels, n, plane]`; output is `[out, n]`. `weight` is
/// `[out, channels*plane]`.
pub fn fc_forward<T: Scalar>(
    weight: &[T],
    bias: &[T],
    x: &[T],
    channels: usize,
    plane: usize,
    n: usize,
) -> Vec<T> {
    let out = bias.len();
    let in_features = channels * plane;
    let mut y = vec![T::zero(); out * n];
    for c in 0..channels {
        let w_c = &weight[c * plane..];
        let x_c = &x[c * n * plane..(c + 1) * n * plane];
        let beta = if c == 0 { T::zero() } else { T::one() };
        T::gemm(out, plane, n, T::one(), w_c, row_major(in_features), x_c, (1, plane as isize), beta, &mut y, row_major(n));
    }
    for (row, b) in y.chunks_exact_mut(n).zip(bias) {
        row.iter_mut().for_each(|v| *v += *b);
    }
    y
}

pub fn fc_backward<T: Scalar>(
    weight: &[T],
    x: &[T],
    dy: &[T],
    channels: usize,
    plane: usize,
    n: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let out = dy.len() / n;
    let in_features = channels * plane;
    let mut dw = vec![T::zero(); out * in_features];
    let mut dx = vec![T::zero(); channels * n * plane];
    for c in 0..channels {
        let x_c = &x[c * n * plane..(c + 1) * n * plane];
        T::gemm(out, n, plane, T::one(), dy, row_major(n), x_c, row_major(plane), T::zero(), &mut dw[c * plane..], row_major(in_features));
        T::gemm(plane, out, n, T::one(), &weight[c * plane..], transposed(in_features), dy, row_major(n), T::zero(), &mut dx[c * n * plane..(c + 1) * n * plane], (1, plane as isize));
    }
    let db = dy.chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
    (dw, db, dx)
}

pub fn leaky_relu<T: Scalar>(x: &[T], slope: T) -> Vec<T> {
    x.iter()
        .map(|v| if *v > T::zero() { *v } else { *v * slope })
        .collect()
}

pub fn leaky_relu_backward<T: Scalar>(x: &[T], dy: &[T], slope: T) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(v, d)| if *v > T::zero() { *d } else { *d * slope })
        .collect()
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Normalized values and per-channel inverse std of a batch-norm forward pass.
pub struct NormCache<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch statistics (mean, biased variance); `None` in eval mode.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

pub fn batch_norm_forward<T: Scalar>(
    x: &[T],
    channels: usize,
    gamma: &[T],
    beta: &[T],
    running: Option<(&[T], &[T])>,
) -> (Vec<T>, NormCache<T>) {
    let per = x.len() / channels;
    let eps = T::lit(BN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut x_hat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(channels);
    let mut means = Vec::with_capacity(channels);
    let mut vars = Vec::with_capacity(channels);
    for c in 0..channels {
        let xs = &x[c * per..(c + 1) * per];
        let (mean, var) = match running {
            Some((rm, rv)) => (rm[c], rv[c]),
            None => {
                let cnt = T::from_usize_lossy(per);
                let mean = xs.iter().copied().sum::<T>() / cnt;
                let var = xs.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / cnt;
                means.push(mean);
                vars.push(var);
                (mean, var)
            }
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for i in 0..per {
            let h = (xs[i] - mean) * is;
            x_hat[c * per + i] = h;
            y[c * per + i] = gamma[c] * h + beta[c];
        }
    }
    let batch_stats = running.is_none().then_some((means, vars));
    (
        y,
        NormCache {
            x_hat,
            inv_std,
            batch_stats,
        },
    )
}

/// Returns `(d_gamma, d_beta, d_x)`.
pub fn batch_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &[T],
    dy: &[T],
    channels: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let per = dy.len() / channels;
    let mut dgamma = Vec::with_capacity(channels);
    let mut dbeta = Vec::with_capacity(channels);
    let mut dx = vec![T::zero(); dy.len()];
    let m = T::from_usize_lossy(per);
    for c in 0..channels {
        let d = &dy[c * per..(c + 1) * per];
        let h = &cache.x_hat[c * per..(c + 1) * per];
        let sum_d: T = d.iter().copied().sum();
        let sum_dh: T = d.iter().zip(h).map(|(a, b)| *a * *b).sum();
        dgamma.push(sum_dh);
        dbeta.push(sum_d);
        let scale = gamma[c] * cache.inv_std[c];
        let out = &mut dx[c * per..(c + 1) * per];
        if cache.batch_stats.is_some() {
            for i in 0..per {
                out[i] = scale * (d[i] - sum_d / m - h[i] * sum_dh / m);
            }
        } else {
            for i in 0..per {
                out[i] = scale * d[i];
            }
        }
    }
    (dgamma, dbeta, dx)
}
