use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, ConvGeom, NormCache};
use super::spec::{LayerSpec, NetworkSpec, Role, Shape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::metrics::{ssim_loss_grad, SsimParams};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics.
    Train,
    /// Batch norm uses running statistics; fully deterministic per example.
    Eval,
}

/// Parameters of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T> {
    Stateless,
    Affine {
        weight: Vec<T>,
        bias: Vec<T>,
    },
    Norm {
        gamma: Vec<T>,
        beta: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
    },
}

/// All layer parameters of a network, index-aligned with its spec.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// Trainable buffers in a fixed order (weights, biases, gammas, betas).
    pub fn trainable(&self) -> Vec<&[T]> {
        trainable_of(&self.layers)
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::Stateless => {}
                LayerParams::Affine { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerParams::Norm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
            }
        }
        out
    }

    /// Every stored buffer including running statistics, in checkpoint order.
    pub fn buffers(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::Stateless => {}
                LayerParams::Affine { weight, bias } => {
                    out.extend([weight.as_slice(), bias.as_slice()]);
                }
                LayerParams::Norm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => out.extend([
                    gamma.as_slice(),
                    beta.as_slice(),
                    running_mean.as_slice(),
                    running_var.as_slice(),
                ]),
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::Stateless => {}
                LayerParams::Affine { weight, bias } => out.extend([weight, bias]),
                LayerParams::Norm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => out.extend([gamma, beta, running_mean, running_var]),
            }
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|b| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Clamps conv/FC weights into `[-c, c]` in place. Biases and batch-norm
    /// parameters are left alone.
    pub fn clip_weights_in_place(&mut self, c: T) {
        for l in &mut self.layers {
            if let LayerParams::Affine { weight, .. } = l {
                for w in weight.iter_mut() {
                    *w = w.max(-c).min(c);
                }
            }
        }
    }

    /// Largest absolute conv/FC weight.
    pub fn max_abs_weight(&self) -> T {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerParams::Affine { weight, .. } => Some(weight),
                _ => None,
            })
            .flatten()
            .fold(T::zero(), |m, w| m.max(w.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        let conv = |v: &Vec<T>| -> Vec<U> {
            v.iter()
                .map(|x| U::from_f64(x.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect()
        };
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    LayerParams::Stateless => LayerParams::Stateless,
                    LayerParams::Affine { weight, bias } => LayerParams::Affine {
                        weight: conv(weight),
                        bias: conv(bias),
                    },
                    LayerParams::Norm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    } => LayerParams::Norm {
                        gamma: conv(gamma),
                        beta: conv(beta),
                        running_mean: conv(running_mean),
                        running_var: conv(running_var),
                    },
                })
                .collect(),
        }
    }
}

/// Returns `params` with every conv/FC weight clamped to `[-c, c]`.
pub fn clip_weights<T: Scalar>(params: &Parameters<T>, c: T) -> Result<Parameters<T>> {
    if !(c > T::zero()) {
        return Err(Error::InvalidParameter(format!("clip bound {c} must be > 0")));
    }
    let mut out = params.clone();
    out.clip_weights_in_place(c);
    Ok(out)
}

/// Gradients congruent to the trainable buffers of [`Parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerParams<T>>,
    /// Gradient with respect to the network input.
    pub input: Tensor<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Same order as [`Parameters::trainable`].
    pub fn trainable(&self) -> Vec<&[T]> {
        trainable_of(&self.layers)
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| match l {
            LayerParams::Stateless => true,
            LayerParams::Affine { weight, bias } => {
                weight.iter().chain(bias).all(|v| v.is_finite())
            }
            LayerParams::Norm { gamma, beta, .. } => {
                gamma.iter().chain(beta).all(|v| v.is_finite())
            }
        }) && self.input.data.iter().all(|v| v.is_finite())
    }
}

/// A network description together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    params: Parameters<T>,
}

enum LayerCache<T> {
    None,
    Input(Vec<T>),
    Patches(Vec<T>),
    Norm(NormCache<T>),
    Output(Vec<T>),
}

/// Intermediate state of one forward pass, kept for [`Network::backward`].
pub struct ForwardPass<T> {
    pub output: Tensor<T>,
    /// Pre-sigmoid values of the output layer.
    pub logits: Vec<T>,
    mode: Mode,
    caches: Vec<LayerCache<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// What the loss is differentiated against.
pub enum LossGrad<T> {
    /// Gradient with respect to the (post-sigmoid) network output.
    Output(Vec<T>),
    /// Gradient with respect to the pre-sigmoid logits.
    Logits(Vec<T>),
}

/// Loss functions supported by [`Network::loss_backward`].
pub enum Loss<'a, T> {
    /// Binary cross-entropy against one target in [0, 1] per example,
    /// averaged over the batch.
    Bce(&'a [T]),
    /// Mean of `1 - SSIM(output_i, target_i)` over the batch.
    SsimRecon {
        targets: &'a [Image<T>],
        params: SsimParams,
    },
}

/// Numerically stable `-(y ln s(z) + (1 - y) ln(1 - s(z)))`.
pub fn bce_with_logit<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

impl<T: Scalar> Network<T> {
    /// Validates `spec` and initializes parameters from `seed`: zero biases,
    /// weights ~ N(0, 2 / fan_in), batch norm at identity.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut prev = spec.input();
        for (layer, out) in spec.layers.iter().zip(&shapes) {
            let lp = match *layer {
                LayerSpec::Conv { filters, kernel, .. } => {
                    let fan_in = prev.c * kernel.0 * kernel.1;
                    affine(&mut rng, filters * fan_in, filters, fan_in as f64)?
                }
                LayerSpec::TransposedConv {
                    filters,
                    kernel,
                    stride,
                } => {
                    let taps = filters * kernel.0 * kernel.1;
                    let fan_in = (prev.c * kernel.0 * kernel.1) as f64 / (stride * stride) as f64;
                    affine(&mut rng, prev.c * taps, filters, fan_in.max(1.0))?
                }
                LayerSpec::FullyConnected { out_features } => {
                    let fan_in = prev.len();
                    affine(&mut rng, out_features * fan_in, out_features, fan_in as f64)?
                }
                LayerSpec::BatchNorm => LayerParams::Norm {
                    gamma: vec![T::one(); out.c],
                    beta: vec![T::zero(); out.c],
                    running_mean: vec![T::zero(); out.c],
                    running_var: vec![T::one(); out.c],
                },
                LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid => LayerParams::Stateless,
            };
            layers.push(lp);
            prev = *out;
        }
        Ok(Self {
            spec,
            shapes,
            params: Parameters { layers },
        })
    }

    pub fn from_parts(spec: NetworkSpec, params: Parameters<T>) -> Result<Self> {
        let template = Network::<T>::build(spec.clone(), 0)?;
        if template.params.layers.len() != params.layers.len() {
            return Err(Error::ShapeMismatch("parameter layer count differs from spec".into()));
        }
        for (i, (a, b)) in template
            .params
            .buffers()
            .iter()
            .zip(params.buffers())
            .enumerate()
        {
            if a.len() != b.len() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter buffer {i}: {} values, spec needs {}",
                    b.len(),
                    a.len()
                )));
            }
        }
        let kinds_match = template
            .params
            .layers
            .iter()
            .zip(&params.layers)
            .all(|(a, b)| std::mem::discriminant(a) == std::mem::discriminant(b));
        if !kinds_match {
            return Err(Error::ShapeMismatch("parameter kinds differ from spec".into()));
        }
        Ok(Self {
            shapes: template.shapes,
            spec,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.spec.role
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        &mut self.params
    }

    pub fn into_params(self) -> Parameters<T> {
        self.params
    }

    pub fn with_params(&self, params: Parameters<T>) -> Result<Self> {
        Self::from_parts(self.spec.clone(), params)
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("validated spec has layers")
    }

    fn layer_input(&self, i: usize) -> Shape {
        if i == 0 {
            self.spec.input()
        } else {
            self.shapes[i - 1]
        }
    }

    fn geom(&self, i: usize) -> ConvGeom {
        let inp = self.layer_input(i);
        let out = self.shapes[i];
        match self.spec.layers[i] {
            LayerSpec::Conv { kernel, stride, .. } => {
                ConvGeom::same(inp.c, inp.h, inp.w, out.c, kernel, stride)
            }
            LayerSpec::TransposedConv { kernel, stride, .. } => {
                ConvGeom::same(out.c, out.h, out.w, inp.c, kernel, stride)
            }
            _ => unreachable!("geometry of a non-convolution layer"),
        }
    }

    /// Runs the network on a batch. `keep` retains the per-layer state needed
    /// by [`Network::backward`].
    pub fn forward(&self, input: &Tensor<T>, mode: Mode, keep: bool) -> Result<ForwardPass<T>> {
        if input.n == 0 {
            return Err(Error::EmptyBatch);
        }
        if input.shape != self.spec.input() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {:?}, got {:?}",
                self.spec.input(),
                input.shape
            )));
        }
        let n = input.n;
        let mut x = input.data.clone();
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut logits = Vec::new();
        let last = self.spec.layers.len() - 1;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let inp = self.layer_input(i);
            let (y, cache) = match (layer, &self.params.layers[i]) {
                (LayerSpec::Conv { .. }, LayerParams::Affine { weight, bias }) => {
                    let (y, col) = layers::conv_forward(&self.geom(i), weight, bias, &x, n);
                    (y, LayerCache::Patches(col))
                }
                (LayerSpec::TransposedConv { .. }, LayerParams::Affine { weight, bias }) => {
                    let y = layers::tconv_forward(&self.geom(i), weight, bias, &x, n);
                    (y, LayerCache::Input(x))
                }
                (LayerSpec::FullyConnected { .. }, LayerParams::Affine { weight, bias }) => {
                    let y = layers::fc_forward(weight, bias, &x, inp.c, inp.h * inp.w, n);
                    (y, LayerCache::Input(x))
                }
                (LayerSpec::LeakyRelu { slope }, _) => {
                    let y = layers::leaky_relu(&x, T::lit(*slope));
                    (y, LayerCache::Input(x))
                }
                (
                    LayerSpec::BatchNorm,
                    LayerParams::Norm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    let running = match mode {
                        Mode::Train => None,
                        Mode::Eval => Some((running_mean.as_slice(), running_var.as_slice())),
                    };
                    let (y, c) = layers::batch_norm_forward(&x, inp.c, gamma, beta, running);
                    (y, LayerCache::Norm(c))
                }
                (LayerSpec::Sigmoid, _) => {
                    let y: Vec<T> = x.iter().map(|z| layers::sigmoid(*z)).collect();
                    if i == last {
                        logits = x;
                    }
                    (y.clone(), LayerCache::Output(y))
                }
                (l, _) => {
                    return Err(Error::NetworkSpec {
                        layer: i,
                        message: format!("parameters do not match {} layer", l.name()),
                    })
                }
            };
            caches.push(if keep { cache } else { LayerCache::None });
            x = y;
        }
        Ok(ForwardPass {
            output: Tensor::new(self.output_shape(), n, x)?,
            logits,
            mode,
            caches,
        })
    }

    /// Backpropagates `grad` through a pass produced with `keep = true`.
    pub fn backward(&self, pass: &ForwardPass<T>, grad: LossGrad<T>) -> Result<Gradients<T>> {
        let n = pass.output.n;
        let layers_n = self.spec.layers.len();
        if pass.caches.len() != layers_n {
            return Err(Error::ShapeMismatch("forward pass from another network".into()));
        }
        let (mut dy, start) = match grad {
            LossGrad::Output(g) => (g, layers_n),
            LossGrad::Logits(g) => {
                if self.spec.layers[layers_n - 1] != LayerSpec::Sigmoid {
                    return Err(Error::InvalidParameter("logit gradient needs a sigmoid output".into()));
                }
                (g, layers_n - 1)
            }
        };
        if dy.len() != pass.output.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient has {} values, output has {}",
                dy.len(),
                pass.output.data.len()
            )));
        }
        let mut grads: Vec<LayerParams<T>> = vec![LayerParams::Stateless; layers_n];
        for i in (0..start).rev() {
            let inp = self.layer_input(i);
            let cache = &pass.caches[i];
            dy = match (&self.spec.layers[i], &self.params.layers[i], cache) {
                (LayerSpec::Conv { .. }, LayerParams::Affine { weight, .. }, LayerCache::Patches(col)) => {
                    let (dw, db, dx) = layers::conv_backward(&self.geom(i), weight, col, &dy, n);
                    grads[i] = LayerParams::Affine { weight: dw, bias: db };
                    dx
                }
                (LayerSpec::TransposedConv { .. }, LayerParams::Affine { weight, .. }, LayerCache::Input(x)) => {
                    let (dw, db, dx) = layers::tconv_backward(&self.geom(i), weight, x, &dy, n);
                    grads[i] = LayerParams::Affine { weight: dw, bias: db };
                    dx
                }
                (LayerSpec::FullyConnected { .. }, LayerParams::Affine { weight, .. }, LayerCache::Input(x)) => {
                    let (dw, db, dx) = layers::fc_backward(weight, x, &dy, inp.c, inp.h * inp.w, n);
                    grads[i] = LayerParams::Affine { weight: dw, bias: db };
                    dx
                }
                (LayerSpec::LeakyRelu { slope }, _, LayerCache::Input(x)) => {
                    layers::leaky_relu_backward(x, &dy, T::lit(*slope))
                }
                (LayerSpec::BatchNorm, LayerParams::Norm { gamma, .. }, LayerCache::Norm(c)) => {
                    let (dg, db, dx) = layers::batch_norm_backward(c, gamma, &dy, inp.c);
                    grads[i] = LayerParams::Norm {
                        gamma: dg,
                        beta: db,
                        running_mean: Vec::new(),
                        running_var: Vec::new(),
                    };
                    dx
                }
                (LayerSpec::Sigmoid, _, LayerCache::Output(y)) => y
                    .iter()
                    .zip(&dy)
                    .map(|(s, d)| *d * *s * (T::one() - *s))
                    .collect(),
                _ => {
                    return Err(Error::InvalidParameter(
                        "backward needs a forward pass run with keep = true".into(),
                    ))
                }
            };
        }
        Ok(Gradients {
            layers: grads,
            input: Tensor::new(self.spec.input(), n, dy)?,
        })
    }

    /// Forward in `mode`, evaluate `loss`, and backpropagate. Returns the mean
    /// loss, the gradients and the forward pass.
    pub fn loss_backward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        loss: &Loss<'_, T>,
    ) -> Result<(T, Gradients<T>, ForwardPass<T>)> {
        let pass = self.forward(input, mode, true)?;
        let n = input.n;
        let inv_n = T::one() / T::from_usize_lossy(n);
        let (value, grad) = match loss {
            Loss::Bce(targets) => {
                if pass.logits.len() != n || targets.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "BCE needs one scalar output and one target per example ({} outputs, {} targets, batch {n})",
                        pass.logits.len(),
                        targets.len()
                    )));
                }
                let mut total = T::zero();
                let mut g = Vec::with_capacity(n);
                for (z, y) in pass.logits.iter().zip(targets.iter()) {
                    total += bce_with_logit(*z, *y);
                    g.push((layers::sigmoid(*z) - *y) * inv_n);
                }
                (total * inv_n, LossGrad::Logits(g))
            }
            Loss::SsimRecon { targets, params } => {
                if targets.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{} targets for a batch of {n}",
                        targets.len()
                    )));
                }
                let outputs = pass.output.images();
                let mut total = T::zero();
                let mut per_image = Vec::with_capacity(n);
                for (out, target) in outputs.iter().zip(targets.iter()) {
                    let (l, g) = ssim_loss_grad(out, target, params)?;
                    total += l;
                    per_image.push(Image::new(out.height(), out.width(), out.channels(), g)?);
                }
                let refs: Vec<&Image<T>> = per_image.iter().collect();
                let mut g = Tensor::from_images(&refs)?.data;
                g.iter_mut().for_each(|v| *v *= inv_n);
                (total * inv_n, LossGrad::Output(g))
            }
        };
        let grads = self.backward(&pass, grad)?;
        Ok((value, grads, pass))
    }

    /// Moves running batch-norm statistics toward the batch statistics of a
    /// train-mode pass (momentum 0.1, unbiased variance).
    pub fn update_running_stats(&mut self, pass: &ForwardPass<T>) {
        let m = T::lit(layers::BN_MOMENTUM);
        let n = pass.output.n;
        for (i, cache) in pass.caches.iter().enumerate() {
            let LayerCache::Norm(NormCache {
                batch_stats: Some((mean, var)),
                ..
            }) = cache
            else {
                continue;
            };
            let inp = self.layer_input(i);
            let count = n * inp.h * inp.w;
            let unbias = if count > 1 {
                T::from_usize_lossy(count) / T::from_usize_lossy(count - 1)
            } else {
                T::one()
            };
            if let LayerParams::Norm {
                running_mean,
                running_var,
                ..
            } = &mut self.params.layers[i]
            {
                for c in 0..mean.len() {
                    running_mean[c] = (T::one() - m) * running_mean[c] + m * mean[c];
                    running_var[c] = (T::one() - m) * running_var[c] + m * var[c] * unbias;
                }
            }
        }
    }
}

fn trainable_of<T>(layers: &[LayerParams<T>]) -> Vec<&[T]> {
    let mut out = Vec::new();
    for l in layers {
        match l {
            LayerParams::Stateless => {}
            LayerParams::Affine { weight, bias } => out.extend([weight.as_slice(), bias.as_slice()]),
            LayerParams::Norm { gamma, beta, .. } => out.extend([gamma.as_slice(), beta.as_slice()]),
        }
    }
    out
}

fn affine<T: Scalar>(
    rng: &mut ChaCha8Rng,
    weights: usize,
    biases: usize,
    fan_in: f64,
) -> Result<LayerParams<T>> {
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(LayerParams::Affine {
        weight: (0..weights).map(|_| T::lit(normal.sample(rng))).collect(),
        bias: vec![T::zero(); biases],
    })
}
