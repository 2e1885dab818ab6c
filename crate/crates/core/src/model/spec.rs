use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
}

impl Role {
    /// Stride every (transposed) convolution of this role must use.
    pub fn conv_stride(self) -> usize {
        match self {
            Role::Generator => 2,
            Role::Discriminator => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    TransposedConv {
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    FullyConnected {
        out_features: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    BatchNorm,
    Sigmoid,
}

impl LayerSpec {
    pub fn conv(filters: usize, k: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel: (k, k),
            stride,
        }
    }

    pub fn transposed_conv(filters: usize, k: usize, stride: usize) -> Self {
        LayerSpec::TransposedConv {
            filters,
            kernel: (k, k),
            stride,
        }
    }

    pub fn leaky_relu() -> Self {
        LayerSpec::LeakyRelu { slope: 0.2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::TransposedConv { .. } => "transposed_conv",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::BatchNorm => "batch_norm",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }
}

/// Activation shape of one example: channels x height x width. Flat feature
/// vectors are `features x 1 x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn flat(features: usize) -> Self {
        Self { c: features, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output side of a "same"-padded convolution.
pub fn same_out(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    /// (height, width, channels)
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Encoder 64-128-256 (3x3, stride 2) down to 4x4x256, mirrored
    /// transposed-conv decoder back to 32x32x3, leaky ReLU between layers and
    /// a sigmoid output.
    pub fn default_generator() -> Self {
        let lr = LayerSpec::leaky_relu;
        Self {
            role: Role::Generator,
            input_shape: (32, 32, 3),
            layers: vec![
                LayerSpec::conv(64, 3, 2),
                lr(),
                LayerSpec::conv(128, 3, 2),
                lr(),
                LayerSpec::conv(256, 3, 2),
                lr(),
                LayerSpec::transposed_conv(128, 3, 2),
                lr(),
                LayerSpec::transposed_conv(64, 3, 2),
                lr(),
                LayerSpec::transposed_conv(3, 3, 2),
                LayerSpec::Sigmoid,
            ],
        }
    }

    /// conv 64 (4x4, stride 3) and conv 128 (4x4, stride 3), each followed by
    /// leaky ReLU and batch norm, then FC 128 + leaky ReLU and FC 1 + sigmoid.
    pub fn default_discriminator() -> Self {
        let lr = LayerSpec::leaky_relu;
        Self {
            role: Role::Discriminator,
            input_shape: (32, 32, 3),
            layers: vec![
                LayerSpec::conv(64, 4, 3),
                lr(),
                LayerSpec::BatchNorm,
                LayerSpec::conv(128, 4, 3),
                lr(),
                LayerSpec::BatchNorm,
                LayerSpec::FullyConnected { out_features: 128 },
                lr(),
                LayerSpec::FullyConnected { out_features: 1 },
                LayerSpec::Sigmoid,
            ],
        }
    }

    pub fn input(&self) -> Shape {
        let (h, w, c) = self.input_shape;
        Shape::new(c, h, w)
    }

    /// Checks role invariants and shape consistency, returning the output
    /// shape of every layer.
    pub fn validate(&self) -> Result<Vec<Shape>> {
        let err = |layer: usize, message: String| Error::NetworkSpec { layer, message };
        let input = self.input();
        if input.is_empty() {
            return Err(err(0, format!("empty input shape {:?}", self.input_shape)));
        }
        if self.layers.is_empty() {
            return Err(err(0, "no layers".into()));
        }
        let stride_rule = self.role.conv_stride();
        let mut shape = input;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                }
                | LayerSpec::TransposedConv {
                    filters,
                    kernel,
                    stride,
                } => {
                    if filters == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
                        return Err(err(i, format!("degenerate {} {layer:?}", layer.name())));
                    }
                    if stride != stride_rule {
                        return Err(err(
                            i,
                            format!(
                                "{:?} {} layers must use stride {stride_rule}, got {stride}",
                                self.role,
                                layer.name()
                            ),
                        ));
                    }
                    if matches!(layer, LayerSpec::Conv { .. }) {
                        Shape::new(filters, same_out(shape.h, stride), same_out(shape.w, stride))
                    } else {
                        Shape::new(filters, shape.h * stride, shape.w * stride)
                    }
                }
                LayerSpec::FullyConnected { out_features } => {
                    if out_features == 0 {
                        return Err(err(i, "zero output features".into()));
                    }
                    Shape::flat(out_features)
                }
                LayerSpec::LeakyRelu { slope } => {
                    if !(slope.is_finite() && slope >= 0.0) {
                        return Err(err(i, format!("invalid leaky ReLU slope {slope}")));
                    }
                    shape
                }
                LayerSpec::BatchNorm | LayerSpec::Sigmoid => shape,
            };
            let is_conv = matches!(
                layer,
                LayerSpec::Conv { .. } | LayerSpec::TransposedConv { .. }
            );
            if is_conv && !self.spatial_before(i) {
                return Err(err(i, "convolution after a fully connected layer".into()));
            }
            shapes.push(shape);
        }
        let last = self.layers.len() - 1;
        if self.layers[last] != LayerSpec::Sigmoid {
            return Err(err(last, "output layer must be a sigmoid".into()));
        }
        match self.role {
            Role::Generator => {
                if shape != input {
                    return Err(err(
                        last,
                        format!("generator output {shape:?} differs from input {input:?}"),
                    ));
                }
                if self
                    .layers
                    .iter()
                    .any(|l| matches!(l, LayerSpec::FullyConnected { .. }))
                {
                    return Err(err(last, "generator must be fully convolutional".into()));
                }
            }
            Role::Discriminator => {
                if shape != Shape::flat(1) {
                    return Err(err(
                        last,
                        format!("discriminator must end in one scalar, got {shape:?}"),
                    ));
                }
            }
        }
        Ok(shapes)
    }

    fn spatial_before(&self, i: usize) -> bool {
        !self.layers[..i]
            .iter()
            .any(|l| matches!(l, LayerSpec::FullyConnected { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let g = NetworkSpec::default_generator().validate().unwrap();
        assert_eq!(g[4], Shape::new(256, 4, 4));
        assert_eq!(*g.last().unwrap(), Shape::new(3, 32, 32));
        let d = NetworkSpec::default_discriminator().validate().unwrap();
        assert_eq!(d[0], Shape::new(64, 11, 11));
        assert_eq!(d[3], Shape::new(128, 4, 4));
        assert_eq!(*d.last().unwrap(), Shape::flat(1));
    }

    #[test]
    fn missing_upsampling_stage_is_rejected() {
        let mut spec = NetworkSpec::default_generator();
        // drop transposed_conv(64) and its activation
        spec.layers.remove(8);
        spec.layers.remove(8);
        match spec.validate() {
            Err(Error::NetworkSpec { layer, .. }) => assert_eq!(layer, spec.layers.len() - 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stride_rules_enforced() {
        let mut d = NetworkSpec::default_discriminator();
        d.layers[3] = LayerSpec::conv(128, 4, 2);
        assert!(matches!(d.validate(), Err(Error::NetworkSpec { layer: 3, .. })));
        let mut g = NetworkSpec::default_generator();
        g.layers[0] = LayerSpec::conv(64, 3, 3);
        assert!(matches!(g.validate(), Err(Error::NetworkSpec { layer: 0, .. })));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = NetworkSpec::default_discriminator();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"batch_norm\""));
        let back: NetworkSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
