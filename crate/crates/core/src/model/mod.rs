//! Generator and discriminator networks: configurable layer stacks executed
//! with batched im2col convolutions and exact backpropagation.

mod checkpoint;
mod layers;
mod network;
mod spec;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{sigmoid, ConvGeom, BN_EPS, BN_MOMENTUM};
pub use network::{
    bce_with_logit, clip_weights, ForwardPass, Gradients, LayerParams, Loss, LossGrad, Mode,
    Network, Parameters,
};
pub use spec::{same_out, LayerSpec, NetworkSpec, Role, Shape};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::imaging::{FaceImage, Image, Provenance};
use crate::Scalar;

fn expect_role(spec: &NetworkSpec, role: Role) -> Result<()> {
    if spec.role == role {
        Ok(())
    } else {
        Err(Error::NetworkSpec {
            layer: 0,
            message: format!("expected a {role:?} spec, got {:?}", spec.role),
        })
    }
}

pub fn build_generator<T: Scalar>(spec: NetworkSpec, seed: u64) -> Result<Network<T>> {
    expect_role(&spec, Role::Generator)?;
    Network::build(spec, seed)
}

pub fn build_discriminator<T: Scalar>(spec: NetworkSpec, seed: u64) -> Result<Network<T>> {
    expect_role(&spec, Role::Discriminator)?;
    Network::build(spec, seed)
}

/// Restores a batch of faces; output order matches input order.
pub fn generator_forward<T: Scalar>(
    g: &Network<T>,
    batch: &[FaceImage<T>],
    mode: Mode,
) -> Result<Vec<FaceImage<T>>> {
    expect_role(g.spec(), Role::Generator)?;
    let input = Tensor::from_faces(batch)?;
    let pass = g.forward(&input, mode, false)?;
    pass.output.to_faces(Provenance::Restored)
}

/// One score in [0, 1] per face: 1 means genuine high quality, 0 restored.
pub fn discriminator_forward<T: Scalar>(
    d: &Network<T>,
    batch: &[FaceImage<T>],
    mode: Mode,
) -> Result<Vec<T>> {
    expect_role(d.spec(), Role::Discriminator)?;
    let input = Tensor::from_faces(batch)?;
    Ok(d.forward(&input, mode, false)?.output.data)
}

/// Mean loss and parameter/input gradients for a batch of arbitrary images
/// matching the network's input shape.
pub fn backward<T: Scalar>(
    net: &Network<T>,
    batch: &[&Image<T>],
    mode: Mode,
    loss: &Loss<'_, T>,
) -> Result<(T, Gradients<T>)> {
    let input = Tensor::from_images(batch)?;
    let (value, grads, _) = net.loss_backward(&input, mode, loss)?;
    Ok((value, grads))
}
