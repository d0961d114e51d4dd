//! Convolutional encoder-decoder from an x-ray to a volume, with the depth
//! axis carried as output channels. Forward and backward passes are written
//! by hand for this fixed topology.

mod gemm;
pub mod layers;
mod network;
mod tensor;
mod train;
mod weights;

pub use layers::{BasicBlock, BatchNorm, Conv2d, Deconv2d, Param, Parameters, Residual3};
pub use network::{image_batch, volume_batch, Mode, Network, NetworkConfig, STEM_CHANNELS};
pub use tensor::{concat_channels, split_channels, Tensor4};
pub use train::{
    evaluate_loss, loss_l2, loss_l2_tensor, train, train_step, Adam, AdamConfig, EpochStats, Sample, TrainConfig,
    TrainOutcome,
};
pub use weights::{NamedTensor, NetworkWeights};

/// Element type of all network tensors.
#[cfg(not(feature = "f64"))]
pub type Scalar = f32;
#[cfg(feature = "f64")]
pub type Scalar = f64;

#[cfg(not(feature = "f64"))]
#[inline]
pub(crate) fn sqrt(x: Scalar) -> Scalar {
    libm::sqrtf(x)
}

#[cfg(feature = "f64")]
#[inline]
pub(crate) fn sqrt(x: Scalar) -> Scalar {
    libm::sqrt(x)
}
