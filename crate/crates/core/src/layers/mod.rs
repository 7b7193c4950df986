//! U-Net layer types lowered onto the bit kernels.

mod conv;
mod float;
mod pool;
mod tconv;
mod tensor;
mod threshold;

pub use conv::{
    conv_forward, lower_conv_to_gemm, ConvSpec, ConvWeights, Lowered, PadValue, WeightKind,
};
pub use float::{float_conv, FloatConvWeights};
pub use pool::{concat_channels, maxpool2};
pub use tconv::transposed_conv_forward;
pub use tensor::{FloatTensor, IntTensor};
pub use threshold::{
    apply_threshold, bn_sign, fuse_bn_sign, BatchNorm, FusedThreshold, ThresholdRule,
};
