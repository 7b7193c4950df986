//! Bit-packing primitives and the XOR/popcount kernels.

mod dot;
mod gemm;
mod layout;
mod plane;
mod popcount;
mod tensor;

pub use dot::{dot_binary, dot_masked};
pub use gemm::{
    bit_gemm, bit_gemm_with, bit_tile_mma, AccumulatorTile, BitMatrix, Fragment, GemmWeights,
    IntMatrix, TILE,
};
pub use layout::{ChannelLayout, BLOCK_LANES, WORDS_PER_BLOCK};
pub use plane::{pack_bipolar, unpack_bipolar, BitPlane, MaskedWeightPlanes};
pub use popcount::{
    hardware_popcount_available, popcount_native, popcount_portable, xor_popcount, PopcountStrategy,
};
pub use tensor::BitTensor;
