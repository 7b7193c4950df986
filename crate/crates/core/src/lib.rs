//! Bit-packed inference engine and analysis toolkit for masked-binary U-Nets.
//!
//! Activations are `{-1,+1}` bits; weights are either `{-1,+1}` bits or
//! ternary `{-1,0,+1}` values stored as two subtracting bit-planes. Every
//! convolution lowers to an XOR/popcount tile GEMM.

pub mod bitcore;
pub mod error;
pub mod graph;
pub mod io;
pub mod layers;
pub mod oracle;
pub mod par;
pub mod planner;
pub mod quantizer;

pub use error::{Error, Result};
pub use par::Parallelism;
