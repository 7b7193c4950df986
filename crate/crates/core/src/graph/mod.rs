//! The quantized U-Net: configuration, topology and execution.

mod config;
mod label;
mod model;
mod topology;

pub use config::{PaddingConvention, Stem2Mode, UNetConfig, ValidationReport};
pub use label::{LayerLabel, LayerState, PrecisionMap};
pub use model::{
    mask_from_logits, CompiledLayer, CompiledModel, LayerParams, Prediction, Trace, TraceTensor,
};
pub use topology::{steps, units, Step, Unit, UnitKind};
