//! Float weight bundles to bit-planes and fused thresholds.

mod bundle;
mod quant;
mod synth;

pub use bundle::{BnParams, BundleEntry, EntryKind, WeightBundle, MANIFEST};
pub use quant::{
    binarize, binary_values, build, model_sparsity, oihw_to_ohwi, quantize_bundle, quantize_unit,
    sparsity, ternarize, ternary_values, LayerSparsity, QuantizeOptions, SparsityReport,
    DEFAULT_TERNARY_THRESHOLD,
};
pub use synth::{synthetic_bundle, zero_bundle};
