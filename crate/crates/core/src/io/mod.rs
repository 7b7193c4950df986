//! File formats: model files, raw tensors, images and config files.

mod bytes;
mod config_file;
mod image;
mod model_file;
mod raw;

pub use config_file::{load_config, parse_config, render_config};
pub use image::{decode_pnm, encode_mask, encode_pnm, read_pnm};
pub use model_file::{decode_model, encode_model, read_model, write_model};
pub use raw::{RawData, RawTensor};
