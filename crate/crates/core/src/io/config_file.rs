//! TOML configuration files.
//!
//! Every key is optional; missing keys take the default of the schedule
//! built from `base` (default 64):
//!
//! ```toml
//! base = 64
//! in_channels = 3
//! height = 512
//! width = 512
//! classes = 1
//! encoder = [64, 128, 256, 512, 512]
//! upconv = [512, 256, 128, 64]
//! decoder = [256, 128, 64, 64]
//! conv_kernel = 3
//! upconv_kernel = 2
//! upconv_stride = 2
//! stem2 = "masked"           # float | binary | masked
//! padding = "mixed"          # mixed | neg-one | zero
//! config_id = 240            # or: masked = ["up-CT1", "up-CT2"]
//! ternary_threshold = 0.7
//!
//! [layer_thresholds]
//! "up1.conv1" = 0.5
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{LayerLabel, PaddingConvention, PrecisionMap, Stem2Mode, UNetConfig};
use crate::quantizer::QuantizeOptions;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    base: Option<usize>,
    in_channels: Option<usize>,
    height: Option<usize>,
    width: Option<usize>,
    classes: Option<usize>,
    encoder: Option<[usize; 5]>,
    upconv: Option<[usize; 4]>,
    decoder: Option<[usize; 4]>,
    conv_kernel: Option<usize>,
    upconv_kernel: Option<usize>,
    upconv_stride: Option<usize>,
    stem2: Option<Stem2Mode>,
    padding: Option<PaddingConvention>,
    config_id: Option<u16>,
    masked: Option<Vec<String>>,
    ternary_threshold: Option<f64>,
    #[serde(default)]
    layer_thresholds: BTreeMap<String, f64>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Parses a config file into a network config and quantization options.
pub fn parse_config(text: &str, source: &str) -> Result<(UNetConfig, QuantizeOptions)> {
    let f: ConfigFile = toml::from_str(text).map_err(|e| {
        let loc = match e.span() {
            Some(s) => {
                let (l, c) = line_col(text, s.start);
                format!("{source}:{l}:{c}")
            }
            None => source.to_string(),
        };
        Error::parse(loc, e.message().to_string())
    })?;
    let mut c = UNetConfig::with_base(f.base.unwrap_or(64));
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = f.$field { c.$field = v; } )* };
    }
    set!(
        in_channels,
        height,
        width,
        classes,
        encoder,
        upconv,
        decoder,
        conv_kernel,
        upconv_kernel,
        upconv_stride,
        stem2,
        padding
    );
    c.precision = match (f.config_id, f.masked) {
        (Some(_), Some(_)) => {
            return Err(Error::parse(
                source,
                "give either `config_id` or `masked`, not both",
            ))
        }
        (Some(id), None) => {
            PrecisionMap::from_id(id).map_err(|e| Error::parse(source, e.to_string()))?
        }
        (None, Some(names)) => {
            let labels = names
                .iter()
                .map(|n| n.parse::<LayerLabel>())
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::parse(source, e.to_string()))?;
            PrecisionMap::from_masked(labels).map_err(|e| Error::parse(source, e.to_string()))?
        }
        (None, None) => PrecisionMap::all_binary(),
    };
    let mut opts = QuantizeOptions::default();
    if let Some(t) = f.ternary_threshold {
        opts.ternary_threshold = t;
    }
    opts.layer_thresholds = f.layer_thresholds;
    if let Some((k, t)) = std::iter::once(("ternary_threshold", &opts.ternary_threshold))
        .chain(opts.layer_thresholds.iter().map(|(k, v)| (k.as_str(), v)))
        .find(|(_, t)| !(**t >= 0.0 && t.is_finite()))
    {
        return Err(Error::parse(
            source,
            format!("threshold `{k}` = {t} must be >= 0"),
        ));
    }
    Ok((c, opts))
}

pub fn load_config(path: &Path) -> Result<(UNetConfig, QuantizeOptions)> {
    let text = fs::read_to_string(path)?;
    parse_config(&text, &path.display().to_string())
}

/// Renders a config in the file syntax.
pub fn render_config(c: &UNetConfig, opts: &QuantizeOptions) -> String {
    let list = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let kebab = |s: String| {
        let mut out = String::new();
        for (i, ch) in s.chars().enumerate() {
            if ch.is_uppercase() && i > 0 {
                out.push('-');
            }
            out.push(ch.to_ascii_lowercase());
        }
        out
    };
    let mut s = format!(
        "in_channels = {}\nheight = {}\nwidth = {}\nclasses = {}\nencoder = [{}]\nupconv = [{}]\ndecoder = [{}]\nconv_kernel = {}\nupconv_kernel = {}\nupconv_stride = {}\nstem2 = \"{}\"\npadding = \"{}\"\nconfig_id = {}\nternary_threshold = {:?}\n",
        c.in_channels,
        c.height,
        c.width,
        c.classes,
        list(&c.encoder),
        list(&c.upconv),
        list(&c.decoder),
        c.conv_kernel,
        c.upconv_kernel,
        c.upconv_stride,
        kebab(format!("{:?}", c.stem2)),
        kebab(format!("{:?}", c.padding)),
        c.precision.id(),
        opts.ternary_threshold,
    );
    if !opts.layer_thresholds.is_empty() {
        s += "\n[layer_thresholds]\n";
        for (k, v) in &opts.layer_thresholds {
            s += &format!("\"{k}\" = {v:?}\n");
        }
    }
    s
}
