use serde::{Deserialize, Serialize};

use super::label::{LayerLabel, LayerState, PrecisionMap};

/// How the second stem convolution is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stem2Mode {
    Float,
    Binary,
    #[default]
    Masked,
}

/// Out-of-bounds activation value for padded bit convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaddingConvention {
    /// Masked layers pad with 0, binary layers with -1.
    #[default]
    Mixed,
    /// Every bit layer pads with -1.
    NegOne,
    /// Every bit layer pads with 0; only valid when no bit layer is binary.
    Zero,
}

/// Shape and precision of a quantized U-Net.
///
/// `encoder[0]` is the stem width and `encoder[1..=4]` are the outputs of
/// down-C1..4 (`encoder[4]` is the bottleneck). `upconv[j]` is the output
/// width of up-CT(j+1) and `decoder[j]` the output width of up-C(j+1).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub encoder: [usize; 5],
    pub upconv: [usize; 4],
    pub decoder: [usize; 4],
    pub conv_kernel: usize,
    pub upconv_kernel: usize,
    pub upconv_stride: usize,
    pub stem2: Stem2Mode,
    pub padding: PaddingConvention,
    pub precision: PrecisionMap,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig::with_base(64)
    }
}

impl UNetConfig {
    /// Schedule scaled from a base width; `with_base(64)` is the default
    /// 64/128/256/512/512 encoder with a half-width decoder.
    pub fn with_base(base: usize) -> Self {
        let b = base;
        UNetConfig {
            in_channels: 3,
            height: 512,
            width: 512,
            classes: 1,
            encoder: [b, 2 * b, 4 * b, 8 * b, 8 * b],
            upconv: [8 * b, 4 * b, 2 * b, b],
            decoder: [4 * b, 2 * b, b, b],
            conv_kernel: 3,
            upconv_kernel: 2,
            upconv_stride: 2,
            stem2: Stem2Mode::Masked,
            padding: PaddingConvention::Mixed,
            precision: PrecisionMap::all_binary(),
        }
    }

    pub fn with_extent(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn with_precision(mut self, precision: PrecisionMap) -> Self {
        self.precision = precision;
        self
    }

    /// Weight state of a bit layer; `None` for full-precision layers.
    pub fn state_of(&self, label: LayerLabel) -> Option<LayerState> {
        match label {
            LayerLabel::Stem | LayerLabel::Head => None,
            LayerLabel::Stem2 => match self.stem2 {
                Stem2Mode::Float => None,
                Stem2Mode::Binary => Some(LayerState::Binary),
                Stem2Mode::Masked => Some(LayerState::Masked),
            },
            l => self.precision.state(l),
        }
    }

    /// Spatial extent at encoder depth `d` (0 = input resolution).
    pub fn extent_at(&self, depth: usize) -> (usize, usize) {
        (self.height >> depth, self.width >> depth)
    }

    /// Lists every violated constraint; empty when the config is usable.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        if self.in_channels == 0 {
            v.push("in_channels must be positive".to_string());
        }
        if self.classes == 0 {
            v.push("classes must be positive".to_string());
        }
        let widths = self.encoder.iter().chain(&self.upconv).chain(&self.decoder);
        if widths.clone().any(|&c| c == 0) {
            v.push("channel schedule must be positive everywhere".to_string());
        }
        for (name, e) in [("height", self.height), ("width", self.width)] {
            if e == 0 || e % 16 != 0 {
                v.push(format!(
                    "{name} {e} must be a positive multiple of 16 (four 2x downsamplings)"
                ));
            }
        }
        if self.conv_kernel == 0 || self.conv_kernel.is_multiple_of(2) || self.conv_kernel > 7 {
            v.push(format!(
                "conv_kernel {} must be odd and at most 7",
                self.conv_kernel
            ));
        }
        if self.upconv_kernel != self.upconv_stride {
            v.push(format!(
                "unsupported: transposed convolution kernel {} differs from stride {}",
                self.upconv_kernel, self.upconv_stride
            ));
        }
        if self.upconv_stride != 2 {
            v.push(format!(
                "unsupported: transposed convolution stride {} cannot match the 2x skip extents",
                self.upconv_stride
            ));
        }
        if self.padding == PaddingConvention::Zero {
            let binary = std::iter::once(LayerLabel::Stem2)
                .chain(LayerLabel::CONFIGURABLE)
                .filter(|&l| self.state_of(l) == Some(LayerState::Binary))
                .collect::<Vec<_>>();
            if !binary.is_empty() {
                let names: Vec<String> = binary.iter().map(|l| l.to_string()).collect();
                v.push(format!(
                    "unsupported: zero padding with binary layers {}",
                    names.join(", ")
                ));
            }
        }
        ValidationReport { violations: v }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        assert!(UNetConfig::default().validate().is_ok());
    }

    #[test]
    fn extent_not_divisible() {
        let r = UNetConfig::default().with_extent(100, 512).validate();
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].contains("height 100"));
    }

    #[test]
    fn overlapping_upconv_unsupported() {
        let mut c = UNetConfig::default();
        c.upconv_kernel = 3;
        let r = c.validate();
        assert!(r.violations.iter().any(|s| s.starts_with("unsupported")));
    }

    #[test]
    fn zero_padding_needs_all_masked() {
        let mut c = UNetConfig::with_base(16).with_precision(PrecisionMap::all_masked());
        c.padding = PaddingConvention::Zero;
        assert!(c.validate().is_ok());
        c.precision = PrecisionMap::from_id(0xffe).unwrap();
        assert!(!c.validate().is_ok());
    }
}
