//! Layer list and dataflow of the quantized U-Net.
//!
//! stem (float) -> stem2 -> 4 x [maxpool, conv, conv] -> 4 x [tconv,
//! concat(skip, up), conv, conv] -> 1x1 float head. Every bit convolution
//! and transposed convolution is followed by a fused threshold.

use super::config::{PaddingConvention, UNetConfig};
use super::label::{LayerLabel, LayerState};
use crate::bitcore::ChannelLayout;
use crate::layers::{ConvSpec, PadValue, WeightKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnitKind {
    FloatConv,
    BitConv,
    BitTConv,
}

/// One weight-carrying layer of the network.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Unit {
    pub name: String,
    pub label: LayerLabel,
    pub kind: UnitKind,
    pub spec: ConvSpec,
    pub in_layout: ChannelLayout,
    /// `None` for full-precision units.
    pub weight_kind: Option<WeightKind>,
    /// Followed by batchnorm + sign (everything except the head).
    pub has_bn: bool,
    /// Spatial extent of the unit's input.
    pub in_extent: (usize, usize),
}

/// One step of execution order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    /// Index into [`units`].
    Unit(usize),
    /// 2x2 max-pool before down stage `1..=4`.
    Pool(u8),
    /// Skip concatenation in up stage `1..=4`.
    Concat(u8),
}

fn pad_value(config: &UNetConfig, kind: WeightKind) -> PadValue {
    match (config.padding, kind) {
        (PaddingConvention::Zero, _) => PadValue::Zero,
        (PaddingConvention::NegOne, _) => PadValue::NegOne,
        (PaddingConvention::Mixed, WeightKind::Masked) => PadValue::Zero,
        (PaddingConvention::Mixed, WeightKind::Binary) => PadValue::NegOne,
    }
}

fn weight_kind(state: Option<LayerState>) -> Option<WeightKind> {
    state.map(|s| match s {
        LayerState::Binary => WeightKind::Binary,
        LayerState::Masked => WeightKind::Masked,
    })
}

/// Weight-carrying units in execution order (23 in total).
pub fn units(config: &UNetConfig) -> Vec<Unit> {
    let k = config.conv_kernel;
    let pad = k / 2;
    let enc = config.encoder;
    let mut out = Vec::with_capacity(23);

    let conv = |name: String, label: LayerLabel, layout: ChannelLayout, c_out: usize, extent| {
        let wk = weight_kind(config.state_of(label));
        let mut spec = ConvSpec::square(k, 1, pad, layout.channels(), c_out);
        let kind = match wk {
            Some(w) => {
                spec = spec.with_pad_value(pad_value(config, w));
                UnitKind::BitConv
            }
            None => UnitKind::FloatConv,
        };
        Unit {
            name,
            label,
            kind,
            spec,
            in_layout: layout,
            weight_kind: wk,
            has_bn: true,
            in_extent: extent,
        }
    };

    let full = config.extent_at(0);
    out.push(conv(
        "stem".into(),
        LayerLabel::Stem,
        ChannelLayout::single(config.in_channels),
        enc[0],
        full,
    ));
    out.push(conv(
        "stem2".into(),
        LayerLabel::Stem2,
        ChannelLayout::single(enc[0]),
        enc[0],
        full,
    ));
    for i in 1..=4usize {
        let label = LayerLabel::DownC(i as u8);
        let e = config.extent_at(i);
        out.push(conv(
            format!("down{i}.conv1"),
            label,
            ChannelLayout::single(enc[i - 1]),
            enc[i],
            e,
        ));
        out.push(conv(
            format!("down{i}.conv2"),
            label,
            ChannelLayout::single(enc[i]),
            enc[i],
            e,
        ));
    }
    let mut prev = enc[4];
    for j in 1..=4usize {
        let label = LayerLabel::UpCT(j as u8);
        let wk = weight_kind(config.state_of(label));
        let s = config.upconv_stride;
        let mut spec = ConvSpec::square(config.upconv_kernel, s, 0, prev, config.upconv[j - 1]);
        if let Some(w) = wk {
            spec = spec.with_pad_value(pad_value(config, w));
        }
        out.push(Unit {
            name: format!("up{j}.tconv"),
            label,
            kind: UnitKind::BitTConv,
            spec,
            in_layout: ChannelLayout::single(prev),
            weight_kind: wk,
            has_bn: true,
            in_extent: config.extent_at(5 - j),
        });
        let label = LayerLabel::UpC(j as u8);
        let e = config.extent_at(4 - j);
        let skip = enc[4 - j];
        let cat = ChannelLayout::single(skip).concat(&ChannelLayout::single(config.upconv[j - 1]));
        out.push(conv(
            format!("up{j}.conv1"),
            label,
            cat,
            config.decoder[j - 1],
            e,
        ));
        out.push(conv(
            format!("up{j}.conv2"),
            label,
            ChannelLayout::single(config.decoder[j - 1]),
            config.decoder[j - 1],
            e,
        ));
        prev = config.decoder[j - 1];
    }
    out.push(Unit {
        name: "head".into(),
        label: LayerLabel::Head,
        kind: UnitKind::FloatConv,
        spec: ConvSpec::square(1, 1, 0, prev, config.classes),
        in_layout: ChannelLayout::single(prev),
        weight_kind: None,
        has_bn: false,
        in_extent: full,
    });
    out
}

/// Full execution order including pooling and concatenation.
pub fn steps(config: &UNetConfig) -> Vec<Step> {
    let _ = config;
    let mut s = vec![Step::Unit(0), Step::Unit(1)];
    let mut u = 2;
    for i in 1..=4u8 {
        s.push(Step::Pool(i));
        s.push(Step::Unit(u));
        s.push(Step::Unit(u + 1));
        u += 2;
    }
    for j in 1..=4u8 {
        s.push(Step::Unit(u));
        s.push(Step::Concat(j));
        s.push(Step::Unit(u + 1));
        s.push(Step::Unit(u + 2));
        u += 3;
    }
    s.push(Step::Unit(u));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PrecisionMap;

    #[test]
    fn unit_count_and_names() {
        let u = units(&UNetConfig::default());
        assert_eq!(u.len(), 23);
        assert_eq!(u[0].name, "stem");
        assert_eq!(u[10].name, "up1.tconv");
        assert_eq!(u[22].name, "head");
        let steps = steps(&UNetConfig::default());
        let referenced: Vec<usize> = steps
            .iter()
            .filter_map(|s| match s {
                Step::Unit(i) => Some(*i),
                _ => None,
            })
            .collect();
        assert_eq!(referenced, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn extents_halve_then_double() {
        let c = UNetConfig::default();
        let u = units(&c);
        let down: Vec<usize> = u[2..10].iter().map(|x| x.in_extent.0).collect();
        assert_eq!(down, vec![256, 256, 128, 128, 64, 64, 32, 32]);
        let tconv_in: Vec<usize> = u[10..22].iter().step_by(3).map(|x| x.in_extent.0).collect();
        assert_eq!(tconv_in, vec![32, 64, 128, 256]);
        let dec: Vec<usize> = u[11..22].iter().step_by(3).map(|x| x.in_extent.0).collect();
        assert_eq!(dec, vec![64, 128, 256, 512]);
    }

    #[test]
    fn decoder_input_is_skip_then_up() {
        let u = units(&UNetConfig::default());
        assert_eq!(u[11].in_layout.segments(), &[512, 512]);
        assert_eq!(u[20].in_layout.segments(), &[64, 64]);
    }

    #[test]
    fn mixed_padding_follows_state() {
        let c = UNetConfig::with_base(16)
            .with_precision(PrecisionMap::from_masked([LayerLabel::DownC(1)]).unwrap());
        let u = units(&c);
        assert_eq!(u[2].spec.pad_value, PadValue::Zero);
        assert_eq!(u[4].spec.pad_value, PadValue::NegOne);
        assert_eq!(u[2].weight_kind, Some(WeightKind::Masked));
        assert_eq!(u[4].weight_kind, Some(WeightKind::Binary));
    }
}
