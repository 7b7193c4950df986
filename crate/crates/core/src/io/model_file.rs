//! MBUN model files.
//!
//! Little-endian throughout:
//!
//! ```text
//! "MBUN"  u32 version (1)
//! config: u32 in_channels, height, width, classes
//!         u32 encoder[5], upconv[4], decoder[4]
//!         u32 conv_kernel, upconv_kernel, upconv_stride
//!         u16 precision map (top 4 bits zero)
//!         u8 padding (0 mixed, 1 neg-one, 2 zero)
//!         u8 sign-zero flag (1: sign(0) = +1; the only supported value)
//!         u8 stem2 mode (0 float, 1 binary, 2 masked)
//! u32 record count, then records in execution order:
//!   u16 name length, name (UTF-8), u8 kind
//!     0 float-conv, 1 binary-conv, 2 masked-conv, 3 binary-tconv,
//!     4 masked-tconv, 5 maxpool, 6 concat
//!   kinds 0-4: u32 kernel_h, kernel_w, stride, padding, c_in, c_out,
//!              u8 pad value (0 zero, 1 neg-one),
//!              u32 segment count, u32 segments (input channel layout)
//!   kind 0:    u8 has_bn, f64 weights [c_out][kh][kw][c_in], f64 bias[c_out],
//!              if has_bn: per channel f64 gamma, beta, mean, var, eps
//!   kinds 1-4: u32 words per row, u64 plus-plane [c_out][words],
//!              masked kinds also u64 minus-plane [c_out][words],
//!              per channel i32 T and u8 rule (0 acc >= T, 1 acc <= T,
//!              2 constant -1, 3 constant +1)
//! ```
//!
//! Plane rows use the engine lane order: for each kernel tap, the input
//! layout's 128-lane blocks, least significant bit first within each word.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::bytes::{Reader, Writer};
use crate::bitcore::{BitMatrix, ChannelLayout};
use crate::error::{Error, Result};
use crate::graph::{
    steps, CompiledModel, LayerParams, PaddingConvention, PrecisionMap, Stem2Mode, Step, UNetConfig,
};
use crate::layers::{
    BatchNorm, ConvSpec, ConvWeights, FloatConvWeights, FusedThreshold, PadValue, ThresholdRule,
    WeightKind,
};

pub const MAGIC: &[u8; 4] = b"MBUN";
pub const VERSION: u32 = 1;

fn kind_code(params: &LayerParams, tconv: bool) -> u8 {
    match params {
        LayerParams::Float { .. } => 0,
        LayerParams::Bit { weights, .. } => match (weights.kind(), tconv) {
            (WeightKind::Binary, false) => 1,
            (WeightKind::Masked, false) => 2,
            (WeightKind::Binary, true) => 3,
            (WeightKind::Masked, true) => 4,
        },
    }
}

fn write_config(w: &mut Writer, c: &UNetConfig) -> Result<()> {
    for v in [c.in_channels, c.height, c.width, c.classes] {
        w.u32(v)?;
    }
    for &v in c.encoder.iter().chain(&c.upconv).chain(&c.decoder) {
        w.u32(v)?;
    }
    for v in [c.conv_kernel, c.upconv_kernel, c.upconv_stride] {
        w.u32(v)?;
    }
    w.u16(c.precision.id());
    w.u8(match c.padding {
        PaddingConvention::Mixed => 0,
        PaddingConvention::NegOne => 1,
        PaddingConvention::Zero => 2,
    });
    w.u8(1);
    w.u8(match c.stem2 {
        Stem2Mode::Float => 0,
        Stem2Mode::Binary => 1,
        Stem2Mode::Masked => 2,
    });
    Ok(())
}

fn read_config(r: &mut Reader) -> Result<UNetConfig> {
    let mut c = UNetConfig::default();
    c.in_channels = r.usize32("in_channels")?;
    c.height = r.usize32("height")?;
    c.width = r.usize32("width")?;
    c.classes = r.usize32("classes")?;
    for v in c
        .encoder
        .iter_mut()
        .chain(&mut c.upconv)
        .chain(&mut c.decoder)
    {
        *v = r.usize32("channel schedule")?;
    }
    c.conv_kernel = r.usize32("conv_kernel")?;
    c.upconv_kernel = r.usize32("upconv_kernel")?;
    c.upconv_stride = r.usize32("upconv_stride")?;
    let at = r.pos();
    let id = r.u16("precision map")?;
    c.precision = PrecisionMap::from_id(id)
        .or_else(|_| r.fail(at, format!("precision map {id:#x} uses bits above 12")))?;
    let at = r.pos();
    c.padding = match r.u8("padding")? {
        0 => PaddingConvention::Mixed,
        1 => PaddingConvention::NegOne,
        2 => PaddingConvention::Zero,
        v => return r.fail(at, format!("unknown padding code {v}")),
    };
    let at = r.pos();
    match r.u8("sign-zero flag")? {
        1 => {}
        v => return r.fail(at, format!("unsupported sign-zero flag {v}")),
    }
    let at = r.pos();
    c.stem2 = match r.u8("stem2 mode")? {
        0 => Stem2Mode::Float,
        1 => Stem2Mode::Binary,
        2 => Stem2Mode::Masked,
        v => return r.fail(at, format!("unknown stem2 mode {v}")),
    };
    Ok(c)
}

fn write_spec(w: &mut Writer, s: &ConvSpec, layout: &ChannelLayout) -> Result<()> {
    for v in [s.kernel_h, s.kernel_w, s.stride, s.padding, s.c_in, s.c_out] {
        w.u32(v)?;
    }
    w.u8(match s.pad_value {
        PadValue::Zero => 0,
        PadValue::NegOne => 1,
    });
    w.u32(layout.segments().len())?;
    for &seg in layout.segments() {
        w.u32(seg)?;
    }
    Ok(())
}

fn read_spec(r: &mut Reader) -> Result<(ConvSpec, ChannelLayout)> {
    let kernel_h = r.usize32("kernel_h")?;
    let kernel_w = r.usize32("kernel_w")?;
    let stride = r.usize32("stride")?;
    let padding = r.usize32("padding")?;
    let c_in = r.usize32("c_in")?;
    let c_out = r.usize32("c_out")?;
    let at = r.pos();
    let pad_value = match r.u8("pad value")? {
        0 => PadValue::Zero,
        1 => PadValue::NegOne,
        v => return r.fail(at, format!("unknown pad value code {v}")),
    };
    let at = r.pos();
    let n = r.usize32("segment count")?;
    if n > c_in.max(1) {
        return r.fail(at, format!("{n} segments for {c_in} channels"));
    }
    let segs = (0..n)
        .map(|_| r.usize32("segment"))
        .collect::<Result<Vec<_>>>()?;
    let layout = ChannelLayout::from_segments(segs);
    if layout.channels() != c_in {
        return r.fail(
            at,
            format!("segments sum to {}, c_in is {c_in}", layout.channels()),
        );
    }
    let spec = ConvSpec {
        kernel_h,
        kernel_w,
        stride,
        padding,
        c_in,
        c_out,
        pad_value,
    };
    Ok((spec, layout))
}

/// Serialises a compiled model.
pub fn encode_model(model: &CompiledModel) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION as usize)?;
    write_config(&mut w, model.config())?;
    let order = steps(model.config());
    w.u32(order.len())?;
    for step in order {
        let name = match step {
            Step::Pool(i) => format!("down{i}.pool"),
            Step::Concat(j) => format!("up{j}.concat"),
            Step::Unit(u) => model.layers()[u].unit.name.clone(),
        };
        w.u16(name.len() as u16);
        w.buf.extend_from_slice(name.as_bytes());
        let Step::Unit(u) = step else {
            w.u8(if matches!(step, Step::Pool(_)) { 5 } else { 6 });
            continue;
        };
        let layer = &model.layers()[u];
        let tconv = layer.unit.kind == crate::graph::UnitKind::BitTConv;
        w.u8(kind_code(&layer.params, tconv));
        write_spec(&mut w, &layer.unit.spec, &layer.unit.in_layout)?;
        match &layer.params {
            LayerParams::Float { weights, bn } => {
                w.u8(bn.is_some() as u8);
                w.f64s(&weights.weights);
                w.f64s(&weights.bias);
                for b in bn.iter().flatten() {
                    w.f64s(&[b.gamma, b.beta, b.mean, b.var, b.eps]);
                }
            }
            LayerParams::Bit { weights, threshold } => {
                w.u32(weights.plus().k_words())?;
                w.u64s(weights.plus().words());
                if let Some(m) = weights.minus() {
                    w.u64s(m.words());
                }
                for rule in &threshold.rules {
                    let (t, code) = match *rule {
                        ThresholdRule::Ge(t) => (t, 0),
                        ThresholdRule::Le(t) => (t, 1),
                        ThresholdRule::Const(false) => (0, 2),
                        ThresholdRule::Const(true) => (0, 3),
                    };
                    w.i32(t);
                    w.u8(code);
                }
            }
        }
    }
    Ok(w.buf)
}

/// Parses and re-assembles a model; malformed input reports the byte offset.
pub fn decode_model(bytes: &[u8]) -> Result<CompiledModel> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return r.fail(0, "bad magic, expected \"MBUN\"");
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let config = read_config(&mut r)?;
    let report = config.validate();
    if !report.is_ok() {
        return r.fail(
            8,
            format!("invalid config: {}", report.violations.join("; ")),
        );
    }
    let expected = steps(&config);
    let at = r.pos();
    let count = r.usize32("record count")?;
    if count != expected.len() {
        return r.fail(
            at,
            format!("{count} records, topology has {}", expected.len()),
        );
    }
    let mut params = BTreeMap::new();
    for _ in 0..count {
        let start = r.pos();
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .or_else(|_| r.fail(start + 2, "layer name is not UTF-8"))?
            .to_string();
        let at = r.pos();
        let kind = r.u8("kind")?;
        match kind {
            5 | 6 => continue,
            0..=4 => {}
            k => return r.fail(at, format!("unknown kind code {k} for `{name}`")),
        }
        let (spec, layout) = read_spec(&mut r)?;
        let (kh, kw, c_out) = (spec.kernel_h, spec.kernel_w, spec.c_out);
        let p = if kind == 0 {
            let has_bn = r.u8("batchnorm flag")? != 0;
            let weights = r.f64s(c_out * kh * kw * spec.c_in, "float weights")?;
            let bias = r.f64s(c_out, "bias")?;
            let bn = if has_bn {
                let v = r.f64s(5 * c_out, "batchnorm")?;
                Some(
                    v.chunks_exact(5)
                        .map(|b| BatchNorm {
                            gamma: b[0],
                            beta: b[1],
                            mean: b[2],
                            var: b[3],
                            eps: b[4],
                        })
                        .collect(),
                )
            } else {
                None
            };
            LayerParams::Float {
                weights: FloatConvWeights { weights, bias },
                bn,
            }
        } else {
            let wk = if kind % 2 == 1 {
                WeightKind::Binary
            } else {
                WeightKind::Masked
            };
            let at = r.pos();
            let wpr = r.usize32("words per row")?;
            let k_lanes = kh * kw * layout.lanes();
            if wpr * 64 != k_lanes {
                return r.fail(
                    at,
                    format!("{wpr} words per row, `{name}` needs {}", k_lanes / 64),
                );
            }
            let plane = |r: &mut Reader| -> Result<BitMatrix> {
                let at = r.pos();
                let words = r.u64s(c_out * wpr, "weight plane")?;
                BitMatrix::from_words(c_out, k_lanes, words).or_else(|e| r.fail(at, e.to_string()))
            };
            let plus = plane(&mut r)?;
            let minus = match wk {
                WeightKind::Masked => Some(plane(&mut r)?),
                WeightKind::Binary => None,
            };
            let weights = ConvWeights::from_planes(wk, kh, kw, layout, c_out, plus, minus)
                .or_else(|e| r.fail(at, format!("`{name}`: {e}")))?;
            let mut rules = Vec::with_capacity(c_out);
            for _ in 0..c_out {
                let t = r.i32("threshold")?;
                let at = r.pos();
                rules.push(match r.u8("threshold rule")? {
                    0 => ThresholdRule::Ge(t),
                    1 => ThresholdRule::Le(t),
                    2 => ThresholdRule::Const(false),
                    3 => ThresholdRule::Const(true),
                    v => return r.fail(at, format!("unknown threshold rule {v}")),
                });
            }
            LayerParams::Bit {
                weights,
                threshold: FusedThreshold { rules },
            }
        };
        params.insert(name, (start, spec, p));
    }
    r.expect_end()?;
    let mut layers = BTreeMap::new();
    let units = crate::graph::units(&config);
    for u in &units {
        match params.remove(&u.name) {
            Some((start, spec, p)) => {
                if spec != u.spec {
                    return Err(Error::at_offset(
                        start,
                        format!(
                            "`{}`: spec {spec:?} differs from the topology {:?}",
                            u.name, u.spec
                        ),
                    ));
                }
                layers.insert(u.name.clone(), p);
            }
            None => return Err(Error::MissingLayer(u.name.clone())),
        }
    }
    if let Some((name, (start, ..))) = params.into_iter().next() {
        return Err(Error::at_offset(
            start,
            format!("unexpected layer `{name}`"),
        ));
    }
    CompiledModel::assemble(config, layers)
}

pub fn write_model(path: &Path, model: &CompiledModel) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<CompiledModel> {
    decode_model(&fs::read(path)?)
}
