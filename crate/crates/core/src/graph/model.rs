use std::collections::BTreeMap;

use super::config::UNetConfig;
use super::topology::{steps, units, Step, Unit, UnitKind};
use crate::bitcore::BitTensor;
use crate::error::{Error, Result};
use crate::layers::{
    apply_threshold, bn_sign, concat_channels, conv_forward, float_conv, maxpool2,
    transposed_conv_forward, BatchNorm, ConvWeights, FloatConvWeights, FloatTensor, FusedThreshold,
    IntTensor,
};
use crate::par::Parallelism;

/// Parameters of one compiled unit.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    /// Full-precision convolution, optionally followed by batchnorm + sign.
    Float {
        weights: FloatConvWeights,
        bn: Option<Vec<BatchNorm>>,
    },
    /// Bit convolution or transposed convolution with fused thresholds.
    Bit {
        weights: ConvWeights,
        threshold: FusedThreshold,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompiledLayer {
    pub unit: Unit,
    pub params: LayerParams,
}

/// Immutable quantized U-Net ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledModel {
    config: UNetConfig,
    layers: Vec<CompiledLayer>,
}

/// A tensor captured during a traced forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceTensor {
    Bits(BitTensor),
    Acc(IntTensor),
    Real(FloatTensor),
}

/// Named intermediate tensors in execution order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub entries: Vec<(String, TraceTensor)>,
}

impl Trace {
    pub fn get(&self, name: &str) -> Option<&TraceTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: FloatTensor,
    /// Per pixel: `logit >= 0` for one class (sigmoid >= 0.5), else the argmax.
    pub mask: Vec<u8>,
}

impl CompiledModel {
    /// Checks every unit's parameters against the topology of `config`.
    pub fn assemble(config: UNetConfig, mut params: BTreeMap<String, LayerParams>) -> Result<Self> {
        let report = config.validate();
        if !report.is_ok() {
            return Err(Error::Unsupported(report.violations.join("; ")));
        }
        let mut layers = Vec::new();
        for unit in units(&config) {
            let p = params
                .remove(&unit.name)
                .ok_or_else(|| Error::MissingLayer(unit.name.clone()))?;
            check_params(&unit, &p)?;
            layers.push(CompiledLayer { unit, params: p });
        }
        if let Some(extra) = params.keys().next() {
            return Err(Error::shape(
                extra.clone(),
                "layer is not part of the topology",
            ));
        }
        Ok(CompiledModel { config, layers })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[CompiledLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&CompiledLayer> {
        self.layers.iter().find(|l| l.unit.name == name)
    }

    pub fn forward(&self, image: &FloatTensor, par: Parallelism) -> Result<Prediction> {
        self.run(image, par, None)
    }

    /// Forward pass that also records every intermediate tensor.
    pub fn forward_traced(
        &self,
        image: &FloatTensor,
        par: Parallelism,
    ) -> Result<(Prediction, Trace)> {
        let mut trace = Trace::default();
        let p = self.run(image, par, Some(&mut trace))?;
        Ok((p, trace))
    }

    fn run(
        &self,
        image: &FloatTensor,
        par: Parallelism,
        mut trace: Option<&mut Trace>,
    ) -> Result<Prediction> {
        let c = &self.config;
        if image.h != c.height || image.w != c.width || image.c != c.in_channels {
            return Err(Error::shape(
                "input",
                format!(
                    "image is {}x{}x{}, model expects {}x{}x{}",
                    image.h, image.w, image.c, c.height, c.width, c.in_channels
                ),
            ));
        }
        let mut record = |name: String, t: TraceTensor| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.entries.push((name, t));
            }
        };

        let mut skips: Vec<BitTensor> = Vec::new();
        let mut cur: Option<BitTensor> = None;
        let mut logits = None;
        for step in steps(c) {
            match step {
                Step::Pool(i) => {
                    let x = cur.take().expect("pool follows a unit");
                    skips.push(x.clone());
                    let y = maxpool2(&x)?;
                    record(format!("down{i}.pool"), TraceTensor::Bits(y.clone()));
                    cur = Some(y);
                }
                Step::Concat(j) => {
                    let up = cur.take().expect("concat follows a tconv");
                    let skip = &skips[4 - j as usize];
                    let y = concat_channels(skip, &up)?;
                    record(format!("up{j}.concat"), TraceTensor::Bits(y.clone()));
                    cur = Some(y);
                }
                Step::Unit(u) => {
                    let layer = &self.layers[u];
                    let name = &layer.unit.name;
                    match &layer.params {
                        LayerParams::Float { weights, bn } => {
                            let x = match &cur {
                                None => image.clone(),
                                Some(b) => FloatTensor::from_bits(b),
                            };
                            let y = float_conv(&x, weights, &layer.unit.spec, par)
                                .map_err(|e| relabel(e, name))?;
                            match bn {
                                Some(bn) => {
                                    let bits = float_sign(&y, bn)?;
                                    record(name.clone(), TraceTensor::Bits(bits.clone()));
                                    cur = Some(bits);
                                }
                                None => {
                                    record(name.clone(), TraceTensor::Real(y.clone()));
                                    logits = Some(y);
                                    cur = None;
                                }
                            }
                        }
                        LayerParams::Bit { weights, threshold } => {
                            let x = cur.take().expect("bit unit has an input");
                            let acc = match layer.unit.kind {
                                UnitKind::BitTConv => {
                                    transposed_conv_forward(&x, weights, &layer.unit.spec, par)
                                }
                                _ => conv_forward(&x, weights, &layer.unit.spec, par),
                            }
                            .map_err(|e| relabel(e, name))?;
                            let bits = apply_threshold(&acc, threshold, par)?;
                            record(format!("{name}.acc"), TraceTensor::Acc(acc));
                            record(name.clone(), TraceTensor::Bits(bits.clone()));
                            cur = Some(bits);
                        }
                    }
                }
            }
        }
        let logits = logits.expect("head is the last unit");
        let mask = mask_from_logits(&logits);
        Ok(Prediction { logits, mask })
    }
}

fn relabel(e: Error, name: &str) -> Error {
    match e {
        Error::Shape { detail, .. } => Error::shape(name, detail),
        other => other,
    }
}

/// Segmentation mask from head logits.
pub fn mask_from_logits(logits: &FloatTensor) -> Vec<u8> {
    logits
        .data
        .chunks(logits.c.max(1))
        .map(|px| {
            if px.len() == 1 {
                u8::from(px[0] >= 0.0)
            } else {
                let mut best = 0;
                for (i, &v) in px.iter().enumerate() {
                    if v > px[best] {
                        best = i;
                    }
                }
                best as u8
            }
        })
        .collect()
}

fn float_sign(y: &FloatTensor, bn: &[BatchNorm]) -> Result<BitTensor> {
    let values: Vec<i8> = y
        .data
        .chunks(y.c)
        .flat_map(|px| {
            px.iter()
                .zip(bn)
                .map(|(&v, b)| if bn_sign(v, 0.0, b) { 1 } else { -1 })
        })
        .collect();
    BitTensor::from_bipolar(y.n, y.h, y.w, y.c, &values)
}

fn check_params(unit: &Unit, p: &LayerParams) -> Result<()> {
    let s = &unit.spec;
    let bad = |detail: String| Err(Error::shape(unit.name.clone(), detail));
    match (unit.kind, p) {
        (UnitKind::FloatConv, LayerParams::Float { weights, bn }) => {
            let want = s.c_out * s.kernel_h * s.kernel_w * s.c_in;
            if weights.weights.len() != want || weights.bias.len() != s.c_out {
                return bad(format!(
                    "{} weights and {} biases, expected {want} and {}",
                    weights.weights.len(),
                    weights.bias.len(),
                    s.c_out
                ));
            }
            match bn {
                Some(bn) if !unit.has_bn => {
                    bad(format!("unexpected batchnorm ({} channels)", bn.len()))
                }
                None if unit.has_bn => bad("batchnorm parameters missing".into()),
                Some(bn) if bn.len() != s.c_out => bad(format!(
                    "{} batchnorm channels, expected {}",
                    bn.len(),
                    s.c_out
                )),
                Some(bn) => bn.iter().try_for_each(|b| b.validate()),
                None => Ok(()),
            }
        }
        (UnitKind::BitConv | UnitKind::BitTConv, LayerParams::Bit { weights, threshold }) => {
            if Some(weights.kind()) != unit.weight_kind {
                return bad(format!(
                    "weights are {:?}, precision map says {:?}",
                    weights.kind(),
                    unit.weight_kind
                ));
            }
            if weights.kernel() != (s.kernel_h, s.kernel_w)
                || weights.c_out() != s.c_out
                || weights.layout() != &unit.in_layout
            {
                return bad(format!(
                    "weights {}x{} {:?}->{} do not match {}x{} {:?}->{}",
                    weights.kernel().0,
                    weights.kernel().1,
                    weights.layout().segments(),
                    weights.c_out(),
                    s.kernel_h,
                    s.kernel_w,
                    unit.in_layout.segments(),
                    s.c_out
                ));
            }
            if threshold.channels() != s.c_out {
                return bad(format!(
                    "{} threshold rules, expected {}",
                    threshold.channels(),
                    s.c_out
                ));
            }
            Ok(())
        }
        _ => bad(format!("parameters do not fit a {:?} unit", unit.kind)),
    }
}
