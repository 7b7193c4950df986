use std::collections::BTreeMap;

use super::bundle::{BundleEntry, EntryKind, WeightBundle};
use crate::bitcore::{pack_bipolar, BitPlane, MaskedWeightPlanes};
use crate::error::{Error, Result};
use crate::graph::{units, CompiledModel, LayerParams, UNetConfig, Unit, UnitKind};
use crate::layers::{BatchNorm, ConvWeights, FloatConvWeights, FusedThreshold, WeightKind};

pub const DEFAULT_TERNARY_THRESHOLD: f64 = 0.7;

/// Ternary values `{-1, 0, +1}` with `delta = t * mean|w|` over the whole tensor.
///
/// Weights that are already ternary pass through unchanged for any `t < 1`.
pub fn ternary_values(weights: &[f32], t: f64) -> Result<Vec<i8>> {
    if weights.is_empty() {
        return Err(Error::RejectedInput(
            "cannot ternarize an empty tensor".into(),
        ));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::RejectedInput(format!(
            "threshold factor {t} must be >= 0"
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::RejectedInput("weights must be finite".into()));
    }
    let mean = weights.iter().map(|&w| (w as f64).abs()).sum::<f64>() / weights.len() as f64;
    let delta = t * mean;
    Ok(weights
        .iter()
        .map(|&w| {
            let w = w as f64;
            if w > delta {
                1
            } else if w < -delta {
                -1
            } else {
                0
            }
        })
        .collect())
}

/// Bipolar values with `sign(0) = +1`.
pub fn binary_values(weights: &[f32]) -> Result<Vec<i8>> {
    if weights.is_empty() {
        return Err(Error::RejectedInput(
            "cannot binarize an empty tensor".into(),
        ));
    }
    if weights.iter().any(|w| w.is_nan()) {
        return Err(Error::RejectedInput("weights must not be NaN".into()));
    }
    Ok(weights
        .iter()
        .map(|&w| if w >= 0.0 { 1 } else { -1 })
        .collect())
}

pub fn ternarize(weights: &[f32], t: f64) -> Result<MaskedWeightPlanes> {
    MaskedWeightPlanes::from_ternary(&ternary_values(weights, t)?)
}

pub fn binarize(weights: &[f32]) -> Result<BitPlane> {
    pack_bipolar(&binary_values(weights)?)
}

/// Lane counts of one layer's weights over true lanes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSparsity {
    pub name: String,
    pub lanes: u64,
    pub zero: u64,
    pub pos: u64,
    pub neg: u64,
}

impl LayerSparsity {
    pub fn zero_fraction(&self) -> f64 {
        self.zero as f64 / self.lanes as f64
    }
    pub fn pos_fraction(&self) -> f64 {
        self.pos as f64 / self.lanes as f64
    }
    pub fn neg_fraction(&self) -> f64 {
        self.neg as f64 / self.lanes as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
}

impl SparsityReport {
    /// Unweighted mean of the per-layer zero fractions.
    pub fn mean_zero_fraction(&self) -> Option<f64> {
        if self.layers.is_empty() {
            return None;
        }
        Some(self.layers.iter().map(|l| l.zero_fraction()).sum::<f64>() / self.layers.len() as f64)
    }
}

/// Counts weight states of the masked layers in `layers`.
pub fn sparsity<'a, I>(layers: I) -> SparsityReport
where
    I: IntoIterator<Item = (&'a str, &'a ConvWeights)>,
{
    let layers = layers
        .into_iter()
        .filter(|(_, w)| w.kind() == WeightKind::Masked)
        .map(|(name, w)| {
            let lanes = w.true_lanes();
            let (pos, neg) = w.sign_counts();
            LayerSparsity {
                name: name.to_string(),
                lanes,
                zero: lanes - pos - neg,
                pos,
                neg,
            }
        })
        .collect();
    SparsityReport { layers }
}

/// Sparsity of every masked layer of a compiled model.
pub fn model_sparsity(model: &CompiledModel) -> SparsityReport {
    sparsity(model.layers().iter().filter_map(|l| match &l.params {
        LayerParams::Bit { weights, .. } => Some((l.unit.name.as_str(), weights)),
        _ => None,
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizeOptions {
    pub ternary_threshold: f64,
    /// Per-layer overrides of `ternary_threshold`, keyed by unit name.
    pub layer_thresholds: BTreeMap<String, f64>,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        QuantizeOptions {
            ternary_threshold: DEFAULT_TERNARY_THRESHOLD,
            layer_thresholds: BTreeMap::new(),
        }
    }
}

impl QuantizeOptions {
    pub fn threshold_for(&self, name: &str) -> f64 {
        self.layer_thresholds
            .get(name)
            .copied()
            .unwrap_or(self.ternary_threshold)
    }
}

/// `[o][i][ky][kx]` to `[o][ky][kx][i]`.
pub fn oihw_to_ohwi<T: Copy>(v: &[T], shape: [usize; 4]) -> Vec<T> {
    let [o, i, kh, kw] = shape;
    let mut out = Vec::with_capacity(v.len());
    for oo in 0..o {
        for y in 0..kh {
            for x in 0..kw {
                for ii in 0..i {
                    out.push(v[((oo * i + ii) * kh + y) * kw + x]);
                }
            }
        }
    }
    out
}

fn entry_for<'a>(bundle: &'a WeightBundle, unit: &Unit) -> Result<&'a BundleEntry> {
    let e = bundle
        .get(&unit.name)
        .ok_or_else(|| Error::MissingLayer(unit.name.clone()))?;
    let want_kind = match unit.kind {
        UnitKind::BitTConv => EntryKind::TConv,
        _ => EntryKind::Conv,
    };
    let s = &unit.spec;
    let want = [s.c_out, s.c_in, s.kernel_h, s.kernel_w];
    if e.kind != want_kind || e.shape != want {
        return Err(Error::shape(
            unit.name.clone(),
            format!(
                "bundle has {:?} {:?}, topology needs {want_kind:?} {want:?}",
                e.kind, e.shape
            ),
        ));
    }
    Ok(e)
}

/// Quantizes one bundle entry for a unit of the topology.
pub fn quantize_unit(unit: &Unit, e: &BundleEntry, opts: &QuantizeOptions) -> Result<LayerParams> {
    let bn = e.batchnorm();
    if let Some(bn) = &bn {
        bn.iter().try_for_each(|b| b.validate())?;
    }
    match unit.weight_kind {
        None => {
            let weights: Vec<f64> = oihw_to_ohwi(&e.weights, e.shape)
                .into_iter()
                .map(f64::from)
                .collect();
            let bn = if unit.has_bn {
                Some(bn.unwrap_or_else(|| vec![BatchNorm::identity(); e.shape[0]]))
            } else {
                None
            };
            Ok(LayerParams::Float {
                weights: FloatConvWeights {
                    weights,
                    bias: e.bias_f64(),
                },
                bn,
            })
        }
        Some(kind) => {
            let values = match kind {
                WeightKind::Masked => ternary_values(&e.weights, opts.threshold_for(&unit.name))?,
                WeightKind::Binary => binary_values(&e.weights)?,
            };
            let dense = oihw_to_ohwi(&values, e.shape);
            let weights = ConvWeights::from_dense(
                kind,
                &dense,
                e.shape[2],
                e.shape[3],
                unit.in_layout.clone(),
                e.shape[0],
            )?;
            let bn = bn.unwrap_or_else(|| vec![BatchNorm::identity(); e.shape[0]]);
            let threshold = FusedThreshold::from_batchnorm(&bn, &e.bias_f64())?;
            Ok(LayerParams::Bit { weights, threshold })
        }
    }
}

/// Parameters for every unit of `config`'s topology.
pub fn quantize_bundle(
    bundle: &WeightBundle,
    config: &UNetConfig,
    opts: &QuantizeOptions,
) -> Result<BTreeMap<String, LayerParams>> {
    units(config)
        .iter()
        .map(|u| {
            let e = entry_for(bundle, u)?;
            Ok((u.name.clone(), quantize_unit(u, e, opts)?))
        })
        .collect()
}

/// Quantizes `bundle` and compiles the model.
pub fn build(
    config: &UNetConfig,
    bundle: &WeightBundle,
    opts: &QuantizeOptions,
) -> Result<CompiledModel> {
    let report = config.validate();
    if !report.is_ok() {
        return Err(Error::Unsupported(report.violations.join("; ")));
    }
    CompiledModel::assemble(config.clone(), quantize_bundle(bundle, config, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ternary_examples() {
        assert_eq!(
            ternary_values(&[1.0, -1.0, 0.01], 0.7).unwrap(),
            vec![1, -1, 0]
        );
        assert_eq!(ternary_values(&[0.0; 4], 0.7).unwrap(), vec![0; 4]);
        assert_eq!(
            ternary_values(&[0.1, -0.2, 0.0, 3.0], 0.0).unwrap(),
            vec![1, -1, 0, 1]
        );
        let already = [1.0, 0.0, -1.0, -1.0, 0.0];
        assert_eq!(
            ternary_values(&already, 0.7).unwrap(),
            vec![1, 0, -1, -1, 0]
        );
        assert!(ternary_values(&[], 0.7).is_err());
        assert!(ternary_values(&[1.0], -0.1).is_err());
    }

    #[test]
    fn binary_examples() {
        assert_eq!(
            binary_values(&[0.5, -0.5, 0.0, -0.0]).unwrap(),
            vec![1, -1, 1, 1]
        );
        let p = binarize(&[0.5, -0.5]).unwrap();
        assert_eq!(p.words(), &[0b01]);
        assert!(binarize(&[]).is_err());
    }

    #[test]
    fn planted_sparsity_is_exact() {
        let mut dense = vec![0i8; 10 * 3 * 3 * 10];
        for (i, v) in dense.iter_mut().enumerate() {
            *v = match i % 10 {
                0 => 1,
                _ => 0,
            };
        }
        let w = ConvWeights::from_dense(
            WeightKind::Masked,
            &dense,
            3,
            3,
            crate::bitcore::ChannelLayout::single(10),
            10,
        )
        .unwrap();
        let r = sparsity([("x", &w)]);
        assert_eq!(r.layers[0].zero_fraction(), 0.9);
        assert_eq!(r.layers[0].pos_fraction(), 0.1);
        assert_eq!(r.layers[0].neg, 0);
    }
}
