use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::{units, LayerLabel, PrecisionMap, UNetConfig, Unit, UnitKind};

/// Operation and parameter count of one weight-carrying unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitCost {
    pub name: String,
    pub label: LayerLabel,
    /// Multiplications plus additions: `2 * MACs`.
    pub ops: u64,
    /// Weights plus batchnorm scale/shift (or bias, for the head).
    pub params: u64,
}

fn unit_ops(u: &Unit) -> u64 {
    let s = &u.spec;
    let (h, w) = u.in_extent;
    let (ho, wo) = match u.kind {
        UnitKind::BitTConv => (h * s.stride, w * s.stride),
        _ => (
            (h + 2 * s.padding).saturating_sub(s.kernel_h) / s.stride + 1,
            (w + 2 * s.padding).saturating_sub(s.kernel_w) / s.stride + 1,
        ),
    };
    let macs_per_output = match u.kind {
        UnitKind::BitTConv => s.c_in,
        _ => s.c_in * s.kernel_h * s.kernel_w,
    };
    2 * (ho * wo * s.c_out * macs_per_output) as u64
}

fn unit_params(u: &Unit) -> u64 {
    let s = &u.spec;
    let weights = s.c_out * s.c_in * s.kernel_h * s.kernel_w;
    let extra = if u.has_bn { 2 * s.c_out } else { s.c_out };
    (weights + extra) as u64
}

/// Costs of every unit, with the input extent set to `extent`.
pub fn unit_costs(config: &UNetConfig, extent: (usize, usize)) -> Vec<UnitCost> {
    let c = config.clone().with_extent(extent.0, extent.1);
    units(&c)
        .iter()
        .map(|u| UnitCost {
            name: u.name.clone(),
            label: u.label,
            ops: unit_ops(u),
            params: unit_params(u),
        })
        .collect()
}

fn configurable(label: LayerLabel) -> Result<()> {
    if label.is_configurable() {
        Ok(())
    } else {
        Err(Error::RejectedInput(format!(
            "{label} is not one of the 12 configurable layers"
        )))
    }
}

/// Operations of a configurable layer (both convolutions of a double conv).
pub fn count_ops(config: &UNetConfig, label: LayerLabel, extent: (usize, usize)) -> Result<u64> {
    configurable(label)?;
    Ok(unit_costs(config, extent)
        .iter()
        .filter(|u| u.label == label)
        .map(|u| u.ops)
        .sum())
}

pub fn count_params(config: &UNetConfig, label: LayerLabel) -> Result<u64> {
    configurable(label)?;
    Ok(unit_costs(config, (config.height, config.width))
        .iter()
        .filter(|u| u.label == label)
        .map(|u| u.params)
        .sum())
}

/// Parameters of the whole network, endpoints included.
pub fn total_params(config: &UNetConfig) -> u64 {
    unit_costs(config, (config.height, config.width))
        .iter()
        .map(|u| u.params)
        .sum()
}

/// How raw counts are mapped onto `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Normalization {
    /// `x / max`.
    #[default]
    Max,
    /// `(x - min) / (max - min)`; all zeros when every count is equal.
    MinMax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCost {
    pub label: LayerLabel,
    pub n_op: u64,
    pub n_param: u64,
    pub op_norm: f64,
    pub param_norm: f64,
    pub score: f64,
    /// 1-based position in ascending score order.
    pub rank: usize,
}

/// The twelve configurable layers ordered by ascending cost score.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub w_op: f64,
    pub w_param: f64,
    pub normalization: Normalization,
    pub extent: (usize, usize),
}

impl CostReport {
    pub fn get(&self, label: LayerLabel) -> Option<&LayerCost> {
        self.layers.iter().find(|l| l.label == label)
    }

    pub fn ranking(&self) -> Vec<LayerLabel> {
        self.layers.iter().map(|l| l.label).collect()
    }
}

fn normalize(raw: &[u64], mode: Normalization) -> Vec<f64> {
    let max = raw.iter().copied().max().unwrap_or(0) as f64;
    let min = raw.iter().copied().min().unwrap_or(0) as f64;
    raw.iter()
        .map(|&x| {
            let x = x as f64;
            match mode {
                Normalization::Max if max > 0.0 => x / max,
                Normalization::MinMax if max > min => (x - min) / (max - min),
                _ => 0.0,
            }
        })
        .collect()
}

/// Scores built from explicit counts, in [`LayerLabel::CONFIGURABLE`] order.
pub fn scores_from_counts(
    ops: &[u64; 12],
    params: &[u64; 12],
    w_op: f64,
    normalization: Normalization,
    extent: (usize, usize),
) -> Result<CostReport> {
    if !(0.0..=1.0).contains(&w_op) {
        return Err(Error::RejectedInput(format!(
            "w_op {w_op} must lie in [0, 1]"
        )));
    }
    let w_param = 1.0 - w_op;
    let on = normalize(ops, normalization);
    let pn = normalize(params, normalization);
    let mut layers: Vec<LayerCost> = LayerLabel::CONFIGURABLE
        .iter()
        .enumerate()
        .map(|(i, &label)| LayerCost {
            label,
            n_op: ops[i],
            n_param: params[i],
            op_norm: on[i],
            param_norm: pn[i],
            score: w_op * on[i] + w_param * pn[i],
            rank: 0,
        })
        .collect();
    // Stable sort keeps label order among equal scores.
    layers.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(Ordering::Equal));
    for (i, l) in layers.iter_mut().enumerate() {
        l.rank = i + 1;
    }
    Ok(CostReport {
        layers,
        w_op,
        w_param,
        normalization,
        extent,
    })
}

/// Weighted cost score of each configurable layer at `extent`.
pub fn cost_scores(
    config: &UNetConfig,
    w_op: f64,
    normalization: Normalization,
    extent: (usize, usize),
) -> Result<CostReport> {
    let mut ops = [0u64; 12];
    let mut params = [0u64; 12];
    for u in unit_costs(config, extent) {
        if let Some(i) = u.label.index() {
            ops[i] += u.ops;
            params[i] += u.params;
        }
    }
    scores_from_counts(&ops, &params, w_op, normalization, extent)
}

/// Masks the `k` cheapest layers of the report.
pub fn select_mask_plan(report: &CostReport, k: usize) -> Result<PrecisionMap> {
    if k > 12 {
        return Err(Error::RejectedInput(format!(
            "k = {k} exceeds the 12 configurable layers"
        )));
    }
    PrecisionMap::from_masked(report.layers.iter().take(k).map(|l| l.label))
}

/// Every precision map accepted by `keep`, in ascending id order.
pub fn enumerate_configs(
    keep: impl Fn(PrecisionMap) -> bool,
) -> impl Iterator<Item = PrecisionMap> {
    (0..PrecisionMap::COUNT)
        .map(|id| PrecisionMap::from_id(id).expect("id in range"))
        .filter(move |&m| keep(m))
}

/// Predicate for maps with fewer than `n` masked layers.
pub fn fewer_masked_than(n: u32) -> impl Fn(PrecisionMap) -> bool {
    move |m| m.masked_count() < n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mac_is_two_ops() {
        let mut c = UNetConfig::with_base(1);
        c.in_channels = 1;
        c.encoder = [1; 5];
        c.conv_kernel = 1;
        let costs = unit_costs(&c, (16, 16));
        let d4 = costs.iter().find(|u| u.name == "down4.conv2").unwrap();
        assert_eq!(d4.ops, 2);
        assert_eq!(d4.params, 1 + 2);
    }

    #[test]
    fn equal_ops_tie_break_by_label_order() {
        let r = scores_from_counts(&[7; 12], &[3; 12], 1.0, Normalization::Max, (1, 1)).unwrap();
        assert!(r.layers.iter().all(|l| l.score == 1.0));
        assert_eq!(r.ranking(), LayerLabel::CONFIGURABLE.to_vec());
    }

    #[test]
    fn weight_range_checked() {
        let c = UNetConfig::default();
        assert!(cost_scores(&c, 1.5, Normalization::Max, (512, 512)).is_err());
        assert!(count_ops(&c, LayerLabel::Head, (512, 512)).is_err());
    }

    #[test]
    fn plans() {
        let r = cost_scores(&UNetConfig::default(), 0.5, Normalization::Max, (512, 512)).unwrap();
        assert_eq!(select_mask_plan(&r, 0).unwrap(), PrecisionMap::all_binary());
        assert_eq!(
            select_mask_plan(&r, 12).unwrap(),
            PrecisionMap::all_masked()
        );
        assert!(select_mask_plan(&r, 13).is_err());
        assert_eq!(enumerate_configs(|_| true).count(), 4096);
        assert_eq!(enumerate_configs(|m| m.masked_count() == 12).count(), 1);
    }
}
