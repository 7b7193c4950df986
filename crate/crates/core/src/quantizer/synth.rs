//! Random weight bundles for testing and benchmarking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::bundle::{BnParams, BundleEntry, EntryKind, WeightBundle};
use crate::graph::{units, UNetConfig, UnitKind};

/// Gaussian weights with batchnorm statistics scaled to each layer's
/// reduction length, so thresholds land inside the reachable range.
/// About 15% of channels get a negative gamma and 5% a zero gamma.
pub fn synthetic_bundle(config: &UNetConfig, seed: u64) -> WeightBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0f64, 1.0).unwrap();
    let mut entries = Vec::new();
    for u in units(config) {
        let s = &u.spec;
        let shape = [s.c_out, s.c_in, s.kernel_h, s.kernel_w];
        let fan_in = s.c_in * s.kernel_h * s.kernel_w;
        let scale = if u.has_bn {
            1.0
        } else {
            1.0 / (fan_in as f64).sqrt()
        };
        let n: usize = shape.iter().product();
        let weights = (0..n)
            .map(|_| (std.sample(&mut rng) * scale) as f32)
            .collect();
        let bias = (0..s.c_out)
            .map(|_| (std.sample(&mut rng) * if u.has_bn { 1.0 } else { 0.1 }) as f32)
            .collect();
        let bn = u.has_bn.then(|| {
            let spread = if u.label == crate::graph::LayerLabel::Stem {
                (fan_in as f64 / 4.0).sqrt()
            } else {
                (fan_in as f64).sqrt()
            };
            let mut p = BnParams {
                gamma: Vec::new(),
                beta: Vec::new(),
                mean: Vec::new(),
                var: Vec::new(),
            };
            for _ in 0..s.c_out {
                let r: f64 = rng.random();
                let g = 1.0 + 0.3 * std.sample(&mut rng);
                let gamma = if r < 0.05 {
                    0.0
                } else if r < 0.20 {
                    -g
                } else {
                    g
                };
                p.gamma.push(gamma as f32);
                p.beta.push((0.3 * std.sample(&mut rng)) as f32);
                p.mean.push((0.3 * spread * std.sample(&mut rng)) as f32);
                p.var
                    .push((spread * spread * rng.random_range(0.5..2.0)) as f32);
            }
            p
        });
        entries.push(BundleEntry {
            name: u.name.clone(),
            kind: if u.kind == UnitKind::BitTConv {
                EntryKind::TConv
            } else {
                EntryKind::Conv
            },
            shape,
            weights,
            bias: Some(bias),
            bn,
            eps: None,
        });
    }
    WeightBundle { entries }
}

/// Every weight zero, head bias `head_bias`, identity batchnorm elsewhere.
pub fn zero_bundle(config: &UNetConfig, head_bias: f32) -> WeightBundle {
    let entries = units(config)
        .into_iter()
        .map(|u| {
            let s = &u.spec;
            let shape = [s.c_out, s.c_in, s.kernel_h, s.kernel_w];
            BundleEntry {
                name: u.name.clone(),
                kind: if u.kind == UnitKind::BitTConv {
                    EntryKind::TConv
                } else {
                    EntryKind::Conv
                },
                shape,
                weights: vec![0.0; shape.iter().product()],
                bias: (!u.has_bn).then(|| vec![head_bias; s.c_out]),
                bn: None,
                eps: None,
            }
        })
        .collect();
    WeightBundle { entries }
}
