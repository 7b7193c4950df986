//! Batchnorm + bias + sign folded into one integer comparison per channel.

use super::tensor::IntTensor;
use crate::bitcore::{BitTensor, ChannelLayout};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

/// Inference-time batchnorm parameters of one channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: f64,
    pub beta: f64,
    pub mean: f64,
    pub var: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// `y = x`; used where a layer carries no batchnorm.
    pub fn identity() -> Self {
        BatchNorm {
            gamma: 1.0,
            beta: 0.0,
            mean: 0.0,
            var: 1.0,
            eps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.gamma, self.beta, self.mean, self.var, self.eps]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.var < 0.0 || self.var + self.eps <= 0.0 {
            return Err(Error::RejectedInput(format!(
                "batchnorm parameters {self:?} need finite values and var + eps > 0"
            )));
        }
        Ok(())
    }
}

/// Reference activation: `sign(gamma * ((pre + bias) - mean) / sigma + beta)`
/// with `sign(0) = +1`; returns the output bit.
pub fn bn_sign(pre: f64, bias: f64, bn: &BatchNorm) -> bool {
    let sigma = (bn.var + bn.eps).sqrt();
    let y = bn.gamma * ((pre + bias) - bn.mean) / sigma + bn.beta;
    y >= 0.0
}

/// Comparison applied to one channel's accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ThresholdRule {
    /// bit = acc >= T
    Ge(i32),
    /// bit = acc <= T
    Le(i32),
    /// bit fixed regardless of acc (zero batchnorm scale)
    Const(bool),
}

impl ThresholdRule {
    #[inline]
    pub fn apply(self, acc: i32) -> bool {
        match self {
            ThresholdRule::Ge(t) => acc >= t,
            ThresholdRule::Le(t) => acc <= t,
            ThresholdRule::Const(b) => b,
        }
    }
}

const LIMIT: i64 = 1 << 30;

/// Folds batchnorm, bias and sign into an integer threshold.
///
/// The closed-form threshold `mean - bias - beta * sigma / gamma` is snapped
/// to the integer lattice (ceil for `gamma > 0`, floor for `gamma < 0`) and
/// then checked against [`bn_sign`] at the boundary, so the rule agrees with
/// the floating-point reference on every integer in `[-2^30, 2^30]`.
pub fn fuse_bn_sign(bn: &BatchNorm, bias: f64) -> Result<ThresholdRule> {
    bn.validate()?;
    if !bias.is_finite() {
        return Err(Error::RejectedInput(format!("bias {bias} is not finite")));
    }
    if bn.gamma == 0.0 {
        return Ok(ThresholdRule::Const(bn.beta >= 0.0));
    }
    let fires = |acc: i64| bn_sign(acc as f64, bias, bn);
    let sigma = (bn.var + bn.eps).sqrt();
    let t = bn.mean - bias - bn.beta * sigma / bn.gamma;

    if bn.gamma > 0.0 {
        // smallest acc that fires
        let guess = clamp_lattice(t.ceil());
        let first = if !fires(guess - 1) && fires(guess) {
            guess
        } else {
            first_true(-LIMIT, LIMIT + 1, fires)
        };
        Ok(match first {
            f if f <= -LIMIT => ThresholdRule::Const(true),
            f if f > LIMIT => ThresholdRule::Const(false),
            f => ThresholdRule::Ge(f as i32),
        })
    } else {
        // largest acc that fires
        let guess = clamp_lattice(t.floor());
        let last = if fires(guess) && !fires(guess + 1) {
            guess
        } else {
            first_true(-LIMIT, LIMIT + 1, |a| !fires(a)) - 1
        };
        Ok(match last {
            l if l >= LIMIT => ThresholdRule::Const(true),
            l if l < -LIMIT => ThresholdRule::Const(false),
            l => ThresholdRule::Le(l as i32),
        })
    }
}

fn clamp_lattice(v: f64) -> i64 {
    if v.is_nan() {
        0
    } else {
        v.clamp(-(LIMIT as f64), LIMIT as f64) as i64
    }
}

/// Smallest `x` in `[lo, hi)` with `pred(x)`, or `hi`; `pred` must be monotone.
fn first_true(mut lo: i64, mut hi: i64, pred: impl Fn(i64) -> bool) -> i64 {
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Per-output-channel threshold rules of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FusedThreshold {
    pub rules: Vec<ThresholdRule>,
}

impl FusedThreshold {
    pub fn from_batchnorm(bn: &[BatchNorm], bias: &[f64]) -> Result<Self> {
        if bn.len() != bias.len() {
            return Err(Error::RejectedInput(format!(
                "{} batchnorm channels vs {} biases",
                bn.len(),
                bias.len()
            )));
        }
        let rules = bn
            .iter()
            .zip(bias)
            .map(|(b, &bias)| fuse_bn_sign(b, bias))
            .collect::<Result<_>>()?;
        Ok(FusedThreshold { rules })
    }

    pub fn channels(&self) -> usize {
        self.rules.len()
    }
}

/// Thresholds every accumulator and packs the bits.
pub fn apply_threshold(acc: &IntTensor, t: &FusedThreshold, par: Parallelism) -> Result<BitTensor> {
    if acc.c != t.channels() {
        return Err(Error::shape(
            "threshold",
            format!("{} channels vs {} threshold rules", acc.c, t.channels()),
        ));
    }
    let layout = ChannelLayout::single(acc.c);
    let wpp = layout.words();
    let mut out = BitTensor::zeros(acc.n, acc.h, acc.w, layout);
    if wpp == 0 {
        return Ok(out);
    }
    let c = acc.c;
    par::for_each_chunk(par, out.data_mut(), wpp, |p, words| {
        let src = &acc.data[p * c..(p + 1) * c];
        for (ch, (&v, rule)) in src.iter().zip(&t.rules).enumerate() {
            if rule.apply(v) {
                words[ch / 64] |= 1 << (ch % 64);
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn(gamma: f64, beta: f64, mean: f64, var: f64) -> BatchNorm {
        BatchNorm {
            gamma,
            beta,
            mean,
            var,
            eps: 1e-5,
        }
    }

    #[test]
    fn unit_scale_is_sign_with_zero_positive() {
        let r = fuse_bn_sign(&bn(1.0, 0.0, 0.0, 1.0), 0.0).unwrap();
        assert_eq!(r, ThresholdRule::Ge(0));
        assert!(r.apply(0));
        assert!(!r.apply(-1));
    }

    #[test]
    fn zero_gamma_is_constant() {
        assert_eq!(
            fuse_bn_sign(&bn(0.0, -1.0, 3.0, 1.0), 0.0).unwrap(),
            ThresholdRule::Const(false)
        );
        assert_eq!(
            fuse_bn_sign(&bn(0.0, 0.0, 3.0, 1.0), 0.0).unwrap(),
            ThresholdRule::Const(true)
        );
    }

    #[test]
    fn negative_gamma_flips_direction() {
        let r = fuse_bn_sign(&bn(-2.0, 0.0, 5.0, 4.0), 0.0).unwrap();
        assert_eq!(r, ThresholdRule::Le(5));
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(fuse_bn_sign(&bn(1.0, 0.0, 0.0, -1.0), 0.0).is_err());
    }

    #[test]
    fn extreme_thresholds_become_constants() {
        assert_eq!(
            fuse_bn_sign(&bn(1e-300, 1.0, 0.0, 1.0), 0.0).unwrap(),
            ThresholdRule::Const(true)
        );
        assert_eq!(
            fuse_bn_sign(&bn(1.0, -1e12, 0.0, 1.0), 0.0).unwrap(),
            ThresholdRule::Const(false)
        );
    }

    #[test]
    fn apply_packs_per_channel() {
        let acc = IntTensor {
            n: 1,
            h: 1,
            w: 2,
            c: 2,
            data: vec![5, -5, -5, 5],
        };
        let t = FusedThreshold {
            rules: vec![ThresholdRule::Ge(0), ThresholdRule::Const(true)],
        };
        let bits = apply_threshold(&acc, &t, Parallelism::Sequential).unwrap();
        assert_eq!(bits.to_bipolar(), vec![1, 1, -1, 1]);
        assert!(apply_threshold(
            &acc,
            &FusedThreshold {
                rules: vec![ThresholdRule::Ge(0)]
            },
            Parallelism::Sequential
        )
        .is_err());
    }
}
