#![allow(dead_code)]

use mbunet_core::bitcore::{BitTensor, ChannelLayout};
use mbunet_core::layers::{
    apply_threshold, bn_sign, conv_forward, fuse_bn_sign, maxpool2, transposed_conv_forward,
    BatchNorm, ConvSpec, ConvWeights, FusedThreshold, IntTensor, PadValue, WeightKind,
};
use mbunet_core::oracle::{
    ref_conv, ref_pool, ref_tconv, ref_threshold, DenseTensor, DenseWeights, RefBn,
};
use mbunet_core::quantizer::oihw_to_ohwi;
use mbunet_core::Parallelism;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bipolar(rng: &mut impl Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| if rng.random() { 1 } else { -1 }).collect()
}

pub fn ternary(rng: &mut impl Rng, n: usize, p_zero: f64) -> Vec<i8> {
    (0..n)
        .map(|_| {
            if rng.random_bool(p_zero) {
                0
            } else if rng.random() {
                1
            } else {
                -1
            }
        })
        .collect()
}

pub fn scalar_dot(a: &[i8], b: &[i8]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
}

pub fn random_tensor(
    rng: &mut impl Rng,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
) -> (BitTensor, DenseTensor) {
    let v = bipolar(rng, n * h * w * c);
    let bits = BitTensor::from_bipolar(n, h, w, c, &v).unwrap();
    let dense = DenseTensor::new(n, h, w, c, v.iter().map(|&x| x as i32).collect()).unwrap();
    (bits, dense)
}

pub fn dense_of(bits: &BitTensor) -> DenseTensor {
    DenseTensor::new(
        bits.n(),
        bits.h(),
        bits.w(),
        bits.c(),
        bits.to_bipolar().into_iter().map(i32::from).collect(),
    )
    .unwrap()
}

pub fn same(acc: &IntTensor, d: &DenseTensor) -> bool {
    (acc.n, acc.h, acc.w, acc.c) == (d.n, d.h, d.w, d.c) && acc.data == d.data
}

/// Random weights in OIHW order, packed for the engine over `layout`.
pub fn random_weights(
    rng: &mut impl Rng,
    kind: WeightKind,
    c_out: usize,
    layout: &ChannelLayout,
    k: usize,
) -> (ConvWeights, DenseWeights) {
    let c_in = layout.channels();
    let shape = [c_out, c_in, k, k];
    let n = c_out * c_in * k * k;
    let v = match kind {
        WeightKind::Binary => bipolar(rng, n),
        WeightKind::Masked => {
            let p_zero = rng.random_range(0.0..0.9);
            ternary(rng, n, p_zero)
        }
    };
    let packed =
        ConvWeights::from_dense(kind, &oihw_to_ohwi(&v, shape), k, k, layout.clone(), c_out)
            .unwrap();
    let dense = DenseWeights::new(shape, v.iter().map(|&x| x as i32).collect()).unwrap();
    (packed, dense)
}

/// One randomized conv; returns whether engine and oracle agree exactly.
pub fn conv_case(
    rng: &mut impl Rng,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    kind: WeightKind,
) -> bool {
    let h = rng.random_range(k.max(2)..9);
    let w = rng.random_range(k.max(2)..9);
    let n = rng.random_range(1..3);
    let padding = if rng.random() { k / 2 } else { 0 };
    let pad_value = match kind {
        WeightKind::Masked if rng.random() => PadValue::Zero,
        _ => PadValue::NegOne,
    };
    let spec = ConvSpec::square(k, stride, padding, c_in, c_out).with_pad_value(pad_value);
    let (x, xd) = random_tensor(rng, n, h, w, c_in);
    let (wp, wd) = random_weights(rng, kind, c_out, x.layout(), k);
    let par = if rng.random() {
        Parallelism::Parallel
    } else {
        Parallelism::Sequential
    };
    let got = conv_forward(&x, &wp, &spec, par).unwrap();
    let pv = if pad_value == PadValue::Zero { 0 } else { -1 };
    let want = ref_conv(&xd, &wd, stride, padding, pv).unwrap();
    same(&got, &want)
}

/// Conv over a concatenated input with per-operand block alignment.
pub fn concat_conv_case(
    rng: &mut impl Rng,
    ca: usize,
    cb: usize,
    c_out: usize,
    kind: WeightKind,
) -> bool {
    let (a, ad) = random_tensor(rng, 1, 6, 6, ca);
    let (b, bd) = random_tensor(rng, 1, 6, 6, cb);
    let x = mbunet_core::layers::concat_channels(&a, &b).unwrap();
    let xd = mbunet_core::oracle::ref_concat(&ad, &bd).unwrap();
    if dense_of(&x) != xd || !x.pad_lanes_clear() {
        return false;
    }
    let (wp, wd) = random_weights(rng, kind, c_out, x.layout(), 3);
    let pv = if kind == WeightKind::Masked {
        PadValue::Zero
    } else {
        PadValue::NegOne
    };
    let spec = ConvSpec::square(3, 1, 1, ca + cb, c_out).with_pad_value(pv);
    let got = conv_forward(&x, &wp, &spec, Parallelism::Parallel).unwrap();
    let want = ref_conv(&xd, &wd, 1, 1, if pv == PadValue::Zero { 0 } else { -1 }).unwrap();
    same(&got, &want)
}

pub fn tconv_case(
    rng: &mut impl Rng,
    c_in: usize,
    c_out: usize,
    s: usize,
    kind: WeightKind,
) -> bool {
    let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
    let (x, xd) = random_tensor(rng, 1, h, w, c_in);
    let (wp, wd) = random_weights(rng, kind, c_out, x.layout(), s);
    let spec = ConvSpec::square(s, s, 0, c_in, c_out);
    let got = transposed_conv_forward(&x, &wp, &spec, Parallelism::Parallel).unwrap();
    same(&got, &ref_tconv(&xd, &wd, s).unwrap())
}

pub fn pool_case(rng: &mut impl Rng, c: usize) -> bool {
    let (h, w) = (2 * rng.random_range(1..5), 2 * rng.random_range(1..5));
    let (x, xd) = random_tensor(rng, 2, h, w, c);
    let y = maxpool2(&x).unwrap();
    y.pad_lanes_clear() && dense_of(&y) == ref_pool(&xd).unwrap()
}

pub fn random_bn(rng: &mut impl Rng, scale: f64) -> BatchNorm {
    let r: f64 = rng.random();
    let g = rng.random_range(0.05..3.0);
    BatchNorm {
        gamma: if r < 0.1 {
            0.0
        } else if r < 0.5 {
            -g
        } else {
            g
        },
        beta: rng.random_range(-2.0..2.0),
        mean: rng.random_range(-scale..scale),
        var: rng.random_range(0.0..scale * scale),
        eps: if rng.random() {
            1e-5
        } else {
            rng.random_range(0.0..1.0)
        },
    }
}

pub fn ref_bn(b: &BatchNorm) -> RefBn {
    RefBn {
        gamma: b.gamma,
        beta: b.beta,
        mean: b.mean,
        var: b.var,
        eps: b.eps,
    }
}

pub fn threshold_case(rng: &mut impl Rng, c: usize) -> bool {
    let k = rng.random_range(1..2000i32);
    let (n, h, w) = (1, rng.random_range(1..5), rng.random_range(1..5));
    let data: Vec<i32> = (0..n * h * w * c)
        .map(|_| rng.random_range(-k..=k))
        .collect();
    let mut acc = IntTensor::zeros(n, h, w, c);
    acc.data = data.clone();
    let bn: Vec<BatchNorm> = (0..c).map(|_| random_bn(rng, k as f64)).collect();
    let bias: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
    let t = FusedThreshold::from_batchnorm(&bn, &bias).unwrap();
    let got = apply_threshold(&acc, &t, Parallelism::Parallel).unwrap();
    let accd = DenseTensor::new(n, h, w, c, data).unwrap();
    let rb: Vec<RefBn> = bn.iter().map(ref_bn).collect();
    got.pad_lanes_clear() && dense_of(&got) == ref_threshold(&accd, &rb, &bias).unwrap()
}

/// Every integer in `[-range, range]` through a fused rule vs the float formula.
pub fn fusion_sweep(bn: &BatchNorm, bias: f64, range: i32) -> bool {
    let rule = fuse_bn_sign(bn, bias).unwrap();
    (-range..=range).all(|a| rule.apply(a) == bn_sign(a as f64, bias, bn))
}
