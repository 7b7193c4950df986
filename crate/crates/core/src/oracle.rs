//! Naive dense reference implementations.
//!
//! Nothing here touches the bit-packed kernels or the layer lowering: every
//! layer is a direct loop over `i32` values, and the graph walk is written
//! out from the configuration fields. The engine is checked against it.

use crate::error::{Error, Result};
use crate::graph::{PaddingConvention, Stem2Mode, Trace, TraceTensor, UNetConfig};
use crate::layers::FloatTensor;
use crate::quantizer::{BundleEntry, QuantizeOptions, WeightBundle};

/// NHWC tensor of small integers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseTensor {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<i32>,
}

impl DenseTensor {
    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<i32>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(Error::Layout(format!(
                "{} values for a {n}x{h}x{w}x{c} dense tensor",
                data.len()
            )));
        }
        Ok(DenseTensor { n, h, w, c, data })
    }

    fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        DenseTensor {
            n,
            h,
            w,
            c,
            data: vec![0; n * h * w * c],
        }
    }

    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> i32 {
        self.data[((n * self.h + y) * self.w + x) * self.c + c]
    }

    fn at_mut(&mut self, n: usize, y: usize, x: usize, c: usize) -> &mut i32 {
        &mut self.data[((n * self.h + y) * self.w + x) * self.c + c]
    }

    fn check_bipolar(&self, what: &str) -> Result<()> {
        if self.data.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::RejectedInput(format!(
                "{what}: activation outside {{-1,+1}}"
            )));
        }
        Ok(())
    }
}

/// Weights in `[out][in][ky][kx]` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseWeights {
    pub out: usize,
    pub inp: usize,
    pub kh: usize,
    pub kw: usize,
    pub data: Vec<i32>,
}

impl DenseWeights {
    pub fn new(shape: [usize; 4], data: Vec<i32>) -> Result<Self> {
        let [out, inp, kh, kw] = shape;
        if data.len() != out * inp * kh * kw {
            return Err(Error::Layout(
                "dense weight count does not match shape".into(),
            ));
        }
        if data.iter().any(|v| !(-1..=1).contains(v)) {
            return Err(Error::RejectedInput("weight outside {-1,0,+1}".into()));
        }
        Ok(DenseWeights {
            out,
            inp,
            kh,
            kw,
            data,
        })
    }

    fn at(&self, o: usize, i: usize, y: usize, x: usize) -> i32 {
        self.data[((o * self.inp + i) * self.kh + y) * self.kw + x]
    }
}

/// Sliding-window convolution; out-of-bounds taps read `pad_value`.
pub fn ref_conv(
    x: &DenseTensor,
    w: &DenseWeights,
    stride: usize,
    pad: usize,
    pad_value: i32,
) -> Result<DenseTensor> {
    x.check_bipolar("ref_conv")?;
    if w.inp != x.c || stride == 0 || x.h + 2 * pad < w.kh || x.w + 2 * pad < w.kw {
        return Err(Error::shape("ref_conv", "input does not fit the weights"));
    }
    let ho = (x.h + 2 * pad - w.kh) / stride + 1;
    let wo = (x.w + 2 * pad - w.kw) / stride + 1;
    let mut out = DenseTensor::zeros(x.n, ho, wo, w.out);
    for n in 0..x.n {
        for p in 0..ho {
            for q in 0..wo {
                for o in 0..w.out {
                    let mut acc = 0i32;
                    for ky in 0..w.kh {
                        for kx in 0..w.kw {
                            let iy = (p * stride + ky) as i64 - pad as i64;
                            let ix = (q * stride + kx) as i64 - pad as i64;
                            let inside = iy >= 0 && ix >= 0 && iy < x.h as i64 && ix < x.w as i64;
                            for c in 0..x.c {
                                let a = if inside {
                                    x.at(n, iy as usize, ix as usize, c)
                                } else {
                                    pad_value
                                };
                                acc += a * w.at(o, c, ky, kx);
                            }
                        }
                    }
                    *out.at_mut(n, p, q, o) = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Scatter-accumulate transposed convolution with `kernel == stride`.
pub fn ref_tconv(x: &DenseTensor, w: &DenseWeights, stride: usize) -> Result<DenseTensor> {
    x.check_bipolar("ref_tconv")?;
    if w.inp != x.c || w.kh != stride || w.kw != stride {
        return Err(Error::shape("ref_tconv", "input does not fit the weights"));
    }
    let mut out = DenseTensor::zeros(x.n, x.h * stride, x.w * stride, w.out);
    for n in 0..x.n {
        for p in 0..x.h {
            for q in 0..x.w {
                for c in 0..x.c {
                    let a = x.at(n, p, q, c);
                    for dy in 0..stride {
                        for dx in 0..stride {
                            for o in 0..w.out {
                                *out.at_mut(n, p * stride + dy, q * stride + dx, o) +=
                                    a * w.at(o, c, dy, dx);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 2x2 stride-2 max pool.
pub fn ref_pool(x: &DenseTensor) -> Result<DenseTensor> {
    if !x.h.is_multiple_of(2) || !x.w.is_multiple_of(2) {
        return Err(Error::shape("ref_pool", "odd extent"));
    }
    let mut out = DenseTensor::zeros(x.n, x.h / 2, x.w / 2, x.c);
    for n in 0..x.n {
        for p in 0..x.h / 2 {
            for q in 0..x.w / 2 {
                for c in 0..x.c {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(a, b)| x.at(n, 2 * p + a, 2 * q + b, c))
                        .max()
                        .unwrap();
                    *out.at_mut(n, p, q, c) = m;
                }
            }
        }
    }
    Ok(out)
}

pub fn ref_concat(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
        return Err(Error::shape("ref_concat", "spatial mismatch"));
    }
    let mut out = DenseTensor::zeros(a.n, a.h, a.w, a.c + b.c);
    for n in 0..a.n {
        for y in 0..a.h {
            for x in 0..a.w {
                for c in 0..a.c {
                    *out.at_mut(n, y, x, c) = a.at(n, y, x, c);
                }
                for c in 0..b.c {
                    *out.at_mut(n, y, x, a.c + c) = b.at(n, y, x, c);
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel affine normalisation parameters in double precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefBn {
    pub gamma: f64,
    pub beta: f64,
    pub mean: f64,
    pub var: f64,
    pub eps: f64,
}

fn bn_bit(v: f64, bias: f64, bn: &RefBn) -> i32 {
    let y = bn.gamma * ((v + bias) - bn.mean) / (bn.var + bn.eps).sqrt() + bn.beta;
    if y >= 0.0 {
        1
    } else {
        -1
    }
}

/// `sign(batchnorm(acc + bias))` per element, evaluated in floating point.
pub fn ref_threshold(acc: &DenseTensor, bn: &[RefBn], bias: &[f64]) -> Result<DenseTensor> {
    if bn.len() != acc.c || bias.len() != acc.c {
        return Err(Error::shape("ref_threshold", "channel count mismatch"));
    }
    let mut out = acc.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        let c = i % acc.c;
        *v = bn_bit(*v as f64, bias[c], &bn[c]);
    }
    Ok(out)
}

/// Zero-padded float convolution over OIHW weights.
fn ref_float_conv(
    x: &[f64],
    (n, h, w, c): (usize, usize, usize, usize),
    e: &BundleEntry,
    pad: usize,
) -> Vec<f64> {
    let [o, _, kh, kw] = e.shape;
    let mut out = vec![0.0; n * h * w * o];
    let bias = e.bias_f64();
    for b in 0..n {
        for p in 0..h {
            for q in 0..w {
                for oo in 0..o {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        let iy = (p + ky) as i64 - pad as i64;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (q + kx) as i64 - pad as i64;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            for ci in 0..c {
                                let xv = x[((b * h + iy as usize) * w + ix as usize) * c + ci];
                                let wv = e.weights[((oo * c + ci) * kh + ky) * kw + kx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * h + p) * w + q) * o + oo] = acc + bias[oo];
                }
            }
        }
    }
    out
}

fn ref_bn(e: &BundleEntry) -> Vec<RefBn> {
    let eps = e.eps.unwrap_or(1e-5);
    match &e.bn {
        Some(bn) => (0..e.shape[0])
            .map(|o| RefBn {
                gamma: bn.gamma[o] as f64,
                beta: bn.beta[o] as f64,
                mean: bn.mean[o] as f64,
                var: bn.var[o] as f64,
                eps,
            })
            .collect(),
        None => vec![
            RefBn {
                gamma: 1.0,
                beta: 0.0,
                mean: 0.0,
                var: 1.0,
                eps: 0.0
            };
            e.shape[0]
        ],
    }
}

fn quantize(e: &BundleEntry, masked: bool, t: f64) -> Result<DenseWeights> {
    let vals: Vec<i32> = if masked {
        let mut sum = 0.0f64;
        for &v in &e.weights {
            sum += (v as f64).abs();
        }
        let delta = t * (sum / e.weights.len() as f64);
        e.weights
            .iter()
            .map(|&v| {
                let v = v as f64;
                if v > delta {
                    1
                } else if v < -delta {
                    -1
                } else {
                    0
                }
            })
            .collect()
    } else {
        e.weights
            .iter()
            .map(|&v| if v >= 0.0 { 1 } else { -1 })
            .collect()
    };
    DenseWeights::new(e.shape, vals)
}

/// Every intermediate tensor of the dense forward pass plus the head output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleTrace {
    pub entries: Vec<(String, DenseTensor)>,
    pub logits: Vec<f64>,
}

impl OracleTrace {
    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Replays the whole quantized U-Net densely from the float bundle.
pub fn ref_forward(
    config: &UNetConfig,
    bundle: &WeightBundle,
    opts: &QuantizeOptions,
    image: &FloatTensor,
) -> Result<OracleTrace> {
    let get = |name: &str| {
        bundle
            .get(name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))
    };
    let mut trace = OracleTrace::default();
    let (n, h, w) = (image.n, image.h, image.w);
    let k = config.conv_kernel;
    let pad = k / 2;
    let pad_for = |masked: bool| match (config.padding, masked) {
        (PaddingConvention::Zero, _) => 0,
        (PaddingConvention::NegOne, _) => -1,
        (PaddingConvention::Mixed, true) => 0,
        (PaddingConvention::Mixed, false) => -1,
    };
    let to_dense = |v: &[f64], n, h, w, c, e: &BundleEntry| {
        let bn = ref_bn(e);
        let data = v
            .iter()
            .enumerate()
            .map(|(i, &x)| bn_bit(x, 0.0, &bn[i % c]))
            .collect();
        DenseTensor { n, h, w, c, data }
    };

    let e = get("stem")?;
    let y = ref_float_conv(&image.data, (n, h, w, image.c), e, pad);
    let mut cur = to_dense(&y, n, h, w, e.shape[0], e);
    trace.entries.push(("stem".into(), cur.clone()));

    let bit_layer = |name: &str,
                     x: &DenseTensor,
                     masked: bool,
                     tconv: bool,
                     trace: &mut OracleTrace|
     -> Result<DenseTensor> {
        let e = get(name)?;
        let wq = quantize(e, masked, opts.threshold_for(name))?;
        let acc = if tconv {
            ref_tconv(x, &wq, config.upconv_stride)?
        } else {
            ref_conv(x, &wq, 1, pad, pad_for(masked))?
        };
        let bits = ref_threshold(&acc, &ref_bn(e), &e.bias_f64())?;
        trace.entries.push((format!("{name}.acc"), acc));
        trace.entries.push((name.to_string(), bits.clone()));
        Ok(bits)
    };

    cur = match config.stem2 {
        Stem2Mode::Float => {
            let e = get("stem2")?;
            let xf: Vec<f64> = cur.data.iter().map(|&v| v as f64).collect();
            let y = ref_float_conv(&xf, (n, h, w, cur.c), e, pad);
            let bits = to_dense(&y, n, h, w, e.shape[0], e);
            trace.entries.push(("stem2".into(), bits.clone()));
            bits
        }
        Stem2Mode::Binary => bit_layer("stem2", &cur, false, false, &mut trace)?,
        Stem2Mode::Masked => bit_layer("stem2", &cur, true, false, &mut trace)?,
    };

    let masked = |bit: usize| config.precision.id() >> bit & 1 == 1;
    let mut skips = Vec::new();
    for i in 1..=4 {
        skips.push(cur.clone());
        cur = ref_pool(&cur)?;
        trace.entries.push((format!("down{i}.pool"), cur.clone()));
        let m = masked(i - 1);
        cur = bit_layer(&format!("down{i}.conv1"), &cur, m, false, &mut trace)?;
        cur = bit_layer(&format!("down{i}.conv2"), &cur, m, false, &mut trace)?;
    }
    for j in 1..=4 {
        cur = bit_layer(
            &format!("up{j}.tconv"),
            &cur,
            masked(3 + j),
            true,
            &mut trace,
        )?;
        cur = ref_concat(&skips[4 - j], &cur)?;
        trace.entries.push((format!("up{j}.concat"), cur.clone()));
        let m = masked(7 + j);
        cur = bit_layer(&format!("up{j}.conv1"), &cur, m, false, &mut trace)?;
        cur = bit_layer(&format!("up{j}.conv2"), &cur, m, false, &mut trace)?;
    }
    let e = get("head")?;
    let xf: Vec<f64> = cur.data.iter().map(|&v| v as f64).collect();
    trace.logits = ref_float_conv(&xf, (n, h, w, cur.c), e, 0);
    Ok(trace)
}

/// Outcome of comparing an engine trace with the oracle.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Comparison {
    pub tensors: usize,
    pub mismatches: Vec<String>,
}

impl Comparison {
    pub fn exact(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares every oracle tensor, and the logits, with the engine trace.
pub fn compare_traces(engine: &Trace, oracle: &OracleTrace) -> Comparison {
    let mut cmp = Comparison::default();
    for (name, want) in &oracle.entries {
        cmp.tensors += 1;
        let got = match engine.get(name) {
            Some(TraceTensor::Bits(b)) => Some((
                (b.n(), b.h(), b.w(), b.c()),
                b.to_bipolar()
                    .into_iter()
                    .map(i32::from)
                    .collect::<Vec<_>>(),
            )),
            Some(TraceTensor::Acc(a)) => Some(((a.n, a.h, a.w, a.c), a.data.clone())),
            _ => None,
        };
        match got {
            None => cmp
                .mismatches
                .push(format!("{name}: missing from engine trace")),
            Some((dims, _)) if dims != (want.n, want.h, want.w, want.c) => {
                cmp.mismatches.push(format!(
                    "{name}: engine shape {dims:?}, oracle {:?}",
                    (want.n, want.h, want.w, want.c)
                ))
            }
            Some((_, data)) => {
                if let Some(i) = data.iter().zip(&want.data).position(|(a, b)| a != b) {
                    let diff = data.iter().zip(&want.data).filter(|(a, b)| a != b).count();
                    cmp.mismatches.push(format!(
                        "{name}: {diff} of {} values differ (first at {i}: engine {}, oracle {})",
                        data.len(),
                        data[i],
                        want.data[i]
                    ));
                }
            }
        }
    }
    cmp.tensors += 1;
    match engine.get("head") {
        Some(TraceTensor::Real(l)) if l.data == oracle.logits => {}
        _ => cmp.mismatches.push("head: logits differ".into()),
    }
    cmp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_zero_acc() {
        let x = DenseTensor::new(1, 3, 3, 2, vec![1; 18]).unwrap();
        let w = DenseWeights::new([4, 2, 3, 3], vec![0; 72]).unwrap();
        let y = ref_conv(&x, &w, 1, 1, -1).unwrap();
        assert!(y.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn selector_passthrough() {
        let x = DenseTensor::new(1, 2, 2, 2, vec![1, -1, -1, 1, 1, 1, -1, -1]).unwrap();
        let w = DenseWeights::new([2, 2, 1, 1], vec![1, 0, 0, 1]).unwrap();
        assert_eq!(ref_conv(&x, &w, 1, 0, 0).unwrap().data, x.data);
    }

    #[test]
    fn alphabet_checked() {
        let x = DenseTensor::new(1, 1, 1, 1, vec![0]).unwrap();
        let w = DenseWeights::new([1, 1, 1, 1], vec![1]).unwrap();
        assert!(ref_conv(&x, &w, 1, 0, 0).is_err());
        assert!(DenseWeights::new([1, 1, 1, 1], vec![2]).is_err());
    }
}
