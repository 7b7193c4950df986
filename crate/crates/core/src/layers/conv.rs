//! Bit convolution lowered to a tile GEMM (im2row).
//!
//! Weights are stored per output channel as `taps x layout.lanes()` lanes,
//! taps row-major over the kernel window. Row `m` of the lowered activation
//! matrix holds the receptive field of output pixel `m` in the same order.

use serde::{Deserialize, Serialize};

use super::tensor::IntTensor;
use crate::bitcore::{bit_gemm, BitMatrix, BitTensor, ChannelLayout, GemmWeights};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

/// Logical value of out-of-bounds activations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadValue {
    /// Padded taps contribute nothing. Only representable with ternary weights.
    #[default]
    Zero,
    /// Padded taps read as `-1` (bit 0).
    NegOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Binary,
    Masked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub pad_value: PadValue,
}

impl ConvSpec {
    pub fn square(kernel: usize, stride: usize, padding: usize, c_in: usize, c_out: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            c_in,
            c_out,
            pad_value: PadValue::Zero,
        }
    }

    pub fn with_pad_value(mut self, pad_value: PadValue) -> Self {
        self.pad_value = pad_value;
        self
    }

    pub fn taps(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(Error::Unsupported(format!(
                "kernel {}x{} stride {}: all must be at least 1",
                self.kernel_h, self.kernel_w, self.stride
            )));
        }
        if self.taps() > 64 {
            return Err(Error::Unsupported(format!(
                "kernel {}x{} exceeds 64 taps",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok(())
    }

    pub fn validate_transposed(&self) -> Result<()> {
        self.validate()?;
        if self.kernel_h != self.stride || self.kernel_w != self.stride {
            return Err(Error::Unsupported(format!(
                "transposed convolution needs kernel = stride, got {}x{} stride {}",
                self.kernel_h, self.kernel_w, self.stride
            )));
        }
        if self.padding != 0 {
            return Err(Error::Unsupported(
                "transposed convolution does not take padding".into(),
            ));
        }
        Ok(())
    }

    /// Output extent for an `h x w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::shape(
                "conv",
                format!(
                    "{h}x{w} input is smaller than the {}x{} kernel",
                    self.kernel_h, self.kernel_w
                ),
            ));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

/// Packed weights of one bit convolution (or transposed convolution).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ConvWeights {
    kind: WeightKind,
    kernel_h: usize,
    kernel_w: usize,
    layout: ChannelLayout,
    c_out: usize,
    /// `+1` lanes (masked) or sign bits (binary).
    plus: BitMatrix,
    /// `-1` lanes, masked weights only.
    minus: Option<BitMatrix>,
}

impl ConvWeights {
    /// Packs dense weights in `[c_out][kernel_h][kernel_w][c_in]` order.
    ///
    /// Binary weights accept only `±1`; masked weights accept `{-1, 0, +1}`.
    pub fn from_dense(
        kind: WeightKind,
        dense: &[i8],
        kernel_h: usize,
        kernel_w: usize,
        layout: ChannelLayout,
        c_out: usize,
    ) -> Result<Self> {
        let c_in = layout.channels();
        let taps = kernel_h * kernel_w;
        if dense.len() != c_out * taps * c_in {
            return Err(Error::Layout(format!(
                "{} weights for {c_out}x{kernel_h}x{kernel_w}x{c_in}",
                dense.len()
            )));
        }
        let row_lanes = taps * layout.lanes();
        let mut plus = BitMatrix::zeros(c_out, row_lanes)?;
        let mut minus = match kind {
            WeightKind::Masked => Some(BitMatrix::zeros(c_out, row_lanes)?),
            WeightKind::Binary => None,
        };
        let lanes = layout.lane_map();
        for o in 0..c_out {
            for t in 0..taps {
                for (ci, &lane) in lanes.iter().enumerate() {
                    let v = dense[(o * taps + t) * c_in + ci];
                    let lane = t * layout.lanes() + lane;
                    match (kind, v) {
                        (_, 1) => plus.set(o, lane, true),
                        (WeightKind::Binary, -1) => {}
                        (WeightKind::Masked, -1) => minus.as_mut().unwrap().set(o, lane, true),
                        (WeightKind::Masked, 0) => {}
                        _ => {
                            return Err(Error::RejectedInput(format!(
                                "weight {v} not allowed in a {kind:?} layer"
                            )))
                        }
                    }
                }
            }
        }
        Ok(ConvWeights {
            kind,
            kernel_h,
            kernel_w,
            layout,
            c_out,
            plus,
            minus,
        })
    }

    /// Rebuilds weights from packed planes, checking pad lanes and overlap.
    pub fn from_planes(
        kind: WeightKind,
        kernel_h: usize,
        kernel_w: usize,
        layout: ChannelLayout,
        c_out: usize,
        plus: BitMatrix,
        minus: Option<BitMatrix>,
    ) -> Result<Self> {
        let row_lanes = kernel_h * kernel_w * layout.lanes();
        let check = |m: &BitMatrix| -> Result<()> {
            if m.rows() != c_out || m.k_lanes() != row_lanes {
                return Err(Error::Layout(format!(
                    "weight plane is {}x{}, expected {c_out}x{row_lanes}",
                    m.rows(),
                    m.k_lanes()
                )));
            }
            let masks = layout.word_masks();
            if m.words()
                .chunks(masks.len().max(1))
                .any(|c| c.iter().zip(&masks).any(|(w, k)| w & !k != 0))
            {
                return Err(Error::Layout("weight pad lanes are not zero".into()));
            }
            Ok(())
        };
        check(&plus)?;
        match (kind, &minus) {
            (WeightKind::Binary, None) => {}
            (WeightKind::Masked, Some(m)) => {
                check(m)?;
                if plus.words().iter().zip(m.words()).any(|(p, q)| p & q != 0) {
                    return Err(Error::Invariant("pos and neg planes overlap".into()));
                }
            }
            _ => {
                return Err(Error::Layout(format!(
                    "{kind:?} weights with wrong number of planes"
                )))
            }
        }
        Ok(ConvWeights {
            kind,
            kernel_h,
            kernel_w,
            layout,
            c_out,
            plus,
            minus,
        })
    }

    /// Dense `[c_out][kernel_h][kernel_w][c_in]` values.
    pub fn to_dense(&self) -> Vec<i8> {
        let lanes = self.layout.lane_map();
        let taps = self.taps();
        let mut out = Vec::with_capacity(self.c_out * taps * lanes.len());
        for o in 0..self.c_out {
            for t in 0..taps {
                for &lane in &lanes {
                    let lane = t * self.layout.lanes() + lane;
                    let p = self.plus.get(o, lane);
                    out.push(match &self.minus {
                        Some(m) => p as i8 - m.get(o, lane) as i8,
                        None => {
                            if p {
                                1
                            } else {
                                -1
                            }
                        }
                    });
                }
            }
        }
        out
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }
    pub fn taps(&self) -> usize {
        self.kernel_h * self.kernel_w
    }
    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }
    pub fn c_in(&self) -> usize {
        self.layout.channels()
    }
    pub fn c_out(&self) -> usize {
        self.c_out
    }
    pub fn plus(&self) -> &BitMatrix {
        &self.plus
    }
    pub fn minus(&self) -> Option<&BitMatrix> {
        self.minus.as_ref()
    }

    /// Number of true weight lanes (`c_out * taps * c_in`).
    pub fn true_lanes(&self) -> u64 {
        (self.c_out * self.taps() * self.c_in()) as u64
    }

    /// `(+1 count, -1 count)` over true lanes.
    pub fn sign_counts(&self) -> (u64, u64) {
        let plus: u64 = self
            .plus
            .words()
            .iter()
            .map(|w| w.count_ones() as u64)
            .sum();
        match &self.minus {
            Some(m) => (plus, m.words().iter().map(|w| w.count_ones() as u64).sum()),
            None => (plus, self.true_lanes() - plus),
        }
    }

    /// Sum of weight values per `(tap, output channel)`, tap-major.
    pub fn tap_sums(&self) -> Vec<i32> {
        let taps = self.taps();
        let tw = self.layout.words();
        let mut sums = vec![0i32; taps * self.c_out];
        for o in 0..self.c_out {
            for t in 0..taps {
                let range = t * tw..(t + 1) * tw;
                let p: i32 = self.plus.row(o)[range.clone()]
                    .iter()
                    .map(|w| w.count_ones() as i32)
                    .sum();
                sums[t * self.c_out + o] = match &self.minus {
                    Some(m) => {
                        p - m.row(o)[range]
                            .iter()
                            .map(|w| w.count_ones() as i32)
                            .sum::<i32>()
                    }
                    None => 2 * p - self.c_in() as i32,
                };
            }
        }
        sums
    }

    fn gemm_weights(&self) -> GemmWeights<'_> {
        match &self.minus {
            Some(neg) => GemmWeights::Masked {
                pos: &self.plus,
                neg,
            },
            None => GemmWeights::Binary(&self.plus),
        }
    }

    /// Weights of a single tap as an `c_out x layout.lanes()` operand pair.
    pub(crate) fn tap_slice(&self, tap: usize) -> Result<(BitMatrix, Option<BitMatrix>)> {
        let l = self.layout.lanes();
        let plus = self.plus.column_block(tap * l, l)?;
        let minus = match &self.minus {
            Some(m) => Some(m.column_block(tap * l, l)?),
            None => None,
        };
        Ok((plus, minus))
    }
}

/// Activation matrix of a lowered convolution.
#[derive(Clone, Debug)]
pub struct Lowered {
    pub a: BitMatrix,
    pub n: usize,
    pub h_out: usize,
    pub w_out: usize,
    /// Per row: bit `t` set when tap `t` falls outside the input.
    pub out_of_bounds: Vec<u64>,
}

/// Gathers receptive fields into an `M x K` bit matrix.
///
/// `M = n * h_out * w_out`, `K = taps * blocks * 128`. Out-of-bounds taps are
/// gathered as zero words and flagged in [`Lowered::out_of_bounds`].
pub fn lower_conv_to_gemm(
    x: &BitTensor,
    spec: &ConvSpec,
    kind: WeightKind,
    par: Parallelism,
) -> Result<Lowered> {
    spec.validate()?;
    if kind == WeightKind::Binary && spec.padding > 0 && spec.pad_value == PadValue::Zero {
        return Err(Error::Unsupported(
            "binary weights cannot represent zero padding; use -1 padding".into(),
        ));
    }
    x.layout().check_channels(spec.c_in, "conv input")?;
    let (h_out, w_out) = spec.output_extent(x.h(), x.w())?;
    let rows = x.n() * h_out * w_out;
    let tw = x.words_per_pixel();
    let taps = spec.taps();
    let row_words = taps * tw;
    let mut a = BitMatrix::zeros(rows, taps * x.layout().lanes())?;
    let mut out_of_bounds = vec![0u64; rows];
    if row_words == 0 || rows == 0 {
        return Ok(Lowered {
            a,
            n: x.n(),
            h_out,
            w_out,
            out_of_bounds,
        });
    }

    let pad = spec.padding as isize;
    let (h, w) = (x.h() as isize, x.w() as isize);
    par::for_each_chunk(par, a.words_mut(), row_words, |m, row| {
        let b = m / (h_out * w_out);
        let oy = (m / w_out) % h_out;
        let ox = m % w_out;
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let t = ky * spec.kernel_w + kx;
                let iy = (oy * spec.stride + ky) as isize - pad;
                let ix = (ox * spec.stride + kx) as isize - pad;
                if iy >= 0 && iy < h && ix >= 0 && ix < w {
                    row[t * tw..(t + 1) * tw].copy_from_slice(x.pixel(b, iy as usize, ix as usize));
                }
            }
        }
    });
    if spec.padding > 0 {
        for (m, mask) in out_of_bounds.iter_mut().enumerate() {
            let oy = (m / w_out) % h_out;
            let ox = m % w_out;
            for ky in 0..spec.kernel_h {
                for kx in 0..spec.kernel_w {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    let ix = (ox * spec.stride + kx) as isize - pad;
                    if iy < 0 || iy >= h || ix < 0 || ix >= w {
                        *mask |= 1 << (ky * spec.kernel_w + kx);
                    }
                }
            }
        }
    }
    Ok(Lowered {
        a,
        n: x.n(),
        h_out,
        w_out,
        out_of_bounds,
    })
}

fn check_weights(x: &BitTensor, weights: &ConvWeights, spec: &ConvSpec, layer: &str) -> Result<()> {
    if weights.kernel() != (spec.kernel_h, spec.kernel_w) {
        return Err(Error::shape(
            layer,
            format!(
                "weights are {:?}, spec kernel is {}x{}",
                weights.kernel(),
                spec.kernel_h,
                spec.kernel_w
            ),
        ));
    }
    if weights.c_out() != spec.c_out || weights.c_in() != spec.c_in {
        return Err(Error::shape(
            layer,
            format!(
                "weights map {} -> {} channels, spec {} -> {}",
                weights.c_in(),
                weights.c_out(),
                spec.c_in,
                spec.c_out
            ),
        ));
    }
    if weights.layout() != x.layout() {
        return Err(Error::shape(
            layer,
            format!(
                "input layout {:?} differs from weight layout {:?}",
                x.layout().segments(),
                weights.layout().segments()
            ),
        ));
    }
    Ok(())
}

/// Exact integer convolution of bipolar activations with binary or ternary weights.
pub fn conv_forward(
    x: &BitTensor,
    weights: &ConvWeights,
    spec: &ConvSpec,
    par: Parallelism,
) -> Result<IntTensor> {
    check_weights(x, weights, spec, "conv")?;
    let lowered = lower_conv_to_gemm(x, spec, weights.kind(), par)?;
    let k_true = spec.taps() * spec.c_in;
    let mut out = bit_gemm(&lowered.a, weights.gemm_weights(), k_true, par)?;

    // Zero padding: an all-zero gathered tap reads as -1 and contributes
    // -sum(w_tap); add it back so the tap contributes nothing.
    if spec.pad_value == PadValue::Zero && spec.padding > 0 {
        let sums = weights.tap_sums();
        let c_out = spec.c_out;
        for (row, &mask) in out.data.chunks_mut(c_out).zip(&lowered.out_of_bounds) {
            let mut bits = mask;
            while bits != 0 {
                let t = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                for (v, s) in row.iter_mut().zip(&sums[t * c_out..(t + 1) * c_out]) {
                    *v += s;
                }
            }
        }
    }
    Ok(IntTensor {
        n: lowered.n,
        h: lowered.h_out,
        w: lowered.w_out,
        c: spec.c_out,
        data: out.data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(n: usize, h: usize, w: usize, c: usize, seed: u64) -> (BitTensor, Vec<i8>) {
        let vals: Vec<i8> = (0..n * h * w * c)
            .map(|i| {
                if (i as u64 * 2654435761 + seed) % 7 < 3 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        (BitTensor::from_bipolar(n, h, w, c, &vals).unwrap(), vals)
    }

    #[test]
    fn lowering_geometry() {
        let (x, _) = tensor(1, 4, 4, 128, 1);
        let spec = ConvSpec::square(3, 1, 0, 128, 8);
        let l = lower_conv_to_gemm(&x, &spec, WeightKind::Masked, Parallelism::Sequential).unwrap();
        assert_eq!(l.a.rows(), 4);
        assert_eq!(l.a.k_lanes(), 9 * 128);
        assert!(l.out_of_bounds.iter().all(|&m| m == 0));
    }

    #[test]
    fn one_by_one_lowering_is_reshape() {
        let (x, _) = tensor(2, 3, 3, 200, 2);
        let spec = ConvSpec::square(1, 1, 0, 200, 4);
        let l = lower_conv_to_gemm(&x, &spec, WeightKind::Binary, Parallelism::Sequential).unwrap();
        assert_eq!(l.a.words(), x.data());
    }

    #[test]
    fn binary_zero_padding_rejected() {
        let (x, _) = tensor(1, 4, 4, 64, 3);
        let spec = ConvSpec::square(3, 1, 1, 64, 8);
        assert!(matches!(
            lower_conv_to_gemm(&x, &spec, WeightKind::Binary, Parallelism::Sequential),
            Err(Error::Unsupported(_))
        ));
        let spec = spec.with_pad_value(PadValue::NegOne);
        assert!(lower_conv_to_gemm(&x, &spec, WeightKind::Binary, Parallelism::Sequential).is_ok());
    }

    #[test]
    fn zero_masked_weights_give_zero() {
        let (x, _) = tensor(1, 5, 5, 70, 4);
        let spec = ConvSpec::square(3, 1, 1, 70, 9);
        let w = ConvWeights::from_dense(
            WeightKind::Masked,
            &vec![0; 9 * 9 * 70],
            3,
            3,
            ChannelLayout::single(70),
            9,
        )
        .unwrap();
        let out = conv_forward(&x, &w, &spec, Parallelism::Sequential).unwrap();
        assert!(out.data.iter().all(|&v| v == 0));
        assert_eq!((out.h, out.w, out.c), (5, 5, 9));
    }

    #[test]
    fn diagonal_selector_passes_channels() {
        let (x, vals) = tensor(1, 3, 3, 128, 5);
        let mut dense = vec![0i8; 128 * 128];
        for o in 0..128 {
            dense[o * 128 + o] = 1;
        }
        let w = ConvWeights::from_dense(
            WeightKind::Masked,
            &dense,
            1,
            1,
            ChannelLayout::single(128),
            128,
        )
        .unwrap();
        let spec = ConvSpec::square(1, 1, 0, 128, 128);
        let out = conv_forward(&x, &w, &spec, Parallelism::Sequential).unwrap();
        let expected: Vec<i32> = vals.iter().map(|&v| v as i32).collect();
        assert_eq!(out.data, expected);
    }

    #[test]
    fn dense_round_trip() {
        let layout = ChannelLayout::from_segments(vec![3, 5]);
        let dense: Vec<i8> = (0..2 * 4 * 8).map(|i| (i % 3) as i8 - 1).collect();
        let w = ConvWeights::from_dense(WeightKind::Masked, &dense, 2, 2, layout, 2).unwrap();
        assert_eq!(w.to_dense(), dense);
        let nonzero = dense.iter().filter(|&&v| v != 0).count() as u64;
        assert_eq!(w.sign_counts().0 + w.sign_counts().1, nonzero);
    }

    #[test]
    fn binary_rejects_zero_weight() {
        assert!(ConvWeights::from_dense(
            WeightKind::Binary,
            &[1, 0],
            1,
            1,
            ChannelLayout::single(2),
            1
        )
        .is_err());
    }

    #[test]
    fn mismatched_layout_rejected() {
        let (x, _) = tensor(1, 3, 3, 8, 6);
        let w = ConvWeights::from_dense(
            WeightKind::Masked,
            &[0; 8 * 9],
            3,
            3,
            ChannelLayout::from_segments(vec![4, 4]),
            1,
        )
        .unwrap();
        let spec = ConvSpec::square(3, 1, 1, 8, 1);
        assert!(matches!(
            conv_forward(&x, &w, &spec, Parallelism::Sequential),
            Err(Error::Shape { .. })
        ));
    }
}
