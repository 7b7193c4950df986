use super::conv::{ConvSpec, ConvWeights};
use super::tensor::IntTensor;
use crate::bitcore::{bit_gemm, BitMatrix, BitTensor, GemmWeights};
use crate::error::{Error, Result};
use crate::par::Parallelism;

/// Non-overlapping transposed convolution (`kernel == stride`).
///
/// `out[n, p*s+dy, q*s+dx, o] = sum_c x[n,p,q,c] * w[o,dy,dx,c]`, computed as
/// `s*s` independent 1x1 GEMMs, one per output parity.
pub fn transposed_conv_forward(
    x: &BitTensor,
    weights: &ConvWeights,
    spec: &ConvSpec,
    par: Parallelism,
) -> Result<IntTensor> {
    spec.validate_transposed()?;
    x.layout()
        .check_channels(spec.c_in, "transposed conv input")?;
    if weights.kernel() != (spec.kernel_h, spec.kernel_w)
        || weights.c_out() != spec.c_out
        || weights.layout() != x.layout()
    {
        return Err(Error::shape(
            "transposed conv",
            "weights do not match the input layout or spec",
        ));
    }
    let s = spec.stride;
    let a = BitMatrix::from_words(x.pixels(), x.layout().lanes(), x.data().to_vec())?;
    let mut out = IntTensor::zeros(x.n(), x.h() * s, x.w() * s, spec.c_out);
    for dy in 0..s {
        for dx in 0..s {
            let (plus, minus) = weights.tap_slice(dy * s + dx)?;
            let gw = match &minus {
                Some(neg) => GemmWeights::Masked { pos: &plus, neg },
                None => GemmWeights::Binary(&plus),
            };
            let part = bit_gemm(&a, gw, spec.c_in, par)?;
            for b in 0..x.n() {
                for p in 0..x.h() {
                    for q in 0..x.w() {
                        let m = x.pixel_index(b, p, q);
                        let dst = ((b * out.h + p * s + dy) * out.w + q * s + dx) * spec.c_out;
                        out.data[dst..dst + spec.c_out]
                            .copy_from_slice(&part.data[m * spec.c_out..(m + 1) * spec.c_out]);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::ChannelLayout;
    use crate::layers::WeightKind;

    #[test]
    fn overlapping_kernel_rejected() {
        let x = BitTensor::zeros(1, 2, 2, ChannelLayout::single(4));
        let w = ConvWeights::from_dense(
            WeightKind::Masked,
            &[0; 4 * 9 * 4],
            3,
            3,
            ChannelLayout::single(4),
            4,
        )
        .unwrap();
        let spec = ConvSpec::square(3, 2, 0, 4, 4);
        assert!(matches!(
            transposed_conv_forward(&x, &w, &spec, Parallelism::Sequential),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn zero_weights_zero_output() {
        let vals: Vec<i8> = (0..2 * 3 * 5)
            .map(|i| if i % 2 == 0 { 1 } else { -1 })
            .collect();
        let x = BitTensor::from_bipolar(1, 2, 3, 5, &vals).unwrap();
        let w = ConvWeights::from_dense(
            WeightKind::Masked,
            &[0; 7 * 4 * 5],
            2,
            2,
            ChannelLayout::single(5),
            7,
        )
        .unwrap();
        let spec = ConvSpec::square(2, 2, 0, 5, 7);
        let out = transposed_conv_forward(&x, &w, &spec, Parallelism::Sequential).unwrap();
        assert_eq!((out.h, out.w, out.c), (4, 6, 7));
        assert!(out.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn selector_upsamples_into_top_left() {
        // identity channel mix at (0,0), nothing elsewhere
        let c = 3;
        let vals: Vec<i8> = vec![1, -1, 1, -1, -1, 1, 1, 1, -1, -1, 1, -1];
        let x = BitTensor::from_bipolar(1, 2, 2, c, &vals).unwrap();
        let mut dense = vec![0i8; c * 4 * c];
        for o in 0..c {
            dense[o * 4 * c + o] = 1;
        }
        let w = ConvWeights::from_dense(
            WeightKind::Masked,
            &dense,
            2,
            2,
            ChannelLayout::single(c),
            c,
        )
        .unwrap();
        let spec = ConvSpec::square(2, 2, 0, c, c);
        let out = transposed_conv_forward(&x, &w, &spec, Parallelism::Sequential).unwrap();
        for p in 0..2 {
            for q in 0..2 {
                for ch in 0..c {
                    assert_eq!(
                        out.get(0, 2 * p, 2 * q, ch),
                        vals[(p * 2 + q) * c + ch] as i32
                    );
                    assert_eq!(out.get(0, 2 * p + 1, 2 * q + 1, ch), 0);
                }
            }
        }
    }
}
