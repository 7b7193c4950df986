use super::conv::ConvSpec;
use super::tensor::FloatTensor;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

/// Full-precision convolution weights, `[c_out][kernel_h][kernel_w][c_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatConvWeights {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Direct convolution with zero padding.
///
/// Each output sums `bias + sum_{ky,kx,ci} x * w` with the taps visited in
/// `ky, kx, ci` order, in-bounds taps only, bias added last.
pub fn float_conv(
    x: &FloatTensor,
    w: &FloatConvWeights,
    spec: &ConvSpec,
    par: Parallelism,
) -> Result<FloatTensor> {
    spec.validate()?;
    let (kh, kw, c_in, c_out) = (spec.kernel_h, spec.kernel_w, spec.c_in, spec.c_out);
    if x.c != c_in {
        return Err(Error::shape(
            "float conv",
            format!("input has {} channels, spec {c_in}", x.c),
        ));
    }
    if w.weights.len() != c_out * kh * kw * c_in || w.bias.len() != c_out {
        return Err(Error::shape(
            "float conv",
            format!(
                "{} weights / {} biases for {c_out}x{kh}x{kw}x{c_in}",
                w.weights.len(),
                w.bias.len()
            ),
        ));
    }
    let (h_out, w_out) = spec.output_extent(x.h, x.w)?;
    let mut out = FloatTensor::zeros(x.n, h_out, w_out, c_out);
    if c_out == 0 {
        return Ok(out);
    }
    let pad = spec.padding as isize;
    par::for_each_chunk(par, &mut out.data, c_out, |m, px| {
        let b = m / (h_out * w_out);
        let oy = (m / w_out) % h_out;
        let ox = m % w_out;
        for (o, dst) in px.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ky in 0..kh {
                let iy = (oy * spec.stride + ky) as isize - pad;
                if iy < 0 || iy >= x.h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * spec.stride + kx) as isize - pad;
                    if ix < 0 || ix >= x.w as isize {
                        continue;
                    }
                    let src = ((b * x.h + iy as usize) * x.w + ix as usize) * c_in;
                    let wo = ((o * kh + ky) * kw + kx) * c_in;
                    for ci in 0..c_in {
                        acc += x.data[src + ci] * w.weights[wo + ci];
                    }
                }
            }
            *dst = acc + w.bias[o];
        }
    });
    Ok(out)
}
