use crate::bitcore::BitTensor;
use crate::error::{Error, Result};

/// 2x2 max-pool. Max over `{-1,+1}` is OR on the bit encoding.
pub fn maxpool2(x: &BitTensor) -> Result<BitTensor> {
    if !x.h().is_multiple_of(2) || !x.w().is_multiple_of(2) {
        return Err(Error::shape(
            "maxpool",
            format!("extent {}x{} is not even", x.h(), x.w()),
        ));
    }
    let (h, w) = (x.h() / 2, x.w() / 2);
    let wpp = x.words_per_pixel();
    let mut out = BitTensor::zeros(x.n(), h, w, x.layout().clone());
    let data = out.data_mut();
    for b in 0..x.n() {
        for y in 0..h {
            for xx in 0..w {
                let dst = ((b * h + y) * w + xx) * wpp;
                let p00 = x.pixel(b, 2 * y, 2 * xx);
                let p01 = x.pixel(b, 2 * y, 2 * xx + 1);
                let p10 = x.pixel(b, 2 * y + 1, 2 * xx);
                let p11 = x.pixel(b, 2 * y + 1, 2 * xx + 1);
                for i in 0..wpp {
                    data[dst + i] = p00[i] | p01[i] | p10[i] | p11[i];
                }
            }
        }
    }
    Ok(out)
}

/// Channel concatenation; `b` starts at a fresh 128-lane block.
pub fn concat_channels(a: &BitTensor, b: &BitTensor) -> Result<BitTensor> {
    if (a.n(), a.h(), a.w()) != (b.n(), b.h(), b.w()) {
        return Err(Error::shape(
            "concat",
            format!(
                "{}x{}x{} vs {}x{}x{}",
                a.n(),
                a.h(),
                a.w(),
                b.n(),
                b.h(),
                b.w()
            ),
        ));
    }
    let layout = a.layout().concat(b.layout());
    let (wa, wb) = (a.words_per_pixel(), b.words_per_pixel());
    let mut data = Vec::with_capacity(a.pixels() * (wa + wb));
    for p in 0..a.pixels() {
        data.extend_from_slice(&a.data()[p * wa..(p + 1) * wa]);
        data.extend_from_slice(&b.data()[p * wb..(p + 1) * wb]);
    }
    BitTensor::from_words(a.n(), a.h(), a.w(), layout, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::ChannelLayout;

    #[test]
    fn window_with_single_plus_is_plus() {
        let x = BitTensor::from_bipolar(1, 2, 2, 1, &[1, -1, -1, -1]).unwrap();
        assert_eq!(maxpool2(&x).unwrap().to_bipolar(), vec![1]);
    }

    #[test]
    fn all_minus_stays_minus() {
        let x = BitTensor::from_bipolar(1, 4, 4, 3, &[-1; 48]).unwrap();
        assert_eq!(maxpool2(&x).unwrap().to_bipolar(), vec![-1; 12]);
    }

    #[test]
    fn odd_extent_rejected() {
        let x = BitTensor::zeros(1, 3, 4, ChannelLayout::single(2));
        assert!(maxpool2(&x).is_err());
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let x = BitTensor::from_bipolar(1, 1, 2, 3, &[1, -1, 1, -1, -1, 1]).unwrap();
        let e = BitTensor::zeros(1, 1, 2, ChannelLayout::single(0));
        assert_eq!(concat_channels(&x, &e).unwrap(), x);
    }

    #[test]
    fn concat_layout_has_gaps() {
        let a = BitTensor::from_bipolar(1, 1, 1, 64, &[1; 64]).unwrap();
        let b = BitTensor::from_bipolar(1, 1, 1, 64, &[1; 64]).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.layout().blocks(), 2);
        assert_eq!(c.data(), &[u64::MAX, 0, u64::MAX, 0]);
        assert_eq!(c.to_bipolar(), vec![1; 128]);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = BitTensor::zeros(1, 2, 2, ChannelLayout::single(1));
        let b = BitTensor::zeros(1, 2, 3, ChannelLayout::single(1));
        assert!(concat_channels(&a, &b).is_err());
    }
}
