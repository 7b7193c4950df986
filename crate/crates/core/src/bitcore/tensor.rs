use super::layout::ChannelLayout;
use crate::error::{Error, Result};

/// NHWC activation tensor with channels packed into 128-lane blocks.
///
/// Bit 1 is `+1`, bit 0 is `-1`. Every pixel occupies `layout.words()`
/// consecutive words.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitTensor {
    n: usize,
    h: usize,
    w: usize,
    layout: ChannelLayout,
    data: Vec<u64>,
}

impl BitTensor {
    pub fn zeros(n: usize, h: usize, w: usize, layout: ChannelLayout) -> Self {
        let len = n * h * w * layout.words();
        BitTensor {
            n,
            h,
            w,
            layout,
            data: vec![0; len],
        }
    }

    pub fn from_words(
        n: usize,
        h: usize,
        w: usize,
        layout: ChannelLayout,
        data: Vec<u64>,
    ) -> Result<Self> {
        if data.len() != n * h * w * layout.words() {
            return Err(Error::Layout(format!(
                "expected {} words, got {}",
                n * h * w * layout.words(),
                data.len()
            )));
        }
        let t = BitTensor {
            n,
            h,
            w,
            layout,
            data,
        };
        if !t.pad_lanes_clear() {
            return Err(Error::Layout("pad lanes are not zero".into()));
        }
        Ok(t)
    }

    /// Packs an NHWC tensor of `±1` values with a single channel segment.
    pub fn from_bipolar(n: usize, h: usize, w: usize, c: usize, values: &[i8]) -> Result<Self> {
        if values.len() != n * h * w * c {
            return Err(Error::Layout(format!(
                "{} values for a {n}x{h}x{w}x{c} tensor",
                values.len()
            )));
        }
        let layout = ChannelLayout::single(c);
        let wpp = layout.words();
        let mut t = BitTensor::zeros(n, h, w, layout);
        if c == 0 {
            return Ok(t);
        }
        for (p, px) in values.chunks(c).enumerate() {
            let words = &mut t.data[p * wpp..(p + 1) * wpp];
            for (ch, &v) in px.iter().enumerate() {
                match v {
                    1 => words[ch / 64] |= 1 << (ch % 64),
                    -1 => {}
                    other => {
                        return Err(Error::RejectedInput(format!(
                            "value {other} at pixel {p} channel {ch} is not bipolar"
                        )))
                    }
                }
            }
        }
        Ok(t)
    }

    /// Unpacks to NHWC `±1` values over logical channels, in channel order.
    pub fn to_bipolar(&self) -> Vec<i8> {
        let lanes = self.layout.lane_map();
        let wpp = self.layout.words();
        let mut out = Vec::with_capacity(self.pixels() * lanes.len());
        for px in self.data.chunks(wpp.max(1)).take(self.pixels()) {
            for &lane in &lanes {
                out.push(if (px[lane / 64] >> (lane % 64)) & 1 == 1 {
                    1
                } else {
                    -1
                });
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }
    /// Logical channel count.
    pub fn c(&self) -> usize {
        self.layout.channels()
    }
    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }
    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }
    pub fn words_per_pixel(&self) -> usize {
        self.layout.words()
    }
    pub fn data(&self) -> &[u64] {
        &self.data
    }
    pub(crate) fn data_mut(&mut self) -> &mut [u64] {
        &mut self.data
    }

    pub fn pixel_index(&self, n: usize, y: usize, x: usize) -> usize {
        (n * self.h + y) * self.w + x
    }

    pub fn pixel(&self, n: usize, y: usize, x: usize) -> &[u64] {
        let wpp = self.words_per_pixel();
        let p = self.pixel_index(n, y, x);
        &self.data[p * wpp..(p + 1) * wpp]
    }

    /// Bit of logical channel `ch` at `(n, y, x)`.
    pub fn get(&self, n: usize, y: usize, x: usize, ch: usize) -> bool {
        let lane = self.layout.lane_of(ch);
        (self.pixel(n, y, x)[lane / 64] >> (lane % 64)) & 1 == 1
    }

    pub fn pad_lanes_clear(&self) -> bool {
        let masks = self.layout.word_masks();
        if masks.is_empty() {
            return true;
        }
        self.data
            .chunks(masks.len())
            .all(|px| px.iter().zip(&masks).all(|(w, m)| w & !m == 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_various_channel_counts() {
        for c in [1usize, 63, 64, 65, 127, 128, 129, 256] {
            let values: Vec<i8> = (0..2 * 3 * 2 * c)
                .map(|i| if (i * 7 + i / 3) % 5 < 2 { 1 } else { -1 })
                .collect();
            let t = BitTensor::from_bipolar(2, 3, 2, c, &values).unwrap();
            assert_eq!(t.words_per_pixel(), c.div_ceil(128) * 2);
            assert!(t.pad_lanes_clear());
            assert_eq!(t.to_bipolar(), values);
        }
    }

    #[test]
    fn rejects_zero_activation() {
        assert!(BitTensor::from_bipolar(1, 1, 1, 2, &[1, 0]).is_err());
    }

    #[test]
    fn from_words_checks_pad() {
        let l = ChannelLayout::single(3);
        assert!(BitTensor::from_words(1, 1, 1, l.clone(), vec![0b111, 0]).is_ok());
        assert!(BitTensor::from_words(1, 1, 1, l, vec![0b1111, 0]).is_err());
    }
}
