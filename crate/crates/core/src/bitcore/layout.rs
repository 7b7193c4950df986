use crate::error::{Error, Result};

pub const BLOCK_LANES: usize = 128;
pub const WORDS_PER_BLOCK: usize = 2;

/// Channel-to-lane map of a packed pixel.
///
/// A pixel holds one or more segments; each segment starts at a fresh
/// 128-lane block. A plain tensor has one segment, a skip concatenation has
/// two. Lanes that belong to no logical channel are pad lanes and stay zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChannelLayout {
    segments: Vec<usize>,
}

impl ChannelLayout {
    pub fn single(channels: usize) -> Self {
        ChannelLayout::from_segments(vec![channels])
    }

    /// Empty segments are dropped.
    pub fn from_segments(segments: Vec<usize>) -> Self {
        ChannelLayout {
            segments: segments.into_iter().filter(|&s| s > 0).collect(),
        }
    }

    pub fn concat(&self, other: &ChannelLayout) -> Self {
        let mut segments = self.segments.clone();
        segments.extend_from_slice(&other.segments);
        ChannelLayout { segments }
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn channels(&self) -> usize {
        self.segments.iter().sum()
    }

    pub fn blocks(&self) -> usize {
        self.segments.iter().map(|s| s.div_ceil(BLOCK_LANES)).sum()
    }

    pub fn words(&self) -> usize {
        self.blocks() * WORDS_PER_BLOCK
    }

    pub fn lanes(&self) -> usize {
        self.blocks() * BLOCK_LANES
    }

    /// Lane index of logical channel `ch`.
    pub fn lane_of(&self, ch: usize) -> usize {
        let mut base_lane = 0;
        let mut base_ch = 0;
        for &s in &self.segments {
            if ch < base_ch + s {
                return base_lane + (ch - base_ch);
            }
            base_ch += s;
            base_lane += s.div_ceil(BLOCK_LANES) * BLOCK_LANES;
        }
        panic!("channel {ch} out of range {}", self.channels());
    }

    /// Lane indices of every logical channel, in channel order.
    pub fn lane_map(&self) -> Vec<usize> {
        let mut lanes = Vec::with_capacity(self.channels());
        let mut base = 0;
        for &s in &self.segments {
            lanes.extend(base..base + s);
            base += s.div_ceil(BLOCK_LANES) * BLOCK_LANES;
        }
        lanes
    }

    /// Per-word mask of lanes that carry logical channels.
    pub fn word_masks(&self) -> Vec<u64> {
        let mut masks = vec![0u64; self.words()];
        for lane in self.lane_map() {
            masks[lane / 64] |= 1 << (lane % 64);
        }
        masks
    }

    pub fn check_channels(&self, expected: usize, what: &str) -> Result<()> {
        if self.channels() != expected {
            return Err(Error::Layout(format!(
                "{what}: expected {expected} channels, layout has {}",
                self.channels()
            )));
        }
        Ok(())
    }
}
