use crate::error::{Error, Result};

/// Packed lane vector: lane `i` lives in word `i / 64`, bit `i % 64`.
///
/// Lanes at index `>= n_bits` are always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitPlane {
    n_bits: usize,
    words: Vec<u64>,
}

pub(crate) fn words_for(n_bits: usize) -> usize {
    n_bits.div_ceil(64)
}

/// Mask of valid bits in the last word for `n_bits` lanes.
fn tail_mask(n_bits: usize) -> u64 {
    match n_bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BitPlane {
    pub fn zeros(n_bits: usize) -> Self {
        BitPlane {
            n_bits,
            words: vec![0; words_for(n_bits)],
        }
    }

    pub fn from_words(n_bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(n_bits) {
            return Err(Error::Layout(format!(
                "{} lanes need {} words, got {}",
                n_bits,
                words_for(n_bits),
                words.len()
            )));
        }
        let plane = BitPlane { n_bits, words };
        if !plane.pad_lanes_clear() {
            return Err(Error::Layout("nonzero bits beyond lane count".into()));
        }
        Ok(plane)
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, lane: usize) -> bool {
        assert!(
            lane < self.n_bits,
            "lane {lane} out of range {}",
            self.n_bits
        );
        (self.words[lane / 64] >> (lane % 64)) & 1 == 1
    }

    pub fn set(&mut self, lane: usize, bit: bool) {
        assert!(
            lane < self.n_bits,
            "lane {lane} out of range {}",
            self.n_bits
        );
        let mask = 1u64 << (lane % 64);
        if bit {
            self.words[lane / 64] |= mask;
        } else {
            self.words[lane / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn pad_lanes_clear(&self) -> bool {
        match self.words.last() {
            Some(&last) => last & !tail_mask(self.n_bits) == 0,
            None => true,
        }
    }

    /// True when every lane at index `>= from` is zero.
    pub fn clear_from(&self, from: usize) -> bool {
        if from >= self.n_bits {
            return true;
        }
        let first = from / 64;
        let head_mask = !((1u64 << (from % 64)) - 1);
        if self.words[first] & head_mask != 0 {
            return false;
        }
        self.words[first + 1..].iter().all(|&w| w == 0)
    }

    /// Extends the plane with `extra` zero lanes.
    pub fn with_pad(&self, extra: usize) -> BitPlane {
        let mut words = self.words.clone();
        words.resize(words_for(self.n_bits + extra), 0);
        BitPlane {
            n_bits: self.n_bits + extra,
            words,
        }
    }
}

/// Packs bipolar values into a plane: `+1` becomes bit 1, `-1` bit 0.
pub fn pack_bipolar(values: &[i8]) -> Result<BitPlane> {
    let mut plane = BitPlane::zeros(values.len());
    for (i, &v) in values.iter().enumerate() {
        match v {
            1 => plane.words[i / 64] |= 1 << (i % 64),
            -1 => {}
            other => {
                return Err(Error::RejectedInput(format!(
                    "value {other} at index {i} is not bipolar"
                )))
            }
        }
    }
    Ok(plane)
}

pub fn unpack_bipolar(plane: &BitPlane) -> Vec<i8> {
    (0..plane.n_bits)
        .map(|i| if plane.get(i) { 1 } else { -1 })
        .collect()
}

/// Ternary weights stored as `pos - neg`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskedWeightPlanes {
    pos: BitPlane,
    neg: BitPlane,
}

impl MaskedWeightPlanes {
    pub fn new(pos: BitPlane, neg: BitPlane) -> Result<Self> {
        if pos.n_bits != neg.n_bits {
            return Err(Error::Layout(format!(
                "pos plane has {} lanes, neg plane {}",
                pos.n_bits, neg.n_bits
            )));
        }
        if let Some(i) = pos
            .words
            .iter()
            .zip(&neg.words)
            .position(|(p, n)| p & n != 0)
        {
            return Err(Error::Invariant(format!(
                "pos and neg planes overlap in word {i}"
            )));
        }
        Ok(MaskedWeightPlanes { pos, neg })
    }

    pub fn zeros(n_bits: usize) -> Self {
        MaskedWeightPlanes {
            pos: BitPlane::zeros(n_bits),
            neg: BitPlane::zeros(n_bits),
        }
    }

    pub fn from_ternary(values: &[i8]) -> Result<Self> {
        let mut pos = BitPlane::zeros(values.len());
        let mut neg = BitPlane::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            match v {
                1 => pos.set(i, true),
                -1 => neg.set(i, true),
                0 => {}
                other => {
                    return Err(Error::RejectedInput(format!(
                        "value {other} at index {i} is not ternary"
                    )))
                }
            }
        }
        Ok(MaskedWeightPlanes { pos, neg })
    }

    pub fn to_ternary(&self) -> Vec<i8> {
        (0..self.n_bits())
            .map(|i| self.pos.get(i) as i8 - self.neg.get(i) as i8)
            .collect()
    }

    pub fn n_bits(&self) -> usize {
        self.pos.n_bits
    }

    pub fn pos(&self) -> &BitPlane {
        &self.pos
    }

    pub fn neg(&self) -> &BitPlane {
        &self.neg
    }

    pub fn with_pad(&self, extra: usize) -> Self {
        MaskedWeightPlanes {
            pos: self.pos.with_pad(extra),
            neg: self.neg.with_pad(extra),
        }
    }
}
