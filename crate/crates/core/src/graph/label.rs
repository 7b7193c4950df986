use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Named layers of the U-Net. Twelve of them are configurable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerLabel {
    Stem,
    Stem2,
    /// Encoder double convolution, 1..=4.
    DownC(u8),
    /// Decoder transposed convolution, 1..=4.
    UpCT(u8),
    /// Decoder double convolution, 1..=4.
    UpC(u8),
    Head,
}

impl LayerLabel {
    /// The configurable layers in tie-break order; position = PrecisionMap bit.
    pub const CONFIGURABLE: [LayerLabel; 12] = [
        LayerLabel::DownC(1),
        LayerLabel::DownC(2),
        LayerLabel::DownC(3),
        LayerLabel::DownC(4),
        LayerLabel::UpCT(1),
        LayerLabel::UpCT(2),
        LayerLabel::UpCT(3),
        LayerLabel::UpCT(4),
        LayerLabel::UpC(1),
        LayerLabel::UpC(2),
        LayerLabel::UpC(3),
        LayerLabel::UpC(4),
    ];

    /// Bit position in a [`PrecisionMap`], for configurable layers.
    pub fn index(self) -> Option<usize> {
        match self {
            LayerLabel::DownC(i) if (1..=4).contains(&i) => Some(i as usize - 1),
            LayerLabel::UpCT(i) if (1..=4).contains(&i) => Some(3 + i as usize),
            LayerLabel::UpC(i) if (1..=4).contains(&i) => Some(7 + i as usize),
            _ => None,
        }
    }

    pub fn is_configurable(self) -> bool {
        self.index().is_some()
    }
}

impl fmt::Display for LayerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerLabel::Stem => write!(f, "stem"),
            LayerLabel::Stem2 => write!(f, "stem2"),
            LayerLabel::DownC(i) => write!(f, "down-C{i}"),
            LayerLabel::UpCT(i) => write!(f, "up-CT{i}"),
            LayerLabel::UpC(i) => write!(f, "up-C{i}"),
            LayerLabel::Head => write!(f, "head"),
        }
    }
}

impl FromStr for LayerLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::parse("layer label", format!("unknown layer `{s}`"));
        let idx = |rest: &str| -> Result<u8> {
            match rest.parse::<u8>() {
                Ok(i @ 1..=4) => Ok(i),
                _ => Err(bad()),
            }
        };
        match lower.as_str() {
            "stem" => Ok(LayerLabel::Stem),
            "stem2" => Ok(LayerLabel::Stem2),
            "head" => Ok(LayerLabel::Head),
            _ => {
                if let Some(r) = lower.strip_prefix("down-c") {
                    Ok(LayerLabel::DownC(idx(r)?))
                } else if let Some(r) = lower.strip_prefix("up-ct") {
                    Ok(LayerLabel::UpCT(idx(r)?))
                } else if let Some(r) = lower.strip_prefix("up-c") {
                    Ok(LayerLabel::UpC(idx(r)?))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerState {
    Binary,
    Masked,
}

/// Binary/Masked state of the twelve configurable layers; bit set = Masked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrecisionMap(u16);

impl PrecisionMap {
    pub const COUNT: u16 = 1 << 12;

    pub fn all_binary() -> Self {
        PrecisionMap(0)
    }

    pub fn all_masked() -> Self {
        PrecisionMap(Self::COUNT - 1)
    }

    pub fn from_id(id: u16) -> Result<Self> {
        if id >= Self::COUNT {
            return Err(Error::RejectedInput(format!(
                "config id {id} is outside 0..{}",
                Self::COUNT
            )));
        }
        Ok(PrecisionMap(id))
    }

    pub fn id(self) -> u16 {
        self.0
    }

    pub fn from_masked<I: IntoIterator<Item = LayerLabel>>(labels: I) -> Result<Self> {
        let mut map = PrecisionMap::all_binary();
        for l in labels {
            map = map.with(l, LayerState::Masked)?;
        }
        Ok(map)
    }

    pub fn state(self, label: LayerLabel) -> Option<LayerState> {
        label.index().map(|i| {
            if self.0 >> i & 1 == 1 {
                LayerState::Masked
            } else {
                LayerState::Binary
            }
        })
    }

    pub fn is_masked(self, label: LayerLabel) -> bool {
        self.state(label) == Some(LayerState::Masked)
    }

    pub fn with(self, label: LayerLabel, state: LayerState) -> Result<Self> {
        let i = label
            .index()
            .ok_or_else(|| Error::RejectedInput(format!("`{label}` is not configurable")))?;
        Ok(match state {
            LayerState::Masked => PrecisionMap(self.0 | 1 << i),
            LayerState::Binary => PrecisionMap(self.0 & !(1 << i)),
        })
    }

    pub fn masked_count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn masked_labels(self) -> impl Iterator<Item = LayerLabel> {
        LayerLabel::CONFIGURABLE
            .into_iter()
            .filter(move |&l| self.is_masked(l))
    }

    /// True when every masked layer of `self` is masked in `other`.
    pub fn is_subset_of(self, other: PrecisionMap) -> bool {
        self.0 & !other.0 == 0
    }
}

impl fmt::Display for PrecisionMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#05x}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_configurable_labels() {
        let idx: Vec<usize> = LayerLabel::CONFIGURABLE
            .iter()
            .map(|l| l.index().unwrap())
            .collect();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
        assert!(LayerLabel::Stem.index().is_none());
        assert!(LayerLabel::Head.index().is_none());
        assert!(LayerLabel::DownC(5).index().is_none());
    }

    #[test]
    fn id_round_trip_all() {
        for id in 0..PrecisionMap::COUNT {
            let m = PrecisionMap::from_id(id).unwrap();
            let rebuilt = PrecisionMap::from_masked(m.masked_labels()).unwrap();
            assert_eq!(rebuilt.id(), id);
        }
        assert!(PrecisionMap::from_id(4096).is_err());
    }

    #[test]
    fn id_zero_is_all_binary() {
        let m = PrecisionMap::from_id(0).unwrap();
        assert!(LayerLabel::CONFIGURABLE
            .iter()
            .all(|&l| m.state(l) == Some(LayerState::Binary)));
    }

    #[test]
    fn labels_parse_and_print() {
        for l in LayerLabel::CONFIGURABLE.into_iter().chain([
            LayerLabel::Stem,
            LayerLabel::Stem2,
            LayerLabel::Head,
        ]) {
            assert_eq!(l.to_string().parse::<LayerLabel>().unwrap(), l);
        }
        assert_eq!("Up-CT4".parse::<LayerLabel>().unwrap(), LayerLabel::UpCT(4));
        assert!("up-C5".parse::<LayerLabel>().is_err());
        assert!("mid".parse::<LayerLabel>().is_err());
    }
}
