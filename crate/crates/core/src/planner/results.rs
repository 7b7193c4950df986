use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{LayerLabel, LayerState, PrecisionMap};

/// Externally measured Dice score per configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    scores: BTreeMap<u16, f64>,
}

impl ResultsTable {
    pub fn insert(&mut self, id: PrecisionMap, dice: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&dice) {
            return Err(Error::RejectedInput(format!("dice {dice} outside [0, 1]")));
        }
        if self.scores.insert(id.id(), dice).is_some() {
            return Err(Error::RejectedInput(format!(
                "duplicate config id {}",
                id.id()
            )));
        }
        Ok(())
    }

    pub fn get(&self, id: PrecisionMap) -> Option<f64> {
        self.scores.get(&id.id()).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Parses `config_id,dice` CSV; errors name the line.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut table = ResultsTable::default();
        let mut header = false;
        for (i, line) in text.lines().enumerate() {
            let loc = || format!("line {}", i + 1);
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !header {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != ["config_id", "dice"] {
                    return Err(Error::parse(loc(), "expected header `config_id,dice`"));
                }
                header = true;
                continue;
            }
            let (id, dice) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(loc(), "expected two comma-separated fields"))?;
            let id: u16 = id
                .trim()
                .parse()
                .map_err(|_| Error::parse(loc(), format!("`{}` is not a config id", id.trim())))?;
            let dice: f64 = dice
                .trim()
                .parse()
                .map_err(|_| Error::parse(loc(), format!("`{}` is not a number", dice.trim())))?;
            let map = PrecisionMap::from_id(id).map_err(|e| Error::parse(loc(), e.to_string()))?;
            table
                .insert(map, dice)
                .map_err(|e| Error::parse(loc(), e.to_string()))?;
        }
        if !header {
            return Err(Error::parse("line 1", "missing header `config_id,dice`"));
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config_id,dice\n");
        for (id, d) in &self.scores {
            s += &format!("{id},{d}\n");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    pub label: LayerLabel,
    /// `None` when no complete pair exists.
    pub mean_gain: Option<f64>,
    pub pairs: usize,
    /// Candidate pairs with at least one configuration missing from the table.
    pub skipped: usize,
}

/// Mean Dice change from masking each layer, over configurations `S` where
/// the layer is binary and `S` plus that layer has fewer than `max_masked`
/// masked layers.
pub fn marginal_contribution(results: &ResultsTable, max_masked: u32) -> Vec<Contribution> {
    LayerLabel::CONFIGURABLE
        .iter()
        .map(|&label| {
            let mut sum = 0.0;
            let mut pairs = 0;
            let mut skipped = 0;
            for id in 0..PrecisionMap::COUNT {
                let s = PrecisionMap::from_id(id).expect("id in range");
                if s.is_masked(label) {
                    continue;
                }
                let t = s.with(label, LayerState::Masked).expect("configurable");
                if t.masked_count() >= max_masked {
                    continue;
                }
                match (results.get(s), results.get(t)) {
                    (Some(a), Some(b)) => {
                        sum += b - a;
                        pairs += 1;
                    }
                    _ => skipped += 1,
                }
            }
            Contribution {
                label,
                mean_gain: (pairs > 0).then(|| sum / pairs as f64),
                pairs,
                skipped,
            }
        })
        .collect()
}
