//! Per-pair similarity tables: for every unordered language pair the 72
//! bidimensional CKA scores (6 kinds × 12 layers) plus the two typological
//! similarities, with enough metadata to regenerate reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::simkernel::CenteringMode;
use crate::typology::LanguagePair;
use crate::weights::{MatrixKind, LAYER_COUNT};

pub const CELLS_PER_PAIR: usize = 6 * LAYER_COUNT;

pub fn cell_index(kind: MatrixKind, layer: usize) -> usize {
    let row = MatrixKind::ALL
        .iter()
        .position(|k| *k == kind)
        .expect("known kind");
    row * LAYER_COUNT + layer
}

/// Scores and typological similarities for one language pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    /// Indexed by [`cell_index`]; NaN marks a not-yet-filled cell and
    /// serializes as JSON null.
    #[serde(with = "nan_as_null")]
    pub scores: Vec<f64>,
    pub sigma_synt: f64,
    pub sigma_morph: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(scores: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
        let opts: Vec<Option<f64>> = scores
            .iter()
            .map(|&s| if s.is_nan() { None } else { Some(s) })
            .collect();
        opts.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<f64>, D::Error> {
        let opts = Vec::<Option<f64>>::deserialize(deserializer)?;
        Ok(opts.into_iter().map(|o| o.unwrap_or(f64::NAN)).collect())
    }
}

impl PairEntry {
    fn new(sigma_synt: f64, sigma_morph: f64) -> Self {
        Self {
            scores: vec![f64::NAN; CELLS_PER_PAIR],
            sigma_synt,
            sigma_morph,
        }
    }
}

/// The full table over a configured pair set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarityTable {
    pub centering: CenteringMode,
    /// Content digest per language checkpoint.
    pub digests: BTreeMap<String, String>,
    entries: BTreeMap<LanguagePair, PairEntry>,
}

impl PairSimilarityTable {
    pub fn new(centering: CenteringMode) -> Self {
        Self {
            centering,
            digests: BTreeMap::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn add_pair(&mut self, pair: LanguagePair, sigma_synt: f64, sigma_morph: f64) {
        self.entries
            .insert(pair, PairEntry::new(sigma_synt, sigma_morph));
    }

    pub fn set_score(&mut self, pair: &LanguagePair, kind: MatrixKind, layer: usize, score: f64) {
        let entry = self
            .entries
            .get_mut(pair)
            .expect("pair was added before scores");
        entry.scores[cell_index(kind, layer)] = score;
    }

    pub fn score(&self, pair: &LanguagePair, kind: MatrixKind, layer: usize) -> Option<f64> {
        let value = self.entries.get(pair)?.scores[cell_index(kind, layer)];
        if value.is_nan() {
            None
        } else {
            Some(value)
        }
    }

    pub fn entry(&self, pair: &LanguagePair) -> Option<&PairEntry> {
        self.entries.get(pair)
    }

    /// Pairs in deterministic (lexicographic) order.
    pub fn pairs(&self) -> impl Iterator<Item = &LanguagePair> {
        self.entries.keys()
    }

    pub fn pair_count(&self) -> usize {
        self.entries.len()
    }

    /// Every configured (pair, kind, layer) cell carries a score.
    pub fn is_complete(&self) -> bool {
        self.entries
            .values()
            .all(|e| e.scores.iter().all(|s| !s.is_nan()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_indexing_covers_the_grid() {
        let mut seen = vec![false; CELLS_PER_PAIR];
        for &kind in MatrixKind::ALL.iter() {
            for layer in 0..LAYER_COUNT {
                seen[cell_index(kind, layer)] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn score_round_trip_and_completeness() {
        let mut table = PairSimilarityTable::new(CenteringMode::Centered);
        let pair = LanguagePair::new("ita", "eng");
        table.add_pair(pair.clone(), 14.0 / 18.0, 7.0 / 12.0);
        assert!(!table.is_complete());
        for &kind in MatrixKind::ALL.iter() {
            for layer in 0..LAYER_COUNT {
                table.set_score(&pair, kind, layer, 0.5);
            }
        }
        assert!(table.is_complete());
        assert_eq!(table.score(&pair, MatrixKind::OA, 5), Some(0.5));
    }

    #[test]
    fn serializes_with_string_pair_keys() {
        let mut table = PairSimilarityTable::new(CenteringMode::Uncentered);
        let pair = LanguagePair::new("spa", "ita");
        table.add_pair(pair.clone(), 1.0, 0.9);
        // unfilled cells serialize as null and come back as misses
        let json = serde_json::to_string(&table).unwrap();
        assert!(json.contains("\"ita-spa\""));
        assert!(json.contains("null"));
        let back: PairSimilarityTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back.score(&pair, MatrixKind::Q, 0), None);

        for &kind in MatrixKind::ALL.iter() {
            for layer in 0..LAYER_COUNT {
                table.set_score(&pair, kind, layer, 0.125 * layer as f64);
            }
        }
        let json = serde_json::to_string(&table).unwrap();
        let back: PairSimilarityTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table);
    }
}
