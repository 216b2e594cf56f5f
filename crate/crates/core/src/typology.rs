//! WALS-style typological feature tables and one-hot language vectors.
//!
//! Languages are loaded from delimited text tables (one per feature area),
//! encoded as boolean vectors over the observed (feature, value) dimensions,
//! and compared with cosine similarity. Because every language assigns
//! exactly one value per feature, the cosine reduces to
//! `shared feature-value pairs / feature count`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feature area a table belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureArea {
    Morphological,
    Syntactic,
}

impl std::fmt::Display for FeatureArea {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureArea::Morphological => write!(f, "morphological"),
            FeatureArea::Syntactic => write!(f, "syntactic"),
        }
    }
}

impl std::str::FromStr for FeatureArea {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "morphological" | "morph" => Ok(FeatureArea::Morphological),
            "syntactic" | "synt" => Ok(FeatureArea::Syntactic),
            other => Err(format!("unknown feature area {other:?}")),
        }
    }
}

/// A typological feature, identified by its WALS-style code (e.g. `81A`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureId {
    pub code: String,
    pub area: FeatureArea,
    /// Descriptive name when the code is one of the bundled features;
    /// empty for codes outside the bundled tables.
    pub name: String,
}

/// One value of a feature, e.g. `2 SVO`: the numeric index is the identity,
/// the label is kept verbatim as metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub value_index: u32,
    pub label: String,
}

/// A language's feature→value assignments for one feature area.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProfile {
    /// Three-letter language tag (`ita`, `eng`, ...).
    pub code: String,
    pub area: FeatureArea,
    /// Keyed by feature code; exactly one value per feature.
    pub assignments: BTreeMap<String, FeatureValue>,
}

/// The vector space spanned by the (feature, value) pairs observed in a
/// profile set. Dimension order is deterministic: sorted by feature code,
/// then value index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypologicalSpace {
    pub area: FeatureArea,
    features: Vec<FeatureId>,
    dims: Vec<(String, u32)>,
    fingerprint: u64,
}

/// A language's one-hot boolean vector, aligned to a [`TypologicalSpace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypologicalVector {
    pub language: String,
    bits: Vec<bool>,
    space_fingerprint: u64,
}

/// An unordered language pair, stored with the lexicographically smaller
/// code first so `ita-eng` and `eng-ita` are the same key. Serializes as
/// the `"eng-ita"` string form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LanguagePair(String, String);

impl Serialize for LanguagePair {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LanguagePair {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| serde::de::Error::custom(format!("bad language pair {s:?}")))?;
        Ok(LanguagePair::new(a, b))
    }
}

impl LanguagePair {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            Self(a.to_string(), b.to_string())
        } else {
            Self(b.to_string(), a.to_string())
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }
}

impl std::fmt::Display for LanguagePair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Debug, Error)]
pub enum TypologyError {
    #[error("language {language} is missing a value for feature {feature}")]
    MissingFeature { language: String, feature: String },
    #[error("malformed value cell {cell:?} for language {language}, feature {feature}")]
    MalformedValue {
        language: String,
        feature: String,
        cell: String,
    },
    #[error("profiles or vectors do not share one typological space: {0}")]
    SpaceMismatch(String),
    #[error("assignment ({feature}, {value}) of language {language} is outside the space")]
    UnknownDimension {
        language: String,
        feature: String,
        value: u32,
    },
    #[error("pair ranking needs at least 2 languages, got {0}")]
    InsufficientLanguages(usize),
    #[error("duplicate language row {0}")]
    DuplicateLanguage(String),
    #[error("table has no header row")]
    EmptyTable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Descriptive names for the bundled features, by code.
const FEATURE_NAMES: &[(&str, &str)] = &[
    ("20A", "Fusion of Selected Inflectional Formatives"),
    ("21A", "Exponence of Selected Inflectional Formatives"),
    ("21B", "Exponence of Tense-Aspect-Mood Inflection"),
    ("22A", "Inflectional Synthesis of the Verb"),
    ("23A", "Locus of Marking in the Clause"),
    ("24A", "Locus of Marking in Possessive Noun Phrases"),
    ("25A", "Locus of Marking: Whole-language Typology"),
    ("25B", "Zero Marking of A and P Arguments"),
    ("26A", "Prefixing vs. Suffixing in Inflectional Morphology"),
    ("27A", "Reduplication"),
    ("28A", "Case Syncretism"),
    ("29A", "Syncretism in Verbal Person/Number Marking"),
    ("81A", "Order of Subject, Object and Verb"),
    ("82A", "Order of Subject and Verb"),
    ("83A", "Order of Object and Verb"),
    ("84A", "Order of Object, Oblique, and Verb"),
    ("85A", "Order of Adposition and Noun Phrase"),
    ("86A", "Order of Genitive and Noun"),
    ("87A", "Order of Adjective and Noun"),
    ("88A", "Order of Demonstrative and Noun"),
    ("92A", "Position of Polar Question Particles"),
    (
        "93A",
        "Position of Interrogative Phrases in Content Questions",
    ),
    ("94A", "Order of Adverbial Subordinator and Clause"),
    (
        "95A",
        "Relationship between the Order of Object and Verb and the Order of Adposition and Noun Phrase",
    ),
    (
        "96A",
        "Relationship between the Order of Object and Verb and the Order of Relative Clause and Noun",
    ),
    (
        "97A",
        "Relationship between the Order of Object and Verb and the Order of Adjective and Noun",
    ),
    ("143A", "Order of Negative Morpheme and Verb"),
    ("143E", "Preverbal Negative Morphemes"),
    ("143F", "Postverbal Negative Morphemes"),
    (
        "144A",
        "Position of Negative Word With Respect to Subject, Object, and Verb",
    ),
];

pub fn feature_name(code: &str) -> &'static str {
    FEATURE_NAMES
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, n)| *n)
        .unwrap_or("")
}

/// Parses a delimited feature table into language profiles.
///
/// The first column must be `wals_code`; every other column is a feature
/// code. Cells are `"<index> <label>"`; the leading integer is the value
/// identity, the rest of the cell is kept verbatim as the label. Tab and
/// pipe separators are both accepted.
pub fn load_profiles<R: BufRead>(
    source: R,
    area: FeatureArea,
) -> Result<Vec<LanguageProfile>, TypologyError> {
    let mut lines = source.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Ok(Vec::new()),
        }
    };
    let sep = if header.contains('\t') { '\t' } else { '|' };
    let columns: Vec<String> = header
        .trim_end_matches('\r')
        .split(sep)
        .map(|c| c.trim().to_string())
        .collect();
    if columns.is_empty() || columns[0] != "wals_code" {
        return Err(TypologyError::EmptyTable);
    }
    let features = &columns[1..];

    let mut profiles = Vec::new();
    let mut seen = BTreeSet::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end_matches('\r').split(sep).collect();
        let language = cells[0].trim().to_string();
        if !seen.insert(language.clone()) {
            return Err(TypologyError::DuplicateLanguage(language));
        }
        let mut assignments = BTreeMap::new();
        for (idx, feature) in features.iter().enumerate() {
            let cell = cells.get(idx + 1).map(|c| c.trim()).unwrap_or("");
            if cell.is_empty() {
                return Err(TypologyError::MissingFeature {
                    language,
                    feature: feature.clone(),
                });
            }
            let (index_str, label) = match cell.split_once(char::is_whitespace) {
                Some((i, l)) => (i, l.trim().to_string()),
                None => (cell, String::new()),
            };
            let value_index: u32 =
                index_str
                    .parse()
                    .map_err(|_| TypologyError::MalformedValue {
                        language: language.clone(),
                        feature: feature.clone(),
                        cell: cell.to_string(),
                    })?;
            assignments.insert(
                feature.clone(),
                FeatureValue {
                    value_index,
                    label,
                },
            );
        }
        profiles.push(LanguageProfile {
            code: language,
            area,
            assignments,
        });
    }
    Ok(profiles)
}

/// Loads profiles from a file path.
pub fn load_profiles_from_path(
    path: &std::path::Path,
    area: FeatureArea,
) -> Result<Vec<LanguageProfile>, TypologyError> {
    let file = std::fs::File::open(path)?;
    load_profiles(std::io::BufReader::new(file), area)
}

/// Builds the typological space spanned by a profile set.
///
/// All profiles must cover the same feature set; the dimensions are the
/// sorted set of observed (feature code, value index) pairs.
pub fn build_space(
    profiles: &[LanguageProfile],
    area: FeatureArea,
) -> Result<TypologicalSpace, TypologyError> {
    let mut dims = BTreeSet::new();
    let mut feature_set: Option<BTreeSet<String>> = None;
    for profile in profiles {
        let codes: BTreeSet<String> = profile.assignments.keys().cloned().collect();
        match &feature_set {
            None => feature_set = Some(codes),
            Some(expected) if *expected != codes => {
                return Err(TypologyError::SpaceMismatch(format!(
                    "language {} covers a different feature set",
                    profile.code
                )));
            }
            _ => {}
        }
        for (code, value) in &profile.assignments {
            dims.insert((code.clone(), value.value_index));
        }
    }
    let dims: Vec<(String, u32)> = dims.into_iter().collect();
    let features = feature_set
        .unwrap_or_default()
        .into_iter()
        .map(|code| FeatureId {
            name: feature_name(&code).to_string(),
            code,
            area,
        })
        .collect();
    let fingerprint = fingerprint_dims(&dims);
    Ok(TypologicalSpace {
        area,
        features,
        dims,
        fingerprint,
    })
}

fn fingerprint_dims(dims: &[(String, u32)]) -> u64 {
    // FNV-1a over the dimension list; stable across runs and platforms.
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for (code, value) in dims {
        eat(code.as_bytes());
        eat(&value.to_le_bytes());
        eat(&[0xff]);
    }
    h
}

impl TypologicalSpace {
    pub fn dims(&self) -> &[(String, u32)] {
        &self.dims
    }

    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }
}

/// Encodes a profile as a one-hot boolean vector over the space dimensions.
pub fn encode(
    profile: &LanguageProfile,
    space: &TypologicalSpace,
) -> Result<TypologicalVector, TypologyError> {
    let mut bits = vec![false; space.dims.len()];
    for (code, value) in &profile.assignments {
        let dim = (code.clone(), value.value_index);
        match space.dims.binary_search(&dim) {
            Ok(pos) => bits[pos] = true,
            Err(_) => {
                return Err(TypologyError::UnknownDimension {
                    language: profile.code.clone(),
                    feature: code.clone(),
                    value: value.value_index,
                })
            }
        }
    }
    Ok(TypologicalVector {
        language: profile.code.clone(),
        bits,
        space_fingerprint: space.fingerprint,
    })
}

impl TypologicalVector {
    pub fn set_bit_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Recovers the (feature code, value index) assignments from the set
    /// positions.
    pub fn decode(&self, space: &TypologicalSpace) -> Result<Vec<(String, u32)>, TypologyError> {
        if self.space_fingerprint != space.fingerprint {
            return Err(TypologyError::SpaceMismatch(
                "vector was encoded against a different space".into(),
            ));
        }
        Ok(self
            .bits
            .iter()
            .zip(&space.dims)
            .filter(|(&b, _)| b)
            .map(|(_, dim)| dim.clone())
            .collect())
    }
}

/// Cosine similarity between two one-hot language vectors.
///
/// With one value per feature this equals
/// `shared feature-value pairs / feature count` and lies in [0, 1].
pub fn similarity(
    v1: &TypologicalVector,
    v2: &TypologicalVector,
) -> Result<f64, TypologyError> {
    if v1.space_fingerprint != v2.space_fingerprint || v1.bits.len() != v2.bits.len() {
        return Err(TypologyError::SpaceMismatch(format!(
            "{} and {} are encoded against different spaces",
            v1.language, v2.language
        )));
    }
    let shared = v1
        .bits
        .iter()
        .zip(&v2.bits)
        .filter(|(&a, &b)| a && b)
        .count();
    let n1 = v1.set_bit_count();
    let n2 = v2.set_bit_count();
    if n1 == 0 || n2 == 0 {
        return Err(TypologyError::SpaceMismatch(
            "cannot compare empty vectors".into(),
        ));
    }
    Ok(shared as f64 / ((n1 as f64) * (n2 as f64)).sqrt())
}

/// All unordered language pairs ranked by similarity, descending.
///
/// Ties are broken by the lexicographic pair name so the ordering is a
/// permutation-stable total order.
pub fn pair_ranking(
    profiles: &[LanguageProfile],
    space: &TypologicalSpace,
) -> Result<Vec<(LanguagePair, f64)>, TypologyError> {
    if profiles.len() < 2 {
        return Err(TypologyError::InsufficientLanguages(profiles.len()));
    }
    let mut sorted: Vec<&LanguageProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.code.cmp(&b.code));
    let vectors: Vec<TypologicalVector> = sorted
        .iter()
        .map(|p| encode(p, space))
        .collect::<Result<_, _>>()?;
    let mut ranked = Vec::new();
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            let sigma = similarity(&vectors[i], &vectors[j])?;
            ranked.push((
                LanguagePair::new(&vectors[i].language, &vectors[j].language),
                sigma,
            ));
        }
    }
    ranked.sort_by(|(pa, sa), (pb, sb)| {
        sb.partial_cmp(sa)
            .expect("similarities are finite")
            .then_with(|| pa.cmp(pb))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn table(rows: &[&str]) -> String {
        rows.join("\n")
    }

    #[test]
    fn parses_rows_and_preserves_labels() {
        let src = table(&[
            "wals_code\t20A\t27A",
            "ita\t1 Exclusively concatenative\t3 No productive reduplication",
            "tur\t1 Exclusively concatenative\t1 Productive full and partial reduplication",
        ]);
        let profiles =
            load_profiles(Cursor::new(src), FeatureArea::Morphological).unwrap();
        assert_eq!(profiles.len(), 2);
        let ita = &profiles[0];
        assert_eq!(ita.code, "ita");
        assert_eq!(ita.assignments["20A"].value_index, 1);
        assert_eq!(ita.assignments["20A"].label, "Exclusively concatenative");
        assert_eq!(ita.assignments["27A"].value_index, 3);
    }

    #[test]
    fn empty_table_gives_empty_list() {
        let profiles =
            load_profiles(Cursor::new(""), FeatureArea::Syntactic).unwrap();
        assert!(profiles.is_empty());
    }

    #[test]
    fn pipe_separator_and_multi_digit_indices() {
        let src = table(&["wals_code|81A|144A", "ger|7 No dominant order|16 More than one position"]);
        let profiles = load_profiles(Cursor::new(src), FeatureArea::Syntactic).unwrap();
        assert_eq!(profiles[0].assignments["81A"].value_index, 7);
        assert_eq!(profiles[0].assignments["144A"].value_index, 16);
    }

    #[test]
    fn missing_cell_is_an_error() {
        let src = table(&["wals_code\t81A\t82A", "ita\t2 SVO\t"]);
        let err = load_profiles(Cursor::new(src), FeatureArea::Syntactic).unwrap_err();
        assert!(matches!(
            err,
            TypologyError::MissingFeature { ref feature, .. } if feature == "82A"
        ));
    }

    #[test]
    fn malformed_cell_is_an_error() {
        let src = table(&["wals_code\t81A", "ita\t? unknown"]);
        let err = load_profiles(Cursor::new(src), FeatureArea::Syntactic).unwrap_err();
        assert!(matches!(err, TypologyError::MalformedValue { .. }));
    }

    fn profile(code: &str, pairs: &[(&str, u32)]) -> LanguageProfile {
        LanguageProfile {
            code: code.into(),
            area: FeatureArea::Syntactic,
            assignments: pairs
                .iter()
                .map(|(f, v)| {
                    (
                        f.to_string(),
                        FeatureValue {
                            value_index: *v,
                            label: String::new(),
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn space_dims_count_single_language() {
        let p = profile("ita", &[("81A", 2), ("82A", 3), ("83A", 2)]);
        let space = build_space(std::slice::from_ref(&p), FeatureArea::Syntactic).unwrap();
        assert_eq!(space.dims().len(), 3);
    }

    #[test]
    fn one_extra_dim_per_disagreeing_feature() {
        let a = profile("aaa", &[("81A", 1), ("82A", 1)]);
        let b = profile("bbb", &[("81A", 1), ("82A", 2)]);
        let space = build_space(&[a, b], FeatureArea::Syntactic).unwrap();
        assert_eq!(space.dims().len(), 3);
    }

    #[test]
    fn inconsistent_feature_sets_rejected() {
        let a = profile("aaa", &[("81A", 1)]);
        let b = profile("bbb", &[("82A", 2)]);
        let err = build_space(&[a, b], FeatureArea::Syntactic).unwrap_err();
        assert!(matches!(err, TypologyError::SpaceMismatch(_)));
    }

    #[test]
    fn encode_decode_round_trip() {
        let a = profile("aaa", &[("81A", 1), ("82A", 1), ("97A", 4)]);
        let b = profile("bbb", &[("81A", 2), ("82A", 1), ("97A", 3)]);
        let space = build_space(&[a.clone(), b], FeatureArea::Syntactic).unwrap();
        let v = encode(&a, &space).unwrap();
        assert_eq!(v.set_bit_count(), 3);
        let decoded = v.decode(&space).unwrap();
        assert_eq!(
            decoded,
            vec![("81A".into(), 1), ("82A".into(), 1), ("97A".into(), 4)]
        );
    }

    #[test]
    fn encoding_against_foreign_space_fails() {
        let a = profile("aaa", &[("81A", 1)]);
        let b = profile("bbb", &[("81A", 3)]);
        let space = build_space(std::slice::from_ref(&a), FeatureArea::Syntactic).unwrap();
        let err = encode(&b, &space).unwrap_err();
        assert!(matches!(err, TypologyError::UnknownDimension { .. }));
    }

    #[test]
    fn similarity_counts_shared_pairs() {
        let a = profile("aaa", &[("81A", 1), ("82A", 1), ("83A", 2), ("84A", 5)]);
        let b = profile("bbb", &[("81A", 1), ("82A", 2), ("83A", 2), ("84A", 6)]);
        let space = build_space(&[a.clone(), b.clone()], FeatureArea::Syntactic).unwrap();
        let va = encode(&a, &space).unwrap();
        let vb = encode(&b, &space).unwrap();
        assert_eq!(similarity(&va, &vb).unwrap(), 0.5);
        assert_eq!(similarity(&va, &va).unwrap(), 1.0);
        assert_eq!(
            similarity(&va, &vb).unwrap(),
            similarity(&vb, &va).unwrap()
        );
    }

    #[test]
    fn ranking_orders_by_sigma_then_name() {
        let a = profile("aaa", &[("81A", 1), ("82A", 1)]);
        let b = profile("bbb", &[("81A", 1), ("82A", 1)]);
        let c = profile("ccc", &[("81A", 2), ("82A", 1)]);
        let space =
            build_space(&[a.clone(), b.clone(), c.clone()], FeatureArea::Syntactic).unwrap();
        let ranked = pair_ranking(&[a, b, c], &space).unwrap();
        assert_eq!(ranked.len(), 3);
        assert_eq!(ranked[0].0, LanguagePair::new("aaa", "bbb"));
        assert_eq!(ranked[0].1, 1.0);
        // aaa-ccc and bbb-ccc tie at 0.5; lexicographic pair order breaks it
        assert_eq!(ranked[1].0, LanguagePair::new("aaa", "ccc"));
        assert_eq!(ranked[2].0, LanguagePair::new("bbb", "ccc"));
    }

    #[test]
    fn ranking_is_input_order_invariant() {
        let a = profile("aaa", &[("81A", 1), ("82A", 1)]);
        let b = profile("bbb", &[("81A", 2), ("82A", 1)]);
        let c = profile("ccc", &[("81A", 2), ("82A", 2)]);
        let space =
            build_space(&[a.clone(), b.clone(), c.clone()], FeatureArea::Syntactic).unwrap();
        let r1 = pair_ranking(&[a.clone(), b.clone(), c.clone()], &space).unwrap();
        let r2 = pair_ranking(&[c, a, b], &space).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn ranking_needs_two_languages() {
        let a = profile("aaa", &[("81A", 1)]);
        let space = build_space(std::slice::from_ref(&a), FeatureArea::Syntactic).unwrap();
        let err = pair_ranking(std::slice::from_ref(&a), &space).unwrap_err();
        assert!(matches!(err, TypologyError::InsufficientLanguages(1)));
    }
}
