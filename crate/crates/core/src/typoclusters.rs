//! Clustering of languages in typological space and Gini-impurity feature
//! analysis between clusters.
//!
//! K-means runs on the one-hot vectors under Euclidean distance with many
//! seeded restarts; each restart seeds greedily by D²-weighted sampling
//! (candidates drawn proportionally to squared distance from the chosen
//! centers, keeping the candidate that most lowers the total potential).
//! The best-inertia run wins, ties going to the lowest restart index, so
//! the result is a pure function of (seed, restarts).

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::typology::{FeatureArea, FeatureId, LanguagePair, LanguageProfile, TypologicalVector};

/// Default restart count; comfortably exhaustive for rosters of ~13
/// languages.
pub const DEFAULT_RESTARTS: usize = 512;
/// Default seed for the restart RNG.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {n} languages")]
    BadClusterCount { k: usize, n: usize },
    #[error("gini impurity of an empty set is undefined")]
    EmptySet,
    #[error("clusters overlap on {0:?}")]
    ClustersOverlap(Vec<String>),
    #[error("language {0} has no profile")]
    MissingProfile(String),
    #[error("language {0} has no value for feature {1}")]
    MissingFeature(String, String),
}

/// A partition of the languages into k clusters.
///
/// Clusters are canonically ordered by descending size, then by their
/// lexicographically smallest member, so memberships are independent of
/// input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub space: FeatureArea,
    pub k: usize,
    pub members: Vec<BTreeSet<String>>,
    pub inertia: f64,
}

impl Clustering {
    pub fn cluster_of(&self, language: &str) -> Option<usize> {
        self.members
            .iter()
            .position(|c| c.contains(language))
    }
}

/// K-means over one-hot typological vectors.
pub fn kmeans(
    vectors: &[TypologicalVector],
    space: FeatureArea,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Clustering, ClusterError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(ClusterError::BadClusterCount { k, n });
    }
    // canonical input order: sort by language code
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vectors[a].language.cmp(&vectors[b].language));
    let points: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            vectors[i]
                .bits()
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let labels: Vec<&str> = order.iter().map(|&i| vectors[i].language.as_str()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let centers = greedy_d2_seeding(&points, k, &mut rng);
        let (assign, inertia) = lloyd(&points, centers, k);
        let better = match &best {
            None => true,
            Some((best_inertia, _)) => inertia < best_inertia - 1e-12,
        };
        if better {
            best = Some((inertia, assign));
        }
    }
    let (inertia, assign) = best.expect("at least one restart");

    let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (idx, &cluster) in assign.iter().enumerate() {
        groups
            .entry(cluster)
            .or_default()
            .insert(labels[idx].to_string());
    }
    let mut members: Vec<BTreeSet<String>> = groups.into_values().collect();
    members.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| a.iter().next().cmp(&b.iter().next()))
    });
    Ok(Clustering {
        space,
        k,
        members,
        inertia,
    })
}

/// D²-weighted greedy seeding: the first center is drawn uniformly; each
/// further center is the best of a few D²-sampled candidates, judged by the
/// potential (sum of squared distances to the nearest chosen center).
fn greedy_d2_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let candidates = 2 + (k as f64).ln().ceil() as usize;
    let first = rng.gen_range(0..n);
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &points[first])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best_candidate = 0;
        let mut best_potential = f64::INFINITY;
        for _ in 0..candidates {
            let idx = if total > 0.0 {
                let mut target = rng.gen_range(0.0..total);
                let mut chosen = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if target < w {
                        chosen = i;
                        break;
                    }
                    target -= w;
                }
                chosen
            } else {
                rng.gen_range(0..n)
            };
            let potential: f64 = points
                .iter()
                .zip(&d2)
                .map(|(p, &old)| old.min(dist_sq(p, &points[idx])))
                .sum();
            if potential < best_potential {
                best_potential = potential;
                best_candidate = idx;
            }
        }
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist_sq(p, &points[best_candidate]));
        }
        centers.push(points[best_candidate].clone());
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, k: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let mut assign = vec![0usize; n];
    for _ in 0..300 {
        // assignment step; ties go to the lowest cluster index
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = dist_sq(p, &centers[0]);
            for (j, c) in centers.iter().enumerate().skip(1) {
                let d = dist_sq(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assign[i] = best;
        }
        // empty clusters steal the point farthest from its own center
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assign {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let farthest = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .max_by(|&a, &b| {
                    let da = dist_sq(&points[a], &centers[assign[a]]);
                    let db = dist_sq(&points[b], &centers[assign[b]]);
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .expect("some cluster has more than one point");
            assign[farthest] = empty;
        }
        // update step
        let mut next = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (acc, &x) in next[a].iter_mut().zip(p) {
                *acc += x;
            }
        }
        for (center, &count) in next.iter_mut().zip(&counts) {
            for x in center.iter_mut() {
                *x /= count as f64;
            }
        }
        if next == centers {
            break;
        }
        centers = next;
    }
    let inertia = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| dist_sq(p, &centers[a]))
        .sum();
    (assign, inertia)
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Gini impurity `1 − Σ_v p_v²` of a multiset of value indices.
pub fn gini(values: &[u32]) -> Result<f64, ClusterError> {
    if values.is_empty() {
        return Err(ClusterError::EmptySet);
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    let total = values.len() as f64;
    let sum_sq: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            p * p
        })
        .sum();
    Ok(1.0 - sum_sq)
}

/// Impurity of one feature inside two clusters and their union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImpurityTriple {
    pub feature: FeatureId,
    pub gini_c1: f64,
    pub gini_c2: f64,
    pub gini_union: f64,
    /// Value sets of the two clusters are entirely disjoint.
    pub polarizing: bool,
    /// Not polarizing, but removing a single language would make the value
    /// sets disjoint. Reported as metadata only.
    pub nearly_polarizing: bool,
}

impl FeatureImpurityTriple {
    /// Ranking key: how much purer each cluster is than the union.
    pub fn separation(&self) -> f64 {
        self.gini_union - self.gini_c1.max(self.gini_c2)
    }
}

fn feature_values(
    cluster: &BTreeSet<String>,
    profiles: &BTreeMap<String, &LanguageProfile>,
    feature: &str,
) -> Result<Vec<u32>, ClusterError> {
    cluster
        .iter()
        .map(|lang| {
            let profile = profiles
                .get(lang.as_str())
                .ok_or_else(|| ClusterError::MissingProfile(lang.clone()))?;
            profile
                .assignments
                .get(feature)
                .map(|v| v.value_index)
                .ok_or_else(|| ClusterError::MissingFeature(lang.clone(), feature.to_string()))
        })
        .collect()
}

/// Features that distinguish two disjoint clusters: both per-cluster
/// impurities strictly below the union impurity, ranked by how far below.
pub fn distinctive_features(
    c1: &BTreeSet<String>,
    c2: &BTreeSet<String>,
    profiles: &[LanguageProfile],
) -> Result<Vec<FeatureImpurityTriple>, ClusterError> {
    let overlap: Vec<String> = c1.intersection(c2).cloned().collect();
    if !overlap.is_empty() {
        return Err(ClusterError::ClustersOverlap(overlap));
    }
    if c1.is_empty() || c2.is_empty() {
        return Err(ClusterError::EmptySet);
    }
    let by_code: BTreeMap<String, &LanguageProfile> = profiles
        .iter()
        .map(|p| (p.code.clone(), p))
        .collect();
    let some_profile = by_code
        .values()
        .next()
        .ok_or(ClusterError::EmptySet)?;
    let area = some_profile.area;
    let feature_codes: Vec<String> = some_profile.assignments.keys().cloned().collect();

    let mut triples = Vec::new();
    for code in feature_codes {
        let v1 = feature_values(c1, &by_code, &code)?;
        let v2 = feature_values(c2, &by_code, &code)?;
        let mut union = v1.clone();
        union.extend_from_slice(&v2);
        let gini_c1 = gini(&v1)?;
        let gini_c2 = gini(&v2)?;
        let gini_union = gini(&union)?;
        if gini_c1 < gini_union && gini_c2 < gini_union {
            let set1: BTreeSet<u32> = v1.iter().copied().collect();
            let set2: BTreeSet<u32> = v2.iter().copied().collect();
            let polarizing = set1.is_disjoint(&set2);
            let nearly_polarizing = !polarizing && removable_overlap(&v1, &v2);
            triples.push(FeatureImpurityTriple {
                feature: FeatureId {
                    name: crate::typology::feature_name(&code).to_string(),
                    code,
                    area,
                },
                gini_c1,
                gini_c2,
                gini_union,
                polarizing,
                nearly_polarizing,
            });
        }
    }
    triples.sort_by(|a, b| {
        b.separation()
            .partial_cmp(&a.separation())
            .expect("finite impurities")
            .then_with(|| a.feature.code.cmp(&b.feature.code))
    });
    Ok(triples)
}

/// True when dropping one language from either cluster disjoins the value
/// sets: exactly one language's value occurs on the other side.
fn removable_overlap(v1: &[u32], v2: &[u32]) -> bool {
    let set1: BTreeSet<u32> = v1.iter().copied().collect();
    let set2: BTreeSet<u32> = v2.iter().copied().collect();
    let offenders1 = v1.iter().filter(|v| set2.contains(v)).count();
    let offenders2 = v2.iter().filter(|v| set1.contains(v)).count();
    offenders1.min(offenders2) == 1 && {
        // the single offender must account for the whole overlap
        let shared: BTreeSet<u32> = set1.intersection(&set2).copied().collect();
        shared.len() == 1
    }
}

/// The distinctive features whose value sets are entirely disjoint between
/// the clusters.
pub fn polarizing_features(
    c1: &BTreeSet<String>,
    c2: &BTreeSet<String>,
    profiles: &[LanguageProfile],
) -> Result<Vec<FeatureImpurityTriple>, ClusterError> {
    Ok(distinctive_features(c1, c2, profiles)?
        .into_iter()
        .filter(|t| t.polarizing)
        .collect())
}

/// All cross pairs between two disjoint clusters, in deterministic order.
pub fn extra_cluster_pairs(
    c1: &BTreeSet<String>,
    c2: &BTreeSet<String>,
) -> Result<Vec<LanguagePair>, ClusterError> {
    let overlap: Vec<String> = c1.intersection(c2).cloned().collect();
    if !overlap.is_empty() {
        return Err(ClusterError::ClustersOverlap(overlap));
    }
    let mut pairs: Vec<LanguagePair> = c1
        .iter()
        .flat_map(|a| c2.iter().map(move |b| LanguagePair::new(a, b)))
        .collect();
    pairs.sort();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typology::{build_space, encode, FeatureValue};

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

    fn lang_set(codes: &[&str]) -> BTreeSet<String> {
        codes.iter().map(|c| c.to_string()).collect()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[3, 3, 3]).unwrap(), 0.0);
        assert_eq!(gini(&[1, 1, 2, 2]).unwrap(), 0.5);
        assert_eq!(gini(&[1, 1, 1, 2]).unwrap(), 0.375);
        assert!(matches!(gini(&[]).unwrap_err(), ClusterError::EmptySet));
    }

    #[test]
    fn gini_bound_for_m_values() {
        // m distinct values, uniform: 1 - 1/m is the maximum
        let g = gini(&[1, 2, 3, 4]).unwrap();
        assert!((g - 0.75).abs() < 1e-15);
        assert!(gini(&[1, 2, 3, 4, 1]).unwrap() < 0.75 + 1e-15);
    }

    #[test]
    fn kmeans_singletons_at_k_equals_n() {
        let profiles: Vec<LanguageProfile> = (0..4)
            .map(|i| profile(&format!("l{i:02}"), &[("81A", i + 1), ("82A", 1)]))
            .collect();
        let space = build_space(&profiles, FeatureArea::Syntactic).unwrap();
        let vectors: Vec<_> = profiles.iter().map(|p| encode(p, &space).unwrap()).collect();
        let clustering = kmeans(&vectors, FeatureArea::Syntactic, 4, 16, 1).unwrap();
        assert_eq!(clustering.members.len(), 4);
        assert!(clustering.members.iter().all(|c| c.len() == 1));
        assert_eq!(clustering.inertia, 0.0);
    }

    #[test]
    fn kmeans_recovers_two_obvious_groups_and_ignores_input_order() {
        let mut profiles = vec![
            profile("aaa", &[("81A", 1), ("82A", 1), ("83A", 1)]),
            profile("bbb", &[("81A", 1), ("82A", 1), ("83A", 2)]),
            profile("ccc", &[("81A", 5), ("82A", 6), ("83A", 7)]),
            profile("ddd", &[("81A", 5), ("82A", 6), ("83A", 8)]),
        ];
        let space = build_space(&profiles, FeatureArea::Syntactic).unwrap();
        let vectors: Vec<_> = profiles.iter().map(|p| encode(p, &space).unwrap()).collect();
        let first = kmeans(&vectors, FeatureArea::Syntactic, 2, 32, 5).unwrap();
        profiles.reverse();
        let vectors: Vec<_> = profiles.iter().map(|p| encode(p, &space).unwrap()).collect();
        let second = kmeans(&vectors, FeatureArea::Syntactic, 2, 32, 5).unwrap();
        assert_eq!(first.members, second.members);
        assert_eq!(first.members[0], lang_set(&["aaa", "bbb"]));
        assert_eq!(first.members[1], lang_set(&["ccc", "ddd"]));
    }

    #[test]
    fn kmeans_rejects_k_above_n() {
        let profiles = vec![profile("aaa", &[("81A", 1)])];
        let space = build_space(&profiles, FeatureArea::Syntactic).unwrap();
        let vectors: Vec<_> = profiles.iter().map(|p| encode(p, &space).unwrap()).collect();
        assert!(matches!(
            kmeans(&vectors, FeatureArea::Syntactic, 2, 4, 0).unwrap_err(),
            ClusterError::BadClusterCount { .. }
        ));
    }

    #[test]
    fn distinctive_requires_strict_improvement() {
        // feature 10A constant everywhere: never distinctive
        let profiles = vec![
            profile("aaa", &[("10A", 1), ("11A", 1)]),
            profile("bbb", &[("10A", 1), ("11A", 1)]),
            profile("ccc", &[("10A", 1), ("11A", 2)]),
            profile("ddd", &[("10A", 1), ("11A", 2)]),
        ];
        let c1 = lang_set(&["aaa", "bbb"]);
        let c2 = lang_set(&["ccc", "ddd"]);
        let triples = distinctive_features(&c1, &c2, &profiles).unwrap();
        assert_eq!(triples.len(), 1);
        assert_eq!(triples[0].feature.code, "11A");
        assert!(triples[0].polarizing);
        assert_eq!(triples[0].gini_c1, 0.0);
        assert_eq!(triples[0].gini_union, 0.5);
    }

    #[test]
    fn polarizing_subset_of_distinctive() {
        let profiles = vec![
            profile("aaa", &[("10A", 1), ("11A", 3)]),
            profile("bbb", &[("10A", 1), ("11A", 1)]),
            profile("ccc", &[("10A", 2), ("11A", 1)]),
            profile("ddd", &[("10A", 2), ("11A", 2)]),
        ];
        let c1 = lang_set(&["aaa", "bbb"]);
        let c2 = lang_set(&["ccc", "ddd"]);
        let distinctive = distinctive_features(&c1, &c2, &profiles).unwrap();
        let polarizing = polarizing_features(&c1, &c2, &profiles).unwrap();
        let codes: BTreeSet<&str> =
            distinctive.iter().map(|t| t.feature.code.as_str()).collect();
        for t in &polarizing {
            assert!(codes.contains(t.feature.code.as_str()));
        }
        // 10A separates cleanly: polarizing; 11A shares value 1 across sides
        assert!(polarizing.iter().any(|t| t.feature.code == "10A"));
        assert!(polarizing.iter().all(|t| t.feature.code != "11A"));
    }

    #[test]
    fn identical_singleton_clusters_give_empty_lists() {
        let profiles = vec![
            profile("aaa", &[("10A", 1)]),
            profile("bbb", &[("10A", 1)]),
        ];
        let c1 = lang_set(&["aaa"]);
        let c2 = lang_set(&["bbb"]);
        assert!(distinctive_features(&c1, &c2, &profiles).unwrap().is_empty());
        assert!(polarizing_features(&c1, &c2, &profiles).unwrap().is_empty());
    }

    #[test]
    fn overlapping_clusters_rejected() {
        let profiles = vec![profile("aaa", &[("10A", 1)])];
        let c1 = lang_set(&["aaa"]);
        assert!(matches!(
            distinctive_features(&c1, &c1, &profiles).unwrap_err(),
            ClusterError::ClustersOverlap(_)
        ));
        assert!(matches!(
            extra_cluster_pairs(&c1, &c1).unwrap_err(),
            ClusterError::ClustersOverlap(_)
        ));
    }

    #[test]
    fn cross_pair_counts() {
        let c1 = lang_set(&["aaa", "bbb", "ccc", "ddd"]);
        let c2 = lang_set(&["eee", "fff", "ggg", "hhh", "iii"]);
        assert_eq!(extra_cluster_pairs(&c1, &c2).unwrap().len(), 20);
        let s3 = lang_set(&["xxx", "yyy"]);
        let s4 = lang_set(&["zzz", "www"]);
        assert_eq!(extra_cluster_pairs(&s3, &s4).unwrap().len(), 4);
    }
}
