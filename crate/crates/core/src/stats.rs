//! Rank statistics: average ranks under ties, Spearman correlation, and
//! two-sided Student-t significance evaluated through the regularized
//! incomplete beta function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairtable::PairSimilarityTable;
use crate::typology::{FeatureArea, LanguagePair};
use crate::weights::MatrixKind;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("input contains a non-finite value")]
    NonFiniteValue,
    #[error("series is constant; ranks have zero variance")]
    DegenerateSeries,
    #[error("need at least {need} observations, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("pair sets do not match: {0}")]
    PairSetMismatch(String),
}

/// A labeled series together with its average ranks.
#[derive(Debug, Clone)]
pub struct RankedSeries<T> {
    pub labels: Vec<String>,
    pub values: Vec<T>,
    pub ranks: Vec<T>,
}

impl<T: Scalar> RankedSeries<T> {
    pub fn new(labels: Vec<String>, values: Vec<T>) -> Result<Self, StatsError> {
        let ranks = rank_with_ties(&values)?;
        Ok(Self {
            labels,
            values,
            ranks,
        })
    }
}

/// Average ranks (1-based); tied values share the mean of the positions
/// they cover, so the ranks always sum to n(n+1)/2.
pub fn rank_with_ties<T: Scalar>(values: &[T]) -> Result<Vec<T>, StatsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFiniteValue);
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let avg = T::from(i + j + 2).expect("rank representable")
            / T::from(2).expect("2 representable");
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// Spearman's rank correlation: the Pearson correlation of average ranks.
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<T, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(StatsError::InsufficientData {
            need: 3,
            got: a.len(),
        });
    }
    let ra = rank_with_ties(a)?;
    let rb = rank_with_ties(b)?;
    pearson(&ra, &rb)
}

fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<T, StatsError> {
    let n = T::from(a.len()).expect("length representable");
    let mean_a = a.iter().fold(T::zero(), |s, &x| s + x) / n;
    let mean_b = b.iter().fold(T::zero(), |s, &x| s + x) / n;
    let mut cov = T::zero();
    let mut var_a = T::zero();
    let mut var_b = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == T::zero() || var_b == T::zero() {
        return Err(StatsError::DegenerateSeries);
    }
    let rho = cov / (var_a * var_b).sqrt();
    // rounding can push a perfect correlation a hair outside [-1, 1]
    Ok(rho.max(-T::one()).min(T::one()))
}

/// Two-sided p-value for a Spearman rho under the t-test with n−2 degrees
/// of freedom: t = rho·√((n−2)/(1−rho²)), p = P(|T| ≥ |t|).
pub fn p_value(rho: f64, n: usize) -> Result<f64, StatsError> {
    if n < 3 {
        return Err(StatsError::InsufficientData { need: 3, got: n });
    }
    if !rho.is_finite() {
        return Err(StatsError::NonFiniteValue);
    }
    let r = rho.clamp(-1.0, 1.0);
    if r.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    Ok(student_t_two_sided(t, df))
}

/// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom, via
/// I_x(df/2, 1/2) with x = df/(df + t²).
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    reg_inc_beta(x, df / 2.0, 0.5)
}

/// ln Γ(z) for z > 0 (Lanczos approximation).
pub fn ln_gamma(z: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    debug_assert!(z > 0.0);
    let mut series = 1.000000000190015;
    for (i, &c) in COEFFS.iter().enumerate() {
        series += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    (z + 0.5) * tmp.ln() - tmp + (2.5066282746310005 * series / z).ln()
}

/// Regularized incomplete beta I_x(a, b), evaluated with Lentz's modified
/// continued fraction; absolute error well below 1e-10 over the domain the
/// t-test needs.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "shape parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // continued fraction converges fastest for x < (a+1)/(a+b+2)
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - reg_inc_beta(1.0 - x, b, a);
    }
    let ln_front =
        a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    ln_front.exp() * beta_cf(x, a, b) / a
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut f = d;
    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        // even step
        let num = m_f * (b - m_f) * x / ((a + 2.0 * m_f - 1.0) * (a + 2.0 * m_f));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        f *= d * c;
        // odd step
        let num = -(a + m_f) * (a + b + m_f) * x / ((a + 2.0 * m_f) * (a + 2.0 * m_f + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = d * c;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    f
}

/// One cell of a correlation grid: Spearman rho and its two-sided p-value
/// for a (matrix kind, layer) slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub kind: MatrixKind,
    pub layer: usize,
    pub rho: f64,
    pub p: f64,
    pub n: usize,
}

/// Which pair set a grid was computed over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairSetDescriptor {
    Full,
    ExtraCluster { cluster_a: String, cluster_b: String },
    Subset(String),
}

impl std::fmt::Display for PairSetDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PairSetDescriptor::Full => write!(f, "full"),
            PairSetDescriptor::ExtraCluster {
                cluster_a,
                cluster_b,
            } => write!(f, "extra-cluster {cluster_a}x{cluster_b}"),
            PairSetDescriptor::Subset(s) => write!(f, "subset {s}"),
        }
    }
}

/// The 6×12 grid of correlation cells for one typological space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGrid {
    pub space: FeatureArea,
    pub pair_set: PairSetDescriptor,
    /// Row-major over [`MatrixKind::ALL`] × layers 0..12.
    pub cells: Vec<CorrelationCell>,
}

impl CorrelationGrid {
    pub fn cell(&self, kind: MatrixKind, layer: usize) -> &CorrelationCell {
        let row = MatrixKind::ALL
            .iter()
            .position(|k| *k == kind)
            .expect("known kind");
        &self.cells[row * crate::weights::LAYER_COUNT + layer]
    }

    pub fn pair_count(&self) -> usize {
        self.cells.first().map_or(0, |c| c.n)
    }
}

/// Correlates each (kind, layer) biCKA series against the typological
/// similarities over the identical pair ordering.
pub fn correlation_grid(
    pair_sims: &PairSimilarityTable,
    typ_sigma: &BTreeMap<LanguagePair, f64>,
    space: FeatureArea,
    pair_set: PairSetDescriptor,
) -> Result<CorrelationGrid, StatsError> {
    let pairs: Vec<&LanguagePair> = pair_sims.pairs().collect();
    if pairs.len() < 3 {
        return Err(StatsError::InsufficientData {
            need: 3,
            got: pairs.len(),
        });
    }
    for pair in &pairs {
        if !typ_sigma.contains_key(pair) {
            return Err(StatsError::PairSetMismatch(format!(
                "pair {pair} has no typological similarity"
            )));
        }
    }
    if typ_sigma.len() != pairs.len() {
        return Err(StatsError::PairSetMismatch(format!(
            "similarity table has {} pairs, typological ranking has {}",
            pairs.len(),
            typ_sigma.len()
        )));
    }
    let sigma: Vec<f64> = pairs.iter().map(|p| typ_sigma[p]).collect();
    let mut cells = Vec::with_capacity(MatrixKind::ALL.len() * crate::weights::LAYER_COUNT);
    for &kind in MatrixKind::ALL.iter() {
        for layer in 0..crate::weights::LAYER_COUNT {
            let scores: Vec<f64> = pairs
                .iter()
                .map(|pair| pair_sims.score(pair, kind, layer))
                .collect::<Option<_>>()
                .ok_or_else(|| {
                    StatsError::PairSetMismatch(format!(
                        "missing score for kind {kind}, layer {layer}"
                    ))
                })?;
            let rho = spearman(&scores, &sigma)?;
            let p = p_value(rho, scores.len())?;
            cells.push(CorrelationCell {
                kind,
                layer,
                rho,
                p,
                n: scores.len(),
            });
        }
    }
    Ok(CorrelationGrid {
        space,
        pair_set,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_basic() {
        assert_eq!(rank_with_ties(&[10.0, 20.0, 30.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(
            rank_with_ties(&[1.0, 2.0, 2.0, 4.0]).unwrap(),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(rank_with_ties(&[5.0, 5.0, 5.0]).unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn ranks_sum_to_triangular_number() {
        let values = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0];
        let ranks = rank_with_ties(&values).unwrap();
        let sum: f64 = ranks.iter().sum();
        assert!((sum - 55.0).abs() < 1e-12);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(matches!(
            rank_with_ties(&[1.0, f64::NAN]).unwrap_err(),
            StatsError::NonFiniteValue
        ));
    }

    #[test]
    fn spearman_perfect_and_reversed() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [10.0f64, 20.0, 30.0, 40.0];
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let rev = [40.0f64, 30.0, 20.0, 10.0];
        assert!((spearman(&a, &rev).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_tied_hand_example() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        let rho = spearman(&a, &b).unwrap();
        assert!((rho - 4.5 / 22.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spearman_constant_series_degenerate() {
        let a = [1.0, 1.0, 1.0];
        let b = [1.0, 2.0, 3.0];
        assert!(matches!(
            spearman(&a, &b).unwrap_err(),
            StatsError::DegenerateSeries
        ));
    }

    #[test]
    fn p_value_reference_points() {
        assert_eq!(p_value(0.0, 20).unwrap(), 1.0);
        // rho = 0.8, n = 10 → t ≈ 3.7712, p ≈ 0.0055
        let p = p_value(0.8, 10).unwrap();
        assert!((p - 0.0055).abs() < 2e-4, "p = {p}");
        // rho = 0.66, n = 78 → far below 0.01
        let p = p_value(0.66, 78).unwrap();
        assert!(p < 1e-9);
        assert_eq!(p_value(1.0, 10).unwrap(), 0.0);
    }

    #[test]
    fn p_value_monotone_in_rho_and_n() {
        let mut last = 1.0;
        for rho in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let p = p_value(rho, 15).unwrap();
            assert!(p < last);
            last = p;
        }
        assert!(p_value(0.5, 30).unwrap() < p_value(0.5, 10).unwrap());
    }

    #[test]
    fn incomplete_beta_endpoints() {
        assert_eq!(reg_inc_beta(0.0, 2.0, 3.0), 0.0);
        assert_eq!(reg_inc_beta(1.0, 2.0, 3.0), 1.0);
        // I_x(1,1) = x
        for x in [0.1, 0.5, 0.9] {
            assert!((reg_inc_beta(x, 1.0, 1.0) - x).abs() < 1e-14);
        }
    }
}
