//! Pairwise score computation over all (kind, layer) slots, with a
//! write-once on-disk score cache keyed by checkpoint digests.
//!
//! Work is scheduled slot by slot: for one (kind, layer) the matrices of
//! every involved model are decoded once, reduced to per-matrix kernel
//! summaries in parallel, and all pair scores combine from those summaries.
//! Pair results land in pre-assigned slots, so the output is identical at
//! any parallelism degree; a warm cache short-circuits the slot without
//! touching the checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::pairtable::PairSimilarityTable;
use crate::simkernel::{bicka_from_stats, CenteringMode, MatrixKernelStats};
use crate::typology::LanguagePair;
use crate::weights::{
    extract, resolve_layout, ArchitectureReport, LayoutConfig, LayoutMap, MatrixKind,
    TensorContainer, WeightMatrix, LAYER_COUNT,
};

use super::fetch::LocalCheckpoint;
use super::RunnerError;

/// An opened, layout-resolved, architecture-validated model.
pub struct ModelHandle {
    pub language: String,
    pub digest: String,
    pub container: TensorContainer,
    pub layout: LayoutMap,
    pub report: ArchitectureReport,
}

/// Opens checkpoints and validates them against the layout config.
pub fn open_models(
    checkpoints: &[LocalCheckpoint],
    layout_config: &LayoutConfig,
) -> Result<Vec<ModelHandle>, RunnerError> {
    let mut models = Vec::with_capacity(checkpoints.len());
    for cp in checkpoints {
        let context = |stage: &str, e: &dyn std::fmt::Display| {
            RunnerError::Analysis(format!("{stage} for {} ({:?}): {e}", cp.language, cp.path))
        };
        let mut container =
            TensorContainer::open(&cp.path).map_err(|e| context("opening checkpoint", &e))?;
        container.set_language_tag(&cp.language);
        let layout = resolve_layout(layout_config, &container)
            .map_err(|e| context("resolving tensor layout", &e))?;
        let report = crate::weights::validate_model(&container, &layout)
            .map_err(|e| context("validating architecture", &e))?;
        models.push(ModelHandle {
            language: cp.language.clone(),
            digest: cp.digest.clone(),
            container,
            layout,
            report,
        });
    }
    for pair in models.windows(2) {
        if pair[0].report.hidden_size != pair[1].report.hidden_size {
            return Err(RunnerError::Analysis(format!(
                "models {} and {} have different hidden sizes ({} vs {})",
                pair[0].language,
                pair[1].language,
                pair[0].report.hidden_size,
                pair[1].report.hidden_size
            )));
        }
    }
    Ok(models)
}

/// Write-once score cache: one file per (digest pair, kind, layer,
/// centering), holding the exact f64 bits in hex.
pub struct ScoreCache {
    dir: PathBuf,
}

impl ScoreCache {
    pub fn new(cache_dir: &Path) -> Result<Self, RunnerError> {
        let dir = cache_dir.join("scores");
        std::fs::create_dir_all(&dir)
            .map_err(|e| RunnerError::Io(format!("cannot create {dir:?}: {e}")))?;
        Ok(Self { dir })
    }

    fn key(d1: &str, d2: &str, kind: MatrixKind, layer: usize, mode: CenteringMode) -> String {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        format!("{lo}-{hi}-{kind}-{layer}-{mode}")
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn get(
        &self,
        d1: &str,
        d2: &str,
        kind: MatrixKind,
        layer: usize,
        mode: CenteringMode,
    ) -> Option<f64> {
        let path = self.path_for(&Self::key(d1, d2, kind, layer, mode));
        let text = std::fs::read_to_string(path).ok()?;
        u64::from_str_radix(text.trim(), 16).ok().map(f64::from_bits)
    }

    pub fn put(
        &self,
        d1: &str,
        d2: &str,
        kind: MatrixKind,
        layer: usize,
        mode: CenteringMode,
        score: f64,
    ) -> Result<(), RunnerError> {
        let key = Self::key(d1, d2, kind, layer, mode);
        let path = self.path_for(&key);
        if path.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(format!(".{key}.{}", std::process::id()));
        std::fs::write(&tmp, format!("{:016x}\n", score.to_bits()))
            .map_err(|e| RunnerError::Io(format!("cannot write score cache {tmp:?}: {e}")))?;
        std::fs::rename(&tmp, &path)
            .map_err(|e| RunnerError::Io(format!("cannot finalize score cache {path:?}: {e}")))?;
        Ok(())
    }
}

/// Computes the full pair table for the given pair set.
///
/// `sigma_synt` / `sigma_morph` must cover every pair.
pub fn compute_pair_table(
    models: &[ModelHandle],
    pairs: &[LanguagePair],
    sigma_synt: &BTreeMap<LanguagePair, f64>,
    sigma_morph: &BTreeMap<LanguagePair, f64>,
    centering: CenteringMode,
    cache: &ScoreCache,
) -> Result<PairSimilarityTable, RunnerError> {
    let by_language: BTreeMap<&str, &ModelHandle> = models
        .iter()
        .map(|m| (m.language.as_str(), m))
        .collect();
    for pair in pairs {
        for lang in [pair.first(), pair.second()] {
            if !by_language.contains_key(lang) {
                return Err(RunnerError::Analysis(format!(
                    "pair {pair} references language {lang} with no opened model"
                )));
            }
        }
    }

    let mut table = PairSimilarityTable::new(centering);
    for model in models {
        table
            .digests
            .insert(model.language.clone(), model.digest.clone());
    }
    for pair in pairs {
        let synt = *sigma_synt.get(pair).ok_or_else(|| {
            RunnerError::Analysis(format!("pair {pair} has no syntactic similarity"))
        })?;
        let morph = *sigma_morph.get(pair).ok_or_else(|| {
            RunnerError::Analysis(format!("pair {pair} has no morphological similarity"))
        })?;
        table.add_pair(pair.clone(), synt, morph);
    }

    // languages that participate in at least one pair, in deterministic order
    let mut involved: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.first(), p.second()])
        .collect();
    involved.sort_unstable();
    involved.dedup();

    for &kind in MatrixKind::ALL.iter() {
        for layer in 0..LAYER_COUNT {
            let digest_of = |lang: &str| by_language[lang].digest.as_str();
            let cached: Vec<Option<f64>> = pairs
                .iter()
                .map(|p| {
                    cache.get(
                        digest_of(p.first()),
                        digest_of(p.second()),
                        kind,
                        layer,
                        centering,
                    )
                })
                .collect();
            if cached.iter().all(|c| c.is_some()) {
                for (pair, score) in pairs.iter().zip(&cached) {
                    table.set_score(pair, kind, layer, score.unwrap());
                }
                continue;
            }

            // decode this slot's matrix for every involved language and
            // normalize orientation to the first language's convention
            let matrices: Vec<WeightMatrix> = involved
                .par_iter()
                .map(|lang| {
                    let model = by_language[lang];
                    extract(&model.container, &model.layout, layer, kind).map_err(|e| {
                        RunnerError::Analysis(format!(
                            "extracting {kind} at layer {layer} for {lang}: {e}"
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
            let ref_shape = matrices[0].data.shape();
            let stats: Vec<MatrixKernelStats<f64>> = matrices
                .par_iter()
                .map(|w| {
                    let shape = w.data.shape();
                    if shape == ref_shape {
                        Ok(MatrixKernelStats::new(&w.data))
                    } else if (shape.1, shape.0) == ref_shape {
                        Ok(MatrixKernelStats::new(&w.data.transposed()))
                    } else {
                        Err(RunnerError::Analysis(format!(
                            "{kind} at layer {layer}: {} stores {shape:?}, incompatible with {ref_shape:?} of {}",
                            w.language, matrices[0].language
                        )))
                    }
                })
                .collect::<Result<_, _>>()?;
            drop(matrices);
            let stats_of: BTreeMap<&str, &MatrixKernelStats<f64>> = involved
                .iter()
                .zip(&stats)
                .map(|(&l, s)| (l, s))
                .collect();

            let scores: Vec<f64> = pairs
                .par_iter()
                .zip(cached.par_iter())
                .map(|(pair, hit)| {
                    if let Some(score) = hit {
                        return Ok(*score);
                    }
                    bicka_from_stats(stats_of[pair.first()], stats_of[pair.second()], centering)
                        .map_err(|e| {
                            RunnerError::Analysis(format!(
                                "scoring pair {pair}, kind {kind}, layer {layer}: {e}"
                            ))
                        })
                })
                .collect::<Result<_, _>>()?;
            for ((pair, score), hit) in pairs.iter().zip(&scores).zip(&cached) {
                table.set_score(pair, kind, layer, *score);
                if hit.is_none() {
                    cache.put(
                        digest_of(pair.first()),
                        digest_of(pair.second()),
                        kind,
                        layer,
                        centering,
                        *score,
                    )?;
                }
            }
        }
    }
    debug_assert!(table.is_complete());
    Ok(table)
}

/// All unordered pairs over the model roster, lexicographically ordered.
pub fn all_pairs(models: &[ModelHandle]) -> Vec<LanguagePair> {
    let mut langs: Vec<&str> = models.iter().map(|m| m.language.as_str()).collect();
    langs.sort_unstable();
    let mut pairs = Vec::new();
    for i in 0..langs.len() {
        for j in (i + 1)..langs.len() {
            pairs.push(LanguagePair::new(langs[i], langs[j]));
        }
    }
    pairs
}
