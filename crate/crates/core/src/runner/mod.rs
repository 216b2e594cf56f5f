//! End-to-end experiment orchestration.
//!
//! Three experiment regimes share one pipeline: locate or fetch
//! checkpoints, validate them, compute the pairwise score table (with
//! caching), correlate each (kind, layer) slot against the typological
//! similarities, and emit CSV/JSON/SVG reports.
//!
//! * `full` — every pair of roster languages, grids for each configured
//!   typological space;
//! * `focused` — languages are clustered in one typological space, two
//!   clusters are chosen, and only cross-cluster pairs enter the grid,
//!   together with the distinctive/polarizing feature report;
//! * `adapted` — pre- and post-adaptation checkpoint sets over the subset
//!   of languages with adapted models, plus a per-cell delta grid and a
//!   windowed delta summary.

mod config;
mod fetch;
mod report;
mod table;

pub use config::{
    DeltaWindow, ExperimentConfig, ExperimentMode, FocusedSettings, KmeansSettings, ModelSpec,
};
pub use fetch::{ensure_local, fetch_models, file_digest, LocalCheckpoint};
pub use report::{delta_to_csv, grid_from_csv, grid_heatmap_svg, grid_to_csv, heatmap_svg};
pub use table::{all_pairs, compute_pair_table, open_models, ModelHandle, ScoreCache};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairtable::PairSimilarityTable;
use crate::simkernel::CenteringMode;
use crate::stats::{correlation_grid, CorrelationGrid, PairSetDescriptor, StatsError};
use crate::typoclusters::{
    distinctive_features, extra_cluster_pairs, kmeans, ClusterError, Clustering,
    FeatureImpurityTriple,
};
use crate::typology::{
    build_space, encode, load_profiles_from_path, similarity, FeatureArea, LanguagePair,
    LanguageProfile, TypologyError,
};
use crate::weights::{LayoutConfig, MatrixKind, LAYER_COUNT};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("fetch failed for {language} from {url}: {reason} (retryable)")]
    Fetch {
        language: String,
        url: String,
        reason: String,
    },
    #[error("integrity error for {language}: expected digest {expected}, got {actual}")]
    Integrity {
        language: String,
        expected: String,
        actual: String,
    },
    #[error("{0}")]
    Analysis(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Typology(#[from] TypologyError),
}

/// Run-level metadata recorded in every report bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub mode: ExperimentMode,
    pub centering: CenteringMode,
    pub significance_threshold: f64,
    pub reporting_threshold: f64,
    pub seed: u64,
    pub parallelism: usize,
    pub languages: Vec<String>,
    pub digests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub adapted_digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledGrid {
    pub label: String,
    pub grid: CorrelationGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledTable {
    pub label: String,
    pub table: PairSimilarityTable,
}

/// Focused-mode cluster report: the clustering, the chosen cluster pair and
/// the distinctive features between them (with polarizing flags).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterAnalysis {
    pub clustering: Clustering,
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub members_a: BTreeSet<String>,
    pub members_b: BTreeSet<String>,
    pub distinctive: Vec<FeatureImpurityTriple>,
}

impl ClusterAnalysis {
    pub fn polarizing(&self) -> Vec<&FeatureImpurityTriple> {
        self.distinctive.iter().filter(|t| t.polarizing).collect()
    }
}

/// Adapted-mode delta: per-cell (post − pre) rho plus a windowed summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaGrid {
    pub space: FeatureArea,
    /// 72 cells in the same order as a correlation grid.
    pub deltas: Vec<f64>,
    pub layer_from: usize,
    pub layer_to: usize,
    pub window_average: f64,
    pub per_kind_window_average: BTreeMap<String, f64>,
}

/// Everything one experiment produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    pub metadata: RunMetadata,
    pub grids: Vec<LabeledGrid>,
    pub tables: Vec<LabeledTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_analysis: Option<ClusterAnalysis>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<DeltaGrid>,
    /// Filled by [`emit_reports`]; not part of the serialized summary.
    #[serde(skip)]
    pub manifest: Vec<PathBuf>,
}

/// Typological side of an experiment: profiles, spaces and pairwise
/// similarities for the roster languages, per feature area.
struct TypologyContext {
    profiles: BTreeMap<FeatureArea, Vec<LanguageProfile>>,
    sigma: BTreeMap<FeatureArea, BTreeMap<LanguagePair, f64>>,
}

impl TypologyContext {
    fn load(config: &ExperimentConfig) -> Result<Self, RunnerError> {
        let roster: BTreeSet<&str> = config.roster.iter().map(|m| m.language.as_str()).collect();
        let mut profiles = BTreeMap::new();
        let mut sigma = BTreeMap::new();
        for area in [FeatureArea::Syntactic, FeatureArea::Morphological] {
            let all = load_profiles_from_path(config.wals_path(area), area)?;
            let available: BTreeSet<&str> = all.iter().map(|p| p.code.as_str()).collect();
            let missing: Vec<&str> = roster.difference(&available).copied().collect();
            if !missing.is_empty() {
                return Err(RunnerError::Config(format!(
                    "languages {missing:?} are not in the {area} feature table"
                )));
            }
            let kept: Vec<LanguageProfile> = all
                .into_iter()
                .filter(|p| roster.contains(p.code.as_str()))
                .collect();
            let space = build_space(&kept, area)?;
            let vectors: Vec<_> = kept
                .iter()
                .map(|p| encode(p, &space))
                .collect::<Result<_, _>>()?;
            let mut sigmas = BTreeMap::new();
            for i in 0..vectors.len() {
                for j in (i + 1)..vectors.len() {
                    sigmas.insert(
                        LanguagePair::new(&vectors[i].language, &vectors[j].language),
                        similarity(&vectors[i], &vectors[j])?,
                    );
                }
            }
            profiles.insert(area, kept);
            sigma.insert(area, sigmas);
        }
        Ok(Self { profiles, sigma })
    }

    fn sigma_for(
        &self,
        area: FeatureArea,
        pairs: &[LanguagePair],
    ) -> Result<BTreeMap<LanguagePair, f64>, RunnerError> {
        let all = &self.sigma[&area];
        pairs
            .iter()
            .map(|p| {
                all.get(p)
                    .map(|&s| (p.clone(), s))
                    .ok_or_else(|| RunnerError::Analysis(format!("no {area} similarity for {p}")))
            })
            .collect()
    }
}

/// Clusters the roster languages in one typological space with the
/// configured settings.
pub fn cluster_roster(
    config: &ExperimentConfig,
    typo_profiles: &[LanguageProfile],
    area: FeatureArea,
) -> Result<Clustering, RunnerError> {
    let space = build_space(typo_profiles, area)?;
    let vectors: Vec<_> = typo_profiles
        .iter()
        .map(|p| encode(p, &space))
        .collect::<Result<_, _>>()?;
    let k = match area {
        FeatureArea::Syntactic => config.kmeans.syntactic_k,
        FeatureArea::Morphological => config.kmeans.morphological_k,
    };
    Ok(kmeans(&vectors, area, k, config.kmeans.restarts, config.seed)?)
}

/// Runs one experiment end to end (everything except writing report files;
/// see [`emit_reports`]).
pub fn run_experiment(
    config: &ExperimentConfig,
    mode: ExperimentMode,
) -> Result<ReportBundle, RunnerError> {
    config.validate(&mode)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| RunnerError::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_experiment_inner(config, mode))
}

fn run_experiment_inner(
    config: &ExperimentConfig,
    mode: ExperimentMode,
) -> Result<ReportBundle, RunnerError> {
    let typo = TypologyContext::load(config)?;
    let layout_config = LayoutConfig::from_path(&config.layout)
        .map_err(|e| RunnerError::Config(format!("layout config: {e}")))?;
    let cache = ScoreCache::new(&config.cache_dir)?;

    let mut metadata = RunMetadata {
        mode: mode.clone(),
        centering: config.centering,
        significance_threshold: config.significance_threshold,
        reporting_threshold: config.reporting_threshold,
        seed: config.seed,
        parallelism: config.parallelism,
        languages: Vec::new(),
        digests: BTreeMap::new(),
        adapted_digests: BTreeMap::new(),
    };

    match mode {
        ExperimentMode::Full => {
            let checkpoints = fetch_roster(config, &config.roster, false)?;
            let models = open_models(&checkpoints, &layout_config)?;
            let pairs = all_pairs(&models);
            let table = compute_pair_table(
                &models,
                &pairs,
                &typo.sigma_for(FeatureArea::Syntactic, &pairs)?,
                &typo.sigma_for(FeatureArea::Morphological, &pairs)?,
                config.centering,
                &cache,
            )?;
            metadata.languages = models.iter().map(|m| m.language.clone()).collect();
            metadata.digests = table.digests.clone();
            let mut grids = Vec::new();
            for &area in &config.spaces {
                let sigma = typo.sigma_for(area, &pairs)?;
                let grid =
                    correlation_grid(&table, &sigma, area, PairSetDescriptor::Full)?;
                grids.push(LabeledGrid {
                    label: format!("full-{area}"),
                    grid,
                });
            }
            Ok(ReportBundle {
                metadata,
                grids,
                tables: vec![LabeledTable {
                    label: "full".into(),
                    table,
                }],
                cluster_analysis: None,
                deltas: Vec::new(),
                manifest: Vec::new(),
            })
        }
        ExperimentMode::Focused => {
            let area = config.focused.space;
            let clustering = cluster_roster(config, &typo.profiles[&area], area)?;
            let members_a = clustering.members[config.focused.cluster_a - 1].clone();
            let members_b = clustering.members[config.focused.cluster_b - 1].clone();
            let pairs = extra_cluster_pairs(&members_a, &members_b)?;
            let involved: BTreeSet<&str> = members_a
                .union(&members_b)
                .map(|s| s.as_str())
                .collect();
            let subset: Vec<ModelSpec> = config
                .roster
                .iter()
                .filter(|m| involved.contains(m.language.as_str()))
                .cloned()
                .collect();
            if subset.len() != involved.len() {
                let have: BTreeSet<&str> = subset.iter().map(|m| m.language.as_str()).collect();
                let missing: Vec<&&str> = involved.difference(&have).collect();
                return Err(RunnerError::Config(format!(
                    "clusters include languages with no checkpoint: {missing:?}"
                )));
            }
            let checkpoints = fetch_roster(config, &subset, false)?;
            let models = open_models(&checkpoints, &layout_config)?;
            let table = compute_pair_table(
                &models,
                &pairs,
                &typo.sigma_for(FeatureArea::Syntactic, &pairs)?,
                &typo.sigma_for(FeatureArea::Morphological, &pairs)?,
                config.centering,
                &cache,
            )?;
            metadata.languages = models.iter().map(|m| m.language.clone()).collect();
            metadata.digests = table.digests.clone();
            let descriptor = PairSetDescriptor::ExtraCluster {
                cluster_a: format!("c{}", config.focused.cluster_a),
                cluster_b: format!("c{}", config.focused.cluster_b),
            };
            let sigma = typo.sigma_for(area, &pairs)?;
            let grid = correlation_grid(&table, &sigma, area, descriptor)?;
            let label = format!(
                "focused-{area}-c{}x{}",
                config.focused.cluster_a, config.focused.cluster_b
            );
            let distinctive =
                distinctive_features(&members_a, &members_b, &typo.profiles[&area])?;
            Ok(ReportBundle {
                metadata,
                grids: vec![LabeledGrid { label, grid }],
                tables: vec![LabeledTable {
                    label: "focused".into(),
                    table,
                }],
                cluster_analysis: Some(ClusterAnalysis {
                    clustering,
                    cluster_a: config.focused.cluster_a,
                    cluster_b: config.focused.cluster_b,
                    members_a,
                    members_b,
                    distinctive,
                }),
                deltas: Vec::new(),
                manifest: Vec::new(),
            })
        }
        ExperimentMode::Adapted => {
            let subset: Vec<ModelSpec> =
                config.adapted_roster().into_iter().cloned().collect();
            let pre_checkpoints = fetch_roster(config, &subset, false)?;
            let post_checkpoints = fetch_roster(config, &subset, true)?;
            let models_pre = open_models(&pre_checkpoints, &layout_config)?;
            let models_post = open_models(&post_checkpoints, &layout_config)?;
            let pairs = all_pairs(&models_pre);
            let sigma_synt = typo.sigma_for(FeatureArea::Syntactic, &pairs)?;
            let sigma_morph = typo.sigma_for(FeatureArea::Morphological, &pairs)?;
            let table_pre = compute_pair_table(
                &models_pre,
                &pairs,
                &sigma_synt,
                &sigma_morph,
                config.centering,
                &cache,
            )?;
            let table_post = compute_pair_table(
                &models_post,
                &pairs,
                &sigma_synt,
                &sigma_morph,
                config.centering,
                &cache,
            )?;
            metadata.languages = models_pre.iter().map(|m| m.language.clone()).collect();
            metadata.digests = table_pre.digests.clone();
            metadata.adapted_digests = table_post.digests.clone();
            let mut grids = Vec::new();
            let mut deltas = Vec::new();
            for &area in &config.spaces {
                let sigma = typo.sigma_for(area, &pairs)?;
                let pre = correlation_grid(
                    &table_pre,
                    &sigma,
                    area,
                    PairSetDescriptor::Subset("adapted-pre".into()),
                )?;
                let post = correlation_grid(
                    &table_post,
                    &sigma,
                    area,
                    PairSetDescriptor::Subset("adapted-post".into()),
                )?;
                deltas.push(delta_grid(&pre, &post, &config.adapted));
                grids.push(LabeledGrid {
                    label: format!("adapted-pre-{area}"),
                    grid: pre,
                });
                grids.push(LabeledGrid {
                    label: format!("adapted-post-{area}"),
                    grid: post,
                });
            }
            Ok(ReportBundle {
                metadata,
                grids,
                tables: vec![
                    LabeledTable {
                        label: "adapted-pre".into(),
                        table: table_pre,
                    },
                    LabeledTable {
                        label: "adapted-post".into(),
                        table: table_post,
                    },
                ],
                cluster_analysis: None,
                deltas,
                manifest: Vec::new(),
            })
        }
    }
}

fn fetch_roster(
    config: &ExperimentConfig,
    roster: &[ModelSpec],
    adapted: bool,
) -> Result<Vec<LocalCheckpoint>, RunnerError> {
    roster
        .iter()
        .map(|model| {
            if adapted {
                let source = model.adapted_source.as_deref().ok_or_else(|| {
                    RunnerError::Config(format!("{} has no adapted checkpoint", model.language))
                })?;
                ensure_local(
                    &model.language,
                    source,
                    model.adapted_sha256.as_deref(),
                    &config.cache_dir,
                )
            } else {
                ensure_local(
                    &model.language,
                    &model.source,
                    model.sha256.as_deref(),
                    &config.cache_dir,
                )
            }
        })
        .collect()
}

/// Per-cell (post − pre) rho plus the windowed average.
fn delta_grid(pre: &CorrelationGrid, post: &CorrelationGrid, window: &DeltaWindow) -> DeltaGrid {
    let deltas: Vec<f64> = post
        .cells
        .iter()
        .zip(&pre.cells)
        .map(|(a, b)| a.rho - b.rho)
        .collect();
    let mut per_kind = BTreeMap::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, &kind) in MatrixKind::ALL.iter().enumerate() {
        let mut kind_sum = 0.0;
        let mut kind_count = 0usize;
        for layer in window.layer_from..=window.layer_to {
            let d = deltas[row * LAYER_COUNT + layer];
            kind_sum += d;
            kind_count += 1;
            total += d;
            count += 1;
        }
        per_kind.insert(kind.to_string(), kind_sum / kind_count as f64);
    }
    DeltaGrid {
        space: pre.space,
        deltas,
        layer_from: window.layer_from,
        layer_to: window.layer_to,
        window_average: total / count as f64,
        per_kind_window_average: per_kind,
    }
}

/// Writes every report artifact of a bundle into `out_dir` and returns the
/// file manifest: per grid a CSV and an SVG heatmap, per delta grid the
/// same, plus `summary.json` and `manifest.json`.
pub fn emit_reports(bundle: &mut ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    let mut files = Vec::new();
    for labeled in &bundle.grids {
        files.push(report::write_file(
            &out_dir.join(format!("{}.csv", labeled.label)),
            &grid_to_csv(&labeled.grid),
        )?);
        files.push(report::write_file(
            &out_dir.join(format!("{}.svg", labeled.label)),
            &grid_heatmap_svg(
                &labeled.label,
                &labeled.grid,
                bundle.metadata.significance_threshold,
            ),
        )?);
    }
    for delta in &bundle.deltas {
        let label = format!("adapted-delta-{}", delta.space);
        files.push(report::write_file(
            &out_dir.join(format!("{label}.csv")),
            &delta_to_csv(&delta.deltas),
        )?);
        let title = format!(
            "{label} (post - pre rho; window {}..={} avg {:.3})",
            delta.layer_from, delta.layer_to, delta.window_average
        );
        files.push(report::write_file(
            &out_dir.join(format!("{label}.svg")),
            &heatmap_svg(&title, &delta.deltas, None, f64::NAN),
        )?);
    }
    let summary = serde_json::to_string_pretty(&bundle)
        .map_err(|e| RunnerError::Io(format!("cannot serialize summary: {e}")))?;
    files.push(report::write_file(&out_dir.join("summary.json"), &summary)?);
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let manifest = serde_json::to_string_pretty(&names)
        .map_err(|e| RunnerError::Io(format!("cannot serialize manifest: {e}")))?;
    files.push(report::write_file(&out_dir.join("manifest.json"), &manifest)?);
    bundle.manifest = files.clone();
    Ok(files)
}

/// Reloads a bundle from a written `summary.json`.
pub fn load_bundle(path: &Path) -> Result<ReportBundle, RunnerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunnerError::Io(format!("cannot read {path:?}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::Io(format!("bad summary {path:?}: {e}")))
}
