//! Experiment configuration: the model roster, analysis settings and
//! filesystem locations, read from a TOML file with CLI overrides applied
//! on top.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::simkernel::CenteringMode;
use crate::typology::FeatureArea;
use crate::typoclusters;

use super::RunnerError;

/// One model in the roster: a language plus where its checkpoint lives
/// (local path or URL), with an optional pinned digest and an optional
/// domain-adapted counterpart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub language: String,
    pub source: String,
    #[serde(default)]
    pub sha256: Option<String>,
    #[serde(default)]
    pub adapted_source: Option<String>,
    #[serde(default)]
    pub adapted_sha256: Option<String>,
}

/// Which experiment to run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    /// Every pair of roster languages.
    Full,
    /// Only pairs crossing two clusters of the typological clustering.
    Focused,
    /// Pre- vs post-adaptation checkpoints over the adapted subset.
    Adapted,
}

impl std::fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExperimentMode::Full => write!(f, "full"),
            ExperimentMode::Focused => write!(f, "focused"),
            ExperimentMode::Adapted => write!(f, "adapted"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KmeansSettings {
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_syntactic_k")]
    pub syntactic_k: usize,
    #[serde(default = "default_morphological_k")]
    pub morphological_k: usize,
}

impl Default for KmeansSettings {
    fn default() -> Self {
        Self {
            restarts: default_restarts(),
            syntactic_k: default_syntactic_k(),
            morphological_k: default_morphological_k(),
        }
    }
}

/// Focused-mode cluster selection: 1-based indices into the canonical
/// cluster ordering (descending size, then smallest member).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FocusedSettings {
    pub space: FeatureArea,
    #[serde(default = "default_cluster_a")]
    pub cluster_a: usize,
    #[serde(default = "default_cluster_b")]
    pub cluster_b: usize,
}

impl Default for FocusedSettings {
    fn default() -> Self {
        Self {
            space: FeatureArea::Syntactic,
            cluster_a: default_cluster_a(),
            cluster_b: default_cluster_b(),
        }
    }
}

/// Adapted-mode delta summary window (inclusive layer bounds).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaWindow {
    #[serde(default = "default_layer_from")]
    pub layer_from: usize,
    #[serde(default = "default_layer_to")]
    pub layer_to: usize,
}

impl Default for DeltaWindow {
    fn default() -> Self {
        Self {
            layer_from: default_layer_from(),
            layer_to: default_layer_to(),
        }
    }
}

fn default_restarts() -> usize {
    typoclusters::DEFAULT_RESTARTS
}
fn default_syntactic_k() -> usize {
    4
}
fn default_morphological_k() -> usize {
    3
}
fn default_cluster_a() -> usize {
    1
}
fn default_cluster_b() -> usize {
    2
}
fn default_layer_from() -> usize {
    2
}
fn default_layer_to() -> usize {
    6
}
fn default_significance() -> f64 {
    0.01
}
fn default_reporting() -> f64 {
    0.5
}
fn default_parallelism() -> usize {
    8
}
fn default_seed() -> u64 {
    typoclusters::DEFAULT_SEED
}
fn default_spaces() -> Vec<FeatureArea> {
    vec![FeatureArea::Syntactic, FeatureArea::Morphological]
}
fn default_cache_dir() -> PathBuf {
    PathBuf::from(".typosim-cache")
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Layout config path (templates, prefix candidates, layer count).
    pub layout: PathBuf,
    /// Bundled feature tables.
    pub wals_syntactic: PathBuf,
    pub wals_morphological: PathBuf,
    #[serde(default = "default_spaces")]
    pub spaces: Vec<FeatureArea>,
    #[serde(default)]
    pub centering: CenteringMode,
    #[serde(default = "default_significance")]
    pub significance_threshold: f64,
    #[serde(default = "default_reporting")]
    pub reporting_threshold: f64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub kmeans: KmeansSettings,
    #[serde(default)]
    pub focused: FocusedSettings,
    #[serde(default)]
    pub adapted: DeltaWindow,
    #[serde(rename = "models", default)]
    pub roster: Vec<ModelSpec>,
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn from_path(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("cannot read {path:?}: {e}")))?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| RunnerError::Config(format!("bad config {path:?}: {e}")))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut config.layout,
            &mut config.wals_syntactic,
            &mut config.wals_morphological,
            &mut config.cache_dir,
            &mut config.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        Ok(config)
    }

    /// Consistency checks that must pass before any heavy computation.
    pub fn validate(&self, mode: &ExperimentMode) -> Result<(), RunnerError> {
        let fail = |msg: String| Err(RunnerError::Config(msg));
        if self.roster.is_empty() {
            return fail("the model roster is empty".into());
        }
        let mut seen = BTreeSet::new();
        for model in &self.roster {
            if !seen.insert(model.language.as_str()) {
                return fail(format!("language {} appears twice", model.language));
            }
        }
        if self.spaces.is_empty() {
            return fail("no typological spaces configured".into());
        }
        if !(0.0..=1.0).contains(&self.significance_threshold) {
            return fail(format!(
                "significance threshold {} outside [0, 1]",
                self.significance_threshold
            ));
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1".into());
        }
        match mode {
            ExperimentMode::Full => {
                if self.roster.len() < 3 {
                    return fail(format!(
                        "full mode needs at least 3 languages for a correlation, got {}",
                        self.roster.len()
                    ));
                }
            }
            ExperimentMode::Focused => {
                let k = match self.focused.space {
                    FeatureArea::Syntactic => self.kmeans.syntactic_k,
                    FeatureArea::Morphological => self.kmeans.morphological_k,
                };
                for (name, idx) in [
                    ("cluster_a", self.focused.cluster_a),
                    ("cluster_b", self.focused.cluster_b),
                ] {
                    if idx == 0 || idx > k {
                        return fail(format!(
                            "focused.{name} = {idx} does not name one of the {k} clusters"
                        ));
                    }
                }
                if self.focused.cluster_a == self.focused.cluster_b {
                    return fail("focused mode needs two different clusters".into());
                }
            }
            ExperimentMode::Adapted => {
                let adapted = self.adapted_roster();
                if adapted.len() < 3 {
                    return fail(format!(
                        "adapted mode needs at least 3 languages with adapted checkpoints, got {}",
                        adapted.len()
                    ));
                }
                if self.adapted.layer_from > self.adapted.layer_to
                    || self.adapted.layer_to >= crate::weights::LAYER_COUNT
                {
                    return fail(format!(
                        "delta window {}..={} is not a valid layer range",
                        self.adapted.layer_from, self.adapted.layer_to
                    ));
                }
            }
        }
        Ok(())
    }

    /// The subset of the roster that carries adapted checkpoints.
    pub fn adapted_roster(&self) -> Vec<&ModelSpec> {
        self.roster
            .iter()
            .filter(|m| m.adapted_source.is_some())
            .collect()
    }

    pub fn wals_path(&self, area: FeatureArea) -> &Path {
        match area {
            FeatureArea::Syntactic => &self.wals_syntactic,
            FeatureArea::Morphological => &self.wals_morphological,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config(models: &str) -> ExperimentConfig {
        let text = format!(
            r#"
layout = "layout.toml"
wals_syntactic = "syn.tsv"
wals_morphological = "morph.tsv"
{models}
"#
        );
        toml::from_str(&text).unwrap()
    }

    #[test]
    fn defaults_match_documented_values() {
        let config = minimal_config(
            r#"
[[models]]
language = "ita"
source = "a"
[[models]]
language = "eng"
source = "b"
[[models]]
language = "tur"
source = "c"
"#,
        );
        assert_eq!(config.significance_threshold, 0.01);
        assert_eq!(config.reporting_threshold, 0.5);
        assert_eq!(config.centering, CenteringMode::Centered);
        assert_eq!(config.adapted.layer_from, 2);
        assert_eq!(config.adapted.layer_to, 6);
        config.validate(&ExperimentMode::Full).unwrap();
    }

    #[test]
    fn duplicate_language_rejected() {
        let config = minimal_config(
            r#"
[[models]]
language = "ita"
source = "a"
[[models]]
language = "ita"
source = "b"
[[models]]
language = "eng"
source = "c"
"#,
        );
        assert!(config.validate(&ExperimentMode::Full).is_err());
    }

    #[test]
    fn adapted_mode_needs_adapted_checkpoints() {
        let config = minimal_config(
            r#"
[[models]]
language = "ita"
source = "a"
adapted_source = "a2"
[[models]]
language = "eng"
source = "b"
[[models]]
language = "fre"
source = "c"
"#,
        );
        assert!(config.validate(&ExperimentMode::Adapted).is_err());
        assert_eq!(config.adapted_roster().len(), 1);
    }

    #[test]
    fn focused_cluster_indices_validated() {
        let config = minimal_config(
            r#"
[focused]
space = "syntactic"
cluster_a = 1
cluster_b = 9

[[models]]
language = "ita"
source = "a"
"#,
        );
        assert!(config.validate(&ExperimentMode::Focused).is_err());
    }
}
