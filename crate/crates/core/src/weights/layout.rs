//! Mapping from the canonical matrix kinds to model-specific tensor names.
//!
//! Checkpoints of the same architecture differ in naming prefixes (some
//! carry a model-family prefix, some none), so a layout config lists name
//! templates with a `{layer}` placeholder plus candidate prefixes; the
//! resolver picks the first prefix under which every (kind, layer) name
//! exists in the container.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{MatrixKind, TensorContainer, WeightsError};

/// Layout configuration, usually read from a TOML file.
#[derive(Debug, Clone, Deserialize)]
pub struct LayoutConfig {
    pub layer_count: usize,
    pub prefix_candidates: Vec<String>,
    pub templates: Templates,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Templates {
    pub q: String,
    pub k: String,
    pub v: String,
    pub oa: String,
    pub di: String,
    pub r#do: String,
}

impl LayoutConfig {
    pub fn from_path(path: &Path) -> Result<Self, WeightsError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| {
            WeightsError::CorruptContainer(format!("bad layout config {path:?}: {e}"))
        })
    }

    /// Standard encoder naming with an optional model-family prefix.
    pub fn bert_base() -> Self {
        LayoutConfig {
            layer_count: 12,
            prefix_candidates: vec!["bert.".into(), String::new()],
            templates: Templates {
                q: "encoder.layer.{layer}.attention.self.query.weight".into(),
                k: "encoder.layer.{layer}.attention.self.key.weight".into(),
                v: "encoder.layer.{layer}.attention.self.value.weight".into(),
                oa: "encoder.layer.{layer}.attention.output.dense.weight".into(),
                di: "encoder.layer.{layer}.intermediate.dense.weight".into(),
                r#do: "encoder.layer.{layer}.output.dense.weight".into(),
            },
        }
    }

    fn template(&self, kind: MatrixKind) -> &str {
        match kind {
            MatrixKind::Q => &self.templates.q,
            MatrixKind::K => &self.templates.k,
            MatrixKind::V => &self.templates.v,
            MatrixKind::OA => &self.templates.oa,
            MatrixKind::DI => &self.templates.di,
            MatrixKind::DO => &self.templates.r#do,
        }
    }

    fn render(&self, prefix: &str, kind: MatrixKind, layer: usize) -> String {
        format!(
            "{prefix}{}",
            self.template(kind).replace("{layer}", &layer.to_string())
        )
    }
}

/// A fully resolved layout: every (kind, layer) maps to an existing tensor.
#[derive(Debug, Clone)]
pub struct LayoutMap {
    prefix: String,
    layer_count: usize,
    names: BTreeMap<(MatrixKind, usize), String>,
}

impl LayoutMap {
    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn tensor_name(&self, kind: MatrixKind, layer: usize) -> &str {
        &self.names[&(kind, layer)]
    }
}

/// Verifies all `kinds × layers` names against the container, trying each
/// prefix candidate in order. On failure the error lists the names missing
/// under the closest candidate.
pub fn resolve_layout(
    config: &LayoutConfig,
    container: &TensorContainer,
) -> Result<LayoutMap, WeightsError> {
    let mut best_missing: Option<Vec<String>> = None;
    for prefix in &config.prefix_candidates {
        let mut names = BTreeMap::new();
        let mut missing = Vec::new();
        for layer in 0..config.layer_count {
            for &kind in MatrixKind::ALL.iter() {
                let name = config.render(prefix, kind, layer);
                if container.contains(&name) {
                    names.insert((kind, layer), name);
                } else {
                    missing.push(name);
                }
            }
        }
        if missing.is_empty() {
            return Ok(LayoutMap {
                prefix: prefix.clone(),
                layer_count: config.layer_count,
                names,
            });
        }
        if best_missing
            .as_ref()
            .map_or(true, |prev| missing.len() < prev.len())
        {
            best_missing = Some(missing);
        }
    }
    Err(WeightsError::LayoutMismatch {
        missing: best_missing.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::write_safetensors_f32;

    fn model_tensors(prefix: &str, layers: usize, h: usize) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let config = LayoutConfig::bert_base();
        let mut tensors = Vec::new();
        for layer in 0..layers {
            for &kind in MatrixKind::ALL.iter() {
                let shape = match kind {
                    MatrixKind::DI => vec![4 * h, h],
                    MatrixKind::DO => vec![h, 4 * h],
                    _ => vec![h, h],
                };
                let len = shape.iter().product();
                tensors.push((
                    config.render(prefix, kind, layer),
                    shape,
                    vec![0.25f32; len],
                ));
            }
        }
        tensors
    }

    fn write_model(name: &str, prefix: &str, layers: usize, h: usize) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("typosim-layout-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        write_safetensors_f32(&path, &model_tensors(prefix, layers, h)).unwrap();
        path
    }

    #[test]
    fn resolves_full_model() {
        let path = write_model("full.safetensors", "bert.", 12, 4);
        let container = TensorContainer::open(&path).unwrap();
        let layout = resolve_layout(&LayoutConfig::bert_base(), &container).unwrap();
        assert_eq!(layout.prefix(), "bert.");
        assert_eq!(layout.names.len(), 72);
        assert_eq!(
            layout.tensor_name(MatrixKind::V, 11),
            "bert.encoder.layer.11.attention.self.value.weight"
        );
    }

    #[test]
    fn second_prefix_candidate_wins_when_first_misses() {
        let path = write_model("noprefix.safetensors", "", 12, 4);
        let container = TensorContainer::open(&path).unwrap();
        let layout = resolve_layout(&LayoutConfig::bert_base(), &container).unwrap();
        assert_eq!(layout.prefix(), "");
    }

    #[test]
    fn missing_tensor_is_reported_by_name() {
        let mut tensors = model_tensors("bert.", 12, 4);
        tensors.retain(|(name, _, _)| !name.contains("layer.11.attention.self.value"));
        let dir = std::env::temp_dir().join("typosim-layout-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("missing.safetensors");
        write_safetensors_f32(&path, &tensors).unwrap();
        let container = TensorContainer::open(&path).unwrap();
        let err = resolve_layout(&LayoutConfig::bert_base(), &container).unwrap_err();
        match err {
            WeightsError::LayoutMismatch { missing } => {
                assert_eq!(missing.len(), 1);
                assert!(missing[0].contains("layer.11"));
                assert!(missing[0].contains("value"));
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
