//! Report emission: CSV grids (the machine interface), SVG heatmaps (the
//! figures) and the JSON summary. All output is deterministic: floats are
//! printed with Rust's shortest round-trip formatting, map keys are
//! ordered, and colors are computed from integers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::stats::{CorrelationCell, CorrelationGrid, PairSetDescriptor};
use crate::typology::FeatureArea;
use crate::weights::{MatrixKind, LAYER_COUNT};

use super::RunnerError;

/// CSV form of a grid: header row of layers, then one row per matrix kind
/// in Q, K, V, OA, DI, DO order with `rho;p` cells.
pub fn grid_to_csv(grid: &CorrelationGrid) -> String {
    let mut out = String::from("matrix");
    for layer in 0..LAYER_COUNT {
        let _ = write!(out, ",{layer}");
    }
    out.push('\n');
    for &kind in MatrixKind::ALL.iter() {
        let _ = write!(out, "{kind}");
        for layer in 0..LAYER_COUNT {
            let cell = grid.cell(kind, layer);
            let _ = write!(out, ",{};{}", cell.rho, cell.p);
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV form back into a grid; `space`, `pair_set` and `n` are
/// carried alongside the CSV, not inside it.
pub fn grid_from_csv(
    text: &str,
    space: FeatureArea,
    pair_set: PairSetDescriptor,
    n: usize,
) -> Result<CorrelationGrid, RunnerError> {
    let bad = |msg: String| RunnerError::Io(format!("bad grid CSV: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if !header.starts_with("matrix") {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut cells = Vec::with_capacity(MatrixKind::ALL.len() * LAYER_COUNT);
    for &kind in MatrixKind::ALL.iter() {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing row for {kind}")))?;
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default();
        if label != kind.as_str() {
            return Err(bad(format!("expected row {kind}, found {label:?}")));
        }
        for layer in 0..LAYER_COUNT {
            let field = fields
                .next()
                .ok_or_else(|| bad(format!("row {kind} is missing layer {layer}")))?;
            let (rho_str, p_str) = field
                .split_once(';')
                .ok_or_else(|| bad(format!("cell {field:?} is not rho;p")))?;
            let rho: f64 = rho_str
                .parse()
                .map_err(|_| bad(format!("bad rho {rho_str:?}")))?;
            let p: f64 = p_str.parse().map_err(|_| bad(format!("bad p {p_str:?}")))?;
            cells.push(CorrelationCell {
                kind,
                layer,
                rho,
                p,
                n,
            });
        }
    }
    Ok(CorrelationGrid {
        space,
        pair_set,
        cells,
    })
}

/// A 6×12 plain-value grid (deltas between two correlation grids).
pub fn delta_to_csv(deltas: &[f64]) -> String {
    assert_eq!(deltas.len(), MatrixKind::ALL.len() * LAYER_COUNT);
    let mut out = String::from("matrix");
    for layer in 0..LAYER_COUNT {
        let _ = write!(out, ",{layer}");
    }
    out.push('\n');
    for (row, &kind) in MatrixKind::ALL.iter().enumerate() {
        let _ = write!(out, "{kind}");
        for layer in 0..LAYER_COUNT {
            let _ = write!(out, ",{}", deltas[row * LAYER_COUNT + layer]);
        }
        out.push('\n');
    }
    out
}

const CELL_W: usize = 56;
const CELL_H: usize = 40;
const MARGIN_LEFT: usize = 52;
const MARGIN_TOP: usize = 56;
const MARGIN_BOTTOM: usize = 28;

/// Diverging red–black–blue scale over [−1, 1]: +1 is red, 0 black, −1 blue.
fn heat_color(value: f64) -> String {
    let v = value.clamp(-1.0, 1.0);
    let red = (v.max(0.0) * 255.0).round() as u8;
    let blue = ((-v).max(0.0) * 255.0).round() as u8;
    format!("rgb({red},0,{blue})")
}

/// Renders a grid as an SVG heatmap. Cells show rho to two decimals, with
/// an asterisk where `p < significance`; `None` p-values (delta grids)
/// never star.
pub fn heatmap_svg(
    title: &str,
    values: &[f64],
    p_values: Option<&[f64]>,
    significance: f64,
) -> String {
    assert_eq!(values.len(), MatrixKind::ALL.len() * LAYER_COUNT);
    let width = MARGIN_LEFT + CELL_W * LAYER_COUNT + 8;
    let height = MARGIN_TOP + CELL_H * MatrixKind::ALL.len() + MARGIN_BOTTOM;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\">\n"
    );
    let _ = write!(
        svg,
        "  <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    );
    let _ = write!(
        svg,
        "  <text x=\"{}\" y=\"22\" font-size=\"14\" fill=\"black\">{}</text>\n",
        MARGIN_LEFT,
        xml_escape(title)
    );
    for layer in 0..LAYER_COUNT {
        let x = MARGIN_LEFT + layer * CELL_W + CELL_W / 2;
        let _ = write!(
            svg,
            "  <text x=\"{x}\" y=\"{}\" font-size=\"12\" fill=\"black\" text-anchor=\"middle\">{layer}</text>\n",
            MARGIN_TOP - 8
        );
    }
    for (row, &kind) in MatrixKind::ALL.iter().enumerate() {
        let y = MARGIN_TOP + row * CELL_H + CELL_H / 2 + 4;
        let _ = write!(
            svg,
            "  <text x=\"{}\" y=\"{y}\" font-size=\"12\" fill=\"black\" text-anchor=\"end\">{kind}</text>\n",
            MARGIN_LEFT - 8
        );
        for layer in 0..LAYER_COUNT {
            let idx = row * LAYER_COUNT + layer;
            let x = MARGIN_LEFT + layer * CELL_W;
            let y = MARGIN_TOP + row * CELL_H;
            let _ = write!(
                svg,
                "  <rect x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" fill=\"{}\"/>\n",
                heat_color(values[idx])
            );
            let starred = p_values.map_or(false, |ps| ps[idx] < significance);
            let label = format!("{:.2}{}", values[idx], if starred { "*" } else { "" });
            let _ = write!(
                svg,
                "  <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"white\" text-anchor=\"middle\">{label}</text>\n",
                x + CELL_W / 2,
                y + CELL_H / 2 + 4
            );
        }
    }
    let _ = write!(
        svg,
        "  <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"black\">layers 0-11; * marks p &lt; {significance}</text>\n",
        MARGIN_LEFT,
        height - 10
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn grid_heatmap_svg(label: &str, grid: &CorrelationGrid, significance: f64) -> String {
    let values: Vec<f64> = grid.cells.iter().map(|c| c.rho).collect();
    let ps: Vec<f64> = grid.cells.iter().map(|c| c.p).collect();
    let title = format!(
        "{label} ({} space, {}, n={})",
        grid.space,
        grid.pair_set,
        grid.pair_count()
    );
    heatmap_svg(&title, &values, Some(&ps), significance)
}

pub fn write_file(path: &Path, contents: &str) -> Result<PathBuf, RunnerError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| RunnerError::Io(format!("cannot create {parent:?}: {e}")))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| RunnerError::Io(format!("cannot write {path:?}: {e}")))?;
    Ok(path.to_path_buf())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_grid() -> CorrelationGrid {
        let mut cells = Vec::new();
        for (row, &kind) in MatrixKind::ALL.iter().enumerate() {
            for layer in 0..LAYER_COUNT {
                cells.push(CorrelationCell {
                    kind,
                    layer,
                    rho: ((row * LAYER_COUNT + layer) as f64).sin() * 0.9,
                    p: 1.0 / (1.0 + layer as f64),
                    n: 78,
                });
            }
        }
        CorrelationGrid {
            space: FeatureArea::Syntactic,
            pair_set: PairSetDescriptor::Full,
            cells,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let grid = sample_grid();
        let csv = grid_to_csv(&grid);
        let back = grid_from_csv(&csv, FeatureArea::Syntactic, PairSetDescriptor::Full, 78).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn csv_rows_are_in_kind_order() {
        let csv = grid_to_csv(&sample_grid());
        let rows: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(rows, vec!["matrix", "Q", "K", "V", "OA", "DI", "DO"]);
    }

    #[test]
    fn heat_colors_follow_the_diverging_scale() {
        assert_eq!(heat_color(1.0), "rgb(255,0,0)");
        assert_eq!(heat_color(0.0), "rgb(0,0,0)");
        assert_eq!(heat_color(-1.0), "rgb(0,0,255)");
        assert_eq!(heat_color(0.5), "rgb(128,0,0)");
    }

    #[test]
    fn zero_grid_svg_has_black_cells_and_no_asterisks() {
        let values = vec![0.0; 72];
        let ps = vec![0.5; 72];
        let svg = heatmap_svg("all-zero", &values, Some(&ps), 0.01);
        assert!(svg.contains("rgb(0,0,0)"));
        assert!(!svg.contains('*') || !svg.contains("0.00*"));
        assert!(!svg.contains("0.00*"));
    }

    #[test]
    fn significant_cell_is_red_and_starred() {
        let mut values = vec![0.0; 72];
        let mut ps = vec![1.0; 72];
        // (OA, 5): row 3, layer 5
        let idx = 3 * LAYER_COUNT + 5;
        values[idx] = 0.66;
        ps[idx] = 0.001;
        let svg = heatmap_svg("starred", &values, Some(&ps), 0.01);
        assert!(svg.contains("0.66*"));
        assert!(svg.contains("rgb(168,0,0)"));
    }
}
