//! Explain traces (JSON) and heatmap plots (SVG).
//!
//! Every real number is written with 9 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use lamp_core::explain::{AttentionMap, ExplainRecord, StageProbe};
use lamp_core::{GraphMode, Stage};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const NO_EDGES_NOTE: &str = "no edges; stage skipped";

/// Rounds to 9 significant digits.
pub fn sig9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn reals(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| json!(sig9(x))).collect())
}

fn matrix(v: &[f64], rows: usize, cols: usize) -> Value {
    Value::Array((0..rows).map(|r| reals(&v[r * cols..(r + 1) * cols])).collect())
}

fn map_json(m: &AttentionMap) -> Value {
    json!({
        "step": m.step,
        "heads": m.heads,
        "rows": m.rows,
        "cols": m.cols,
        "per_head": Value::Array((0..m.heads).map(|k| matrix(m.head(k), m.rows, m.cols)).collect()),
        "summed": matrix(&m.summed, m.rows, m.cols),
    })
}

/// Names shown next to the numbers in traces and plots.
#[derive(Clone, Debug, PartialEq)]
pub struct Names {
    pub labels: Vec<String>,
    /// One entry per input node of the sample.
    pub inputs: Vec<String>,
}

impl Names {
    pub fn new(record: &ExplainRecord, label_names: &[String], feature_names: &[String], dense: bool) -> Self {
        let inputs = if dense {
            vec!["input".to_string(); record.input_ids.len()]
        } else {
            record.input_ids.iter().map(|&id| feature_names.get(id).cloned().unwrap_or_else(|| format!("f{id}"))).collect()
        };
        Names { labels: label_names.to_vec(), inputs }
    }
}

pub fn record_to_json(record: &ExplainRecord, names: &Names, selected: &[usize]) -> Value {
    let mut obj = Map::new();
    obj.insert("sample_index".into(), json!(record.sample_index));
    obj.insert("graph_mode".into(), json!(record.graph_mode.as_str()));
    obj.insert("true_labels".into(), json!(record.true_labels));
    obj.insert("selected_labels".into(), json!(selected));
    obj.insert("label_names".into(), json!(names.labels));
    obj.insert("input_ids".into(), json!(record.input_ids));
    obj.insert("input_names".into(), json!(names.inputs));
    obj.insert(
        "probes".into(),
        Value::Array(
            record.probes.iter().map(|p| json!({"stage": p.stage.to_string(), "probs": reals(&p.probs)})).collect(),
        ),
    );
    obj.insert("final_probs".into(), reals(&record.final_probs));
    obj.insert("feature_to_feature".into(), Value::Array(record.feature_to_feature.iter().map(map_json).collect()));
    obj.insert("label_to_feature".into(), Value::Array(record.label_to_feature.iter().map(map_json).collect()));
    obj.insert("label_to_label".into(), Value::Array(record.label_to_label.iter().map(map_json).collect()));
    if record.graph_mode == GraphMode::Edgeless {
        obj.insert("label_to_label_note".into(), json!(NO_EDGES_NOTE));
    }
    Value::Object(obj)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Data(format!("explain trace: {}", msg.into()))
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| bad(format!("missing field {key}")))
}

fn as_usize(v: &Value, key: &str) -> Result<usize> {
    field(v, key)?.as_u64().map(|x| x as usize).ok_or_else(|| bad(format!("{key} is not an integer")))
}

fn as_reals(v: &Value) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| bad("expected an array"))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| bad("expected a number")))
        .collect()
}

fn as_matrix(v: &Value, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let rs = v.as_array().ok_or_else(|| bad("expected a matrix"))?;
    if rs.len() != rows {
        return Err(bad(format!("matrix has {} rows, expected {rows}", rs.len())));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in rs {
        let row = as_reals(r)?;
        if row.len() != cols {
            return Err(bad(format!("matrix row has {} columns, expected {cols}", row.len())));
        }
        out.extend(row);
    }
    Ok(out)
}

fn map_from_json(v: &Value) -> Result<AttentionMap> {
    let (heads, rows, cols) = (as_usize(v, "heads")?, as_usize(v, "rows")?, as_usize(v, "cols")?);
    let hs = field(v, "per_head")?.as_array().ok_or_else(|| bad("per_head is not an array"))?;
    if hs.len() != heads {
        return Err(bad("per_head count differs from heads"));
    }
    let mut per_head = Vec::with_capacity(heads * rows * cols);
    for h in hs {
        per_head.extend(as_matrix(h, rows, cols)?);
    }
    Ok(AttentionMap {
        step: as_usize(v, "step")?,
        heads,
        rows,
        cols,
        per_head,
        summed: as_matrix(field(v, "summed")?, rows, cols)?,
    })
}

fn maps_from_json(v: &Value, key: &str) -> Result<Vec<AttentionMap>> {
    field(v, key)?.as_array().ok_or_else(|| bad(format!("{key} is not an array")))?.iter().map(map_from_json).collect()
}

fn parse_stage(s: &str) -> Option<Stage> {
    let (t, p) = s.split_once('.')?;
    let part: u8 = p.parse().ok()?;
    (part == 1 || part == 2).then_some(Stage { step: t.parse().ok()?, part })
}

/// Reloads a trace written by [`record_to_json`].
pub fn record_from_json(text: &str) -> Result<(ExplainRecord, Names, Vec<usize>)> {
    let v: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let ids = |key: &str| -> Result<Vec<u64>> {
        field(&v, key)?
            .as_array()
            .ok_or_else(|| bad(format!("{key} is not an array")))?
            .iter()
            .map(|x| x.as_u64().ok_or_else(|| bad(format!("{key} holds a non-integer"))))
            .collect()
    };
    let strings = |key: &str| -> Result<Vec<String>> {
        field(&v, key)?
            .as_array()
            .ok_or_else(|| bad(format!("{key} is not an array")))?
            .iter()
            .map(|x| x.as_str().map(str::to_string).ok_or_else(|| bad(format!("{key} holds a non-string"))))
            .collect()
    };
    let probes = field(&v, "probes")?
        .as_array()
        .ok_or_else(|| bad("probes is not an array"))?
        .iter()
        .map(|p| {
            let s = field(p, "stage")?.as_str().ok_or_else(|| bad("stage is not a string"))?;
            let stage = parse_stage(s).ok_or_else(|| bad(format!("bad stage {s:?}")))?;
            Ok(StageProbe { stage, probs: as_reals(field(p, "probs")?)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let mode = field(&v, "graph_mode")?.as_str().and_then(GraphMode::parse).ok_or_else(|| bad("bad graph_mode"))?;
    let record = ExplainRecord {
        sample_index: as_usize(&v, "sample_index")?,
        true_labels: ids("true_labels")?.into_iter().map(|x| x as u32).collect(),
        input_ids: ids("input_ids")?.into_iter().map(|x| x as usize).collect(),
        probes,
        final_probs: as_reals(field(&v, "final_probs")?)?,
        label_to_feature: maps_from_json(&v, "label_to_feature")?,
        label_to_label: maps_from_json(&v, "label_to_label")?,
        feature_to_feature: maps_from_json(&v, "feature_to_feature")?,
        graph_mode: mode,
    };
    let names = Names { labels: strings("label_names")?, inputs: strings("input_names")? };
    let selected = ids("selected_labels")?.into_iter().map(|x| x as usize).collect();
    Ok((record, names, selected))
}

/// One heatmap panel: `values` is `rows × cols`, shaded on `[0, vmax]`.
pub struct Panel<'a> {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<f64>,
    pub vmax: f64,
    pub note: Option<&'a str>,
}

const CELL: usize = 22;
const ROW_LABEL_W: usize = 120;
const COL_LABEL_H: usize = 90;
const TITLE_H: usize = 28;
const GAP: usize = 24;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn shade(v: f64, vmax: f64) -> String {
    let t = if vmax > 0.0 { (v / vmax).clamp(0.0, 1.0) } else { 0.0 };
    let c = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(255.0, 8.0), c(255.0, 48.0), c(255.0, 107.0))
}

fn panel_height(p: &Panel) -> usize {
    TITLE_H + COL_LABEL_H + p.row_labels.len().max(1) * CELL + if p.note.is_some() { CELL } else { 0 }
}

/// Renders stacked panels as a standalone SVG document.
pub fn render_svg(panels: &[Panel]) -> String {
    let width = panels.iter().map(|p| ROW_LABEL_W + p.col_labels.len().max(8) * CELL + 20).max().unwrap_or(200);
    let height: usize = panels.iter().map(|p| panel_height(p) + GAP).sum::<usize>() + GAP;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let mut y0 = GAP;
    for p in panels {
        let _ = writeln!(s, r#"<text x="10" y="{}" font-size="14">{}</text>"#, y0 + 16, escape(&p.title));
        let gy = y0 + TITLE_H + COL_LABEL_H;
        for (c, label) in p.col_labels.iter().enumerate() {
            let x = ROW_LABEL_W + c * CELL + CELL / 2;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
                gy - 4,
                gy - 4,
                escape(label)
            );
        }
        for (r, label) in p.row_labels.iter().enumerate() {
            let y = gy + r * CELL;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                ROW_LABEL_W - 6,
                y + CELL / 2 + 4,
                escape(label)
            );
            for c in 0..p.col_labels.len() {
                let v = p.values[r * p.col_labels.len() + c];
                let _ = writeln!(
                    s,
                    r##"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#dddddd"><title>{:.4}</title></rect>"##,
                    ROW_LABEL_W + c * CELL,
                    shade(v, p.vmax),
                    v
                );
            }
        }
        if let Some(note) = p.note {
            let _ = writeln!(s, r#"<text x="10" y="{}">{}</text>"#, gy + p.row_labels.len() * CELL + 16, escape(note));
        }
        y0 += panel_height(p) + GAP;
    }
    s.push_str("</svg>\n");
    s
}

fn label_name(names: &Names, l: usize) -> String {
    names.labels.get(l).cloned().unwrap_or_else(|| format!("y{l}"))
}

/// Probe heatmap: one row per stage (1.1, 1.2, ...), one column per selected label.
pub fn probe_panels(record: &ExplainRecord, names: &Names, selected: &[usize]) -> Vec<Panel<'static>> {
    let cols: Vec<String> = selected.iter().map(|&l| label_name(names, l)).collect();
    let values = record.probes.iter().flat_map(|p| selected.iter().map(|&l| p.probs[l])).collect();
    vec![Panel {
        title: format!("Intermediate predictions, sample {}", record.sample_index),
        row_labels: record.probes.iter().map(|p| p.stage.to_string()).collect(),
        col_labels: cols,
        values,
        vmax: 1.0,
        note: None,
    }]
}

/// Label-to-Feature attention summed over heads, one panel per step.
pub fn label_to_feature_panels(record: &ExplainRecord, names: &Names, selected: &[usize]) -> Vec<Panel<'static>> {
    record
        .label_to_feature
        .iter()
        .map(|m| Panel {
            title: format!("Label-to-Feature attention, step {} (sum of {} heads)", m.step, m.heads),
            row_labels: selected.iter().map(|&l| label_name(names, l)).collect(),
            col_labels: names.inputs.clone(),
            values: selected.iter().flat_map(|&l| m.summed_row(l).to_vec()).collect(),
            vmax: m.heads as f64,
            note: None,
        })
        .collect()
}

/// Label-to-Label attention summed over heads, restricted to the selected labels.
pub fn label_to_label_panels(record: &ExplainRecord, names: &Names, selected: &[usize]) -> Vec<Panel<'static>> {
    if record.label_to_label.is_empty() {
        return vec![Panel {
            title: "Label-to-Label attention".into(),
            row_labels: Vec::new(),
            col_labels: Vec::new(),
            values: Vec::new(),
            vmax: 1.0,
            note: Some(NO_EDGES_NOTE),
        }];
    }
    record
        .label_to_label
        .iter()
        .map(|m| Panel {
            title: format!("Label-to-Label attention, step {} (sum of {} heads)", m.step, m.heads),
            row_labels: selected.iter().map(|&l| label_name(names, l)).collect(),
            col_labels: selected.iter().map(|&l| label_name(names, l)).collect(),
            values: selected.iter().flat_map(|&r| selected.iter().map(move |&c| m.summed[r * m.cols + c])).collect(),
            vmax: m.heads as f64,
            note: None,
        })
        .collect()
}

pub const TRACE_FILE: &str = "explain.json";
pub const PROBE_PLOT: &str = "probes.svg";
pub const LABEL_FEATURE_PLOT: &str = "label_to_feature.svg";
pub const LABEL_LABEL_PLOT: &str = "label_to_label.svg";

/// Writes the trace and the three plots into `dir`.
pub fn write_explain(dir: &Path, record: &ExplainRecord, names: &Names, selected: &[usize]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    let trace = serde_json::to_string_pretty(&record_to_json(record, names, selected)).map_err(|e| bad(e.to_string()))?;
    write(TRACE_FILE, trace + "\n")?;
    write(PROBE_PLOT, render_svg(&probe_panels(record, names, selected)))?;
    write(LABEL_FEATURE_PLOT, render_svg(&label_to_feature_panels(record, names, selected)))?;
    write(LABEL_LABEL_PLOT, render_svg(&label_to_label_panels(record, names, selected)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_keeps_nine_digits() {
        assert_eq!(sig9(0.123456789123), 0.123456789);
        assert_eq!(sig9(1.0), 1.0);
        assert_eq!(sig9(0.0), 0.0);
        assert_eq!(sig9(sig9(1.23456789876543)), sig9(1.23456789876543));
    }

    #[test]
    fn svg_escapes_names() {
        let p = Panel {
            title: "a<b".into(),
            row_labels: vec!["r&".into()],
            col_labels: vec!["c".into()],
            values: vec![0.5],
            vmax: 1.0,
            note: None,
        };
        let svg = render_svg(&[p]);
        assert!(svg.contains("a&lt;b") && svg.contains("r&amp;"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
