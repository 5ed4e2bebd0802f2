//! Whitespace-separated edge lists: one `i j` pair per line, `#` comments.

use std::path::Path;

use lamp_core::{InputGraph, LabelGraph};

use crate::error::{read_to_string, Error, Result};

pub fn parse_edges(text: &str, path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(err(format!("expected two node ids, got {line:?}")));
        }
        let a = parts[0].parse().map_err(|_| err(format!("bad node id {:?}", parts[0])))?;
        let b = parts[1].parse().map_err(|_| err(format!("bad node id {:?}", parts[1])))?;
        edges.push((a, b));
    }
    Ok(edges)
}

/// Prior label graph from an edge-list file.
pub fn load_adjacency(path: &Path, num_labels: usize) -> Result<LabelGraph> {
    let edges = parse_edges(&read_to_string(path)?, path)?;
    Ok(LabelGraph::from_edges(num_labels, &edges)?)
}

/// Known input-feature graph from an edge-list file.
pub fn load_input_graph(path: &Path, num_features: usize) -> Result<InputGraph> {
    let edges = parse_edges(&read_to_string(path)?, path)?;
    Ok(InputGraph::from_edges(num_features, &edges)?)
}

pub fn serialize_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> String {
    edges.into_iter().map(|(a, b)| format!("{a} {b}\n")).collect()
}
