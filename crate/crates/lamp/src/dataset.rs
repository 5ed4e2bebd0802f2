//! Line-oriented dataset files and schema files.
//!
//! A dataset line is `<labels>\t<payload>`:
//!
//! ```text
//! 2,5	7:1 13:1          tabular: id:value pairs
//! 0	4 17 17 9          sequence: token ids
//! 	0.5,1.25,-3        dense vector: comma-separated reals
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lamp_core::{Dataset, Features, InputKind, Sample, Schema};

use crate::error::{read_to_string, Error, Result};

/// A parsed schema file plus the optional name files it points to.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaFile {
    pub schema: Schema,
    pub label_names: Option<Vec<String>>,
    pub feature_names: Option<Vec<String>>,
}

/// Parses `key=value` schema text. Required keys: `L`, `delta`,
/// `input_kind`; optional: `max_len`, `label_names`, `feature_names`
/// (paths relative to `base`).
pub fn parse_schema(text: &str, path: &Path, base: Option<&Path>) -> Result<SchemaFile> {
    let mut l = None;
    let mut delta = None;
    let mut kind = None;
    let mut max_len = Schema::DEFAULT_MAX_LEN;
    let mut label_file = None;
    let mut feature_file = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        let num = |v: &str| v.parse::<usize>().map_err(|_| err(format!("{k}: {v:?} is not a non-negative integer")));
        match k {
            "L" | "num_labels" => l = Some(num(v)?),
            "delta" | "num_features" => delta = Some(num(v)?),
            "max_len" => max_len = num(v)?,
            "input_kind" => {
                kind = Some(InputKind::parse(v).ok_or_else(|| err(format!("unknown input_kind {v:?}")))?)
            }
            "label_names" => label_file = Some(v.to_string()),
            "feature_names" => feature_file = Some(v.to_string()),
            _ => return Err(err(format!("unknown key {k:?}"))),
        }
    }
    let missing = |key: &str| Error::Data(format!("{}: missing required key {key}", path.display()));
    let schema = Schema {
        num_labels: l.ok_or_else(|| missing("L"))?,
        num_features: delta.ok_or_else(|| missing("delta"))?,
        input_kind: kind.ok_or_else(|| missing("input_kind"))?,
        max_len,
    };
    if schema.num_labels == 0 || schema.num_features == 0 || schema.max_len == 0 {
        return Err(Error::Data(format!("{}: L, delta and max_len must be positive", path.display())));
    }
    let resolve = |f: &str| -> PathBuf {
        match base {
            Some(b) if Path::new(f).is_relative() => b.join(f),
            _ => PathBuf::from(f),
        }
    };
    let label_names = label_file.map(|f| read_names(&resolve(&f), schema.num_labels)).transpose()?;
    let feature_names = feature_file.map(|f| read_names(&resolve(&f), schema.num_features)).transpose()?;
    Ok(SchemaFile { schema, label_names, feature_names })
}

pub fn load_schema(path: &Path) -> Result<SchemaFile> {
    let text = read_to_string(path)?;
    parse_schema(&text, path, path.parent())
}

fn read_names(path: &Path, expected: usize) -> Result<Vec<String>> {
    let names: Vec<String> = read_to_string(path)?.lines().map(|l| l.trim().to_string()).collect();
    if names.len() != expected {
        return Err(Error::Data(format!("{}: {} names, expected {}", path.display(), names.len(), expected)));
    }
    Ok(names)
}

/// Parses dataset text against `schema`.
pub fn parse_dataset(text: &str, path: &Path, schema: &Schema) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let sample = parse_line(raw, schema).map_err(|msg| Error::Parse { path: path.to_path_buf(), line: i + 1, msg })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Reads a dataset file and attaches names from the schema file (or
/// generated ones).
pub fn load_dataset(path: &Path, schema: &SchemaFile) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let samples = parse_dataset(&text, path, &schema.schema)?;
    let mut ds = Dataset::new(schema.schema.clone(), samples);
    if let Some(n) = &schema.label_names {
        ds.label_names = n.clone();
    }
    if let Some(n) = &schema.feature_names {
        ds.feature_names = n.clone();
    }
    Ok(ds)
}

fn parse_line(line: &str, schema: &Schema) -> std::result::Result<Sample, String> {
    let (label_field, payload) = line.split_once('\t').ok_or("missing tab between labels and features")?;
    let mut labels = BTreeSet::new();
    for tok in label_field.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let id: u32 = tok.parse().map_err(|_| format!("bad label id {tok:?}"))?;
        if id as usize >= schema.num_labels {
            return Err(format!("label id {id} out of range for {} labels", schema.num_labels));
        }
        labels.insert(id);
    }
    let features = match schema.input_kind {
        InputKind::Tabular => {
            let mut pairs: Vec<(u32, f64)> = Vec::new();
            let mut seen = BTreeSet::new();
            for tok in payload.split_whitespace() {
                let (id, value) = tok.split_once(':').ok_or_else(|| format!("expected id:value, got {tok:?}"))?;
                let id: u32 = id.parse().map_err(|_| format!("bad feature id in {tok:?}"))?;
                let value: f64 = value.parse().map_err(|_| format!("bad feature value in {tok:?}"))?;
                if !value.is_finite() {
                    return Err(format!("non-finite feature value in {tok:?}"));
                }
                if id as usize >= schema.num_features {
                    return Err(format!("feature id {id} outside vocabulary of {}", schema.num_features));
                }
                if !seen.insert(id) {
                    return Err(format!("duplicate feature id {id}"));
                }
                if value != 0.0 {
                    pairs.push((id, value));
                }
            }
            if pairs.is_empty() {
                return Err("sample has no non-zero features".into());
            }
            pairs.sort_by_key(|p| p.0);
            Features::Sparse(pairs)
        }
        InputKind::Sequence => {
            let mut tokens = Vec::new();
            for tok in payload.split_whitespace() {
                let id: u32 = tok.parse().map_err(|_| format!("bad token id {tok:?}"))?;
                if id as usize >= schema.num_features {
                    return Err(format!("token id {id} outside vocabulary of {}", schema.num_features));
                }
                tokens.push(id);
            }
            if tokens.is_empty() {
                return Err("sample has no tokens".into());
            }
            if tokens.len() > schema.max_len {
                log::warn!("truncating sequence of {} tokens to {}", tokens.len(), schema.max_len);
                tokens.truncate(schema.max_len);
            }
            Features::Tokens(tokens)
        }
        InputKind::DenseVector => {
            let values = payload
                .split(',')
                .map(|t| {
                    let t = t.trim();
                    t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("bad real {t:?}"))
                })
                .collect::<std::result::Result<Vec<f64>, String>>()?;
            if values.len() != schema.num_features {
                return Err(format!("dense vector of width {}, schema says {}", values.len(), schema.num_features));
            }
            Features::Dense(values)
        }
    };
    Ok(Sample { features, labels: labels.into_iter().collect() })
}

/// Writes samples in canonical form (sorted label and feature ids).
pub fn serialize_dataset(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        let labels: Vec<String> = s.labels.iter().map(u32::to_string).collect();
        out.push_str(&labels.join(","));
        out.push('\t');
        match &s.features {
            Features::Sparse(pairs) => {
                let mut pairs = pairs.clone();
                pairs.sort_by_key(|p| p.0);
                for (i, (id, v)) in pairs.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{id}:{v}");
                }
            }
            Features::Tokens(t) => {
                let toks: Vec<String> = t.iter().map(u32::to_string).collect();
                out.push_str(&toks.join(" "));
            }
            Features::Dense(v) => {
                let vals: Vec<String> = v.iter().map(f64::to_string).collect();
                out.push_str(&vals.join(","));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::write(path, serialize_dataset(samples)).map_err(|e| Error::io(path, e))
}

/// Text of a schema file for `schema`.
pub fn serialize_schema(schema: &Schema) -> String {
    format!(
        "L={}\ndelta={}\ninput_kind={}\nmax_len={}\n",
        schema.num_labels,
        schema.num_features,
        schema.input_kind.as_str(),
        schema.max_len
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tab(l: usize, d: usize) -> Schema {
        Schema::new(l, d, InputKind::Tabular)
    }

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn tabular_line() {
        let s = parse_dataset("2,5\t7:1 13:1\n", p(), &tab(6, 20)).unwrap();
        assert_eq!(s[0].labels, vec![2, 5]);
        assert_eq!(s[0].features, Features::Sparse(vec![(7, 1.0), (13, 1.0)]));
    }

    #[test]
    fn empty_label_field() {
        let s = parse_dataset("\t3:1\n", p(), &tab(6, 20)).unwrap();
        assert!(s[0].labels.is_empty());
    }

    #[test]
    fn zero_values_are_dropped() {
        let s = parse_dataset("0\t3:0 4:2.5\n", p(), &tab(6, 20)).unwrap();
        assert_eq!(s[0].features, Features::Sparse(vec![(4, 2.5)]));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_dataset("0\t1:1\n\n1\t2:1 2:1\n", p(), &tab(6, 20)).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate"));
            }
            e => panic!("{e}"),
        }
        assert!(matches!(parse_dataset("0 1:1\n", p(), &tab(6, 20)), Err(Error::Parse { line: 1, .. })));
        assert!(parse_dataset("9\t1:1\n", p(), &tab(6, 20)).is_err());
    }

    #[test]
    fn sequences_and_dense() {
        let mut schema = Schema::new(3, 50, InputKind::Sequence);
        schema.max_len = 3;
        let s = parse_dataset("1\t4 5 6 7 8\n", p(), &schema).unwrap();
        assert_eq!(s[0].features, Features::Tokens(vec![4, 5, 6]));
        let schema = Schema::new(3, 3, InputKind::DenseVector);
        let s = parse_dataset("0,2\t0.5, -1,2\n", p(), &schema).unwrap();
        assert_eq!(s[0].features, Features::Dense(vec![0.5, -1.0, 2.0]));
        assert!(parse_dataset("0\t1,2\n", p(), &schema).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let text = "5,2\t13:1 7:0.5\n\t3:1\n";
        let s = parse_dataset(text, p(), &tab(6, 20)).unwrap();
        let canon = serialize_dataset(&s);
        assert_eq!(canon, "2,5\t7:0.5 13:1\n\t3:1\n");
        assert_eq!(parse_dataset(&canon, p(), &tab(6, 20)).unwrap(), s);
    }

    #[test]
    fn schema_file() {
        let sf = parse_schema("# bibtex\nL=159\ndelta=1836\ninput_kind=tabular\n", p(), None).unwrap();
        assert_eq!(sf.schema, Schema::new(159, 1836, InputKind::Tabular));
        assert!(parse_schema("L=3\ninput_kind=tabular\n", p(), None).is_err());
        assert!(parse_schema("L=3\ndelta=4\ninput_kind=images\n", p(), None).is_err());
        let round = parse_schema(&serialize_schema(&sf.schema), p(), None).unwrap();
        assert_eq!(round.schema, sf.schema);
    }
}
