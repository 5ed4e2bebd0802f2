//! Samples, splits and padded mini-batches.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{LampError, Result};
use crate::rng::Rng;

/// How the input of a sample is represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputKind {
    /// Bag of `id:value` features; one node per active feature.
    #[default]
    Tabular,
    /// Ordered token ids; one node per position, positional encoding added.
    Sequence,
    /// A fixed-width real vector mapped to a single input node.
    DenseVector,
}

impl InputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Tabular => "tabular",
            InputKind::Sequence => "sequence",
            InputKind::DenseVector => "dense_vector",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tabular" | "sparse_tabular" => Some(InputKind::Tabular),
            "sequence" | "token_sequence" => Some(InputKind::Sequence),
            "dense_vector" | "dense" => Some(InputKind::DenseVector),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    /// `(feature id, value)` pairs, ids unique.
    Sparse(Vec<(u32, f64)>),
    Tokens(Vec<u32>),
    Dense(Vec<f64>),
}

impl Features {
    /// Number of input nodes this sample contributes (before truncation).
    pub fn num_nodes(&self) -> usize {
        match self {
            Features::Sparse(f) => f.len(),
            Features::Tokens(t) => t.len(),
            Features::Dense(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Features,
    /// Positive label ids, sorted and unique.
    pub labels: Vec<u32>,
}

/// Dataset-level facts every consumer needs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub num_labels: usize,
    /// Vocabulary size δ (tabular / sequence) or input width (dense vector).
    pub num_features: usize,
    pub input_kind: InputKind,
    pub max_len: usize,
}

impl Schema {
    pub const DEFAULT_MAX_LEN: usize = 500;

    pub fn new(num_labels: usize, num_features: usize, input_kind: InputKind) -> Self {
        Schema { num_labels, num_features, input_kind, max_len: Self::DEFAULT_MAX_LEN }
    }

    /// Checks a sample against this schema.
    pub fn validate(&self, s: &Sample) -> Result<()> {
        if let Some(&l) = s.labels.iter().find(|&&l| l as usize >= self.num_labels) {
            return Err(LampError::Data(format!("label id {} out of range for {} labels", l, self.num_labels)));
        }
        let kind_ok = matches!(
            (&s.features, self.input_kind),
            (Features::Sparse(_), InputKind::Tabular)
                | (Features::Tokens(_), InputKind::Sequence)
                | (Features::Dense(_), InputKind::DenseVector)
        );
        if !kind_ok {
            return Err(LampError::Data(format!("sample features do not match input kind {}", self.input_kind.as_str())));
        }
        match &s.features {
            Features::Sparse(f) => {
                if f.is_empty() {
                    return Err(LampError::EmptyInput("sample has no active features".into()));
                }
                if let Some((id, _)) = f.iter().find(|(id, _)| *id as usize >= self.num_features) {
                    return Err(LampError::Data(format!("feature id {} outside vocabulary of {}", id, self.num_features)));
                }
            }
            Features::Tokens(t) => {
                if t.is_empty() {
                    return Err(LampError::EmptyInput("sample has no tokens".into()));
                }
                if let Some(id) = t.iter().find(|&&id| id as usize >= self.num_features) {
                    return Err(LampError::Data(format!("token id {} outside vocabulary of {}", id, self.num_features)));
                }
            }
            Features::Dense(v) => {
                if v.len() != self.num_features {
                    return Err(LampError::Data(format!("dense vector of width {} for schema width {}", v.len(), self.num_features)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub samples: Vec<Sample>,
    pub label_names: Vec<String>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    /// A dataset with generated names (`y<id>`, `f<id>`).
    pub fn new(schema: Schema, samples: Vec<Sample>) -> Self {
        let label_names = (0..schema.num_labels).map(|i| format!("y{i}")).collect();
        let feature_names = (0..schema.num_features).map(|i| format!("f{i}")).collect();
        Dataset { schema, samples, label_names, feature_names }
    }

    pub fn label_sets(&self) -> Vec<&[u32]> {
        self.samples.iter().map(|s| s.labels.as_slice()).collect()
    }

    pub fn mean_labels_per_sample(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.labels.len()).sum::<usize>() as f64 / self.samples.len() as f64
    }

    /// Positive count per label.
    pub fn label_frequencies(&self) -> Vec<usize> {
        let mut f = vec![0; self.schema.num_labels];
        for s in &self.samples {
            for &l in &s.labels {
                f[l as usize] += 1;
            }
        }
        f
    }
}

/// Seeded shuffle into train/validation/test parts. The first two sizes are
/// `round(fraction · n)`; test takes the remainder.
pub fn split<T>(items: Vec<T>, fractions: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if fractions.iter().any(|&f| !(f >= 0.0)) {
        return Err(LampError::param("fractions", format!("{:?} contains a negative fraction", fractions)));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(LampError::param("fractions", format!("{:?} sums to {}", fractions, total)));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::seed(seed).shuffle(&mut order);
    let n_train = round_count(fractions[0] * n as f64).min(n);
    let n_val = round_count(fractions[1] * n as f64).min(n - n_train);

    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |range: core::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    let train = take(0..n_train);
    let val = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);
    Ok((train, val, test))
}

fn round_count(x: f64) -> usize {
    // no_std: round half away from zero by hand
    (x + 0.5) as usize
}

/// A padded mini-batch. Feature slot `(b, s)` lives at `b·width + s`; padding
/// slots have `valid = false`, id 0 and value 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// Node count per item after padding (max over the batch).
    pub width: usize,
    pub num_labels: usize,
    pub input_kind: InputKind,
    pub ids: Vec<usize>,
    pub values: Vec<f64>,
    /// Position index of each slot (sequence inputs).
    pub positions: Vec<usize>,
    pub valid: Vec<bool>,
    /// Raw vectors `[size, num_features]` for dense inputs.
    pub dense: Option<Vec<f64>>,
    /// 0/1 targets `[size, num_labels]`.
    pub targets: Vec<u8>,
    /// Index of each item in the split it came from.
    pub indices: Vec<usize>,
}

impl Batch {
    /// Pads `samples` into one batch. Samples must already satisfy `schema`;
    /// sequences longer than `schema.max_len` are truncated.
    pub fn from_samples(samples: &[&Sample], indices: &[usize], schema: &Schema) -> Result<Batch> {
        if samples.is_empty() {
            return Err(LampError::EmptyInput("batch has no samples".into()));
        }
        let b = samples.len();
        let l = schema.num_labels;
        let nodes = |s: &Sample| match &s.features {
            Features::Tokens(t) => t.len().min(schema.max_len),
            f => f.num_nodes(),
        };
        let width = samples.iter().map(|s| nodes(s)).max().unwrap_or(0);
        let mut batch = Batch {
            size: b,
            width,
            num_labels: l,
            input_kind: schema.input_kind,
            ids: vec![0; b * width],
            values: vec![0.0; b * width],
            positions: vec![0; b * width],
            valid: vec![false; b * width],
            dense: None,
            targets: vec![0; b * l],
            indices: indices.to_vec(),
        };
        let mut dense = Vec::new();
        for (bi, s) in samples.iter().enumerate() {
            schema.validate(s)?;
            let base = bi * width;
            match &s.features {
                Features::Sparse(f) => {
                    for (si, &(id, v)) in f.iter().enumerate() {
                        batch.ids[base + si] = id as usize;
                        batch.values[base + si] = v;
                        batch.positions[base + si] = si;
                        batch.valid[base + si] = true;
                    }
                }
                Features::Tokens(t) => {
                    for (si, &id) in t.iter().take(schema.max_len).enumerate() {
                        batch.ids[base + si] = id as usize;
                        batch.values[base + si] = 1.0;
                        batch.positions[base + si] = si;
                        batch.valid[base + si] = true;
                    }
                }
                Features::Dense(v) => {
                    batch.valid[base] = true;
                    batch.values[base] = 1.0;
                    dense.extend_from_slice(v);
                }
            }
            for &lab in &s.labels {
                batch.targets[bi * l + lab as usize] = 1;
            }
        }
        if schema.input_kind == InputKind::DenseVector {
            batch.dense = Some(dense);
        }
        Ok(batch)
    }

    pub fn targets_as<T: crate::real::Real>(&self) -> Vec<T> {
        self.targets.iter().map(|&t| if t == 1 { T::one() } else { T::zero() }).collect()
    }

    /// Number of real (non-padding) nodes of item `b`.
    pub fn item_len(&self, b: usize) -> usize {
        self.valid[b * self.width..(b + 1) * self.width].iter().filter(|&&v| v).count()
    }
}

/// Iterates a split in batches of `batch_size`, optionally shuffled by seed.
/// The final partial batch is emitted.
pub struct BatchIter<'a> {
    samples: &'a [Sample],
    schema: &'a Schema,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> BatchIter<'a> {
    pub fn new(samples: &'a [Sample], schema: &'a Schema, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Self> {
        if batch_size == 0 {
            return Err(LampError::param("batch_size", "must be at least 1"));
        }
        for s in samples {
            schema.validate(s)?;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        if let Some(seed) = shuffle_seed {
            Rng::seed(seed).shuffle(&mut order);
        }
        Ok(BatchIter { samples, schema, order, batch_size, pos: 0 })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let refs: Vec<&Sample> = idx.iter().map(|&i| &self.samples[i]).collect();
        // Samples were validated in `new`.
        Some(Batch::from_samples(&refs, idx, self.schema).expect("validated samples"))
    }
}
