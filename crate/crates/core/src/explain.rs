//! Interpretability records: per-stage probes and attention maps for one sample.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::data::{Batch, Sample};
use crate::error::Result;
use crate::graph::GraphMode;
use crate::model::{LampModel, MultiLabelModel, Stage, TraceKind};
use crate::real::Real;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct StageProbe {
    pub stage: Stage,
    pub probs: Vec<f64>,
}

/// Attention weights of one block for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// Step (or FMP layer) index, 1-based.
    pub step: usize,
    pub heads: usize,
    pub rows: usize,
    pub cols: usize,
    /// `[heads, rows, cols]`.
    pub per_head: Vec<f64>,
    /// Sum over heads, `[rows, cols]`; each row sums to `heads`.
    pub summed: Vec<f64>,
}

impl AttentionMap {
    fn from_heads(step: usize, heads: usize, rows: usize, cols: usize, per_head: Vec<f64>) -> Self {
        let mut summed = vec![0.0; rows * cols];
        for h in per_head.chunks(rows * cols) {
            for (s, &v) in summed.iter_mut().zip(h) {
                *s += v;
            }
        }
        AttentionMap { step, heads, rows, cols, per_head, summed }
    }

    pub fn head(&self, k: usize) -> &[f64] {
        &self.per_head[k * self.rows * self.cols..(k + 1) * self.rows * self.cols]
    }

    pub fn summed_row(&self, r: usize) -> &[f64] {
        &self.summed[r * self.cols..(r + 1) * self.cols]
    }
}

/// Everything needed to explain one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplainRecord {
    pub sample_index: usize,
    pub true_labels: Vec<u32>,
    /// Feature id of each input node (token id for sequences, 0 for a dense vector).
    pub input_ids: Vec<usize>,
    pub probes: Vec<StageProbe>,
    pub final_probs: Vec<f64>,
    pub label_to_feature: Vec<AttentionMap>,
    /// Empty when the model is edgeless.
    pub label_to_label: Vec<AttentionMap>,
    pub feature_to_feature: Vec<AttentionMap>,
    pub graph_mode: GraphMode,
}

impl ExplainRecord {
    /// True positives plus the `top_k` highest final probabilities, sorted.
    pub fn default_labels(&self, top_k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.final_probs.len()).collect();
        order.sort_by(|&a, &b| self.final_probs[b].total_cmp(&self.final_probs[a]).then(a.cmp(&b)));
        let mut chosen: Vec<usize> = self.true_labels.iter().map(|&l| l as usize).collect();
        chosen.extend(order.into_iter().take(top_k));
        chosen.sort_unstable();
        chosen.dedup();
        chosen
    }
}

/// Runs `model` on one sample in eval mode and collects its probes and
/// attention maps.
pub fn explain<T: Real>(model: &LampModel<T>, sample: &Sample, sample_index: usize) -> Result<ExplainRecord> {
    let schema = model.config().schema();
    let batch = Batch::from_samples(&[sample], &[sample_index], &schema)?;
    let mut g = Graph::new();
    let pv = model.params().bind(&mut g, false);
    let out = model.forward(&mut g, &pv, &batch, false, &mut Rng::seed(0))?;

    let heads = model.config().heads;
    let mut record = ExplainRecord {
        sample_index,
        true_labels: sample.labels.clone(),
        input_ids: batch.ids.clone(),
        probes: out
            .probes
            .iter()
            .map(|p| StageProbe { stage: p.stage, probs: g.value(p.probs).to_f64_vec() })
            .collect(),
        final_probs: g.value(out.probs).to_f64_vec(),
        label_to_feature: Vec::new(),
        label_to_label: Vec::new(),
        feature_to_feature: Vec::new(),
        graph_mode: model.label_graph().mode(),
    };
    for trace in &out.traces {
        let t = g.value(trace.alpha);
        let (rows, cols) = (t.shape()[1], t.shape()[2]);
        let (step, list) = match trace.kind {
            TraceKind::FeatureToFeature(i) => (i, &mut record.feature_to_feature),
            TraceKind::FeatureToLabel(i) => (i, &mut record.label_to_feature),
            TraceKind::LabelToLabel(i) => (i, &mut record.label_to_label),
        };
        list.push(AttentionMap::from_heads(step, heads, rows, cols, t.to_f64_vec()));
    }
    Ok(record)
}
