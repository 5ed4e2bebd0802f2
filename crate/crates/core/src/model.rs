//! The LaMP network: input embedding, optional feature message passing,
//! `T` alternating Feature-to-Label / Label-to-Label steps and the tied
//! sigmoid readout.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::attention::{MpnnBlockParams, NeighborhoodMask};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{Batch, InputKind, Schema};
use crate::error::{LampError, Result};
use crate::graph::{GraphMode, InputGraph, LabelGraph};
use crate::loss::{self, IntermediateStages};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::real::{Precision, Real};
use crate::rng::Rng;

/// Hyperparameters of a LaMP network.
#[derive(Clone, Debug, PartialEq)]
pub struct LampConfig {
    pub num_labels: usize,
    /// Vocabulary size δ, or input width for dense-vector inputs.
    pub num_features: usize,
    pub input_kind: InputKind,
    pub max_len: usize,
    pub d: usize,
    pub heads: usize,
    pub steps: usize,
    pub lambda: f64,
    pub dropout: f64,
    pub use_fmp: bool,
    pub fmp_layers: usize,
    pub graph_mode: GraphMode,
    pub use_positional: bool,
    pub intermediate: IntermediateStages,
    pub precision: Precision,
    pub seed: u64,
}

impl LampConfig {
    /// Defaults for a schema: d=512, 4 heads, 2 steps, no intermediate
    /// loss, dropout 0.2, fully connected label graph, no FMP.
    pub fn for_schema(schema: &Schema) -> Self {
        LampConfig {
            num_labels: schema.num_labels,
            num_features: schema.num_features,
            input_kind: schema.input_kind,
            max_len: schema.max_len,
            d: 512,
            heads: 4,
            steps: 2,
            lambda: 0.0,
            dropout: 0.2,
            use_fmp: false,
            fmp_layers: 2,
            graph_mode: GraphMode::FullyConnected,
            use_positional: schema.input_kind == InputKind::Sequence,
            intermediate: IntermediateStages::AllProbes,
            precision: Precision::F32,
            seed: 0,
        }
    }

    pub fn schema(&self) -> Schema {
        Schema {
            num_labels: self.num_labels,
            num_features: self.num_features,
            input_kind: self.input_kind,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels == 0 {
            return Err(LampError::param("num_labels", "must be at least 1"));
        }
        if self.num_features == 0 {
            return Err(LampError::param("num_features", "must be at least 1"));
        }
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(LampError::param("heads", format!("d={} is not divisible by K={}", self.d, self.heads)));
        }
        if self.steps == 0 {
            return Err(LampError::param("steps", "T must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LampError::param("lambda", format!("{} is not a finite non-negative weight", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LampError::param("dropout", format!("rate {} outside [0, 1)", self.dropout)));
        }
        if self.use_fmp && self.fmp_layers == 0 {
            return Err(LampError::param("fmp_layers", "feature message passing needs at least one layer"));
        }
        if self.use_positional && self.input_kind != InputKind::Sequence {
            return Err(LampError::param("use_positional", "positional encodings apply to sequence inputs only"));
        }
        if self.max_len == 0 {
            return Err(LampError::param("max_len", "must be at least 1"));
        }
        Ok(())
    }
}

/// A probe point: `t.1` after Feature-to-Label, `t.2` after Label-to-Label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stage {
    /// 1-based step index.
    pub step: usize,
    /// 1 or 2.
    pub part: u8,
}

impl Stage {
    pub fn feature_to_label(step: usize) -> Self {
        Stage { step, part: 1 }
    }

    pub fn label_to_label(step: usize) -> Self {
        Stage { step, part: 2 }
    }

    /// All `2T` stages in forward order.
    pub fn all(steps: usize) -> Vec<Stage> {
        (1..=steps).flat_map(|t| [Stage::feature_to_label(t), Stage::label_to_label(t)]).collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.step, self.part)
    }
}

/// Readout probabilities `[B, L]` at one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub stage: Stage,
    pub probs: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    /// Feature message passing layer (1-based).
    FeatureToFeature(usize),
    FeatureToLabel(usize),
    LabelToLabel(usize),
}

/// Attention weights `[B·K, R, C]` recorded at one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionTrace {
    pub kind: TraceKind,
    pub alpha: Var,
}

/// Everything a forward pass leaves on the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// Final probabilities `[B, L]`.
    pub probs: Var,
    /// Probes in stage order; empty for models without stages.
    pub probes: Vec<Probe>,
    pub traces: Vec<AttentionTrace>,
}

/// Common surface of LaMP and the MLP baseline, used by the trainer.
pub trait MultiLabelModel<T: Real> {
    fn num_labels(&self) -> usize;
    fn schema(&self) -> Schema;
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;

    fn forward(&self, g: &mut Graph<T>, pv: &ParamVars, batch: &Batch, training: bool, rng: &mut Rng)
        -> Result<ForwardOutput>;

    /// Scalar training objective for a forward output.
    fn training_loss(&self, g: &mut Graph<T>, out: &ForwardOutput, batch: &Batch) -> Result<Var>;

    /// Eval-mode probabilities, row-major `[B, L]`.
    fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let pv = self.params().bind(&mut g, false);
        let mut rng = Rng::seed(0);
        let out = self.forward(&mut g, &pv, batch, false, &mut rng)?;
        Ok(g.value(out.probs).to_f64_vec())
    }
}

/// Which use of the tied label table a forward pass should cut the gradient
/// of. Only useful for inspecting how the two uses contribute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TiedUse {
    #[default]
    Both,
    /// Gradient flows only through the initial label-node states.
    EmbeddingOnly,
    /// Gradient flows only through the readout.
    ReadoutOnly,
}

#[derive(Clone, Debug, PartialEq)]
enum InputParams {
    Table(ParamId),
    Projection { w: ParamId, b: ParamId },
    Identity,
}

/// A LaMP network with its parameters.
#[derive(Clone, Debug)]
pub struct LampModel<T> {
    config: LampConfig,
    label_graph: LabelGraph,
    input_graph: Option<InputGraph>,
    store: ParamStore<T>,
    input: InputParams,
    label_table: ParamId,
    fmp: Vec<MpnnBlockParams>,
    xy: Vec<MpnnBlockParams>,
    yy: Vec<MpnnBlockParams>,
}

// Independent RNG streams per component so variants that differ only in one
// part (e.g. the label graph) start from identical weights elsewhere.
const STREAM_INPUT: u64 = 0;
const STREAM_LABELS: u64 = 1;
const STREAM_FMP: u64 = 100;
const STREAM_XY: u64 = 200;
const STREAM_YY: u64 = 300;

impl<T: Real> LampModel<T> {
    pub fn new(config: LampConfig, label_graph: LabelGraph, input_graph: Option<InputGraph>) -> Result<Self> {
        config.validate()?;
        if label_graph.num_labels() != config.num_labels {
            return Err(LampError::param(
                "label_graph",
                format!("{} nodes for {} labels", label_graph.num_labels(), config.num_labels),
            ));
        }
        if label_graph.mode() != config.graph_mode {
            return Err(LampError::param(
                "label_graph",
                format!("graph mode {} but config says {}", label_graph.mode().as_str(), config.graph_mode.as_str()),
            ));
        }
        if let Some(ig) = &input_graph {
            if !config.use_fmp {
                return Err(LampError::param("input_graph", "an input graph needs feature message passing"));
            }
            if ig.num_nodes() != config.num_features {
                return Err(LampError::param(
                    "input_graph",
                    format!("{} nodes for a vocabulary of {}", ig.num_nodes(), config.num_features),
                ));
            }
        }

        let d = config.d;
        let bound = 1.0 / Float::sqrt(d as f64);
        let mut store = ParamStore::new();
        let mut rng = Rng::stream(config.seed, STREAM_INPUT);
        let input = match config.input_kind {
            InputKind::DenseVector if config.num_features == d => InputParams::Identity,
            InputKind::DenseVector => InputParams::Projection {
                w: store.add_glorot("input_proj.w", config.num_features, d, &mut rng),
                b: store.add_const("input_proj.b", &[d], 0.0),
            },
            _ => InputParams::Table(store.add_uniform("feature_embedding", &[config.num_features, d], bound, &mut rng)),
        };
        let mut rng = Rng::stream(config.seed, STREAM_LABELS);
        let label_table = store.add_uniform("label_embedding", &[config.num_labels, d], bound, &mut rng);

        let mut fmp = Vec::new();
        if config.use_fmp {
            for i in 0..config.fmp_layers {
                let mut rng = Rng::stream(config.seed, STREAM_FMP + i as u64);
                fmp.push(MpnnBlockParams::init(&mut store, &format!("fmp.{}", i + 1), d, config.heads, &mut rng)?);
            }
        }
        let mut xy = Vec::new();
        for t in 0..config.steps {
            let mut rng = Rng::stream(config.seed, STREAM_XY + t as u64);
            xy.push(MpnnBlockParams::init(&mut store, &format!("xy.{}", t + 1), d, config.heads, &mut rng)?);
        }
        let mut yy = Vec::new();
        if config.graph_mode != GraphMode::Edgeless {
            for t in 0..config.steps {
                let mut rng = Rng::stream(config.seed, STREAM_YY + t as u64);
                yy.push(MpnnBlockParams::init(&mut store, &format!("yy.{}", t + 1), d, config.heads, &mut rng)?);
            }
        }
        Ok(LampModel { config, label_graph, input_graph, store, input, label_table, fmp, xy, yy })
    }

    pub fn config(&self) -> &LampConfig {
        &self.config
    }

    pub fn label_graph(&self) -> &LabelGraph {
        &self.label_graph
    }

    pub fn input_graph(&self) -> Option<&InputGraph> {
        self.input_graph.as_ref()
    }

    /// The label embedding table `W^y`, which is also the readout `W^o`.
    pub fn label_table(&self) -> ParamId {
        self.label_table
    }

    /// Id of the feature embedding table `W^x`, if the input uses one.
    pub fn feature_table(&self) -> Option<ParamId> {
        match self.input {
            InputParams::Table(id) => Some(id),
            _ => None,
        }
    }

    pub fn xy_blocks(&self) -> &[MpnnBlockParams] {
        &self.xy
    }

    pub fn yy_blocks(&self) -> &[MpnnBlockParams] {
        &self.yy
    }

    pub fn fmp_blocks(&self) -> &[MpnnBlockParams] {
        &self.fmp
    }

    /// Input node embeddings `[B, S, d]`.
    pub fn embed(&self, g: &mut Graph<T>, pv: &ParamVars, batch: &Batch) -> Result<Var> {
        let d = self.config.d;
        let (b, s) = (batch.size, batch.width);
        if batch.num_labels != self.config.num_labels || batch.input_kind != self.config.input_kind {
            return Err(LampError::dim(
                "embed",
                format!(
                    "batch of {} labels / {} input for a model of {} labels / {} input",
                    batch.num_labels,
                    batch.input_kind.as_str(),
                    self.config.num_labels,
                    self.config.input_kind.as_str()
                ),
            ));
        }
        if s == 0 {
            return Err(LampError::EmptyInput("batch has no input nodes".into()));
        }
        match self.input {
            InputParams::Table(table) => {
                let weights: Vec<T> = batch
                    .values
                    .iter()
                    .zip(&batch.valid)
                    .map(|(&v, &ok)| if ok { T::from_f64(v) } else { T::zero() })
                    .collect();
                let z = g.gather(pv[table], batch.ids.clone(), Some(weights), &[b, s, d])?;
                if self.config.use_positional {
                    let mut pe = vec![T::zero(); b * s * d];
                    for (slot, row) in pe.chunks_mut(d).enumerate() {
                        if batch.valid[slot] {
                            positional_row(batch.positions[slot], row);
                        }
                    }
                    let pe = g.constant(Tensor::new([b, s, d], pe)?);
                    g.add(z, pe)
                } else {
                    Ok(z)
                }
            }
            InputParams::Projection { w, b: bias } => {
                let x = self.dense_input(g, batch)?;
                let h = g.matmul(x, pv[w])?;
                let h = g.add_bias(h, pv[bias])?;
                g.reshape(h, &[b, 1, d])
            }
            InputParams::Identity => {
                let x = self.dense_input(g, batch)?;
                g.reshape(x, &[b, 1, d])
            }
        }
    }

    fn dense_input(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Var> {
        let raw = batch.dense.as_ref().ok_or_else(|| LampError::Data("dense batch without vectors".into()))?;
        let data = raw.iter().map(|&v| T::from_f64(v)).collect();
        Ok(g.constant(Tensor::new([batch.size, self.config.num_features], data)?))
    }

    /// Neighbourhood for feature message passing: real nodes attend to real
    /// nodes (restricted to the known input graph when there is one); padding
    /// nodes attend only to themselves so every row stays well defined.
    pub fn feature_mask(&self, batch: &Batch) -> NeighborhoodMask {
        let s = batch.width;
        NeighborhoodMask::from_fn(batch.size, s, s, |b, r, c| {
            let (vr, vc) = (batch.valid[b * s + r], batch.valid[b * s + c]);
            if !vr {
                return r == c;
            }
            if !vc {
                return false;
            }
            match &self.input_graph {
                Some(ig) => ig.connected(batch.ids[b * s + r], batch.ids[b * s + c]),
                None => true,
            }
        })
    }

    /// Feature-to-Label neighbourhood: every label sees every real feature.
    pub fn feature_to_label_mask(&self, batch: &Batch) -> NeighborhoodMask {
        let s = batch.width;
        NeighborhoodMask::from_fn(batch.size, self.config.num_labels, s, |b, _, c| batch.valid[b * s + c])
    }

    /// `sigmoid(u_i · W^o_i)` for every label, `[B, L]`.
    pub fn readout(&self, g: &mut Graph<T>, u: Var, table: Var) -> Result<Var> {
        let logits = g.row_dot(u, table)?;
        g.sigmoid(logits)
    }

    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        batch: &Batch,
        training: bool,
        rng: &mut Rng,
        tied: TiedUse,
    ) -> Result<ForwardOutput> {
        let p = self.config.dropout;
        let table = pv[self.label_table];
        let detached = |g: &mut Graph<T>| {
            let v = g.value(table).clone();
            g.constant(v)
        };
        let (embed_table, readout_table) = match tied {
            TiedUse::Both => (table, table),
            TiedUse::EmbeddingOnly => (table, detached(g)),
            TiedUse::ReadoutOnly => (detached(g), table),
        };

        let mut traces = Vec::new();
        let mut z = self.embed(g, pv, batch).map_err(|e| e.at_stage("embed"))?;
        if !self.fmp.is_empty() {
            let mask = self.feature_mask(batch);
            for (i, block) in self.fmp.iter().enumerate() {
                let (next, alpha) = block
                    .step(g, pv, z, z, &mask, p, training, rng)
                    .map_err(|e| e.at_stage(format!("fmp.{}", i + 1)))?;
                z = next;
                traces.push(AttentionTrace { kind: TraceKind::FeatureToFeature(i + 1), alpha });
            }
        }

        let mut u = g.tile(embed_table, batch.size)?;
        let xy_mask = self.feature_to_label_mask(batch);
        let yy_mask = self.label_graph.mask(batch.size);
        let mut probes = Vec::with_capacity(2 * self.config.steps);
        for t in 0..self.config.steps {
            let stage = Stage::feature_to_label(t + 1);
            let (u_prime, alpha) = self.xy[t]
                .step(g, pv, u, z, &xy_mask, p, training, rng)
                .map_err(|e| e.at_stage(stage_name(stage)))?;
            traces.push(AttentionTrace { kind: TraceKind::FeatureToLabel(t + 1), alpha });
            let probs = self.readout(g, u_prime, readout_table).map_err(|e| e.at_stage(stage_name(stage)))?;
            probes.push(Probe { stage, probs });

            let stage = Stage::label_to_label(t + 1);
            u = match &yy_mask {
                Some(mask) => {
                    let (next, alpha) = self.yy[t]
                        .step(g, pv, u_prime, u_prime, mask, p, training, rng)
                        .map_err(|e| e.at_stage(stage_name(stage)))?;
                    traces.push(AttentionTrace { kind: TraceKind::LabelToLabel(t + 1), alpha });
                    let probs = self.readout(g, next, readout_table).map_err(|e| e.at_stage(stage_name(stage)))?;
                    probes.push(Probe { stage, probs });
                    next
                }
                None => {
                    // Skipped stage: the probe is the t.1 readout itself.
                    probes.push(Probe { stage, probs });
                    u_prime
                }
            };
        }
        let probs = probes.last().expect("at least one step").probs;
        Ok(ForwardOutput { probs, probes, traces })
    }
}

fn stage_name(stage: Stage) -> String {
    format!("{}", stage)
}

/// Sinusoidal encoding of `pos` written into `row` (length d):
/// `row[2i] = sin(pos / 10000^(2i/d))`, `row[2i+1] = cos(...)`.
pub fn positional_row<T: Real>(pos: usize, row: &mut [T]) {
    let d = row.len() as f64;
    for (j, v) in row.iter_mut().enumerate() {
        let i2 = (j - j % 2) as f64;
        let angle = pos as f64 / Float::powf(10000.0, i2 / d);
        *v = T::from_f64(if j % 2 == 0 { Float::sin(angle) } else { Float::cos(angle) });
    }
}

impl<T: Real> MultiLabelModel<T> for LampModel<T> {
    fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    fn schema(&self) -> Schema {
        self.config.schema()
    }

    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        batch: &Batch,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        self.forward_with(g, pv, batch, training, rng, TiedUse::Both)
    }

    fn training_loss(&self, g: &mut Graph<T>, out: &ForwardOutput, batch: &Batch) -> Result<Var> {
        let targets = batch.targets_as::<T>();
        loss::combined_loss(
            g,
            out.probs,
            &out.probes,
            &targets,
            self.config.lambda,
            self.config.steps,
            self.config.intermediate,
        )
        .map_err(|e| e.at_stage("loss"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Features, Sample};

    fn tiny_config(mode: GraphMode) -> LampConfig {
        let mut c = LampConfig::for_schema(&Schema::new(4, 6, InputKind::Tabular));
        c.d = 8;
        c.heads = 2;
        c.dropout = 0.0;
        c.graph_mode = mode;
        c.seed = 3;
        c
    }

    fn batch(schema: &Schema) -> Batch {
        let a = Sample { features: Features::Sparse(vec![(0, 1.0), (2, 1.0), (5, 0.5)]), labels: vec![1] };
        let b = Sample { features: Features::Sparse(vec![(1, 1.0)]), labels: vec![0, 3] };
        Batch::from_samples(&[&a, &b], &[0, 1], schema).unwrap()
    }

    #[test]
    fn positional_row_zero() {
        let mut row = [0.0f64; 6];
        positional_row(0, &mut row);
        assert_eq!(row, [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn stage_display() {
        let names: Vec<String> = Stage::all(2).iter().map(|s| format!("{s}")).collect();
        assert_eq!(names, ["1.1", "1.2", "2.1", "2.2"]);
    }

    #[test]
    fn four_probes_for_two_steps() {
        for mode in [GraphMode::Edgeless, GraphMode::FullyConnected] {
            let cfg = tiny_config(mode);
            let graph = match mode {
                GraphMode::Edgeless => LabelGraph::edgeless(4).unwrap(),
                _ => LabelGraph::fully_connected(4).unwrap(),
            };
            let model = LampModel::<f64>::new(cfg.clone(), graph, None).unwrap();
            let mut g = Graph::new();
            let pv = model.params().bind(&mut g, true);
            let out = model.forward(&mut g, &pv, &batch(&cfg.schema()), false, &mut Rng::seed(0)).unwrap();
            assert_eq!(out.probes.len(), 4);
            assert_eq!(g.shape(out.probs), &[2, 4]);
            assert!(g.value(out.probs).data().iter().all(|&p| p > 0.0 && p < 1.0));
            if mode == GraphMode::Edgeless {
                assert_eq!(out.probes[0].probs, out.probes[1].probs);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config(GraphMode::FullyConnected);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny_config(GraphMode::FullyConnected);
        c.steps = 0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(GraphMode::FullyConnected);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(GraphMode::FullyConnected);
        c.lambda = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let cfg = tiny_config(GraphMode::FullyConnected);
        assert!(LampModel::<f64>::new(cfg, LabelGraph::edgeless(4).unwrap(), None).is_err());
    }

    #[test]
    fn edgeless_allocates_no_label_blocks() {
        let el = LampModel::<f64>::new(tiny_config(GraphMode::Edgeless), LabelGraph::edgeless(4).unwrap(), None).unwrap();
        let fc = LampModel::<f64>::new(tiny_config(GraphMode::FullyConnected), LabelGraph::fully_connected(4).unwrap(), None)
            .unwrap();
        assert!(el.yy_blocks().is_empty());
        assert_eq!(fc.yy_blocks().len(), 2);
        // shared components start identical
        assert_eq!(el.params().get(el.label_table()), fc.params().get(fc.label_table()));
    }
}
