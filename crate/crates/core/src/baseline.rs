//! Emb+MLP baseline: mean input embedding through a 4-layer ReLU MLP and a
//! sigmoid output layer. Labels are predicted independently.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::{Graph, Var};
use crate::data::{Batch, InputKind, Schema};
use crate::error::{LampError, Result};
use crate::loss;
use crate::model::{ForwardOutput, MultiLabelModel};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::real::Real;
use crate::rng::Rng;

pub const MLP_LAYERS: usize = 4;

#[derive(Clone, Debug)]
pub struct MlpBaseline<T> {
    schema: Schema,
    d: usize,
    dropout: f64,
    store: ParamStore<T>,
    table: ParamId,
    hidden: Vec<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

impl<T: Real> MlpBaseline<T> {
    pub fn new(schema: Schema, d: usize, dropout: f64, seed: u64) -> Result<Self> {
        if schema.input_kind == InputKind::DenseVector {
            return Err(LampError::param("input_kind", "the MLP baseline embeds tabular or sequence inputs"));
        }
        if d == 0 || schema.num_labels == 0 || schema.num_features == 0 {
            return Err(LampError::param("d", format!("d={}, L={}, δ={}", d, schema.num_labels, schema.num_features)));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(LampError::param("dropout", format!("rate {} outside [0, 1)", dropout)));
        }
        let mut rng = Rng::seed(seed);
        let mut store = ParamStore::new();
        let bound = 1.0 / Float::sqrt(d as f64);
        let table = store.add_uniform("feature_embedding", &[schema.num_features, d], bound, &mut rng);
        let hidden = (0..MLP_LAYERS)
            .map(|i| {
                let w = store.add_glorot(format!("mlp.{}.w", i + 1), d, d, &mut rng);
                let b = store.add_const(format!("mlp.{}.b", i + 1), &[d], 0.0);
                (w, b)
            })
            .collect();
        let out_w = store.add_glorot("out.w", d, schema.num_labels, &mut rng);
        let out_b = store.add_const("out.b", &[schema.num_labels], 0.0);
        Ok(MlpBaseline { schema, d, dropout, store, table, hidden, out_w, out_b })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }
}

impl<T: Real> MultiLabelModel<T> for MlpBaseline<T> {
    fn num_labels(&self) -> usize {
        self.schema.num_labels
    }

    fn schema(&self) -> Schema {
        self.schema.clone()
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
        if batch.num_labels != self.schema.num_labels {
            return Err(LampError::dim("mlp_forward", format!("batch of {} labels", batch.num_labels)));
        }
        let weights: Vec<T> = batch
            .values
            .iter()
            .zip(&batch.valid)
            .map(|(&v, &ok)| if ok { T::from_f64(v) } else { T::zero() })
            .collect();
        let z = g.gather(pv[self.table], batch.ids.clone(), Some(weights), &[batch.size, batch.width, self.d])?;
        let mut h = g.masked_mean(z, &batch.valid)?;
        for &(w, b) in &self.hidden {
            let a = g.matmul(h, pv[w])?;
            let a = g.add_bias(a, pv[b])?;
            let a = g.relu(a)?;
            h = g.dropout(a, self.dropout, training, rng)?;
        }
        let logits = g.matmul(h, pv[self.out_w])?;
        let logits = g.add_bias(logits, pv[self.out_b])?;
        let probs = g.sigmoid(logits)?;
        Ok(ForwardOutput { probs, probes: Vec::new(), traces: Vec::new() })
    }

    fn training_loss(&self, g: &mut Graph<T>, out: &ForwardOutput, batch: &Batch) -> Result<Var> {
        loss::bce_out(g, out.probs, &batch.targets_as::<T>())
    }
}
