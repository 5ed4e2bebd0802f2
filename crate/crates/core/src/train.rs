//! Adam, the mini-batch training loop and evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::Graph;
use crate::data::{BatchIter, Sample, Schema};
use crate::error::{LampError, Result};
use crate::metrics::{LabelMatrix, Metric, MetricsReport};
use crate::model::MultiLabelModel;
use crate::params::ParamStore;
use crate::real::Real;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments, one moment pair per stored tensor.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.entries().iter().map(|e| vec![T::zero(); e.tensor.len()]).collect();
        Adam { config, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[T] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[T] {
        &self.v[i]
    }

    /// Applies one update. `grads[i]` belongs to entry `i` of `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(LampError::dim(
                "adam_step",
                format!("{} gradients, {} parameters, {} moments", grads.len(), params.len(), self.m.len()),
            ));
        }
        for (i, id) in params.ids().enumerate() {
            if grads[i].len() != self.m[i].len() || params.get(id).len() != self.m[i].len() {
                return Err(LampError::dim("adam_step", format!("gradient {} has {} entries", i, grads[i].len())));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - Float::powi(c.beta1, t);
        let bc2 = 1.0 - Float::powi(c.beta2, t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
        for (i, id) in params.ids().enumerate() {
            let p = params.get_mut(id).data_mut();
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flatten().map(|g| g.as_f64() * g.as_f64()).sum();
    let norm = Float::sqrt(sq);
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            *g *= s;
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    pub metric: Metric,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            patience: 10,
            metric: Metric::EbF1,
            adam: AdamConfig::default(),
            clip: Some(5.0),
            seed: 0,
        }
    }
}

/// Which data a logged record describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub steps: u64,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    /// Per-metric thresholds picked on validation at the best epoch.
    pub thresholds: [f64; 5],
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.split == Split::Train).map(|r| r.loss).collect()
    }
}

/// Trains `model` in place. With a validation split, the parameters of the
/// best epoch by `config.metric` are restored at the end and training stops
/// after `config.patience` epochs without improvement.
pub fn train<T: Real, M: MultiLabelModel<T>>(
    model: &mut M,
    train_set: &[Sample],
    val_set: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, train_set, val_set, config, &mut |_| {})
}

/// [`train`] with a callback invoked for every epoch record as it is made.
pub fn train_with<T: Real, M: MultiLabelModel<T>>(
    model: &mut M,
    train_set: &[Sample],
    val_set: Option<&[Sample]>,
    config: &TrainConfig,
    on_record: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if config.epochs == 0 {
        return Err(LampError::param("epochs", "must be at least 1"));
    }
    if train_set.is_empty() {
        return Err(LampError::EmptyInput("training split is empty".into()));
    }
    let schema = model.schema();
    let val_set = val_set.filter(|v| !v.is_empty());
    let mut adam = Adam::new(config.adam, model.params());
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<T>, [f64; 5])> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        epochs_run = epoch;
        let mut rng = Rng::stream(config.seed, epoch as u64);
        let shuffle_seed = rng.next_u64();
        let batches = BatchIter::new(train_set, &schema, config.batch_size, Some(shuffle_seed))?;
        let (mut loss_sum, mut n_seen) = (0.0, 0usize);
        let mut train_probs = Vec::with_capacity(train_set.len() * schema.num_labels);
        let mut train_targets = Vec::with_capacity(train_set.len() * schema.num_labels);
        for batch in batches {
            let mut g = Graph::new();
            let pv = model.params().bind(&mut g, true);
            let out = model.forward(&mut g, &pv, &batch, true, &mut rng)?;
            let loss = model.training_loss(&mut g, &out, &batch)?;
            g.backward(loss)?;
            let mut grads = model.params().gradients(&g, &pv);
            if let Some(max) = config.clip {
                let norm = clip_global_norm(&mut grads, max);
                if !norm.is_finite() {
                    return Err(LampError::NonFinite { op: "gradient" }.at_stage(format!("epoch {}", epoch)));
                }
            }
            adam.step(model.params_mut(), &grads)?;
            loss_sum += g.value(loss).data()[0].as_f64() * batch.size as f64;
            n_seen += batch.size;
            train_probs.extend(g.value(out.probs).to_f64_vec());
            train_targets.extend_from_slice(&batch.targets);
        }
        let y = LabelMatrix::new(n_seen, schema.num_labels, train_targets)?;
        let rec = EpochRecord {
            epoch,
            split: Split::Train,
            loss: loss_sum / n_seen as f64,
            metrics: MetricsReport::evaluate(&y, &train_probs, [0.5; 5])?,
        };
        on_record(&rec);
        records.push(rec);

        if let Some(val) = val_set {
            let (probs, y) = predict_split(&*model, val, config.batch_size)?;
            let thresholds = MetricsReport::select_thresholds(&y, &probs)?;
            let metrics = MetricsReport::evaluate(&y, &probs, thresholds)?;
            let rec = EpochRecord { epoch, split: Split::Val, loss: mean_bce(&probs, y.data()), metrics };
            on_record(&rec);
            records.push(rec);
            let score = metrics.get(config.metric);
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, epoch, model.params().clone(), thresholds));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_epoch, best_score, thresholds) = match best {
        Some((score, epoch, params, thresholds)) => {
            model.params_mut().load_from(&params)?;
            (epoch, Some(score), thresholds)
        }
        None => (epochs_run, None, [0.5; 5]),
    };
    Ok(TrainReport { records, epochs_run, steps: adam.steps_taken(), best_epoch, best_score, thresholds, stopped_early })
}

fn mean_bce(probs: &[f64], y: &[u8]) -> f64 {
    let eps = crate::loss::BCE_EPS;
    let total: f64 = probs
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let c = p.clamp(eps, 1.0 - eps);
            if t == 1 { -Float::ln(c) } else { -Float::ln(1.0 - c) }
        })
        .sum();
    total / probs.len().max(1) as f64
}

/// Eval-mode probabilities for a split in its original order, with targets.
pub fn predict_split<T: Real, M: MultiLabelModel<T> + ?Sized>(
    model: &M,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(Vec<f64>, LabelMatrix)> {
    let schema: Schema = model.schema();
    let mut probs = Vec::with_capacity(samples.len() * schema.num_labels);
    let mut targets = Vec::with_capacity(samples.len() * schema.num_labels);
    for batch in BatchIter::new(samples, &schema, batch_size, None)? {
        probs.extend(model.predict(&batch)?);
        targets.extend_from_slice(&batch.targets);
    }
    Ok((probs, LabelMatrix::new(samples.len(), schema.num_labels, targets)?))
}

/// Scores a split in eval mode at the given per-metric thresholds.
pub fn evaluate<T: Real, M: MultiLabelModel<T> + ?Sized>(
    model: &M,
    samples: &[Sample],
    thresholds: [f64; 5],
    batch_size: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(LampError::EmptyInput("evaluation split is empty".into()));
    }
    let (probs, y) = predict_split(model, samples, batch_size)?;
    MetricsReport::evaluate(&y, &probs, thresholds)
}

/// The intermediate-loss weights tried by [`lambda_sweep`].
pub const LAMBDA_GRID: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

/// Trains one model per λ (built by `make`) and keeps the one with the best
/// validation score. Returns the winning λ, model and report.
pub fn lambda_sweep<T: Real, M: MultiLabelModel<T>>(
    mut make: impl FnMut(f64) -> Result<M>,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<(f64, M, TrainReport)> {
    let mut best: Option<(f64, M, TrainReport)> = None;
    for &lambda in &LAMBDA_GRID {
        let mut model = make(lambda)?;
        let report = train(&mut model, train_set, Some(val_set), config)?;
        let score = report.best_score.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| score > b.2.best_score.unwrap_or(f64::NEG_INFINITY)) {
            best = Some((lambda, model, report));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_f64([2], &[1.0, -2.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(store.entries()[0].tensor.data(), &[1.0, -2.0]);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_f64([1], &[0.5]).unwrap());
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg, &store);
        let g = 0.3;
        adam.step(&mut store, &[vec![g]]).unwrap();
        let m = 0.1 * g;
        let v = 0.001 * g * g;
        let expected = 0.5 - 0.01 * (m / 0.1) / (Float::sqrt(v / 0.001) + 1e-8);
        assert!((store.entries()[0].tensor.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0f64], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &store);
        assert!(adam.step(&mut store, &[vec![0.0]]).is_err());
    }
}
