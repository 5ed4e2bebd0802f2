//! Seeded synthetic multi-label tasks for tests and benchmarks.

use alloc::vec::Vec;

use crate::data::{Dataset, Features, InputKind, Sample, Schema};
use crate::rng::Rng;

/// A small task whose labels are a deterministic function of the features:
/// label `l` is on iff some active feature `f` has `f % num_labels == l`.
pub fn overfit_task(num_samples: usize, num_labels: usize, num_features: usize, active: usize, seed: u64) -> Dataset {
    let mut rng = Rng::seed(seed);
    let samples = (0..num_samples)
        .map(|_| {
            let feats = distinct(&mut rng, num_features, active);
            let mut labels: Vec<u32> = feats.iter().map(|&f| f % num_labels as u32).collect();
            labels.sort_unstable();
            labels.dedup();
            Sample { features: Features::Sparse(feats.into_iter().map(|f| (f, 1.0)).collect()), labels }
        })
        .collect();
    Dataset::new(Schema::new(num_labels, num_features, InputKind::Tabular), samples)
}

/// Shape of a block-correlated task.
///
/// Labels come in blocks. Each sample switches on between one and
/// `max_active_blocks` blocks, and every label of an active block is
/// positive except for independent drop-outs at `label_dropout`. Each
/// positive label emits its own cue feature with probability `cue_prob`;
/// negative labels emit theirs with probability `false_cue_prob`. A sample
/// also carries `noise_features ± noise_jitter` (uniform) draws from a pool
/// of uninformative ids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockTask {
    pub blocks: usize,
    pub labels_per_block: usize,
    pub max_active_blocks: usize,
    pub label_dropout: f64,
    pub cue_prob: f64,
    pub false_cue_prob: f64,
    pub noise_pool: usize,
    pub noise_features: usize,
    pub noise_jitter: usize,
}

impl Default for BlockTask {
    fn default() -> Self {
        BlockTask {
            blocks: 6,
            labels_per_block: 4,
            max_active_blocks: 2,
            label_dropout: 0.0,
            cue_prob: 0.4,
            false_cue_prob: 0.02,
            noise_pool: 40,
            noise_features: 4,
            noise_jitter: 0,
        }
    }
}

impl BlockTask {
    pub fn num_labels(&self) -> usize {
        self.blocks * self.labels_per_block
    }

    /// Cue features `0..L`, then the noise pool.
    pub fn num_features(&self) -> usize {
        self.num_labels() + self.noise_pool
    }

    pub fn generate(&self, num_samples: usize, seed: u64) -> Dataset {
        let mut rng = Rng::seed(seed);
        let l = self.num_labels();
        let samples = (0..num_samples).map(|_| self.sample(&mut rng, l)).collect();
        Dataset::new(Schema::new(l, self.num_features(), InputKind::Tabular), samples)
    }

    fn sample(&self, rng: &mut Rng, l: usize) -> Sample {
        let n_active = 1 + rng.below(self.max_active_blocks.max(1));
        let active = distinct(rng, self.blocks, n_active.min(self.blocks));
        let mut positive = alloc::vec![false; l];
        for &b in &active {
            for j in 0..self.labels_per_block {
                if !rng.bernoulli(self.label_dropout) {
                    positive[b as usize * self.labels_per_block + j] = true;
                }
            }
        }
        let mut feats: Vec<u32> = Vec::new();
        for (j, &on) in positive.iter().enumerate() {
            let p = if on { self.cue_prob } else { self.false_cue_prob };
            if rng.bernoulli(p) {
                feats.push(j as u32);
            }
        }
        if self.noise_pool > 0 {
            let jitter = self.noise_jitter.min(self.noise_features);
            let count = self.noise_features - jitter + rng.below(2 * jitter + 1);
            for f in distinct(rng, self.noise_pool, count.min(self.noise_pool)) {
                feats.push(l as u32 + f);
            }
        }
        if feats.is_empty() {
            feats.push(l as u32 + rng.below(self.noise_pool.max(1)) as u32);
        }
        feats.sort_unstable();
        feats.dedup();
        let labels = (0..l as u32).filter(|&j| positive[j as usize]).collect();
        Sample { features: Features::Sparse(feats.into_iter().map(|f| (f, 1.0)).collect()), labels }
    }
}

/// `k` distinct ids from `0..n`, sorted.
fn distinct(rng: &mut Rng, n: usize, k: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..n as u32).collect();
    rng.shuffle(&mut ids);
    ids.truncate(k);
    ids.sort_unstable();
    ids
}
