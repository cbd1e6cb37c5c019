//! Prototypical pseudo-label generation with confidence evaluation: momentum
//! class centroids, cosine pseudo-labels, the confidence curriculum and the
//! confident/distrusted partition. All of this is detached statistics — no
//! gradients flow through prototypes.

use crate::error::{Error, Result};
use crate::tensor::{cosine_raw, Tensor};

/// Per-class momentum centroids in the invariant subspace.
#[derive(Debug, Clone)]
pub struct Prototypes {
    centroids: Vec<Vec<f64>>,
    initialized: Vec<bool>,
    momentum: f64,
    dim: usize,
}

impl Prototypes {
    pub fn new(n_classes: usize, dim: usize, momentum: f64) -> Self {
        Self {
            centroids: vec![vec![0.0; dim]; n_classes],
            initialized: vec![false; n_classes],
            momentum,
            dim,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn all_initialized(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c]
    }

    /// Momentum update from a labeled batch of features `[n×d]`.
    ///
    /// Classes absent from the batch keep their previous centroid; the first
    /// update a class ever sees uses the batch class-mean directly.
    pub fn update(&mut self, feats: &Tensor, labels: &[usize]) -> Result<()> {
        let n = feats.shape()[0];
        if labels.len() != n {
            return Err(Error::Contract(format!(
                "prototype update: {} features vs {} labels",
                n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= self.centroids.len()) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {} classes",
                self.centroids.len()
            )));
        }
        let mut sums = vec![vec![0.0; self.dim]; self.centroids.len()];
        let mut counts = vec![0usize; self.centroids.len()];
        for (i, &c) in labels.iter().enumerate() {
            for (s, v) in sums[c].iter_mut().zip(feats.row(i)) {
                *s += v;
            }
            counts[c] += 1;
        }
        for c in 0..self.centroids.len() {
            if counts[c] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            if self.initialized[c] {
                let mu = self.momentum;
                for (p, m) in self.centroids[c].iter_mut().zip(&mean) {
                    *p = mu * *p + (1.0 - mu) * m;
                }
            } else {
                self.centroids[c] = mean;
                self.initialized[c] = true;
            }
        }
        Ok(())
    }

    /// Pseudo-label each target feature by maximum cosine similarity to the
    /// centroids. Ties break toward the lowest class index. Returns
    /// `(labels, scores)`.
    pub fn assign(&self, target_feats: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
        if !self.all_initialized() {
            return Err(Error::Contract(
                "pseudo-label assignment before every prototype is initialized".into(),
            ));
        }
        let n = target_feats.shape()[0];
        let mut labels = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            let f = target_feats.row(i);
            let mut best_c = 0usize;
            let mut best = f64::NEG_INFINITY;
            for (c, p) in self.centroids.iter().enumerate() {
                let cs = cosine_raw(f, p)?;
                if cs > best {
                    best = cs;
                    best_c = c;
                }
            }
            labels.push(best_c);
            scores.push(best);
        }
        Ok((labels, scores))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Linear,
    Stepwise,
}

/// The curriculum `η(t)`: monotone nondecreasing confidence ratio.
#[derive(Debug, Clone)]
pub struct ConfidenceSchedule {
    pub eta0: f64,
    pub eta_max: f64,
    pub total_steps: usize,
    pub mode: ScheduleMode,
    /// Stepwise increment.
    pub step_size: f64,
    /// Batches between stepwise increments.
    pub step_every: usize,
}

impl ConfidenceSchedule {
    pub fn linear(eta0: f64, eta_max: f64, total_steps: usize) -> Self {
        Self {
            eta0,
            eta_max,
            total_steps,
            mode: ScheduleMode::Linear,
            step_size: 0.05,
            step_every: 15,
        }
    }

    pub fn stepwise(eta0: f64, eta_max: f64, step_size: f64, step_every: usize) -> Self {
        Self {
            eta0,
            eta_max,
            total_steps: 0,
            mode: ScheduleMode::Stepwise,
            step_size,
            step_every,
        }
    }

    /// `η(t)`, clamped to `[η(0), η_max]`.
    pub fn ratio(&self, t: usize) -> f64 {
        let raw = match self.mode {
            ScheduleMode::Linear => {
                let total = self.total_steps.max(1) as f64;
                self.eta0 + t as f64 / total * (self.eta_max - self.eta0)
            }
            ScheduleMode::Stepwise => {
                self.eta0 + self.step_size * (t / self.step_every.max(1)) as f64
            }
        };
        raw.clamp(self.eta0, self.eta_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// η is the fraction of highest-confidence samples admitted.
    Quantile,
    /// Literal threshold: confident iff σ ≥ η.
    Threshold,
}

/// Index-level split of a target batch.
#[derive(Debug, Clone)]
pub struct PartitionedTarget {
    /// `(batch index, pseudo-label, score)` of admitted samples.
    pub confident: Vec<(usize, usize, f64)>,
    /// Batch indices of held-back samples.
    pub distrusted: Vec<usize>,
}

/// Split a scored batch into confident and distrusted subsets.
///
/// Quantile mode admits the `⌈η·n⌉` highest-score samples, ties broken by
/// index order; threshold mode admits every `σ_i ≥ η`.
pub fn partition(
    labels: &[usize],
    scores: &[f64],
    eta: f64,
    mode: PartitionMode,
) -> PartitionedTarget {
    debug_assert_eq!(labels.len(), scores.len());
    let n = scores.len();
    let mut confident = Vec::new();
    let mut distrusted = Vec::new();
    match mode {
        PartitionMode::Quantile => {
            let k = ((eta * n as f64).ceil() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut admitted = vec![false; n];
            for &i in order.iter().take(k) {
                admitted[i] = true;
            }
            for i in 0..n {
                if admitted[i] {
                    confident.push((i, labels[i], scores[i]));
                } else {
                    distrusted.push(i);
                }
            }
        }
        PartitionMode::Threshold => {
            for i in 0..n {
                if scores[i] >= eta {
                    confident.push((i, labels[i], scores[i]));
                } else {
                    distrusted.push(i);
                }
            }
        }
    }
    PartitionedTarget {
        confident,
        distrusted,
    }
}
