//! Federated learning core: local SGD, dropout-aware aggregation, and the
//! successful-training ratio.
//!
//! Each selected vehicle runs E local epochs from the distributed global
//! model and uploads the accumulated update g, defined so that its final
//! local model equals `w - eta * g`. The server averages the updates of the
//! vehicles that survived the round and applies one global step; if nobody
//! survived, the global model is unchanged.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{is_positive, Error, Result};
use crate::task::{LocalDataset, Task};

/// Flat model parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Wire size of the model when serialized as little-endian f32.
    pub fn serialized_bits(&self) -> f64 {
        self.weights.len() as f64 * 32.0
    }

    /// Little-endian single-precision serialization (the uploaded payload).
    pub fn to_le_f32_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.weights.len() * 4);
        for w in &self.weights {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Local training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// One full-batch step per epoch instead of a mini-batch pass.
    pub full_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            local_epochs: 2,
            batch_size: 32,
            full_batch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !is_positive(self.learning_rate) {
            return Err(Error::Config("learning_rate must be finite and > 0".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one vehicle's local training.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    /// Accumulated update g = sum of per-epoch gradients; the final local
    /// model is `w - eta * g`.
    pub accumulated: Vec<f64>,
    /// Per-epoch components of `accumulated` (used by the theory checks).
    pub per_epoch: Vec<Vec<f64>>,
    /// The local model actually reached after the E epochs.
    pub final_model: Vec<f64>,
}

/// Runs E local epochs from `w` and returns the accumulated update.
///
/// In mini-batch mode one epoch is a full shuffled pass; each batch step
/// applies the batch gradient scaled by the batch fraction, so the epoch
/// total matches one full-batch gradient in expectation and the final local
/// model is exactly `w - eta * accumulated`. `full_batch` recovers the
/// one-step-per-epoch recursion.
pub fn local_update(
    w: &ModelParams,
    task: &Task,
    data: &LocalDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<LocalUpdate> {
    let dim = task.model_dim();
    debug_assert_eq!(w.dim(), dim);
    let n = data.num_samples;
    let eta = cfg.learning_rate;
    let mut local = w.weights.clone();
    let mut accumulated = vec![0.0; dim];
    let mut per_epoch = Vec::with_capacity(cfg.local_epochs);

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.local_epochs {
        let mut epoch_g = vec![0.0; dim];
        if cfg.full_batch {
            let g = task.grad_on(data, &local);
            for ((l, e), gi) in local.iter_mut().zip(&mut epoch_g).zip(&g) {
                *l -= eta * gi;
                *e += gi;
            }
        } else {
            order.shuffle(rng);
            for batch in order.chunks(cfg.batch_size) {
                let g = task.batch_grad_on(data, &local, batch);
                let fraction = batch.len() as f64 / n as f64;
                for ((l, e), gi) in local.iter_mut().zip(&mut epoch_g).zip(&g) {
                    let scaled = gi * fraction;
                    *l -= eta * scaled;
                    *e += scaled;
                }
            }
        }
        if epoch_g.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedTraining);
        }
        for (a, e) in accumulated.iter_mut().zip(&epoch_g) {
            *a += e;
        }
        per_epoch.push(epoch_g);
    }
    Ok(LocalUpdate {
        accumulated,
        per_epoch,
        final_model: local,
    })
}

/// Dropout-aware aggregation: `w - eta * mean(updates of survivors)`.
///
/// With no survivors the previous global model is returned unchanged.
pub fn aggregate(
    w_r: &ModelParams,
    updates: &BTreeMap<u64, Vec<f64>>,
    indicators: &BTreeMap<u64, bool>,
    eta: f64,
) -> Result<ModelParams> {
    for id in updates.keys() {
        if !indicators.contains_key(id) {
            return Err(Error::Domain {
                context: "aggregate",
                detail: format!("update from vehicle {id} without a dropout indicator"),
            });
        }
    }
    let survivors: Vec<&Vec<f64>> = updates
        .iter()
        .filter(|(id, _)| indicators[*id])
        .map(|(_, g)| g)
        .collect();
    if survivors.is_empty() {
        return Ok(w_r.clone());
    }
    let inv = 1.0 / survivors.len() as f64;
    let mut next = w_r.weights.clone();
    // BTreeMap iteration fixes the reduction order by vehicle id.
    for g in survivors {
        for (w, gi) in next.iter_mut().zip(g) {
            *w -= eta * inv * gi;
        }
    }
    Ok(ModelParams::new(next))
}

/// Successful training ratio |N| / |S|.
pub fn success_ratio(selected: &BTreeSet<u64>, survivors: &BTreeSet<u64>) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::UndefinedRatio);
    }
    debug_assert!(survivors.is_subset(selected));
    Ok(survivors.len() as f64 / selected.len() as f64)
}

/// Weighted global loss `sum_k q_k * f_k(w)`; the weights must sum to 1.
pub fn global_loss(task: &Task, w: &ModelParams, weights: &[f64]) -> Result<f64> {
    if weights.len() != task.num_shards() {
        return Err(Error::Domain {
            context: "global_loss",
            detail: format!(
                "{} weights for {} shards",
                weights.len(),
                task.num_shards()
            ),
        });
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::WeightSum(total));
    }
    let mut loss = 0.0;
    for (k, q) in weights.iter().enumerate() {
        loss += q * task.loss_on(&task.shard(k), &w.weights);
    }
    Ok(loss)
}

/// Outcome of one aggregation round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub selected: BTreeSet<u64>,
    pub survivors: BTreeSet<u64>,
    pub ratio: f64,
    pub new_global: ModelParams,
    /// Uniform aggregation weight applied to each surviving update.
    pub aggregation_weight: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::task::{make_task, TaskKind};

    fn scalar_quadratic() -> (Task, std::sync::Arc<LocalDataset>) {
        // One sample, one dimension: f(w) = 0.5 * w^2.
        let shard = LocalDataset {
            owner_id: 0,
            num_samples: 1,
            dim_in: 1,
            features: vec![1.0],
            labels: vec![0.0],
        };
        let task = Task::from_quadratic_parts(vec![shard]);
        let ds = task.shard(0);
        (task, ds)
    }

    #[test]
    fn update_is_zero_at_stationary_point() {
        let (task, ds) = scalar_quadratic();
        let cfg = TrainConfig {
            local_epochs: 3,
            full_batch: true,
            ..TrainConfig::default()
        };
        let mut r = rng::stream(0, &[1]);
        let up = local_update(&ModelParams::zeros(1), &task, &ds, &cfg, &mut r).unwrap();
        assert!(up.accumulated[0].abs() < 1e-15);
    }

    #[test]
    fn scalar_quadratic_one_epoch() {
        // f = 0.5 w^2, w = 1, eta = 0.01: g = 1, local model 0.99.
        let (task, ds) = scalar_quadratic();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            local_epochs: 1,
            full_batch: true,
            ..TrainConfig::default()
        };
        let mut r = rng::stream(0, &[1]);
        let up = local_update(&ModelParams::new(vec![1.0]), &task, &ds, &cfg, &mut r).unwrap();
        assert!((up.accumulated[0] - 1.0).abs() < 1e-15);
        assert!((up.final_model[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn scalar_quadratic_two_epochs() {
        // Second epoch differentiates at w = 0.99: g = 1 + 0.99.
        let (task, ds) = scalar_quadratic();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            local_epochs: 2,
            full_batch: true,
            ..TrainConfig::default()
        };
        let mut r = rng::stream(0, &[1]);
        let up = local_update(&ModelParams::new(vec![1.0]), &task, &ds, &cfg, &mut r).unwrap();
        assert!((up.accumulated[0] - 1.99).abs() < 1e-12);
        assert_eq!(up.per_epoch.len(), 2);
        assert!((up.per_epoch[0][0] - 1.0).abs() < 1e-15);
        assert!((up.per_epoch[1][0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn minibatch_final_model_matches_accumulated_update() {
        let task = make_task(TaskKind::Logistic, 8, 2, 100, 12).unwrap();
        let ds = task.shard(0);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            local_epochs: 4,
            batch_size: 32,
            full_batch: false,
        };
        let w0 = ModelParams::new(task.initial_params());
        let mut r = rng::stream(8, &[rng::domain::TRAINING, 0, 0]);
        let up = local_update(&w0, &task, &ds, &cfg, &mut r).unwrap();
        for i in 0..w0.dim() {
            let reconstructed = w0.weights[i] - cfg.learning_rate * up.accumulated[i];
            assert!(
                (up.final_model[i] - reconstructed).abs() < 1e-12,
                "index {i}: {} vs {}",
                up.final_model[i],
                reconstructed
            );
        }
    }

    #[test]
    fn aggregate_no_survivors_keeps_model() {
        let w = ModelParams::new(vec![1.0, -2.0]);
        let mut updates = BTreeMap::new();
        updates.insert(1, vec![5.0, 5.0]);
        let mut ind = BTreeMap::new();
        ind.insert(1, false);
        let next = aggregate(&w, &updates, &ind, 0.1).unwrap();
        assert_eq!(next.weights, w.weights);
    }

    #[test]
    fn aggregate_single_survivor() {
        let w = ModelParams::new(vec![1.0]);
        let mut updates = BTreeMap::new();
        updates.insert(3, vec![2.0]);
        let mut ind = BTreeMap::new();
        ind.insert(3, true);
        let next = aggregate(&w, &updates, &ind, 0.1).unwrap();
        assert!((next.weights[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn aggregate_averages_survivors() {
        // Updates 2 and 4 with eta 0.1: step of 0.3.
        let w = ModelParams::new(vec![0.0]);
        let mut updates = BTreeMap::new();
        updates.insert(1, vec![2.0]);
        updates.insert(2, vec![4.0]);
        let ind: BTreeMap<u64, bool> = [(1, true), (2, true)].into_iter().collect();
        let next = aggregate(&w, &updates, &ind, 0.1).unwrap();
        assert!((next.weights[0] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn aggregate_zero_updates_is_identity() {
        let w = ModelParams::new(vec![0.25, -1.5]);
        let mut updates = BTreeMap::new();
        updates.insert(1, vec![0.0, 0.0]);
        updates.insert(2, vec![0.0, 0.0]);
        let ind: BTreeMap<u64, bool> = [(1, true), (2, true)].into_iter().collect();
        let next = aggregate(&w, &updates, &ind, 0.5).unwrap();
        assert_eq!(next.weights, w.weights);
    }

    #[test]
    fn aggregate_requires_indicators_for_all_updates() {
        let w = ModelParams::new(vec![0.0]);
        let mut updates = BTreeMap::new();
        updates.insert(1, vec![1.0]);
        let ind = BTreeMap::new();
        assert!(aggregate(&w, &updates, &ind, 0.1).is_err());
    }

    #[test]
    fn success_ratio_cases() {
        let s: BTreeSet<u64> = [1, 2, 3, 4, 5].into_iter().collect();
        assert_eq!(success_ratio(&s, &s).unwrap(), 1.0);
        assert_eq!(success_ratio(&s, &BTreeSet::new()).unwrap(), 0.0);
        let n: BTreeSet<u64> = [1, 2, 3].into_iter().collect();
        assert!((success_ratio(&s, &n).unwrap() - 0.6).abs() < 1e-15);
        assert!(success_ratio(&BTreeSet::new(), &BTreeSet::new()).is_err());
    }

    #[test]
    fn global_loss_weighting() {
        let task = make_task(TaskKind::Quadratic, 4, 2, 20, 5).unwrap();
        let w = ModelParams::zeros(5);
        // Uniform weights equal the plain mean.
        let uniform = global_loss(&task, &w, &[0.5, 0.5]).unwrap();
        let expected =
            0.5 * task.loss_on(&task.shard(0), &w.weights) + 0.5 * task.loss_on(&task.shard(1), &w.weights);
        assert!((uniform - expected).abs() < 1e-15);
        // Weight sums away from 1 are rejected.
        assert!(matches!(
            global_loss(&task, &w, &[0.6, 0.6]),
            Err(Error::WeightSum(_))
        ));
    }

    #[test]
    fn global_loss_identical_shards_equals_single() {
        let shard = |id| LocalDataset {
            owner_id: id,
            num_samples: 2,
            dim_in: 1,
            features: vec![1.0, 2.0],
            labels: vec![0.5, -0.5],
        };
        let task = Task::from_quadratic_parts(vec![shard(0), shard(1)]);
        let w = ModelParams::new(vec![0.3]);
        let combined = global_loss(&task, &w, &[0.5, 0.5]).unwrap();
        let single = task.loss_on(&task.shard(0), &w.weights);
        assert!((combined - single).abs() < 1e-15);
    }

    #[test]
    fn logistic_loss_matches_hand_evaluation() {
        // Four samples in one dimension, evaluated by explicit log-loss.
        let ds = LocalDataset {
            owner_id: 0,
            num_samples: 4,
            dim_in: 1,
            features: vec![1.0, -2.0, 0.5, 3.0],
            labels: vec![1.0, -1.0, -1.0, 1.0],
        };
        let task = make_task(TaskKind::Logistic, 0, 1, 4, 1).unwrap();
        let w = [0.7];
        let hand: f64 = [
            (1.0f64, 1.0f64),
            (-1.0, -2.0),
            (-1.0, 0.5),
            (1.0, 3.0),
        ]
        .iter()
        .map(|(y, x)| (1.0 + (-(y * 0.7 * x)).exp()).ln())
        .sum::<f64>()
            / 4.0;
        let got = task.loss_on(&ds, &w);
        assert!((got - hand).abs() < 1e-12, "got {got}, hand {hand}");
    }

    #[test]
    fn serialized_size_is_32_bits_per_weight() {
        let w = ModelParams::zeros(1000);
        assert_eq!(w.serialized_bits(), 32000.0);
        assert_eq!(w.to_le_f32_bytes().len(), 4000);
    }
}
