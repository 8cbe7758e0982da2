//! Desk-scale synthetic learning tasks.
//!
//! Three task families share one oracle interface: a convex quadratic with a
//! closed-form optimum, logistic regression on a seeded Gaussian mixture, and
//! a tiny one-hidden-layer MLP with analytic backprop. Data is IID across
//! shards: every shard is drawn from the same distribution with its own
//! seeded stream, so any vehicle id maps to a reproducible shard.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Quadratic,
    Logistic,
    TinyMlp,
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadratic" => Ok(TaskKind::Quadratic),
            "logistic" => Ok(TaskKind::Logistic),
            "tiny_mlp" | "mlp" => Ok(TaskKind::TinyMlp),
            other => Err(Error::Config(format!(
                "unknown task kind '{other}' (expected quadratic, logistic, tiny_mlp)"
            ))),
        }
    }
}

/// One vehicle's local data shard.
///
/// For the quadratic task the "features" are the rows of A_k and the
/// "labels" are b_k; for the classification tasks they are inputs and
/// class labels.
#[derive(Debug, Clone)]
pub struct LocalDataset {
    pub owner_id: u64,
    pub num_samples: usize,
    pub dim_in: usize,
    /// Row-major `num_samples x dim_in`.
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl LocalDataset {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim_in..(i + 1) * self.dim_in]
    }
}

#[derive(Debug, Clone, Copy)]
struct MlpShape {
    dim_in: usize,
    hidden: usize,
}

impl MlpShape {
    fn param_count(&self) -> usize {
        self.hidden * self.dim_in + self.hidden + self.hidden + 1
    }
}

/// A synthetic task: seeded shard generator plus loss/gradient oracle.
#[derive(Debug, Clone)]
pub struct Task {
    kind: TaskKind,
    seed: u64,
    dim_in: usize,
    samples_per_shard: usize,
    /// Canonical shards 0..K-1: the training data of the first K vehicles
    /// and the fixed evaluation set for global loss/accuracy.
    shards: Vec<Arc<LocalDataset>>,
    extra_shards: HashMap<u64, Arc<LocalDataset>>,
    /// Shared task structure (true model / mixture mean / teacher weights).
    shared: Vec<f64>,
    mlp: Option<MlpShape>,
}

const MLP_HIDDEN: usize = 16;
const LOGISTIC_MARGIN: f64 = 1.2;
/// Noise scale of the second half of the logistic feature dimensions. The
/// class mean has mass there too, so the early gradient direction is pulled
/// away from the Bayes-optimal one and accuracy improves over many rounds
/// rather than in a single step.
const LOGISTIC_NUISANCE_SCALE: f64 = 4.0;

fn logistic_noise_scale(j: usize, dim: usize) -> f64 {
    if j >= dim / 2 {
        LOGISTIC_NUISANCE_SCALE
    } else {
        1.0
    }
}

/// Builds a task with `num_vehicles` canonical shards.
pub fn make_task(
    kind: TaskKind,
    seed: u64,
    num_vehicles: usize,
    samples_per_vehicle: usize,
    dim: usize,
) -> Result<Task> {
    if num_vehicles == 0 || samples_per_vehicle == 0 || dim == 0 {
        return Err(Error::Config(
            "task sizes (vehicles, samples, dim) must be positive".into(),
        ));
    }
    let mlp = match kind {
        TaskKind::TinyMlp => {
            let shape = MlpShape {
                dim_in: dim,
                hidden: MLP_HIDDEN,
            };
            if shape.param_count() > 1000 {
                return Err(Error::Config(format!(
                    "tiny_mlp with dim {dim} has {} parameters, limit is 1000",
                    shape.param_count()
                )));
            }
            Some(shape)
        }
        _ => None,
    };
    let mut shared_rng = rng::stream(seed, &[domain::DATA, 0]);
    let shared = match kind {
        TaskKind::Quadratic => {
            // True model the shards regress towards.
            (0..dim).map(|_| shared_rng.sample(StandardNormal)).collect()
        }
        TaskKind::Logistic => {
            let mut mu: Vec<f64> = (0..dim).map(|_| shared_rng.sample(StandardNormal)).collect();
            let norm = mu.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in &mut mu {
                *x *= LOGISTIC_MARGIN / norm;
            }
            mu
        }
        TaskKind::TinyMlp => {
            let shape = mlp.unwrap();
            (0..shape.param_count())
                .map(|_| 1.5 * shared_rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };
    let mut task = Task {
        kind,
        seed,
        dim_in: dim,
        samples_per_shard: samples_per_vehicle,
        shards: Vec::new(),
        extra_shards: HashMap::new(),
        shared,
        mlp,
    };
    for k in 0..num_vehicles {
        let shard = task.generate_shard(k as u64);
        task.shards.push(Arc::new(shard));
    }
    Ok(task)
}

impl Task {
    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn samples_per_shard(&self) -> usize {
        self.samples_per_shard
    }

    /// Dimension of the model parameter vector.
    pub fn model_dim(&self) -> usize {
        match self.mlp {
            Some(shape) => shape.param_count(),
            None => self.dim_in,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self.kind, TaskKind::Quadratic)
    }

    /// Canonical shard `k` (also the evaluation set).
    pub fn shard(&self, k: usize) -> Arc<LocalDataset> {
        Arc::clone(&self.shards[k])
    }

    /// Training shard for an arbitrary vehicle id.
    ///
    /// Vehicles `0..K-1` train on the canonical shards; later vehicles get
    /// their own IID shard, generated lazily and cached.
    pub fn vehicle_shard(&mut self, vehicle_id: u64) -> Arc<LocalDataset> {
        if (vehicle_id as usize) < self.shards.len() {
            return Arc::clone(&self.shards[vehicle_id as usize]);
        }
        if let Some(s) = self.extra_shards.get(&vehicle_id) {
            return Arc::clone(s);
        }
        let shard = Arc::new(self.generate_shard(vehicle_id));
        self.extra_shards.insert(vehicle_id, Arc::clone(&shard));
        shard
    }

    /// Drops the cached shard of a departed vehicle.
    pub fn release_vehicle_shard(&mut self, vehicle_id: u64) {
        self.extra_shards.remove(&vehicle_id);
    }

    fn generate_shard(&self, shard_id: u64) -> LocalDataset {
        let mut r = rng::stream(self.seed, &[domain::DATA, shard_id + 1]);
        let n = self.samples_per_shard;
        let d = self.dim_in;
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        match self.kind {
            TaskKind::Quadratic => {
                for _ in 0..n {
                    let row: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
                    let clean: f64 = row.iter().zip(&self.shared).map(|(a, w)| a * w).sum();
                    let noise: f64 = r.sample(StandardNormal);
                    features.extend_from_slice(&row);
                    labels.push(clean + 0.5 * noise);
                }
            }
            TaskKind::Logistic => {
                for _ in 0..n {
                    let y: f64 = if r.random::<bool>() { 1.0 } else { -1.0 };
                    for j in 0..d {
                        let noise: f64 = r.sample(StandardNormal);
                        features.push(y * self.shared[j] + logistic_noise_scale(j, d) * noise);
                    }
                    labels.push(y);
                }
            }
            TaskKind::TinyMlp => {
                let shape = self.mlp.unwrap();
                for _ in 0..n {
                    let x: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
                    let p = mlp_forward(&self.shared, &x, shape).2;
                    labels.push(if p > 0.5 { 1.0 } else { 0.0 });
                    features.extend_from_slice(&x);
                }
            }
        }
        LocalDataset {
            owner_id: shard_id,
            num_samples: n,
            dim_in: d,
            features,
            labels,
        }
    }

    /// Mean loss of shard `ds` at parameters `w`.
    pub fn loss_on(&self, ds: &LocalDataset, w: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..ds.num_samples {
            total += self.sample_loss(ds, i, w);
        }
        total / ds.num_samples as f64
    }

    /// Full (mean) gradient of shard `ds` at `w`.
    pub fn grad_on(&self, ds: &LocalDataset, w: &[f64]) -> Vec<f64> {
        let idx: Vec<usize> = (0..ds.num_samples).collect();
        self.batch_grad_on(ds, w, &idx)
    }

    /// Mean gradient over the samples in `batch`.
    pub fn batch_grad_on(&self, ds: &LocalDataset, w: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.model_dim()];
        for &i in batch {
            self.accumulate_sample_grad(ds, i, w, &mut g);
        }
        let inv = 1.0 / batch.len() as f64;
        for v in &mut g {
            *v *= inv;
        }
        g
    }

    fn sample_loss(&self, ds: &LocalDataset, i: usize, w: &[f64]) -> f64 {
        let x = ds.row(i);
        match self.kind {
            TaskKind::Quadratic => {
                let r: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - ds.labels[i];
                0.5 * r * r
            }
            TaskKind::Logistic => {
                let t = ds.labels[i] * x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                softplus(-t)
            }
            TaskKind::TinyMlp => {
                let shape = self.mlp.unwrap();
                let p = mlp_forward(w, x, shape).2;
                let y = ds.labels[i];
                bce(p, y)
            }
        }
    }

    fn accumulate_sample_grad(&self, ds: &LocalDataset, i: usize, w: &[f64], out: &mut [f64]) {
        let x = ds.row(i);
        match self.kind {
            TaskKind::Quadratic => {
                let r: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - ds.labels[i];
                for (o, a) in out.iter_mut().zip(x) {
                    *o += r * a;
                }
            }
            TaskKind::Logistic => {
                let y = ds.labels[i];
                let t = y * x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                let s = sigmoid(-t);
                for (o, a) in out.iter_mut().zip(x) {
                    *o += -y * s * a;
                }
            }
            TaskKind::TinyMlp => {
                let shape = self.mlp.unwrap();
                mlp_backward(w, x, ds.labels[i], shape, out);
            }
        }
    }

    /// Mean loss over the canonical shards (uniform weights).
    pub fn global_loss(&self, w: &[f64]) -> f64 {
        self.shards.iter().map(|s| self.loss_on(s, w)).sum::<f64>() / self.shards.len() as f64
    }

    /// Gradient of the global loss over the canonical shards.
    pub fn global_grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.model_dim()];
        for s in &self.shards {
            let gs = self.grad_on(s, w);
            for (a, b) in g.iter_mut().zip(&gs) {
                *a += b;
            }
        }
        let inv = 1.0 / self.shards.len() as f64;
        for v in &mut g {
            *v *= inv;
        }
        g
    }

    /// Classification accuracy on the canonical shards; None for regression.
    pub fn accuracy(&self, w: &[f64]) -> Option<f64> {
        if !self.is_classification() {
            return None;
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for ds in &self.shards {
            for i in 0..ds.num_samples {
                let x = ds.row(i);
                let ok = match self.kind {
                    TaskKind::Logistic => {
                        let score: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                        (score >= 0.0) == (ds.labels[i] > 0.0)
                    }
                    TaskKind::TinyMlp => {
                        let p = mlp_forward(w, x, self.mlp.unwrap()).2;
                        (p > 0.5) == (ds.labels[i] > 0.5)
                    }
                    TaskKind::Quadratic => unreachable!(),
                };
                correct += ok as usize;
                total += 1;
            }
        }
        Some(correct as f64 / total as f64)
    }

    /// Initial model parameters for training runs.
    ///
    /// Zero for the convex tasks; a small seeded init for the MLP (an
    /// all-zero MLP has symmetric hidden units and zero input gradients).
    pub fn initial_params(&self) -> Vec<f64> {
        match self.kind {
            TaskKind::TinyMlp => {
                let mut r = rng::stream(self.seed, &[domain::DATA, u64::MAX]);
                (0..self.model_dim())
                    .map(|_| 0.3 * r.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            _ => vec![0.0; self.model_dim()],
        }
    }

    /// Closed-form optimum `(w*, F(w*))` of the quadratic task.
    pub fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        if self.kind != TaskKind::Quadratic {
            return None;
        }
        let d = self.dim_in;
        let mut h = vec![0.0; d * d];
        let mut c = vec![0.0; d];
        let kf = self.shards.len() as f64;
        for ds in &self.shards {
            let inv_n = 1.0 / ds.num_samples as f64;
            for i in 0..ds.num_samples {
                let row = ds.row(i);
                let b = ds.labels[i];
                for p in 0..d {
                    let w = inv_n * row[p] / kf;
                    for q in 0..d {
                        h[p * d + q] += w * row[q];
                    }
                    c[p] += w * b;
                }
            }
        }
        let w_star = solve_spd(&h, &c, d)?;
        let f_star = self.global_loss(&w_star);
        Some((w_star, f_star))
    }

    /// Largest eigenvalue of the global quadratic Hessian (power iteration).
    pub fn hessian_top_eigenvalue(&self) -> Option<f64> {
        if self.kind != TaskKind::Quadratic {
            return None;
        }
        let d = self.dim_in;
        let matvec = |v: &[f64]| -> Vec<f64> {
            // H v = (1/K) sum_k A_k^T (A_k v) / n_k
            let mut out = vec![0.0; d];
            let kf = self.shards.len() as f64;
            for ds in &self.shards {
                let inv_n = 1.0 / ds.num_samples as f64;
                for i in 0..ds.num_samples {
                    let row = ds.row(i);
                    let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                    let wgt = dot * inv_n / kf;
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += wgt * a;
                    }
                }
            }
            out
        };
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 * 0.7).sin()).collect();
        let mut lambda = 0.0;
        for _ in 0..200 {
            let hv = matvec(&v);
            let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                return Some(0.0);
            }
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = hv.iter().map(|x| x / norm).collect();
        }
        Some(lambda)
    }

    /// Test-support constructor with explicit quadratic shards.
    pub fn from_quadratic_parts(shards: Vec<LocalDataset>) -> Task {
        let dim_in = shards[0].dim_in;
        let samples = shards[0].num_samples;
        Task {
            kind: TaskKind::Quadratic,
            seed: 0,
            dim_in,
            samples_per_shard: samples,
            shards: shards.into_iter().map(Arc::new).collect(),
            extra_shards: HashMap::new(),
            shared: vec![0.0; dim_in],
            mlp: None,
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + exp(t)).
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Forward pass of the tiny MLP; returns (hidden pre-act, hidden act, output prob).
fn mlp_forward(w: &[f64], x: &[f64], shape: MlpShape) -> (Vec<f64>, Vec<f64>, f64) {
    let (d, h) = (shape.dim_in, shape.hidden);
    let w1 = &w[0..h * d];
    let b1 = &w[h * d..h * d + h];
    let w2 = &w[h * d + h..h * d + 2 * h];
    let b2 = w[h * d + 2 * h];
    let mut z1 = vec![0.0; h];
    for j in 0..h {
        let row = &w1[j * d..(j + 1) * d];
        z1[j] = b1[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    let a1: Vec<f64> = z1.iter().map(|z| z.tanh()).collect();
    let z2 = b2 + w2.iter().zip(&a1).map(|(a, b)| a * b).sum::<f64>();
    (z1, a1, sigmoid(z2))
}

/// Accumulates the BCE gradient of one sample into `out`.
fn mlp_backward(w: &[f64], x: &[f64], y: f64, shape: MlpShape, out: &mut [f64]) {
    let (d, h) = (shape.dim_in, shape.hidden);
    let (_, a1, p) = mlp_forward(w, x, shape);
    let w2 = &w[h * d + h..h * d + 2 * h];
    let dz2 = p - y;
    for j in 0..h {
        let da1 = dz2 * w2[j];
        let dz1 = da1 * (1.0 - a1[j] * a1[j]);
        let row = &mut out[j * d..(j + 1) * d];
        for (o, xv) in row.iter_mut().zip(x) {
            *o += dz1 * xv;
        }
        out[h * d + j] += dz1; // b1
        out[h * d + h + j] += dz2 * a1[j]; // w2
    }
    out[h * d + 2 * h] += dz2; // b2
}

/// Cholesky solve of a symmetric positive-definite system.
fn solve_spd(a: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    Some(x)
}
