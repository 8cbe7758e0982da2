//! Empirical verification of the convergence analysis.
//!
//! The checks here estimate the smoothness / gradient-bound / noise /
//! divergence constants from probes, replay instrumented runs to bound the
//! drift between local models and the virtual global trajectory, evaluate
//! the convergence-rate bound, and Monte-Carlo-check the dropout expectation
//! identity the analysis relies on. All checks are estimate-conditional:
//! they are reported with the constants used, never assumed.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{is_positive, Error, Result};
use crate::task::Task;

/// Empirical constants of the convergence assumptions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstantEstimates {
    /// Lipschitz constant of the global gradient (L).
    pub smoothness: f64,
    /// Bound on squared local gradient norms (G^2).
    pub grad_bound_sq: f64,
    /// Bound on mini-batch gradient variance (sigma^2, aliased delta^2).
    pub noise_var: f64,
    /// Bound on local/global gradient divergence (epsilon_g^2).
    pub divergence_sq: f64,
    /// Lower bound on the global loss (F_inf).
    pub f_inf: f64,
}

/// Per-round record of an instrumented run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRound {
    /// Global model at the start of the round.
    pub w_start: Vec<f64>,
    /// Selected vehicles, ascending id. For theory runs these coincide with
    /// canonical shard indices.
    pub participants: Vec<u64>,
    /// Per-epoch gradient components, indexed `[participant][epoch]`.
    pub per_epoch_updates: Vec<Vec<Vec<f64>>>,
    /// Vehicles whose upload reached the server.
    pub survivors: Vec<u64>,
    pub ratio: f64,
}

/// Full instrumented run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub rounds: Vec<TraceRound>,
    pub eta: f64,
    pub epochs: usize,
}

/// Estimates the assumption constants by probing the task.
///
/// All estimators are maxima over probes, so adding probes never decreases
/// an estimate. `batch_size = None` probes with full-batch gradients and
/// reports zero mini-batch noise.
pub fn estimate_constants(
    task: &Task,
    probe_count: usize,
    batch_size: Option<usize>,
    rng: &mut ChaCha12Rng,
) -> Result<ConstantEstimates> {
    if probe_count < 100 {
        return Err(Error::Config(format!(
            "probe_count {probe_count} must be at least 100"
        )));
    }
    let dim = task.model_dim();
    let k = task.num_shards();
    let sample_w = |r: &mut ChaCha12Rng| -> Vec<f64> {
        (0..dim).map(|_| 1.5 * r.sample::<f64, _>(StandardNormal)).collect()
    };

    let mut smoothness: f64 = 0.0;
    let mut grad_bound_sq: f64 = 0.0;
    let mut noise_var: f64 = 0.0;
    let mut divergence_sq: f64 = 0.0;
    let mut best_loss = f64::INFINITY;

    for _ in 0..probe_count {
        let w1 = sample_w(rng);
        let w2 = sample_w(rng);
        let g1 = task.global_grad(&w1);
        let g2 = task.global_grad(&w2);
        let dw = norm2(&sub(&w1, &w2));
        if dw > 1e-9 {
            smoothness = smoothness.max(norm2(&sub(&g1, &g2)) / dw);
        }
        let mut local_sq_sum = 0.0;
        for s in 0..k {
            let shard = task.shard(s);
            let gk = task.grad_on(&shard, &w1);
            grad_bound_sq = grad_bound_sq.max(dot(&gk, &gk));
            local_sq_sum += sq_dist(&gk, &g1);
            if let Some(b) = batch_size {
                let b = b.min(shard.num_samples);
                let batch: Vec<usize> =
                    (0..b).map(|_| rng.random_range(0..shard.num_samples)).collect();
                let gb = task.batch_grad_on(&shard, &w1, &batch);
                noise_var = noise_var.max(sq_dist(&gb, &gk));
            }
        }
        divergence_sq = divergence_sq.max(local_sq_sum / k as f64);
        best_loss = best_loss.min(task.global_loss(&w1));
    }

    // Curvature probing along the dominant direction tightens the smoothness
    // estimate far beyond random pairs; each iterate feeds the running max.
    let w0 = vec![0.0; dim];
    let g0 = task.global_grad(&w0);
    let mut u: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let eps = 1e-4;
    for _ in 0..60 {
        let nu = norm2(&u);
        if nu < 1e-300 {
            break;
        }
        let probe: Vec<f64> = w0.iter().zip(&u).map(|(w, ui)| w + eps * ui / nu).collect();
        let hu: Vec<f64> = sub(&task.global_grad(&probe), &g0)
            .iter()
            .map(|x| x / eps)
            .collect();
        smoothness = smoothness.max(norm2(&hu));
        u = hu;
    }

    let f_inf = match task.optimum() {
        Some((_, f_star)) => f_star,
        None => {
            // Best loss over probes refined by a short gradient descent.
            let mut w = vec![0.0; dim];
            let step = 1.0 / smoothness.max(1.0);
            for _ in 0..200 {
                let g = task.global_grad(&w);
                for (wi, gi) in w.iter_mut().zip(&g) {
                    *wi -= step * gi;
                }
                best_loss = best_loss.min(task.global_loss(&w));
            }
            best_loss
        }
    };

    Ok(ConstantEstimates {
        smoothness,
        grad_bound_sq,
        noise_var,
        divergence_sq,
        f_inf,
    })
}

/// Exact constants for a quadratic run, computed over the visited region.
///
/// Smoothness is the top Hessian eigenvalue, the gradient bound is the max
/// over all recorded per-epoch gradients, divergence is maximized over the
/// visited virtual trajectory, and F_inf is the closed-form optimum. Noise
/// is zero (full-batch traces only).
pub fn closed_form_constants(task: &Task, trace: &RunTrace) -> Result<ConstantEstimates> {
    let (_, f_inf) = task.optimum().ok_or_else(|| Error::Config(
        "closed-form constants need the quadratic task".into(),
    ))?;
    let smoothness = task
        .hessian_top_eigenvalue()
        .expect("quadratic task has a Hessian");
    let mut grad_bound_sq = 0.0f64;
    for round in &trace.rounds {
        for per_epoch in &round.per_epoch_updates {
            for g in per_epoch {
                grad_bound_sq = grad_bound_sq.max(dot(g, g));
            }
        }
    }
    let mut divergence_sq = 0.0f64;
    let k = task.num_shards();
    for w_bar in virtual_trajectory(trace) {
        let g_global = task.global_grad(&w_bar);
        let mut sum = 0.0;
        for s in 0..k {
            let gk = task.grad_on(&task.shard(s), &w_bar);
            sum += sq_dist(&gk, &g_global);
        }
        divergence_sq = divergence_sq.max(sum / k as f64);
    }
    Ok(ConstantEstimates {
        smoothness,
        grad_bound_sq,
        noise_var: 0.0,
        divergence_sq,
        f_inf,
    })
}

/// All virtual-model points w_bar^t visited by a trace, in step order.
fn virtual_trajectory(trace: &RunTrace) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut w_bar = match trace.rounds.first() {
        Some(r) => r.w_start.clone(),
        None => return out,
    };
    for round in &trace.rounds {
        let surv_idx: Vec<usize> = round
            .participants
            .iter()
            .enumerate()
            .filter(|(_, id)| round.survivors.contains(id))
            .map(|(i, _)| i)
            .collect();
        for e in 0..trace.epochs {
            out.push(w_bar.clone());
            if surv_idx.is_empty() {
                continue;
            }
            let inv = 1.0 / surv_idx.len() as f64;
            for &i in &surv_idx {
                for (w, g) in w_bar.iter_mut().zip(&round.per_epoch_updates[i][e]) {
                    *w -= trace.eta * inv * g;
                }
            }
        }
    }
    out.push(w_bar);
    out
}

/// Result of the local-drift bound check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaReport {
    /// Smallest (RHS - LHS) over all steps; negative means a violation.
    pub min_margin: f64,
    pub violations: usize,
    pub steps_checked: usize,
}

/// Checks that the local models never drift further from the virtual global
/// model than `4 K eta^2 (E-1)^2 G^2` at any step.
pub fn lemma1_check(trace: &RunTrace, eta: f64, epochs: usize, grad_bound_sq: f64) -> LemmaReport {
    let mut min_margin = f64::INFINITY;
    let mut violations = 0;
    let mut steps = 0;
    for round in &trace.rounds {
        let k = round.participants.len();
        if k == 0 {
            continue;
        }
        let rhs = 4.0 * k as f64 * eta * eta * (epochs as f64 - 1.0).powi(2) * grad_bound_sq;
        let surv_idx: Vec<usize> = round
            .participants
            .iter()
            .enumerate()
            .filter(|(_, id)| round.survivors.contains(id))
            .map(|(i, _)| i)
            .collect();
        // Accumulated updates since the start of the round.
        let dim = round.w_start.len();
        let mut acc_local = vec![vec![0.0; dim]; k];
        let mut acc_virtual = vec![0.0; dim];
        for e in 0..epochs {
            // Drift after e local steps.
            let mut lhs = 0.0;
            for local in &acc_local {
                lhs += local
                    .iter()
                    .zip(&acc_virtual)
                    .map(|(l, v)| {
                        let d = eta * (v - l);
                        d * d
                    })
                    .sum::<f64>();
            }
            let margin = rhs - lhs;
            min_margin = min_margin.min(margin);
            violations += (margin < 0.0) as usize;
            steps += 1;
            for (i, local) in acc_local.iter_mut().enumerate() {
                for (a, g) in local.iter_mut().zip(&round.per_epoch_updates[i][e]) {
                    *a += g;
                }
            }
            if !surv_idx.is_empty() {
                let inv = 1.0 / surv_idx.len() as f64;
                for &i in &surv_idx {
                    for (a, g) in acc_virtual.iter_mut().zip(&round.per_epoch_updates[i][e]) {
                        *a += inv * g;
                    }
                }
            }
        }
    }
    if min_margin == f64::INFINITY {
        min_margin = 0.0;
    }
    LemmaReport {
        min_margin,
        violations,
        steps_checked: steps,
    }
}

/// Result of the convergence-rate bound check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremReport {
    /// Average squared global gradient norm along the virtual trajectory.
    pub lhs: f64,
    /// Bound assembled from the constants.
    pub rhs: f64,
    pub holds: bool,
    /// Rounds with ratio 0 are excluded from both averages.
    pub excluded_rounds: usize,
    pub steps_used: usize,
}

/// Evaluates both sides of the convergence-rate bound on a trace.
pub fn theorem1_bound(
    task: &Task,
    trace: &RunTrace,
    estimates: &ConstantEstimates,
    eta: f64,
    epochs: usize,
) -> TheoremReport {
    let mut lhs_sum = 0.0;
    let mut p_term_sum = 0.0;
    let mut steps_used = 0usize;
    let mut excluded = 0usize;
    let f0 = match trace.rounds.first() {
        Some(r) => task.global_loss(&r.w_start),
        None => 0.0,
    };
    let init_gap = (f0 - estimates.f_inf).max(0.0);

    let mut w_bar = match trace.rounds.first() {
        Some(r) => r.w_start.clone(),
        None => Vec::new(),
    };
    for round in &trace.rounds {
        if round.survivors.is_empty() {
            // The scheme redistributes the old model; the per-step descent
            // inequality is vacuous here, so the round leaves both sums.
            excluded += 1;
            continue;
        }
        let surv_idx: Vec<usize> = round
            .participants
            .iter()
            .enumerate()
            .filter(|(_, id)| round.survivors.contains(id))
            .map(|(i, _)| i)
            .collect();
        let inv = 1.0 / surv_idx.len() as f64;
        for e in 0..epochs {
            let g = task.global_grad(&w_bar);
            lhs_sum += dot(&g, &g);
            p_term_sum += 2.0 / (eta * round.ratio) * init_gap;
            steps_used += 1;
            for &i in &surv_idx {
                for (w, gi) in w_bar.iter_mut().zip(&round.per_epoch_updates[i][e]) {
                    *w -= eta * inv * gi;
                }
            }
        }
    }
    if steps_used == 0 {
        return TheoremReport {
            lhs: 0.0,
            rhs: 0.0,
            holds: true,
            excluded_rounds: excluded,
            steps_used: 0,
        };
    }
    let t = steps_used as f64;
    let e1 = (epochs as f64 - 1.0).powi(2);
    let l = estimates.smoothness;
    let rhs = p_term_sum / t
        + 2.0 * estimates.divergence_sq
        + eta * (estimates.noise_var + estimates.grad_bound_sq) * l
        + 4.0 * eta * eta * e1 * estimates.grad_bound_sq * l * l;
    let lhs = lhs_sum / t;
    TheoremReport {
        lhs,
        rhs,
        holds: lhs <= rhs,
        excluded_rounds: excluded,
        steps_used,
    }
}

/// Monte-Carlo check of the dropout expectation identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    /// Max relative component error of the unconditioned estimator against
    /// `p * sum_k g_k`; exact (up to Monte-Carlo noise) for all p.
    pub max_rel_error: f64,
    /// Relative deviation when all-zero draws are discarded, i.e. the bias
    /// introduced by conditioning on a non-empty survivor set.
    pub nonempty_bias: f64,
    pub all_zero_trials: u64,
}

/// Draws independent survival indicators and compares the expected surviving
/// aggregate against `p * sum_k g_k`.
///
/// The unconditioned estimator (all-zero draws contribute zero) matches the
/// identity; discarding all-zero draws, as the aggregation rule's non-empty
/// guard suggests, inflates the mean by `1 / (1 - (1-p)^K)`, which is
/// reported, not asserted.
pub fn appendix_identity_check(
    num_trials: u64,
    num_vehicles: usize,
    survival_prob: f64,
    rng: &mut ChaCha12Rng,
) -> Result<IdentityReport> {
    if num_trials < 10_000 {
        return Err(Error::Config(format!(
            "num_trials {num_trials} must be at least 10^4"
        )));
    }
    if !is_positive(survival_prob) || survival_prob > 1.0 {
        return Err(Error::Config(format!(
            "survival probability {survival_prob} must lie in (0, 1]"
        )));
    }
    let dim = 6;
    // Fixed gradients with components bounded away from zero, so relative
    // errors are well conditioned.
    let grads: Vec<Vec<f64>> = (0..num_vehicles)
        .map(|_| (0..dim).map(|_| 0.5 + rng.random::<f64>()).collect())
        .collect();
    let mut counts = vec![0u64; num_vehicles];
    let mut all_zero = 0u64;
    for _ in 0..num_trials {
        let mut any = false;
        for c in counts.iter_mut() {
            if rng.random::<f64>() < survival_prob {
                *c += 1;
                any = true;
            }
        }
        if !any {
            all_zero += 1;
        }
    }
    let target: Vec<f64> = (0..dim)
        .map(|j| survival_prob * grads.iter().map(|g| g[j]).sum::<f64>())
        .collect();
    let estimate = |denominator: f64| -> Vec<f64> {
        (0..dim)
            .map(|j| {
                grads
                    .iter()
                    .zip(&counts)
                    .map(|(g, &c)| g[j] * (c as f64 / denominator))
                    .sum()
            })
            .collect()
    };
    let unconditioned = estimate(num_trials as f64);
    let conditioned = estimate((num_trials - all_zero) as f64);
    let rel = |a: &[f64]| -> f64 {
        a.iter()
            .zip(&target)
            .map(|(x, t)| (x - t).abs() / t.abs())
            .fold(0.0, f64::max)
    };
    Ok(IdentityReport {
        max_rel_error: rel(&unconditioned),
        nonempty_bias: rel(&conditioned),
        all_zero_trials: all_zero,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
