//! Vehicle selection: shared round utility, discounted-UCB bandit, and the
//! distance/dwell/random baselines.
//!
//! The bandit treats each vehicle as an arm. After every round, all
//! discounted statistics decay by lambda and each selected vehicle is
//! credited with the shared round utility. Unseen vehicles carry an infinite
//! index so they are explored before any seen vehicle, subject to the
//! bandwidth-floor cap on the selection size.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::index;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{is_positive, Error, Result};
use crate::mobility::{SegmentGeometry, VehicleState};
use crate::radio::{bs_distance, RadioParams};

/// Weights of the utility trade-off between participation and delay.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UtilityParams {
    /// Weight on the successful-training ratio, in [0, 1].
    pub alpha: f64,
    /// Fastest round observed so far, s.
    pub t_min: f64,
    /// Slowest round observed so far, s.
    pub t_max: f64,
}

/// Shared round utility: `alpha * p - (1 - alpha) * normalized delay`.
///
/// The delay is min-max normalized over `[t_min, t_max]` and clamped; a
/// degenerate range (all rounds equal so far) contributes zero delay
/// penalty. The result lies in `[-(1 - alpha), alpha]`.
pub fn utility(ratio: f64, round_delay_s: f64, params: &UtilityParams) -> f64 {
    let span = params.t_max - params.t_min;
    let normalized = if span > 1e-12 {
        ((round_delay_s - params.t_min) / span).clamp(0.0, 1.0)
    } else {
        0.0
    };
    params.alpha * ratio - (1.0 - params.alpha) * normalized
}

/// Running min/max of observed round durations used to normalize delay.
///
/// The first `warmup_rounds` observations seed the range; afterwards the
/// range keeps expanding as new extremes appear, and doubles as the clamp
/// range for the utility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayNormalizer {
    pub t_min: f64,
    pub t_max: f64,
    pub rounds_seen: usize,
    pub warmup_rounds: usize,
}

impl DelayNormalizer {
    pub fn new(warmup_rounds: usize) -> Self {
        Self {
            t_min: f64::INFINITY,
            t_max: f64::NEG_INFINITY,
            rounds_seen: 0,
            warmup_rounds,
        }
    }

    pub fn observe(&mut self, round_duration_s: f64) {
        self.t_min = self.t_min.min(round_duration_s);
        self.t_max = self.t_max.max(round_duration_s);
        self.rounds_seen += 1;
    }

    /// Normalization parameters; degenerate (no delay penalty) until the
    /// warm-up has seeded the range.
    pub fn params(&self, alpha: f64) -> UtilityParams {
        if !self.warmed_up() {
            return UtilityParams {
                alpha,
                t_min: 0.0,
                t_max: 0.0,
            };
        }
        UtilityParams {
            alpha,
            t_min: self.t_min,
            t_max: self.t_max,
        }
    }

    pub fn warmed_up(&self) -> bool {
        self.rounds_seen >= self.warmup_rounds
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
struct ArmStats {
    count: f64,
    reward_sum: f64,
}

/// Discounted-UCB bandit state over the vehicle population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DucbState {
    /// Discount factor in (0, 1].
    pub lambda: f64,
    arms: BTreeMap<u64, ArmStats>,
    /// Discounted total number of selections across all vehicles.
    total_pulls: f64,
    /// Completed rounds.
    round: u64,
}

impl DucbState {
    pub fn new(lambda: f64) -> Result<Self> {
        if !is_positive(lambda) || lambda > 1.0 {
            return Err(Error::Config(format!(
                "discount lambda {lambda} must lie in (0, 1]"
            )));
        }
        Ok(Self {
            lambda,
            arms: BTreeMap::new(),
            total_pulls: 0.0,
            round: 0,
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn total_pulls(&self) -> f64 {
        self.total_pulls
    }

    pub fn discounted_count(&self, vehicle: u64) -> f64 {
        self.arms.get(&vehicle).map_or(0.0, |a| a.count)
    }

    pub fn discounted_reward_sum(&self, vehicle: u64) -> f64 {
        self.arms.get(&vehicle).map_or(0.0, |a| a.reward_sum)
    }
}

/// Applies one round of discounting and credits the chosen vehicles.
///
/// Every discounted quantity decays by lambda exactly once per round; each
/// chosen vehicle then gains one count and the shared `round_utility`.
pub fn ducb_update(state: &mut DucbState, chosen: &[u64], round_utility: f64) -> Result<()> {
    if !round_utility.is_finite() {
        return Err(Error::NonFinite("ducb_update round_utility"));
    }
    let lambda = state.lambda;
    for arm in state.arms.values_mut() {
        arm.count *= lambda;
        arm.reward_sum *= lambda;
    }
    state.total_pulls *= lambda;
    for &id in chosen {
        let arm = state.arms.entry(id).or_default();
        arm.count += 1.0;
        arm.reward_sum += round_utility;
    }
    state.total_pulls += chosen.len() as f64;
    state.round += 1;
    // Fully decayed arms of long-departed vehicles carry no information.
    state.arms.retain(|_, a| a.count > 1e-12);
    Ok(())
}

/// Discounted mean utility plus exploration bonus.
///
/// A vehicle with zero discounted count gets an infinite index, which forces
/// exploration of unseen vehicles. The log of the discounted total is
/// floored at zero so the bonus stays real when few pulls remain.
pub fn ucb_index(state: &DucbState, vehicle: u64) -> f64 {
    let arm = match state.arms.get(&vehicle) {
        Some(a) if a.count > 0.0 => a,
        _ => return f64::INFINITY,
    };
    let mean = arm.reward_sum / arm.count;
    let log_n = state.total_pulls.ln().max(0.0);
    mean + (2.0 * log_n / arm.count).sqrt()
}

/// Time left before position `x` leaves the segment at speed `v`.
pub fn remaining_time(position_m: f64, velocity_mps: f64, geom: &SegmentGeometry) -> f64 {
    if velocity_mps <= 0.0 {
        return f64::INFINITY;
    }
    (geom.length_m - position_m).max(0.0) / velocity_mps
}

/// Selection policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Discounted-UCB bandit.
    Ducb,
    /// Communication-based: nearest to the BS.
    Cbs,
    /// Remain-time based: longest time left in the segment.
    Rbs,
    /// Uniform random without replacement.
    Random,
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ducb" | "mab" => Ok(Policy::Ducb),
            "cbs" => Ok(Policy::Cbs),
            "rbs" => Ok(Policy::Rbs),
            "random" => Ok(Policy::Random),
            other => Err(Error::Config(format!(
                "unknown policy '{other}' (expected ducb, cbs, rbs, random)"
            ))),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Policy::Ducb => "ducb",
            Policy::Cbs => "cbs",
            Policy::Rbs => "rbs",
            Policy::Random => "random",
        };
        f.write_str(name)
    }
}

/// One selection decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionDecision {
    /// Chosen vehicle ids, ascending.
    pub chosen: Vec<u64>,
    /// Equal bandwidth share granted to each chosen vehicle (0 if none).
    pub allocated_bw_hz: f64,
    /// UCB index of each chosen vehicle (DUCB only).
    pub indices: BTreeMap<u64, f64>,
}

impl SelectionDecision {
    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    /// Selection indicator a_k over a candidate set.
    pub fn a_vector(&self, candidates: &[VehicleState]) -> BTreeMap<u64, bool> {
        candidates
            .iter()
            .map(|v| (v.id, self.chosen.binary_search(&v.id).is_ok()))
            .collect()
    }
}

/// Picks up to `k0` vehicles from the in-segment candidates.
///
/// All policies cap the selection at `floor(B / B_min)` and select everyone
/// when fewer candidates than that are available. Ties break by ascending
/// vehicle id. An empty candidate set yields an empty decision (the round is
/// skipped and the global model is redistributed unchanged).
pub fn select(
    policy: Policy,
    candidates: &[VehicleState],
    state: &DucbState,
    k0: usize,
    geom: &SegmentGeometry,
    radio: &RadioParams,
    rng: &mut ChaCha12Rng,
) -> Result<SelectionDecision> {
    if k0 == 0 {
        return Err(Error::Config("K_0 must be >= 1".into()));
    }
    let cap = radio.max_selectable().max(1).min(k0);
    let budget = cap.min(candidates.len());
    if budget == 0 {
        return Ok(SelectionDecision {
            chosen: Vec::new(),
            allocated_bw_hz: 0.0,
            indices: BTreeMap::new(),
        });
    }
    // Candidates in id order so random draws and tie-breaks are stable.
    let mut pool: Vec<&VehicleState> = candidates.iter().collect();
    pool.sort_by_key(|v| v.id);

    let mut indices = BTreeMap::new();
    let chosen_ids: Vec<u64> = match policy {
        Policy::Random => index::sample(rng, pool.len(), budget)
            .iter()
            .map(|i| pool[i].id)
            .collect(),
        Policy::Ducb if state.round() == 0 => index::sample(rng, pool.len(), budget)
            .iter()
            .map(|i| pool[i].id)
            .collect(),
        Policy::Ducb => {
            let mut scored: Vec<(f64, u64)> = pool
                .iter()
                .map(|v| (ucb_index(state, v.id), v.id))
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let picked: Vec<u64> = scored[..budget].iter().map(|&(_, id)| id).collect();
            for &(score, id) in &scored[..budget] {
                indices.insert(id, score);
            }
            picked
        }
        Policy::Cbs => {
            let mut scored: Vec<(f64, u64)> = pool
                .iter()
                .map(|v| Ok((bs_distance(v.position_m, geom)?, v.id)))
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            scored[..budget].iter().map(|&(_, id)| id).collect()
        }
        Policy::Rbs => {
            let mut scored: Vec<(f64, u64)> = pool
                .iter()
                .map(|v| (remaining_time(v.position_m, v.velocity_mps, geom), v.id))
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            scored[..budget].iter().map(|&(_, id)| id).collect()
        }
    };
    let mut chosen = chosen_ids;
    chosen.sort_unstable();
    Ok(SelectionDecision {
        allocated_bw_hz: radio.total_bandwidth_hz / chosen.len() as f64,
        chosen,
        indices,
    })
}
