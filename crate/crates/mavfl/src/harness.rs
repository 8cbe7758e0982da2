//! Experiment harness: the synchronous round loop and its outputs.
//!
//! One round runs select -> distribute -> local updates (while traffic keeps
//! moving) -> dropout checks at each vehicle's post-compute position ->
//! delay assembly -> aggregation -> bandit update, then jumps the global
//! clock by the round duration.
//!
//! Mobility advances on a fixed dt grid in absolute time and draws arrivals
//! from its own stream, so the traffic trajectory per seed is identical
//! across selection policies; only the sampling instants differ.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fl::{aggregate, local_update, success_ratio, ModelParams, RoundOutcome, TrainConfig};
use crate::mobility::{
    advance_traffic, dropout_indicator, spawn_arrivals, ArrivalProcess, IdmParams,
    SegmentGeometry, VehicleState,
};
use crate::radio::{bs_distance, compute_time, round_duration, ComputeParams, RadioParams, UploadSlot};
use crate::rng::{self, domain};
use crate::selection::{select, utility, DelayNormalizer, DucbState, Policy};
use crate::task::{make_task, Task};
use crate::theory::{RunTrace, TraceRound};

/// Per-round record of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// None for a round skipped on an empty segment.
    pub ratio: Option<f64>,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub duration_s: f64,
    pub cumulative_delay_s: f64,
    pub candidates: Vec<u64>,
    pub selected: Vec<u64>,
    pub survivors: Vec<u64>,
    pub utility: Option<f64>,
}

/// Per-vehicle delay row (delays.csv).
#[derive(Debug, Clone, Serialize)]
struct DelayRow {
    round: usize,
    vehicle_id: u64,
    bw_hz: f64,
    rate_bps: f64,
    t_comm_s: f64,
    t_comp_s: f64,
    round_duration_s: f64,
}

/// Per-round selection log row (selection.csv).
#[derive(Debug, Clone, Serialize)]
struct SelectionRow {
    round: usize,
    policy: String,
    candidate_count: usize,
    chosen_ids: String,
    ucb_indices: String,
    round_utility: f64,
}

#[derive(Debug, Clone, Serialize)]
struct TrajectoryRow {
    step: u64,
    time_s: f64,
    vehicle_id: u64,
    position_m: f64,
    velocity_mps: f64,
    zone: usize,
}

/// Summary of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub master_seed: u64,
    pub rounds_completed: usize,
    pub cumulative_delay_s: f64,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    /// Cumulative delay at the first round reaching `target_accuracy`.
    pub delay_to_target_s: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub per_round: Vec<RoundRecord>,
}

impl RunSummary {
    /// Cumulative delay at the first round with accuracy >= `target`.
    pub fn delay_to_accuracy(&self, target: f64) -> Option<f64> {
        self.per_round
            .iter()
            .find(|r| r.accuracy.is_some_and(|a| a >= target))
            .map(|r| r.cumulative_delay_s)
    }
}

/// Deferred position capture at each vehicle's compute-finish time.
struct CaptureSet {
    /// vehicle id -> absolute capture time.
    pending: BTreeMap<u64, f64>,
    captured: BTreeMap<u64, f64>,
}

impl CaptureSet {
    fn new() -> Self {
        Self {
            pending: BTreeMap::new(),
            captured: BTreeMap::new(),
        }
    }
}

/// One experiment in progress.
pub struct Simulation {
    cfg: ExperimentConfig,
    geom: SegmentGeometry,
    idm: IdmParams,
    radio: RadioParams,
    compute: ComputeParams,
    train: TrainConfig,
    policy: Policy,
    task: Task,
    traffic: Vec<VehicleState>,
    arrivals: ArrivalProcess,
    weights: ModelParams,
    ducb: DucbState,
    normalizer: DelayNormalizer,
    /// Exact training clock: sum of round durations.
    clock_s: f64,
    /// Grid-aligned mobility time (multiple of dt).
    mobility_time_s: f64,
    step_index: u64,
    round: usize,
    records: Vec<RoundRecord>,
    delay_rows: Vec<DelayRow>,
    selection_rows: Vec<SelectionRow>,
    trajectory_rows: Vec<TrajectoryRow>,
    trace: Option<RunTrace>,
    departed_in_round: BTreeMap<u64, f64>,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = cfg.segment_geometry()?;
        let idm = cfg.idm_params();
        let radio = cfg.radio_params()?;
        let compute = cfg.compute_params();
        let train = cfg.train_config();
        let policy = cfg.policy()?;
        let task = make_task(
            cfg.task_kind()?,
            cfg.master_seed,
            cfg.task.eval_shards,
            cfg.task.samples_per_vehicle,
            cfg.task.dim,
        )?;
        let weights = ModelParams::new(task.initial_params());

        let mut traffic = initial_fleet(cfg, &geom, &idm)?;
        if cfg.mobility.frozen {
            for v in &mut traffic {
                v.velocity_mps = 0.0;
            }
        }
        let arrivals = ArrivalProcess::new(
            cfg.arrival_rate(),
            rng::stream(cfg.master_seed, &[domain::ARRIVALS]),
            traffic.len() as u64,
        )?;
        let trace = cfg.run.record_trace.then(|| RunTrace {
            rounds: Vec::new(),
            eta: train.learning_rate,
            epochs: train.local_epochs,
        });
        Ok(Self {
            geom,
            idm,
            radio,
            compute,
            train,
            policy,
            task,
            traffic,
            arrivals,
            weights,
            ducb: DucbState::new(cfg.selection.lambda)?,
            normalizer: DelayNormalizer::new(cfg.selection.warmup_rounds),
            clock_s: 0.0,
            mobility_time_s: 0.0,
            step_index: 0,
            round: 0,
            records: Vec::new(),
            delay_rows: Vec::new(),
            selection_rows: Vec::new(),
            trajectory_rows: Vec::new(),
            trace,
            departed_in_round: BTreeMap::new(),
            cfg: cfg.clone(),
        })
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn weights(&self) -> &ModelParams {
        &self.weights
    }

    pub fn ducb(&self) -> &DucbState {
        &self.ducb
    }

    pub fn traffic(&self) -> &[VehicleState] {
        &self.traffic
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn trace(&self) -> Option<&RunTrace> {
        self.trace.as_ref()
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    /// One fixed-dt mobility step on the absolute grid.
    fn step_once(&mut self) -> Result<()> {
        let dt = self.cfg.mobility.dt_s;
        if !self.cfg.mobility.frozen {
            let departed = advance_traffic(&mut self.traffic, &self.idm, dt, self.geom.length_m)?;
            for v in departed {
                self.departed_in_round.insert(v.id, v.position_m);
                self.task.release_vehicle_shard(v.id);
            }
            let rearmost = self.traffic.last().map(|v| v.position_m);
            let placed = spawn_arrivals(
                &mut self.arrivals,
                rearmost,
                &self.idm,
                dt,
                self.mobility_time_s,
            );
            self.traffic.extend(placed);
        }
        self.mobility_time_s += dt;
        self.step_index += 1;
        if self.cfg.mobility.trajectory_log {
            for v in &self.traffic {
                self.trajectory_rows.push(TrajectoryRow {
                    step: self.step_index,
                    time_s: self.mobility_time_s,
                    vehicle_id: v.id,
                    position_m: v.position_m,
                    velocity_mps: v.velocity_mps,
                    zone: crate::mobility::zone_of(v.position_m, &self.geom).unwrap_or(0),
                });
            }
        }
        Ok(())
    }

    /// Steps the grid until the next step would pass `target_time`, firing
    /// any pending captures whose time has been reached.
    fn advance_until(&mut self, target_time_s: f64, captures: &mut CaptureSet) -> Result<()> {
        let dt = self.cfg.mobility.dt_s;
        while self.mobility_time_s + dt <= target_time_s + 1e-9 {
            self.step_once()?;
            self.fire_captures(captures);
        }
        Ok(())
    }

    fn fire_captures(&mut self, captures: &mut CaptureSet) {
        let due: Vec<u64> = captures
            .pending
            .iter()
            .filter(|(_, &t)| t <= self.mobility_time_s + 1e-9)
            .map(|(&id, _)| id)
            .collect();
        for id in due {
            captures.pending.remove(&id);
            let position = self.position_of(id);
            captures.captured.insert(id, position);
        }
    }

    /// Current position of a vehicle, falling back to its recorded departure
    /// position once it has left the segment.
    fn position_of(&self, id: u64) -> f64 {
        if let Some(v) = self.traffic.iter().find(|v| v.id == id) {
            return v.position_m;
        }
        self.departed_in_round
            .get(&id)
            .copied()
            .unwrap_or(self.geom.length_m + 1.0)
    }

    /// Runs one round. Returns the aggregation outcome, or None when the
    /// segment was empty and the round was skipped.
    pub fn run_round(&mut self) -> Result<Option<RoundOutcome>> {
        self.departed_in_round.clear();
        let candidates: Vec<VehicleState> = self.traffic.to_vec();
        let outcome = if candidates.is_empty() {
            self.idle_round()?;
            None
        } else {
            Some(self.training_round(&candidates)?)
        };
        self.round += 1;
        Ok(outcome)
    }

    /// True once the configured training deadline has been passed.
    pub fn deadline_exceeded(&self) -> bool {
        self.cfg
            .run
            .deadline_s
            .is_some_and(|d| self.clock_s > d)
    }

    /// Empty segment: the model is redistributed unchanged and the clock
    /// advances by the idle tick so traffic can build up.
    fn idle_round(&mut self) -> Result<()> {
        let tick = self.cfg.run.idle_tick_s;
        let round_start = self.clock_s;
        self.clock_s = round_start + tick;
        let mut captures = CaptureSet::new();
        self.advance_until(self.clock_s, &mut captures)?;
        crate::selection::ducb_update(&mut self.ducb, &[], 0.0)?;
        let loss = self.task.global_loss(&self.weights.weights);
        let accuracy = self.task.accuracy(&self.weights.weights);
        self.records.push(RoundRecord {
            round: self.round,
            ratio: None,
            loss,
            accuracy,
            duration_s: tick,
            cumulative_delay_s: self.clock_s,
            candidates: Vec::new(),
            selected: Vec::new(),
            survivors: Vec::new(),
            utility: None,
        });
        Ok(())
    }

    fn training_round(&mut self, candidates: &[VehicleState]) -> Result<RoundOutcome> {
        let round_start = self.clock_s;
        let round = self.round;
        let mut policy_rng = rng::stream(self.cfg.master_seed, &[domain::POLICY, round as u64]);
        let decision = select(
            self.policy,
            candidates,
            &self.ducb,
            self.cfg.selection.k0,
            &self.geom,
            &self.radio,
            &mut policy_rng,
        )?;
        let chosen = decision.chosen.clone();
        debug_assert!(!chosen.is_empty());

        // Local compute times and the deferred position captures.
        let mut compute_times = BTreeMap::new();
        let mut captures = CaptureSet::new();
        let mut max_tp = 0.0f64;
        for &id in &chosen {
            let shard = self.task.vehicle_shard(id);
            let tp = compute_time(shard.num_samples as u64, &self.compute);
            max_tp = max_tp.max(tp);
            captures.pending.insert(id, round_start + tp);
            compute_times.insert(id, tp);
        }
        self.advance_until(round_start + max_tp, &mut captures)?;
        // Captures that fall inside the final partial grid cell sample the
        // last completed step.
        self.fire_captures(&mut captures);
        let remaining: Vec<u64> = captures.pending.keys().copied().collect();
        for id in remaining {
            captures.pending.remove(&id);
            let position = self.position_of(id);
            captures.captured.insert(id, position);
        }

        // Fading gains, redrawn per round per chosen vehicle in id order.
        let mut gains: BTreeMap<u64, f64> = BTreeMap::new();
        if self.cfg.radio.fading {
            let mut fading_rng =
                rng::stream(self.cfg.master_seed, &[domain::FADING, round as u64]);
            for &id in &chosen {
                let u: f64 = fading_rng.random::<f64>().max(1e-12);
                gains.insert(id, -u.ln());
            }
        }

        // Delay assembly at post-compute positions (clamped into the segment
        // for the zone lookup when the vehicle has already left).
        let slots: Vec<UploadSlot> = chosen
            .iter()
            .map(|&id| {
                let raw = captures.captured[&id];
                let clamped = raw.clamp(0.0, self.geom.length_m);
                Ok(UploadSlot {
                    vehicle_id: id,
                    distance_m: bs_distance(clamped, &self.geom)?,
                    compute_s: compute_times[&id],
                    channel_gain: gains.get(&id).copied().unwrap_or(1.0),
                })
            })
            .collect::<Result<_>>()?;
        let breakdown = round_duration(&slots, self.weights.serialized_bits(), &self.radio)?;
        let t_round = breakdown.round_duration_s;

        // Dropout: outside the segment at upload, stuck on a dead link, or
        // past the round deadline.
        let mut indicators: BTreeMap<u64, bool> = BTreeMap::new();
        for &id in &chosen {
            let inside = dropout_indicator(captures.captured[&id], &self.geom);
            let d = &breakdown.per_vehicle[&id];
            let within_deadline = match self.cfg.selection.t_max_upload_s {
                Some(t_max) => d.uplink_s + d.compute_s <= t_max,
                None => true,
            };
            indicators.insert(id, inside && d.uplink_s.is_finite() && within_deadline);
        }

        // Local updates in id order with per-(vehicle, round) streams.
        let mut updates: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut per_epoch_store: Vec<Vec<Vec<f64>>> = Vec::with_capacity(chosen.len());
        for &id in &chosen {
            let shard = self.task.vehicle_shard(id);
            let mut train_rng =
                rng::stream(self.cfg.master_seed, &[domain::TRAINING, id, round as u64]);
            let update = local_update(&self.weights, &self.task, &shard, &self.train, &mut train_rng)?;
            per_epoch_store.push(update.per_epoch);
            updates.insert(id, update.accumulated);
        }

        let selected_set: BTreeSet<u64> = chosen.iter().copied().collect();
        let survivor_set: BTreeSet<u64> = chosen
            .iter()
            .copied()
            .filter(|id| indicators[id])
            .collect();
        let ratio = success_ratio(&selected_set, &survivor_set)?;
        let new_weights = aggregate(
            &self.weights,
            &updates,
            &indicators,
            self.train.learning_rate,
        )?;

        if let Some(trace) = self.trace.as_mut() {
            trace.rounds.push(TraceRound {
                w_start: self.weights.weights.clone(),
                participants: chosen.clone(),
                per_epoch_updates: per_epoch_store,
                survivors: survivor_set.iter().copied().collect(),
                ratio,
            });
        }

        // Utility against the running delay normalization, then the bandit.
        self.normalizer.observe(t_round);
        let util = utility(
            ratio,
            t_round,
            &self.normalizer.params(self.cfg.selection.alpha),
        );
        crate::selection::ducb_update(&mut self.ducb, &chosen, util)?;
        self.weights = new_weights;
        self.clock_s = round_start + t_round;
        let mut captures = CaptureSet::new();
        self.advance_until(self.clock_s, &mut captures)?;

        let loss = self.task.global_loss(&self.weights.weights);
        let accuracy = self.task.accuracy(&self.weights.weights);
        for (&id, d) in &breakdown.per_vehicle {
            self.delay_rows.push(DelayRow {
                round,
                vehicle_id: id,
                bw_hz: d.bandwidth_hz,
                rate_bps: d.rate_bps,
                t_comm_s: d.uplink_s,
                t_comp_s: d.compute_s,
                round_duration_s: t_round,
            });
        }
        self.selection_rows.push(SelectionRow {
            round,
            policy: self.policy.to_string(),
            candidate_count: candidates.len(),
            chosen_ids: join_ids(&chosen),
            ucb_indices: decision
                .indices
                .values()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(";"),
            round_utility: util,
        });
        self.records.push(RoundRecord {
            round,
            ratio: Some(ratio),
            loss,
            accuracy,
            duration_s: t_round,
            cumulative_delay_s: self.clock_s,
            candidates: candidates.iter().map(|v| v.id).collect(),
            selected: chosen,
            survivors: survivor_set.iter().copied().collect(),
            utility: Some(util),
        });
        let aggregation_weight = if survivor_set.is_empty() {
            0.0
        } else {
            1.0 / survivor_set.len() as f64
        };
        Ok(RoundOutcome {
            selected: selected_set,
            survivors: survivor_set,
            ratio,
            new_global: self.weights.clone(),
            aggregation_weight,
        })
    }

    /// Consumes the simulation into a summary.
    pub fn into_summary(self) -> RunSummary {
        summarize(
            &self.cfg,
            self.policy,
            self.records,
            self.clock_s,
        )
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    policy: Policy,
    records: Vec<RoundRecord>,
    clock_s: f64,
) -> RunSummary {
    let final_loss = records.last().map_or(f64::NAN, |r| r.loss);
    let final_accuracy = records.last().and_then(|r| r.accuracy);
    let best_accuracy = records
        .iter()
        .filter_map(|r| r.accuracy)
        .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |m| m.max(a))));
    let ratios: Vec<f64> = records.iter().filter_map(|r| r.ratio).collect();
    let mean_ratio = if ratios.is_empty() {
        None
    } else {
        Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
    };
    let delay_to_target_s = cfg.run.target_accuracy.and_then(|target| {
        records
            .iter()
            .find(|r| r.accuracy.is_some_and(|a| a >= target))
            .map(|r| r.cumulative_delay_s)
    });
    RunSummary {
        policy: policy.to_string(),
        master_seed: cfg.master_seed,
        rounds_completed: records.len(),
        cumulative_delay_s: clock_s,
        final_loss,
        final_accuracy,
        best_accuracy,
        delay_to_target_s,
        mean_ratio,
        per_round: records,
    }
}

/// Seeds the segment with the configured number of vehicles at t = 0.
fn initial_fleet(
    cfg: &ExperimentConfig,
    geom: &SegmentGeometry,
    idm: &IdmParams,
) -> Result<Vec<VehicleState>> {
    let count = cfg.initial_count();
    let mut r = rng::stream(cfg.master_seed, &[domain::INITIAL_FLEET]);
    let mut positions: Vec<f64> = (0..count)
        .map(|_| r.random::<f64>() * geom.length_m)
        .collect();
    positions.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Enforce the minimum spacing front to back; vehicles pushed off the
    // entrance are dropped (the arrival process will refill).
    let spacing = idm.min_gap_m + 1.0;
    let mut fleet: Vec<VehicleState> = Vec::with_capacity(count);
    let mut id = 0u64;
    let mut front = f64::INFINITY;
    for x in positions {
        let x = x.min(front - spacing);
        if x < 0.0 {
            continue;
        }
        let frac: f64 = r.random();
        fleet.push(VehicleState {
            id,
            position_m: x,
            velocity_mps: (0.9 + 0.1 * frac) * idm.desired_speed_mps,
            entry_time_s: 0.0,
        });
        id += 1;
        front = x;
    }
    Ok(fleet)
}

fn join_ids(ids: &[u64]) -> String {
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Runs a full experiment and writes configured outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let mut sim = Simulation::new(cfg)?;
    for _ in 0..cfg.run.rounds {
        sim.run_round()?;
        if sim.deadline_exceeded() {
            break;
        }
    }
    if let Some(dir) = cfg.run.out_dir.clone() {
        write_outputs(&sim, &dir)?;
    }
    Ok(sim.into_summary())
}

fn write_outputs(sim: &Simulation, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_metrics_csv(&sim.records, &dir.join("metrics.csv"))?;
    write_delays_csv(&sim.delay_rows, &dir.join("delays.csv"))?;
    write_selection_csv(&sim.selection_rows, &dir.join("selection.csv"))?;
    if sim.cfg.mobility.trajectory_log {
        write_trajectory_csv(&sim.trajectory_rows, &dir.join("trajectory.csv"))?;
    }
    let summary = summarize(&sim.cfg, sim.policy, sim.records.clone(), sim.clock_s);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
    let path = dir.join("summary.json");
    let mut f =
        std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(json.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(csv::Writer::from_writer(file))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-round metrics CSV.
pub fn write_metrics_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record([
        "round",
        "p_r",
        "global_loss",
        "global_accuracy",
        "cumulative_delay_s",
        "selected_ids",
        "survivor_ids",
    ])
    .map_err(io_err)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            fmt_opt(r.ratio),
            r.loss.to_string(),
            fmt_opt(r.accuracy),
            r.cumulative_delay_s.to_string(),
            join_ids(&r.selected),
            join_ids(&r.survivors),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn write_delays_csv(rows: &[DelayRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record([
        "round",
        "vehicle_id",
        "bw_hz",
        "rate_bps",
        "t_comm_s",
        "t_comp_s",
        "round_duration_s",
    ])
    .map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.vehicle_id.to_string(),
            r.bw_hz.to_string(),
            r.rate_bps.to_string(),
            r.t_comm_s.to_string(),
            r.t_comp_s.to_string(),
            r.round_duration_s.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn write_selection_csv(rows: &[SelectionRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record([
        "round",
        "policy",
        "candidate_count",
        "chosen_ids",
        "ucb_indices",
        "round_utility",
    ])
    .map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.policy.clone(),
            r.candidate_count.to_string(),
            r.chosen_ids.clone(),
            r.ucb_indices.clone(),
            r.round_utility.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(["step", "time_s", "vehicle_id", "position_m", "velocity_mps", "zone"])
        .map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.time_s.to_string(),
            r.vehicle_id.to_string(),
            r.position_m.to_string(),
            r.velocity_mps.to_string(),
            r.zone.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Writes long-format accuracy/loss curves for a set of runs (curves.csv).
pub fn emit_plot_data(summaries: &[RunSummary], path: &Path) -> Result<()> {
    if summaries.is_empty() {
        return Err(Error::Config("no summaries to plot".into()));
    }
    let mut w = csv_writer(path)?;
    let io_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(["policy", "seed", "round", "cumulative_delay_s", "accuracy", "loss"])
        .map_err(io_err)?;
    for s in summaries {
        for r in &s.per_round {
            w.write_record([
                s.policy.clone(),
                s.master_seed.to_string(),
                r.round.to_string(),
                r.cumulative_delay_s.to_string(),
                fmt_opt(r.accuracy),
                r.loss.to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
