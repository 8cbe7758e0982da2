//! Experiment configuration: a TOML file with per-section defaults, plus the
//! CLI overrides applied on top.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{is_positive, Error, Result};
use crate::fl::TrainConfig;
use crate::mobility::{IdmParams, SegmentGeometry};
use crate::radio::{ComputeParams, PathlossModel, RadioParams};
use crate::selection::Policy;
use crate::task::TaskKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub length_m: f64,
    /// Defaults to the middle of the segment when absent.
    pub bs_offset_m: Option<f64>,
    pub bs_height_m: f64,
    pub num_zones: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            length_m: 1000.0,
            bs_offset_m: None,
            bs_height_m: 25.0,
            num_zones: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilitySection {
    pub velocity_kmh: f64,
    pub max_accel_mps2: f64,
    pub comfortable_decel_mps2: f64,
    pub min_gap_m: f64,
    pub time_headway_s: f64,
    pub accel_exponent: f64,
    /// Defaults to 2 * k0 vehicles in the segment at steady state.
    pub arrival_rate_per_s: Option<f64>,
    /// Vehicles already on the segment at t = 0. Defaults to 2 * k0.
    pub initial_count: Option<usize>,
    /// Freeze all vehicles in place (stationary-fleet runs).
    pub frozen: bool,
    pub dt_s: f64,
    /// Write a per-step trajectory CSV.
    pub trajectory_log: bool,
}

impl Default for MobilitySection {
    fn default() -> Self {
        Self {
            velocity_kmh: 60.0,
            max_accel_mps2: 1.0,
            comfortable_decel_mps2: 1.5,
            min_gap_m: 2.0,
            time_headway_s: 1.5,
            accel_exponent: 4.0,
            arrival_rate_per_s: None,
            initial_count: None,
            frozen: false,
            dt_s: 0.1,
            trajectory_log: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub total_bandwidth_hz: f64,
    pub min_bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    /// "log_distance_db" or "power_law".
    pub pathloss_model: String,
    pub pathloss_exponent: f64,
    /// Redraw a unit-mean exponential channel gain each round.
    pub fading: bool,
}

impl Default for RadioSection {
    fn default() -> Self {
        let r = RadioParams::default();
        Self {
            total_bandwidth_hz: r.total_bandwidth_hz,
            min_bandwidth_hz: r.min_bandwidth_hz,
            tx_power_dbm: r.tx_power_dbm,
            noise_power_dbm: r.noise_power_dbm,
            antenna_gain_dbi: r.antenna_gain_dbi,
            pathloss_model: "log_distance_db".into(),
            pathloss_exponent: r.pathloss_exponent,
            fading: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeSection {
    pub cycles_per_bit: f64,
    pub gpu_freq_hz: f64,
    pub normalizer: f64,
    pub bits_per_sample: f64,
}

impl Default for ComputeSection {
    fn default() -> Self {
        let c = ComputeParams::default();
        Self {
            cycles_per_bit: c.cycles_per_bit,
            gpu_freq_hz: c.gpu_freq_hz,
            normalizer: c.normalizer,
            bits_per_sample: c.bits_per_sample,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub full_batch: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
            full_batch: t.full_batch,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// "quadratic", "logistic", or "tiny_mlp".
    pub kind: String,
    pub dim: usize,
    pub samples_per_vehicle: usize,
    /// Canonical shards used for evaluation and the first vehicles.
    pub eval_shards: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            kind: "logistic".into(),
            dim: 50,
            samples_per_vehicle: 600,
            eval_shards: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    /// "ducb", "cbs", "rbs", or "random".
    pub policy: String,
    pub k0: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Round deadline: a vehicle whose compute + upload exceeds it is
    /// dropped even if it stayed on the segment.
    pub t_max_upload_s: Option<f64>,
    pub warmup_rounds: usize,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            policy: "ducb".into(),
            k0: 5,
            alpha: 0.6,
            lambda: 0.9,
            t_max_upload_s: None,
            warmup_rounds: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub rounds: usize,
    /// Wall-clock training deadline; the run stops early once exceeded.
    pub deadline_s: Option<f64>,
    /// Accuracy level for the delay-to-target summary metric.
    pub target_accuracy: Option<f64>,
    /// Clock advance for a round skipped on an empty segment.
    pub idle_tick_s: f64,
    /// Record the instrumented trace needed by the theory checks.
    pub record_trace: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            rounds: 100,
            deadline_s: None,
            target_accuracy: None,
            idle_tick_s: 1.0,
            record_trace: false,
            out_dir: None,
        }
    }
}

/// Full experiment configuration as parsed from TOML.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub geometry: GeometrySection,
    pub mobility: MobilitySection,
    pub radio: RadioSection,
    pub compute: ComputeSection,
    pub train: TrainSection,
    pub task: TaskSection,
    pub selection: SelectionSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    /// Checks everything the typed views would reject, so a parsed config is
    /// known-good before a run starts.
    pub fn validate(&self) -> Result<()> {
        self.segment_geometry()?.validate()?;
        self.idm_params().validate()?;
        self.radio_params()?.validate()?;
        self.compute_params().validate()?;
        self.train_config().validate()?;
        TaskKind::from_str(&self.task.kind)?;
        Policy::from_str(&self.selection.policy)?;
        if self.task.dim == 0 || self.task.samples_per_vehicle == 0 || self.task.eval_shards == 0 {
            return Err(Error::Config("task sizes must be positive".into()));
        }
        if self.selection.k0 == 0 {
            return Err(Error::Config("k0 must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.selection.alpha) {
            return Err(Error::Config("alpha must lie in [0, 1]".into()));
        }
        if !(self.selection.lambda > 0.0 && self.selection.lambda <= 1.0) {
            return Err(Error::Config("lambda must lie in (0, 1]".into()));
        }
        if let Some(t) = self.selection.t_max_upload_s {
            if !is_positive(t) {
                return Err(Error::Config("t_max_upload_s must be > 0".into()));
            }
        }
        if let Some(rate) = self.mobility.arrival_rate_per_s {
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::Config("arrival_rate_per_s must be >= 0".into()));
            }
        }
        if !is_positive(self.mobility.dt_s) {
            return Err(Error::Config("dt_s must be > 0".into()));
        }
        if !is_positive(self.run.idle_tick_s) {
            return Err(Error::Config("idle_tick_s must be > 0".into()));
        }
        if let Some(d) = self.run.deadline_s {
            if !is_positive(d) {
                return Err(Error::Config("deadline_s must be > 0".into()));
            }
        }
        if let Some(a) = self.run.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config("target_accuracy must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn segment_geometry(&self) -> Result<SegmentGeometry> {
        let g = SegmentGeometry {
            length_m: self.geometry.length_m,
            bs_offset_m: self
                .geometry
                .bs_offset_m
                .unwrap_or(self.geometry.length_m / 2.0),
            bs_height_m: self.geometry.bs_height_m,
            num_zones: self.geometry.num_zones,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn idm_params(&self) -> IdmParams {
        IdmParams {
            desired_speed_mps: self.mobility.velocity_kmh / 3.6,
            max_accel_mps2: self.mobility.max_accel_mps2,
            comfortable_decel_mps2: self.mobility.comfortable_decel_mps2,
            min_gap_m: self.mobility.min_gap_m,
            time_headway_s: self.mobility.time_headway_s,
            accel_exponent: self.mobility.accel_exponent,
        }
    }

    pub fn radio_params(&self) -> Result<RadioParams> {
        let model = match self.radio.pathloss_model.as_str() {
            "log_distance_db" => PathlossModel::LogDistanceDb,
            "power_law" => PathlossModel::PowerLaw,
            other => {
                return Err(Error::Config(format!(
                    "unknown pathloss model '{other}' (expected log_distance_db or power_law)"
                )))
            }
        };
        Ok(RadioParams {
            total_bandwidth_hz: self.radio.total_bandwidth_hz,
            min_bandwidth_hz: self.radio.min_bandwidth_hz,
            tx_power_dbm: self.radio.tx_power_dbm,
            noise_power_dbm: self.radio.noise_power_dbm,
            antenna_gain_dbi: self.radio.antenna_gain_dbi,
            pathloss_model: model,
            pathloss_exponent: self.radio.pathloss_exponent,
        })
    }

    pub fn compute_params(&self) -> ComputeParams {
        ComputeParams {
            cycles_per_bit: self.compute.cycles_per_bit,
            gpu_freq_hz: self.compute.gpu_freq_hz,
            normalizer: self.compute.normalizer,
            bits_per_sample: self.compute.bits_per_sample,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            local_epochs: self.train.local_epochs,
            batch_size: self.train.batch_size,
            full_batch: self.train.full_batch,
        }
    }

    pub fn task_kind(&self) -> Result<TaskKind> {
        TaskKind::from_str(&self.task.kind)
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::from_str(&self.selection.policy)
    }

    pub fn arrival_rate(&self) -> f64 {
        self.mobility.arrival_rate_per_s.unwrap_or_else(|| {
            let v0 = self.mobility.velocity_kmh / 3.6;
            2.0 * self.selection.k0 as f64 * v0 / self.geometry.length_m
        })
    }

    pub fn initial_count(&self) -> usize {
        self.mobility
            .initial_count
            .unwrap_or(2 * self.selection.k0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.selection.k0, 5);
        assert_eq!(cfg.geometry.num_zones, 20);
        assert_eq!(cfg.radio.total_bandwidth_hz, 3e6);
        assert_eq!(cfg.radio.noise_power_dbm, -114.0);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.selection.alpha, 0.6);
        // BS defaults to the middle of the segment.
        assert_eq!(cfg.segment_geometry().unwrap().bs_offset_m, 500.0);
    }

    #[test]
    fn overrides_parse() {
        let text = r#"
            master_seed = 7

            [geometry]
            length_m = 2000.0
            num_zones = 10

            [mobility]
            velocity_kmh = 80.0

            [selection]
            policy = "cbs"
            k0 = 3
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.policy().unwrap(), Policy::Cbs);
        assert!((cfg.idm_params().desired_speed_mps - 80.0 / 3.6).abs() < 1e-12);
        assert_eq!(cfg.segment_geometry().unwrap().bs_offset_m, 1000.0);
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            "[selection]\npolicy = \"greedy\"",
            "[selection]\nk0 = 0",
            "[selection]\nlambda = 0.0",
            "[selection]\nalpha = 1.5",
            "[task]\nkind = \"resnet\"",
            "[geometry]\nlength_m = -5.0",
            "[geometry]\nbs_offset_m = 5000.0",
            "[mobility]\ndt_s = 0.0",
            "[radio]\npathloss_model = \"free_space\"",
            "not toml at all [",
            "[unknown_section]\nx = 1",
        ] {
            assert!(
                ExperimentConfig::from_toml_str(text).is_err(),
                "expected rejection: {text}"
            );
        }
    }

    #[test]
    fn arrival_rate_default_targets_double_k0() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        let v0 = 60.0 / 3.6;
        let dwell = 1000.0 / v0;
        let steady = cfg.arrival_rate() * dwell;
        assert!((steady - 10.0).abs() < 1e-9);
    }

    #[test]
    fn roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.selection.k0, cfg.selection.k0);
        assert_eq!(back.task.dim, cfg.task.dim);
    }

    proptest::proptest! {
        // In-tree counterpart of fuzz/fuzz_targets/fuzz_config.rs.
        #[test]
        fn parser_never_panics(text in "\\PC*") {
            let _ = ExperimentConfig::from_toml_str(&text);
        }

        #[test]
        fn accepted_configs_reparse(
            seed in 0u64..1000,
            k0 in 1usize..8,
            lambda in 0.01f64..=1.0,
            rounds in 0usize..50,
        ) {
            let text = format!(
                "master_seed = {seed}\n[selection]\nk0 = {k0}\nlambda = {lambda}\n[run]\nrounds = {rounds}\n"
            );
            let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
            let back = ExperimentConfig::from_toml_str(&toml::to_string(&cfg).unwrap()).unwrap();
            proptest::prop_assert_eq!(back.selection.k0, k0);
            proptest::prop_assert_eq!(back.run.rounds, rounds);
        }
    }
}
