//! Uplink rate and delay model.
//!
//! Distance to the base station is quantized per zone: every vehicle in a
//! zone sees the distance from the zone center to the BS antenna. Uplink is
//! OFDMA with the total bandwidth split equally over the selected vehicles,
//! and the round lasts until the slowest selected vehicle would have finished
//! computing and uploading.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{is_positive, Error, Result};
use crate::mobility::{zone_of, SegmentGeometry};

/// Path loss models for the uplink budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathlossModel {
    /// `PL(dB) = 128.1 + 37.6 log10(d_km)`, with antenna gain applied.
    LogDistanceDb,
    /// Linear received power `P * h * d^-beta` (d in meters).
    PowerLaw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadioParams {
    /// Total uplink bandwidth B, Hz.
    pub total_bandwidth_hz: f64,
    /// Per-vehicle bandwidth floor B_min, Hz.
    pub min_bandwidth_hz: f64,
    /// Vehicle transmit power, dBm.
    pub tx_power_dbm: f64,
    /// Noise power, dBm.
    pub noise_power_dbm: f64,
    /// BS antenna gain, dBi (log-distance model only).
    pub antenna_gain_dbi: f64,
    pub pathloss_model: PathlossModel,
    /// Path loss exponent beta (power-law model only).
    pub pathloss_exponent: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            total_bandwidth_hz: 3e6,
            min_bandwidth_hz: 180e3,
            tx_power_dbm: 23.0,
            noise_power_dbm: -114.0,
            antenna_gain_dbi: 6.0,
            pathloss_model: PathlossModel::LogDistanceDb,
            pathloss_exponent: 3.76,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        if !is_positive(self.total_bandwidth_hz) {
            return Err(Error::Config("total bandwidth must be > 0".into()));
        }
        if !is_positive(self.min_bandwidth_hz) {
            return Err(Error::Config("min bandwidth must be > 0".into()));
        }
        if !is_positive(self.pathloss_exponent) {
            return Err(Error::Config("pathloss exponent must be > 0".into()));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_power_dbm.is_finite() {
            return Err(Error::Config("powers must be finite".into()));
        }
        Ok(())
    }

    /// Largest selection size that still honors the per-vehicle floor.
    pub fn max_selectable(&self) -> usize {
        (self.total_bandwidth_hz / self.min_bandwidth_hz).floor() as usize
    }
}

/// Per-vehicle local compute model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComputeParams {
    /// GPU cycles needed to train one bit of data.
    pub cycles_per_bit: f64,
    /// GPU frequency, Hz.
    pub gpu_freq_hz: f64,
    /// Dimensionless normalizer c_k.
    pub normalizer: f64,
    /// Size of one training sample, bits.
    pub bits_per_sample: f64,
}

impl Default for ComputeParams {
    fn default() -> Self {
        Self {
            cycles_per_bit: 3.0e4,
            gpu_freq_hz: 1.3e9,
            normalizer: 1.0,
            bits_per_sample: 256.0,
        }
    }
}

impl ComputeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cycles_per_bit", self.cycles_per_bit),
            ("gpu_freq_hz", self.gpu_freq_hz),
            ("normalizer", self.normalizer),
            ("bits_per_sample", self.bits_per_sample),
        ] {
            if !is_positive(v) {
                return Err(Error::Config(format!("{name} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

/// Delay components of one vehicle within a round.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleDelay {
    pub bandwidth_hz: f64,
    pub rate_bps: f64,
    pub uplink_s: f64,
    pub compute_s: f64,
}

/// Per-round delay breakdown over the selected vehicles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub per_vehicle: BTreeMap<u64, VehicleDelay>,
    /// Synchronous round duration: max over selected of uplink + compute.
    pub round_duration_s: f64,
}

/// Zone-quantized distance between a vehicle position and the BS antenna.
pub fn bs_distance(position_m: f64, geom: &SegmentGeometry) -> Result<f64> {
    let zone = zone_of(position_m, geom)?;
    let lateral = (geom.zone_center_m(zone) - geom.bs_offset_m).abs();
    Ok((lateral * lateral + geom.bs_height_m * geom.bs_height_m).sqrt())
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Shannon uplink rate in bit/s over `allocated_bw_hz`.
///
/// `channel_gain` is the linear fading draw h (1 when fading is disabled).
pub fn uplink_rate(
    distance_m: f64,
    allocated_bw_hz: f64,
    radio: &RadioParams,
    channel_gain: f64,
) -> Result<f64> {
    if !distance_m.is_finite() || distance_m <= 0.0 {
        return Err(Error::Domain {
            context: "uplink_rate",
            detail: format!("distance {distance_m} must be finite and > 0"),
        });
    }
    if !allocated_bw_hz.is_finite() || allocated_bw_hz <= 0.0 {
        return Err(Error::Domain {
            context: "uplink_rate",
            detail: format!("bandwidth {allocated_bw_hz} must be finite and > 0"),
        });
    }
    if !channel_gain.is_finite() || channel_gain <= 0.0 {
        return Err(Error::Domain {
            context: "uplink_rate",
            detail: format!("channel gain {channel_gain} must be finite and > 0"),
        });
    }
    let rx_mw = match radio.pathloss_model {
        PathlossModel::LogDistanceDb => {
            let pl_db = 128.1 + 37.6 * (distance_m / 1000.0).log10();
            let rx_dbm = radio.tx_power_dbm + radio.antenna_gain_dbi - pl_db;
            dbm_to_mw(rx_dbm) * channel_gain
        }
        PathlossModel::PowerLaw => {
            dbm_to_mw(radio.tx_power_dbm) * channel_gain * distance_m.powf(-radio.pathloss_exponent)
        }
    };
    let noise_mw = dbm_to_mw(radio.noise_power_dbm);
    if !is_positive(noise_mw) {
        return Err(Error::Domain {
            context: "uplink_rate",
            detail: "noise power is not positive in linear units".into(),
        });
    }
    let snr = rx_mw / noise_mw;
    Ok(allocated_bw_hz * (1.0 + snr).log2())
}

/// Upload time for a model of `model_size_bits` at `rate_bps`.
///
/// A zero rate yields an infinite-delay sentinel; the caller treats such a
/// vehicle as a dropout.
pub fn upload_time(model_size_bits: f64, rate_bps: f64) -> f64 {
    if model_size_bits == 0.0 {
        return 0.0;
    }
    if rate_bps <= 0.0 {
        return f64::INFINITY;
    }
    model_size_bits / rate_bps
}

/// Local compute time for a shard of `dataset_samples` samples.
pub fn compute_time(dataset_samples: u64, cp: &ComputeParams) -> f64 {
    dataset_samples as f64 * cp.bits_per_sample * cp.cycles_per_bit
        / (cp.normalizer * cp.gpu_freq_hz)
}

/// Inputs for one selected vehicle when assembling the round delay.
#[derive(Debug, Clone, Copy)]
pub struct UploadSlot {
    pub vehicle_id: u64,
    /// Distance to the BS at upload time, m.
    pub distance_m: f64,
    pub compute_s: f64,
    /// Linear fading gain h for this round.
    pub channel_gain: f64,
}

/// Splits the bandwidth equally and assembles the synchronous round delay.
pub fn round_duration(
    slots: &[UploadSlot],
    model_size_bits: f64,
    radio: &RadioParams,
) -> Result<DelayBreakdown> {
    if slots.is_empty() {
        return Err(Error::EmptySelection);
    }
    let share_hz = radio.total_bandwidth_hz / slots.len() as f64;
    if share_hz < radio.min_bandwidth_hz {
        return Err(Error::BandwidthFloor {
            selected: slots.len(),
            total_hz: radio.total_bandwidth_hz,
            min_hz: radio.min_bandwidth_hz,
        });
    }
    let mut per_vehicle = BTreeMap::new();
    let mut worst = 0.0f64;
    for slot in slots {
        let rate = uplink_rate(slot.distance_m, share_hz, radio, slot.channel_gain)?;
        let uplink = upload_time(model_size_bits, rate);
        worst = worst.max(uplink + slot.compute_s);
        per_vehicle.insert(
            slot.vehicle_id,
            VehicleDelay {
                bandwidth_hz: share_hz,
                rate_bps: rate,
                uplink_s: uplink,
                compute_s: slot.compute_s,
            },
        );
    }
    Ok(DelayBreakdown {
        per_vehicle,
        round_duration_s: worst,
    })
}
