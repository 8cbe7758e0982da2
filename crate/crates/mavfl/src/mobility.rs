//! Vehicle mobility on a single-lane road segment.
//!
//! Vehicles enter at position 0, follow the Intelligent Driver Model (IDM)
//! behind their leader, and depart once they pass the end of the segment.
//! The segment is split into equal-width zones; the base station quantizes
//! vehicle distance per zone. A vehicle that is outside the segment when its
//! upload would start counts as a dropout for that round.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{is_positive, Error, Result};

/// Road segment covered by one base station.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentGeometry {
    /// Segment length in meters.
    pub length_m: f64,
    /// Base-station position along the segment, in meters from the entrance.
    pub bs_offset_m: f64,
    /// Base-station antenna height in meters.
    pub bs_height_m: f64,
    /// Number of equal-width zones partitioning `[0, length)`.
    pub num_zones: usize,
}

impl Default for SegmentGeometry {
    fn default() -> Self {
        Self {
            length_m: 1000.0,
            bs_offset_m: 500.0,
            bs_height_m: 25.0,
            num_zones: 20,
        }
    }
}

impl SegmentGeometry {
    pub fn validate(&self) -> Result<()> {
        if !is_positive(self.length_m) {
            return Err(Error::Config("segment length must be > 0".into()));
        }
        if !(0.0..=self.length_m).contains(&self.bs_offset_m) {
            return Err(Error::Config(format!(
                "bs_offset {} must lie within [0, {}]",
                self.bs_offset_m, self.length_m
            )));
        }
        if self.num_zones == 0 {
            return Err(Error::Config("num_zones must be >= 1".into()));
        }
        if !is_positive(self.bs_height_m) {
            return Err(Error::Config("bs_height must be > 0".into()));
        }
        Ok(())
    }

    pub fn zone_width_m(&self) -> f64 {
        self.length_m / self.num_zones as f64
    }

    /// Center of zone `z`, in meters.
    pub fn zone_center_m(&self, zone: usize) -> f64 {
        (zone as f64 + 0.5) * self.zone_width_m()
    }

    pub fn contains(&self, position_m: f64) -> bool {
        (0.0..=self.length_m).contains(&position_m)
    }
}

/// One vehicle on the segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u64,
    pub position_m: f64,
    pub velocity_mps: f64,
    pub entry_time_s: f64,
}

/// Intelligent Driver Model parameters. All strictly positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired (free-flow) speed v0, m/s.
    pub desired_speed_mps: f64,
    /// Maximum acceleration a, m/s^2.
    pub max_accel_mps2: f64,
    /// Comfortable deceleration b, m/s^2.
    pub comfortable_decel_mps2: f64,
    /// Minimum bumper gap s0, m.
    pub min_gap_m: f64,
    /// Desired time headway, s.
    pub time_headway_s: f64,
    /// Free-road acceleration exponent.
    pub accel_exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed_mps: 60.0 / 3.6,
            max_accel_mps2: 1.0,
            comfortable_decel_mps2: 1.5,
            min_gap_m: 2.0,
            time_headway_s: 1.5,
            accel_exponent: 4.0,
        }
    }
}

impl IdmParams {
    /// Standard literature parameters at the given speed class.
    pub fn with_speed_kmh(velocity_kmh: f64) -> Self {
        Self {
            desired_speed_mps: velocity_kmh / 3.6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("desired_speed", self.desired_speed_mps),
            ("max_accel", self.max_accel_mps2),
            ("comfortable_decel", self.comfortable_decel_mps2),
            ("min_gap", self.min_gap_m),
            ("time_headway", self.time_headway_s),
            ("accel_exponent", self.accel_exponent),
        ];
        for (name, v) in fields {
            if !is_positive(v) {
                return Err(Error::Config(format!("IDM {name} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

/// IDM acceleration for a vehicle at speed `v` with `gap` to its leader.
///
/// `gap = None` means a free road (no interaction term). The desired
/// dynamic gap is `s* = s0 + v*T + v*(v - lead_v) / (2*sqrt(a*b))`.
pub fn idm_accel(v: f64, gap: Option<f64>, lead_v: f64, p: &IdmParams) -> Result<f64> {
    if !v.is_finite() || !lead_v.is_finite() {
        return Err(Error::NonFinite("idm_accel speed"));
    }
    if v < 0.0 {
        return Err(Error::Domain {
            context: "idm_accel",
            detail: format!("negative speed {v}"),
        });
    }
    let free = 1.0 - (v / p.desired_speed_mps).powf(p.accel_exponent);
    let interaction = match gap {
        None => 0.0,
        Some(g) => {
            if !g.is_finite() || g <= 0.0 {
                return Err(Error::Domain {
                    context: "idm_accel",
                    detail: format!("gap {g} must be finite and > 0"),
                });
            }
            let approach = v - lead_v;
            let s_star = p.min_gap_m
                + v * p.time_headway_s
                + v * approach / (2.0 * (p.max_accel_mps2 * p.comfortable_decel_mps2).sqrt());
            (s_star / g).powi(2)
        }
    };
    Ok(p.max_accel_mps2 * (free - interaction))
}

/// Advances the fleet one time step with semi-implicit Euler.
///
/// `vehicles` must be sorted by position descending (leader first). Vehicles
/// whose updated position passes the end of the segment are removed from the
/// fleet and returned with their final (out-of-segment) state.
pub fn advance_traffic(
    vehicles: &mut Vec<VehicleState>,
    p: &IdmParams,
    dt: f64,
    segment_length_m: f64,
) -> Result<Vec<VehicleState>> {
    if !is_positive(dt) {
        return Err(Error::Domain {
            context: "advance_traffic",
            detail: format!("dt {dt} must be > 0"),
        });
    }
    // Accelerations from the pre-step state so the update is simultaneous.
    let mut accels = Vec::with_capacity(vehicles.len());
    for (i, v) in vehicles.iter().enumerate() {
        let (gap, lead_v) = if i == 0 {
            (None, 0.0)
        } else {
            let lead = &vehicles[i - 1];
            // Overlap cannot arise under IDM; guard keeps the step defined.
            let g = (lead.position_m - v.position_m).max(1e-6);
            (Some(g), lead.velocity_mps)
        };
        accels.push(idm_accel(v.velocity_mps, gap, lead_v, p)?);
    }
    for (v, a) in vehicles.iter_mut().zip(&accels) {
        v.velocity_mps = (v.velocity_mps + a * dt).max(0.0);
        v.position_m += v.velocity_mps * dt;
    }
    let mut departed = Vec::new();
    vehicles.retain(|v| {
        if v.position_m > segment_length_m {
            departed.push(v.clone());
            false
        } else {
            true
        }
    });
    Ok(departed)
}

/// Poisson arrival process feeding the entrance of the segment.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    rate_per_s: f64,
    rng: ChaCha12Rng,
    pending: u64,
    next_id: u64,
}

impl ArrivalProcess {
    pub fn new(rate_per_s: f64, rng: ChaCha12Rng, first_id: u64) -> Result<Self> {
        if !rate_per_s.is_finite() || rate_per_s < 0.0 {
            return Err(Error::Config(format!(
                "arrival rate {rate_per_s} must be finite and >= 0"
            )));
        }
        Ok(Self {
            rate_per_s,
            rng,
            pending: 0,
            next_id: first_id,
        })
    }

    /// Number of vehicles arriving in a step of length `dt`.
    pub fn draw_count(&mut self, dt: f64) -> u64 {
        let lambda = self.rate_per_s * dt;
        if lambda <= 0.0 {
            return 0;
        }
        let poisson = Poisson::new(lambda).expect("lambda > 0");
        poisson.sample(&mut self.rng) as u64
    }

    /// Vehicles drawn but not yet placed because the entrance was blocked.
    pub fn pending(&self) -> u64 {
        self.pending
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }
}

/// Draws arrivals for one step and places as many as the entrance gap allows.
///
/// New vehicles enter at position 0 with speed uniform in `[0.9, 1.0] * v0`.
/// A vehicle is only placed if the rearmost vehicle is at least `min_gap`
/// ahead; blocked vehicles stay pending and enter on a later step.
pub fn spawn_arrivals(
    process: &mut ArrivalProcess,
    rearmost_position_m: Option<f64>,
    idm: &IdmParams,
    dt: f64,
    now_s: f64,
) -> Vec<VehicleState> {
    process.pending += process.draw_count(dt);
    let mut placed = Vec::new();
    let mut rearmost = rearmost_position_m;
    while process.pending > 0 {
        let blocked = match rearmost {
            Some(x) => x < idm.min_gap_m,
            None => false,
        };
        if blocked {
            break;
        }
        let frac: f64 = process.rng.random();
        let velocity = (0.9 + 0.1 * frac) * idm.desired_speed_mps;
        placed.push(VehicleState {
            id: process.next_id,
            position_m: 0.0,
            velocity_mps: velocity,
            entry_time_s: now_s,
        });
        process.next_id += 1;
        process.pending -= 1;
        rearmost = Some(0.0);
    }
    placed
}

/// Zone index of a position, in `[0, num_zones - 1]`.
pub fn zone_of(position_m: f64, geom: &SegmentGeometry) -> Result<usize> {
    if !position_m.is_finite() || !geom.contains(position_m) {
        return Err(Error::OutOfSegment {
            position: position_m,
            length: geom.length_m,
        });
    }
    let z = (position_m / geom.zone_width_m()).floor() as usize;
    Ok(z.min(geom.num_zones - 1))
}

/// 1 if the position is still inside the covering segment, else 0.
pub fn dropout_indicator(upload_position_m: f64, geom: &SegmentGeometry) -> bool {
    geom.contains(upload_position_m)
}
