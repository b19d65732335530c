//! Vehicle physical properties, their network-facing normalization, stochastic
//! sampling of unseen vehicles, and the powertrain/kinematics model.

mod catalogue;
mod dynamics;
mod normalize;
mod sample;

pub use catalogue::{builtin_catalogue, Catalogue, CATALOGUE_SCHEMA_VERSION};
pub use dynamics::{
    engine_torque, select_gear, step_dynamics, ControlCommand, DynamicsConfig, VehicleState,
};
pub use normalize::{
    flatten_physics, Interval, NormalizationBounds, PhysicsVector, D_PHYS, N_GEARS_MAX,
    N_TORQUE_MAX, SCALAR_SLOTS,
};
pub use sample::{sample_vehicle, SamplingRanges};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One knot of the engine torque curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct TorquePoint {
    pub rpm: f64,
    pub torque: f64,
}

impl From<(f64, f64)> for TorquePoint {
    fn from((rpm, torque): (f64, f64)) -> Self {
        Self { rpm, torque }
    }
}

impl From<TorquePoint> for (f64, f64) {
    fn from(p: TorquePoint) -> Self {
        (p.rpm, p.torque)
    }
}

/// A forward gear: overall ratio (engine revolutions per wheel revolution) and
/// the shift thresholds as fractions of `max_rpm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, f64)", into = "(f64, f64, f64)")]
pub struct Gear {
    pub ratio: f64,
    pub up_ratio: f64,
    pub down_ratio: f64,
}

impl From<(f64, f64, f64)> for Gear {
    fn from((ratio, up_ratio, down_ratio): (f64, f64, f64)) -> Self {
        Self {
            ratio,
            up_ratio,
            down_ratio,
        }
    }
}

impl From<Gear> for (f64, f64, f64) {
    fn from(g: Gear) -> Self {
        (g.ratio, g.up_ratio, g.down_ratio)
    }
}

/// Raw, unnormalized physical description of a vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehiclePhysics {
    pub id: String,
    /// Length, width, height in meters.
    pub extent: [f64; 3],
    pub torque_curve: Vec<TorquePoint>,
    pub max_rpm: f64,
    /// Kilograms.
    pub mass: f64,
    /// Body-frame offset in meters; components may be negative.
    pub center_of_mass: [f64; 3],
    pub wheelbase: f64,
    pub wheel_radius: f64,
    pub gears: Vec<Gear>,
}

impl VehiclePhysics {
    pub fn length(&self) -> f64 {
        self.extent[0]
    }

    pub fn width(&self) -> f64 {
        self.extent[1]
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.extent[1]
    }

    pub fn half_length(&self) -> f64 {
        0.5 * self.extent[0]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidVehicle {
                id: self.id.clone(),
                reason,
            })
        };
        let positive = [
            ("extent.length", self.extent[0]),
            ("extent.width", self.extent[1]),
            ("extent.height", self.extent[2]),
            ("max_rpm", self.max_rpm),
            ("mass", self.mass),
            ("wheelbase", self.wheelbase),
            ("wheel_radius", self.wheel_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.center_of_mass.iter().any(|c| !c.is_finite()) {
            return fail("center_of_mass must be finite".into());
        }
        if self.wheelbase >= self.extent[0] {
            return fail(format!(
                "wheelbase {} must be shorter than length {}",
                self.wheelbase, self.extent[0]
            ));
        }
        let n_torque = self.torque_curve.len();
        if !(2..=N_TORQUE_MAX).contains(&n_torque) {
            return fail(format!(
                "torque curve needs 2..={N_TORQUE_MAX} points, got {n_torque}"
            ));
        }
        for (i, p) in self.torque_curve.iter().enumerate() {
            if !(p.torque.is_finite() && p.torque > 0.0) {
                return fail(format!("torque point {i} has non-positive torque {}", p.torque));
            }
            if !(p.rpm.is_finite() && p.rpm >= 0.0 && p.rpm <= self.max_rpm) {
                return fail(format!("torque point {i} rpm {} outside [0, max_rpm]", p.rpm));
            }
            if i > 0 && p.rpm <= self.torque_curve[i - 1].rpm {
                return fail("torque curve rpm values must be strictly increasing".into());
            }
        }
        let n_gears = self.gears.len();
        if !(1..=N_GEARS_MAX).contains(&n_gears) {
            return fail(format!("need 1..={N_GEARS_MAX} gears, got {n_gears}"));
        }
        for (i, g) in self.gears.iter().enumerate() {
            if !(g.ratio.is_finite() && g.ratio > 0.0) {
                return fail(format!("gear {i} ratio must be > 0"));
            }
            if !(g.down_ratio > 0.0 && g.down_ratio < g.up_ratio && g.up_ratio <= 1.0) {
                return fail(format!(
                    "gear {i} needs 0 < down_ratio < up_ratio <= 1, got ({}, {})",
                    g.down_ratio, g.up_ratio
                ));
            }
            if i > 0 && g.ratio >= self.gears[i - 1].ratio {
                return fail("gear ratios must strictly decrease".into());
            }
        }
        Ok(())
    }

    /// Peak of the torque curve in N·m.
    pub fn peak_torque(&self) -> f64 {
        self.torque_curve
            .iter()
            .map(|p| p.torque)
            .fold(0.0, f64::max)
    }
}
