use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VehiclePhysics;
use crate::error::{Error, Result};

pub const N_TORQUE_MAX: usize = 8;
pub const N_GEARS_MAX: usize = 8;
/// extent(3) + max_rpm + mass + center_of_mass(3) + wheelbase + wheel_radius.
pub const SCALAR_SLOTS: usize = 10;
pub const D_PHYS: usize = SCALAR_SLOTS + 2 * N_TORQUE_MAX + 3 * N_GEARS_MAX;

const TORQUE_OFFSET: usize = SCALAR_SLOTS;
const GEAR_OFFSET: usize = SCALAR_SLOTS + 2 * N_TORQUE_MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.min >= self.min && other.max <= self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

impl From<(f64, f64)> for Interval {
    fn from((min, max): (f64, f64)) -> Self {
        Self { min, max }
    }
}

impl From<Interval> for (f64, f64) {
    fn from(i: Interval) -> Self {
        (i.min, i.max)
    }
}

/// Min-max bounds for every scalar that enters the physics vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub extent_length: Interval,
    pub extent_width: Interval,
    pub extent_height: Interval,
    pub max_rpm: Interval,
    pub mass: Interval,
    pub com_x: Interval,
    pub com_y: Interval,
    pub com_z: Interval,
    pub wheelbase: Interval,
    pub wheel_radius: Interval,
    pub torque_rpm: Interval,
    pub torque_nm: Interval,
    pub gear_ratio: Interval,
    pub gear_up_ratio: Interval,
    pub gear_down_ratio: Interval,
}

impl Default for NormalizationBounds {
    fn default() -> Self {
        Self {
            extent_length: Interval::new(2.0, 14.0),
            extent_width: Interval::new(1.2, 3.2),
            extent_height: Interval::new(1.0, 4.5),
            max_rpm: Interval::new(2000.0, 9000.0),
            mass: Interval::new(400.0, 20000.0),
            com_x: Interval::new(-2.0, 2.0),
            com_y: Interval::new(-1.0, 1.0),
            com_z: Interval::new(0.0, 2.5),
            wheelbase: Interval::new(1.5, 9.0),
            wheel_radius: Interval::new(0.2, 0.7),
            torque_rpm: Interval::new(0.0, 9000.0),
            torque_nm: Interval::new(0.0, 3000.0),
            gear_ratio: Interval::new(0.5, 40.0),
            gear_up_ratio: Interval::new(0.0, 1.0),
            gear_down_ratio: Interval::new(0.0, 1.0),
        }
    }
}

impl NormalizationBounds {
    fn named(&self) -> [(&'static str, &Interval); 15] {
        [
            ("extent_length", &self.extent_length),
            ("extent_width", &self.extent_width),
            ("extent_height", &self.extent_height),
            ("max_rpm", &self.max_rpm),
            ("mass", &self.mass),
            ("com_x", &self.com_x),
            ("com_y", &self.com_y),
            ("com_z", &self.com_z),
            ("wheelbase", &self.wheelbase),
            ("wheel_radius", &self.wheel_radius),
            ("torque_rpm", &self.torque_rpm),
            ("torque_nm", &self.torque_nm),
            ("gear_ratio", &self.gear_ratio),
            ("gear_up_ratio", &self.gear_up_ratio),
            ("gear_down_ratio", &self.gear_down_ratio),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, iv) in self.named() {
            if !(iv.min.is_finite() && iv.max.is_finite() && iv.min < iv.max) {
                return Err(Error::Config(format!(
                    "bounds for {name} need min < max, got ({}, {})",
                    iv.min, iv.max
                )));
            }
        }
        Ok(())
    }

    /// Bounds interval and attribute name for each slot of the flat layout.
    pub fn slot(&self, index: usize) -> Option<(&'static str, Interval)> {
        let scalars = [
            ("extent_length", self.extent_length),
            ("extent_width", self.extent_width),
            ("extent_height", self.extent_height),
            ("max_rpm", self.max_rpm),
            ("mass", self.mass),
            ("com_x", self.com_x),
            ("com_y", self.com_y),
            ("com_z", self.com_z),
            ("wheelbase", self.wheelbase),
            ("wheel_radius", self.wheel_radius),
        ];
        if index < SCALAR_SLOTS {
            return Some(scalars[index]);
        }
        if index < GEAR_OFFSET {
            let k = (index - TORQUE_OFFSET) % 2;
            return Some(if k == 0 {
                ("torque_rpm", self.torque_rpm)
            } else {
                ("torque_nm", self.torque_nm)
            });
        }
        if index < D_PHYS {
            return Some(match (index - GEAR_OFFSET) % 3 {
                0 => ("gear_ratio", self.gear_ratio),
                1 => ("gear_up_ratio", self.gear_up_ratio),
                _ => ("gear_down_ratio", self.gear_down_ratio),
            });
        }
        None
    }

    /// Inverse of the min-max map for slot `index`.
    pub fn denormalize(&self, index: usize, value: f64) -> Option<f64> {
        self.slot(index)
            .map(|(_, iv)| iv.min + value * iv.width())
    }

    /// Stable content hash used to tie datasets and checkpoints to one normalization.
    pub fn hash_hex(&self) -> String {
        let canonical = serde_json::to_string(self).expect("bounds serialize");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..16])
    }
}

/// Normalized, zero-padded physics input with its validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsVector {
    pub values: Vec<f64>,
    pub mask: Vec<u8>,
}

impl PhysicsVector {
    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; D_PHYS],
            mask: vec![0; D_PHYS],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values with padded slots forced to zero.
    pub fn masked(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m != 0 { v } else { 0.0 })
    }
}

fn normalize(name: &str, value: f64, iv: Interval) -> Result<f64> {
    if !iv.contains(value) {
        return Err(Error::Range {
            attribute: name.to_string(),
            value,
            min: iv.min,
            max: iv.max,
        });
    }
    Ok((value - iv.min) / iv.width())
}

/// Flattens a vehicle into the fixed-size network input. Layout: extent,
/// max_rpm, mass, center of mass, wheelbase, wheel radius, then
/// `N_TORQUE_MAX` (rpm, torque) pairs, then `N_GEARS_MAX` (ratio, up, down)
/// triples. Unused pair/triple slots are zero with mask 0.
pub fn flatten_physics(p: &VehiclePhysics, b: &NormalizationBounds) -> Result<PhysicsVector> {
    if p.torque_curve.len() > N_TORQUE_MAX {
        return Err(Error::Capacity {
            what: "torque_curve",
            len: p.torque_curve.len(),
            capacity: N_TORQUE_MAX,
        });
    }
    if p.gears.len() > N_GEARS_MAX {
        return Err(Error::Capacity {
            what: "gears",
            len: p.gears.len(),
            capacity: N_GEARS_MAX,
        });
    }
    let mut out = PhysicsVector::zeros();
    let scalars = [
        ("extent_length", p.extent[0], b.extent_length),
        ("extent_width", p.extent[1], b.extent_width),
        ("extent_height", p.extent[2], b.extent_height),
        ("max_rpm", p.max_rpm, b.max_rpm),
        ("mass", p.mass, b.mass),
        ("com_x", p.center_of_mass[0], b.com_x),
        ("com_y", p.center_of_mass[1], b.com_y),
        ("com_z", p.center_of_mass[2], b.com_z),
        ("wheelbase", p.wheelbase, b.wheelbase),
        ("wheel_radius", p.wheel_radius, b.wheel_radius),
    ];
    for (i, (name, v, iv)) in scalars.into_iter().enumerate() {
        out.values[i] = normalize(name, v, iv)?;
        out.mask[i] = 1;
    }
    for (k, tp) in p.torque_curve.iter().enumerate() {
        let i = TORQUE_OFFSET + 2 * k;
        out.values[i] = normalize(&format!("torque_curve[{k}].rpm"), tp.rpm, b.torque_rpm)?;
        out.values[i + 1] =
            normalize(&format!("torque_curve[{k}].torque"), tp.torque, b.torque_nm)?;
        out.mask[i] = 1;
        out.mask[i + 1] = 1;
    }
    for (k, g) in p.gears.iter().enumerate() {
        let i = GEAR_OFFSET + 3 * k;
        out.values[i] = normalize(&format!("gears[{k}].ratio"), g.ratio, b.gear_ratio)?;
        out.values[i + 1] =
            normalize(&format!("gears[{k}].up_ratio"), g.up_ratio, b.gear_up_ratio)?;
        out.values[i + 2] = normalize(
            &format!("gears[{k}].down_ratio"),
            g.down_ratio,
            b.gear_down_ratio,
        )?;
        out.mask[i..i + 3].fill(1);
    }
    Ok(out)
}
