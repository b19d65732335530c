use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gear, Interval, NormalizationBounds, TorquePoint, VehiclePhysics};
use super::{N_GEARS_MAX, N_TORQUE_MAX};
use crate::error::{Error, Result};

/// Per-attribute intervals for drawing unseen vehicles. Defaults stay inside
/// the span of the built-in training catalogue so sampled vehicles are
/// interpolations rather than extrapolations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub length: Interval,
    pub width: Interval,
    pub height: Interval,
    pub max_rpm: Interval,
    pub mass: Interval,
    pub com_x: Interval,
    pub com_y: Interval,
    pub com_z: Interval,
    /// Wheelbase as a fraction of length, keeps `wheelbase < length`.
    pub wheelbase_fraction: Interval,
    pub wheel_radius: Interval,
    pub peak_torque: Interval,
    /// Number of torque-curve knots (rounded).
    pub torque_points: Interval,
    /// Number of forward gears (rounded).
    pub gear_count: Interval,
    pub first_gear_ratio: Interval,
    pub top_gear_ratio: Interval,
    pub up_ratio: Interval,
    pub down_ratio: Interval,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            length: Interval::new(4.0, 7.0),
            width: Interval::new(1.7, 2.3),
            height: Interval::new(1.3, 3.0),
            max_rpm: Interval::new(4500.0, 7000.0),
            mass: Interval::new(1200.0, 5000.0),
            com_x: Interval::new(-0.3, 0.3),
            com_y: Interval::new(-0.05, 0.05),
            com_z: Interval::new(0.45, 1.2),
            wheelbase_fraction: Interval::new(0.55, 0.65),
            wheel_radius: Interval::new(0.30, 0.45),
            peak_torque: Interval::new(250.0, 900.0),
            torque_points: Interval::new(3.0, 6.0),
            gear_count: Interval::new(4.0, 6.0),
            first_gear_ratio: Interval::new(13.0, 20.0),
            top_gear_ratio: Interval::new(3.0, 4.5),
            up_ratio: Interval::new(0.72, 0.88),
            down_ratio: Interval::new(0.22, 0.35),
        }
    }
}

impl SamplingRanges {
    fn named(&self) -> [(&'static str, &Interval); 17] {
        [
            ("length", &self.length),
            ("width", &self.width),
            ("height", &self.height),
            ("max_rpm", &self.max_rpm),
            ("mass", &self.mass),
            ("com_x", &self.com_x),
            ("com_y", &self.com_y),
            ("com_z", &self.com_z),
            ("wheelbase_fraction", &self.wheelbase_fraction),
            ("wheel_radius", &self.wheel_radius),
            ("peak_torque", &self.peak_torque),
            ("torque_points", &self.torque_points),
            ("gear_count", &self.gear_count),
            ("first_gear_ratio", &self.first_gear_ratio),
            ("top_gear_ratio", &self.top_gear_ratio),
            ("up_ratio", &self.up_ratio),
            ("down_ratio", &self.down_ratio),
        ]
    }

    /// Rejects empty intervals and ranges that leave the normalization bounds.
    pub fn validate(&self, bounds: &NormalizationBounds) -> Result<()> {
        for (name, iv) in self.named() {
            if !(iv.min.is_finite() && iv.max.is_finite()) || iv.min > iv.max {
                return Err(Error::Config(format!(
                    "sampling interval {name} is empty: ({}, {})",
                    iv.min, iv.max
                )));
            }
        }
        let nested = [
            ("length", self.length, bounds.extent_length),
            ("width", self.width, bounds.extent_width),
            ("height", self.height, bounds.extent_height),
            ("max_rpm", self.max_rpm, bounds.max_rpm),
            ("mass", self.mass, bounds.mass),
            ("com_x", self.com_x, bounds.com_x),
            ("com_y", self.com_y, bounds.com_y),
            ("com_z", self.com_z, bounds.com_z),
            ("wheel_radius", self.wheel_radius, bounds.wheel_radius),
            ("peak_torque", self.peak_torque, bounds.torque_nm),
            ("first_gear_ratio", self.first_gear_ratio, bounds.gear_ratio),
            ("top_gear_ratio", self.top_gear_ratio, bounds.gear_ratio),
            ("up_ratio", self.up_ratio, bounds.gear_up_ratio),
            ("down_ratio", self.down_ratio, bounds.gear_down_ratio),
            ("max_rpm", self.max_rpm, bounds.torque_rpm),
        ];
        for (name, r, b) in nested {
            if !b.contains_interval(&r) {
                return Err(Error::Config(format!(
                    "sampling range {name} ({}, {}) leaves bounds ({}, {})",
                    r.min, r.max, b.min, b.max
                )));
            }
        }
        let wb_lo = self.wheelbase_fraction.min * self.length.min;
        let wb_hi = self.wheelbase_fraction.max * self.length.max;
        if !bounds.wheelbase.contains(wb_lo) || !bounds.wheelbase.contains(wb_hi) {
            return Err(Error::Config("wheelbase range leaves bounds".into()));
        }
        if self.wheelbase_fraction.max >= 1.0 || self.wheelbase_fraction.min <= 0.0 {
            return Err(Error::Config("wheelbase_fraction must lie in (0, 1)".into()));
        }
        if self.torque_points.min < 2.0 || self.torque_points.max > N_TORQUE_MAX as f64 {
            return Err(Error::Config(format!(
                "torque_points must lie in [2, {N_TORQUE_MAX}]"
            )));
        }
        if self.gear_count.min < 1.0 || self.gear_count.max > N_GEARS_MAX as f64 {
            return Err(Error::Config(format!("gear_count must lie in [1, {N_GEARS_MAX}]")));
        }
        if self.down_ratio.min <= 0.0 || self.up_ratio.max > 1.0 {
            return Err(Error::Config("shift ratios must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, iv: Interval) -> f64 {
    let u: f64 = rng.random();
    iv.min + u * (iv.max - iv.min)
}

fn draw_count(rng: &mut ChaCha8Rng, iv: Interval) -> usize {
    draw(rng, iv).round() as usize
}

/// Draws one vehicle. Identical seeds and ranges give bitwise-identical
/// vehicles. Ordering invariants (increasing torque rpm, decreasing gear
/// ratios, down < up shift thresholds) are repaired after drawing.
pub fn sample_vehicle(seed: u64, ranges: &SamplingRanges) -> Result<VehiclePhysics> {
    for (name, iv) in ranges.named() {
        if !(iv.min <= iv.max) {
            return Err(Error::Config(format!(
                "sampling interval {name} is empty: ({}, {})",
                iv.min, iv.max
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = draw(&mut rng, ranges.length);
    let width = draw(&mut rng, ranges.width);
    let height = draw(&mut rng, ranges.height);
    let max_rpm = draw(&mut rng, ranges.max_rpm);
    let mass = draw(&mut rng, ranges.mass);
    let com = [
        draw(&mut rng, ranges.com_x),
        draw(&mut rng, ranges.com_y),
        draw(&mut rng, ranges.com_z),
    ];
    let wheelbase = draw(&mut rng, ranges.wheelbase_fraction) * length;
    let wheel_radius = draw(&mut rng, ranges.wheel_radius);
    let peak = draw(&mut rng, ranges.peak_torque);

    let n_torque = draw_count(&mut rng, ranges.torque_points).clamp(2, N_TORQUE_MAX);
    let mut torque_curve: Vec<TorquePoint> = (0..n_torque)
        .map(|k| {
            let rpm = (max_rpm * (k as f64 / (n_torque - 1) as f64)).min(max_rpm);
            // Hump-shaped curve with a seeded shape factor; peak value hits `peak`.
            let shape = 0.7 + 0.3 * (std::f64::consts::PI * k as f64 / (n_torque - 1) as f64).sin();
            let jitter = 0.9 + 0.1 * rng.random::<f64>();
            TorquePoint {
                rpm,
                torque: peak * shape * jitter,
            }
        })
        .collect();
    let top = torque_curve
        .iter()
        .map(|p| p.torque)
        .fold(f64::MIN, f64::max);
    for p in &mut torque_curve {
        p.torque = (p.torque * peak / top).min(peak);
    }

    let n_gears = draw_count(&mut rng, ranges.gear_count).clamp(1, N_GEARS_MAX);
    let first = draw(&mut rng, ranges.first_gear_ratio);
    let last = draw(&mut rng, ranges.top_gear_ratio);
    let mut ratios: Vec<f64> = (0..n_gears)
        .map(|k| {
            if n_gears == 1 {
                first
            } else {
                first * (last / first).powf(k as f64 / (n_gears - 1) as f64)
            }
        })
        .collect();
    ratios.sort_by(|a, b| b.total_cmp(a));
    for k in 1..ratios.len() {
        if ratios[k] >= ratios[k - 1] {
            ratios[k] = ratios[k - 1] * (1.0 - 1e-6);
        }
    }
    let gears = ratios
        .into_iter()
        .map(|ratio| {
            let mut up = draw(&mut rng, ranges.up_ratio);
            let mut down = draw(&mut rng, ranges.down_ratio);
            if down >= up {
                std::mem::swap(&mut up, &mut down);
            }
            if down >= up {
                down = up * 0.5;
            }
            Gear {
                ratio,
                up_ratio: up.min(1.0),
                down_ratio: down.max(1e-6),
            }
        })
        .collect();

    let v = VehiclePhysics {
        id: format!("sampled-{seed}"),
        extent: [length, width, height],
        torque_curve,
        max_rpm,
        mass,
        center_of_mass: com,
        wheelbase,
        wheel_radius,
        gears,
    };
    v.validate()?;
    Ok(v)
}
