use serde::{Deserialize, Serialize};

use super::VehiclePhysics;
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    /// Longitudinal speed, m/s, never negative.
    pub speed: f64,
    pub rpm: f64,
    pub gear: usize,
}

impl VehicleState {
    pub fn at_rest(position: Vec2, heading: f64, cfg: &DynamicsConfig) -> Self {
        Self {
            position,
            heading,
            speed: 0.0,
            rpm: cfg.idle_rpm,
            gear: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
            && self.rpm.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub throttle: f64,
    /// Positive steers left (counter-clockwise).
    pub steer: f64,
    pub brake: f64,
}

impl ControlCommand {
    pub const FULL_BRAKE: ControlCommand = ControlCommand {
        throttle: 0.0,
        steer: 0.0,
        brake: 1.0,
    };

    /// Builds a command with every channel clamped into its range.
    pub fn clamped(throttle: f64, steer: f64, brake: f64) -> Self {
        Self {
            throttle: throttle.clamp(0.0, 1.0),
            steer: steer.clamp(-1.0, 1.0),
            brake: brake.clamp(0.0, 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.throttle.is_finite() && self.steer.is_finite() && self.brake.is_finite()
    }
}

/// Global powertrain and chassis constants shared by every vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub idle_rpm: f64,
    /// Quadratic aerodynamic drag, N per (m/s)^2.
    pub drag_coefficient: f64,
    /// Constant rolling resistance while moving, N.
    pub rolling_resistance: f64,
    /// Total brake torque at full pedal, N·m at the wheels.
    pub brake_torque: f64,
    /// Minimum outer turning radius = base + per_length * body length.
    pub turn_radius_base: f64,
    pub turn_radius_per_length: f64,
    pub min_steer_angle: f64,
    pub max_steer_angle: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            idle_rpm: 800.0,
            drag_coefficient: 0.45,
            rolling_resistance: 150.0,
            brake_torque: 5000.0,
            turn_radius_base: 2.5,
            turn_radius_per_length: 0.6,
            min_steer_angle: 0.30,
            max_steer_angle: 0.75,
        }
    }
}

impl DynamicsConfig {
    /// Maximum road-wheel angle from body length, width and wheelbase:
    /// `atan(wheelbase / (R_min - width/2))` with `R_min` linear in length.
    pub fn max_steer_angle(&self, p: &VehiclePhysics) -> f64 {
        let r_min = self.turn_radius_base + self.turn_radius_per_length * p.length();
        let inner = (r_min - p.half_width()).max(1e-3);
        (p.wheelbase / inner)
            .atan()
            .clamp(self.min_steer_angle, self.max_steer_angle)
    }

    /// Tightest curvature the vehicle can drive, 1/m.
    pub fn max_curvature(&self, p: &VehiclePhysics) -> f64 {
        self.max_steer_angle(p).tan() / p.wheelbase
    }

    /// Deceleration at full brake ignoring drag, m/s^2.
    pub fn max_brake_decel(&self, p: &VehiclePhysics) -> f64 {
        (self.brake_torque / p.wheel_radius + self.rolling_resistance) / p.mass
    }

    /// Acceleration at full throttle from rest in first gear at peak torque, m/s^2.
    pub fn max_launch_accel(&self, p: &VehiclePhysics) -> f64 {
        let f = p.peak_torque() * p.gears[0].ratio / p.wheel_radius;
        (f - self.rolling_resistance).max(0.0) / p.mass
    }

    pub fn engine_rpm(&self, p: &VehiclePhysics, speed: f64, gear: usize) -> f64 {
        let wheel_rpm = speed / p.wheel_radius * 60.0 / std::f64::consts::TAU;
        (wheel_rpm * p.gears[gear].ratio).clamp(self.idle_rpm.min(p.max_rpm), p.max_rpm)
    }
}

/// Piecewise-linear torque lookup, held constant beyond the curve's end knots.
pub fn engine_torque(p: &VehiclePhysics, rpm: f64) -> Result<f64> {
    if !(rpm.is_finite() && rpm >= 0.0 && rpm <= p.max_rpm) {
        return Err(Error::Domain(format!(
            "rpm {rpm} outside [0, {}] for `{}`",
            p.max_rpm, p.id
        )));
    }
    let curve = &p.torque_curve;
    let first = curve[0];
    let last = curve[curve.len() - 1];
    if rpm <= first.rpm {
        return Ok(first.torque);
    }
    if rpm >= last.rpm {
        return Ok(last.torque);
    }
    let hi = curve.partition_point(|k| k.rpm <= rpm);
    let (a, b) = (curve[hi - 1], curve[hi]);
    if rpm == a.rpm {
        return Ok(a.torque);
    }
    let t = (rpm - a.rpm) / (b.rpm - a.rpm);
    Ok(a.torque + t * (b.torque - a.torque))
}

/// One shift decision. Thresholds are strict: rpm exactly at a threshold
/// keeps the current gear.
pub fn select_gear(p: &VehiclePhysics, rpm: f64, gear: usize) -> usize {
    let g = &p.gears[gear];
    if rpm > g.up_ratio * p.max_rpm && gear + 1 < p.gears.len() {
        gear + 1
    } else if rpm < g.down_ratio * p.max_rpm && gear > 0 {
        gear - 1
    } else {
        gear
    }
}

/// Advances the kinematic bicycle with a torque-curve powertrain by `dt`.
///
/// Longitudinal: engine force `T(rpm) * ratio * throttle / r`, brake force
/// `brake * brake_torque / r`, quadratic drag and constant rolling resistance,
/// all independent of mass; acceleration is force over mass. Lateral: the
/// path advances along an exact arc of curvature `tan(steer * delta_max) / L`.
pub fn step_dynamics(
    s: &VehicleState,
    c: &ControlCommand,
    p: &VehiclePhysics,
    cfg: &DynamicsConfig,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt.is_finite() && dt > 0.0 && dt <= 0.1) {
        return Err(Error::Domain(format!("dt {dt} outside (0, 0.1]")));
    }
    if !s.is_finite() || !c.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite dynamics input: state {s:?}, control {c:?}"
        )));
    }
    if s.gear >= p.gears.len() {
        return Err(Error::Domain(format!("gear index {} out of range", s.gear)));
    }
    let c = ControlCommand::clamped(c.throttle, c.steer, c.brake);
    let throttle = if c.brake > 0.0 { 0.0 } else { c.throttle };
    let rpm = s.rpm.clamp(0.0, p.max_rpm);
    let gear = &p.gears[s.gear];

    let engine = engine_torque(p, rpm)? * gear.ratio * throttle / p.wheel_radius;
    let moving = s.speed > 0.0;
    let resist = if moving {
        c.brake * cfg.brake_torque / p.wheel_radius
            + cfg.drag_coefficient * s.speed * s.speed
            + cfg.rolling_resistance
    } else {
        0.0
    };
    let accel = (engine - resist) / p.mass;
    let speed = (s.speed + accel * dt).max(0.0);

    let ds = 0.5 * (s.speed + speed) * dt;
    let curvature = (c.steer * cfg.max_steer_angle(p)).tan() / p.wheelbase;
    let dtheta = curvature * ds;
    let position = if dtheta.abs() < 1e-12 {
        s.position + Vec2::from_angle(s.heading) * ds
    } else {
        let (h0, h1) = (s.heading, s.heading + dtheta);
        s.position + Vec2::new(h1.sin() - h0.sin(), h0.cos() - h1.cos()) * (1.0 / curvature)
    };
    let heading = wrap_angle(s.heading + dtheta);

    let rpm = cfg.engine_rpm(p, speed, s.gear);
    let next_gear = select_gear(p, rpm, s.gear);
    let rpm = cfg.engine_rpm(p, speed, next_gear);

    let out = VehicleState {
        position,
        heading,
        speed,
        rpm,
        gear: next_gear,
    };
    if !out.is_finite() {
        return Err(Error::Numeric(format!("dynamics produced {out:?}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{builtin_catalogue, TorquePoint};

    fn sedan() -> VehiclePhysics {
        builtin_catalogue().vehicles[0].clone()
    }

    #[test]
    fn flat_curve_is_constant() {
        let mut v = sedan();
        v.max_rpm = 5000.0;
        v.torque_curve = vec![(0.0, 300.0).into(), (5000.0, 300.0).into()];
        assert_eq!(engine_torque(&v, 2500.0).unwrap(), 300.0);
    }

    #[test]
    fn knots_are_exact_and_midpoints_linear() {
        let mut v = sedan();
        v.torque_curve = vec![
            TorquePoint { rpm: 1000.0, torque: 200.0 },
            TorquePoint { rpm: 3000.0, torque: 400.0 },
        ];
        assert_eq!(engine_torque(&v, 2000.0).unwrap(), 300.0);
        assert_eq!(engine_torque(&v, 1000.0).unwrap(), 200.0);
        assert_eq!(engine_torque(&v, 3000.0).unwrap(), 400.0);
        // Held at the end knots outside the span.
        assert_eq!(engine_torque(&v, 500.0).unwrap(), 200.0);
        assert_eq!(engine_torque(&v, 5000.0).unwrap(), 400.0);
        for k in sedan().torque_curve {
            assert_eq!(engine_torque(&sedan(), k.rpm).unwrap(), k.torque);
        }
    }

    #[test]
    fn torque_domain_errors() {
        let v = sedan();
        assert!(matches!(engine_torque(&v, -1.0), Err(Error::Domain(_))));
        assert!(matches!(engine_torque(&v, v.max_rpm + 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn gear_rule_table() {
        let v = sedan();
        let g1 = v.gears[1];
        let up = g1.up_ratio * v.max_rpm;
        let down = g1.down_ratio * v.max_rpm;
        // Rule-table oracle: (rpm, gear) -> expected gear.
        let table = [
            (up, 1, 1),
            (up + 1.0, 1, 2),
            (down, 1, 1),
            (down - 1.0, 1, 0),
            (0.5 * (up + down), 1, 1),
        ];
        for (rpm, gear, want) in table {
            assert_eq!(select_gear(&v, rpm, gear), want, "rpm {rpm}");
        }
        let top = v.gears.len() - 1;
        assert_eq!(select_gear(&v, v.max_rpm, top), top);
        assert_eq!(select_gear(&v, 0.0, 0), 0);
    }

    #[test]
    fn rest_is_an_equilibrium() {
        let v = sedan();
        let cfg = DynamicsConfig::default();
        let s = VehicleState {
            position: Vec2::new(3.0, -2.0),
            heading: 0.4,
            speed: 0.0,
            rpm: 2000.0,
            gear: 0,
        };
        let n = step_dynamics(&s, &ControlCommand::default(), &v, &cfg, 0.05).unwrap();
        assert_eq!(n.position, s.position);
        assert_eq!(n.heading, s.heading);
        assert_eq!(n.speed, 0.0);
        assert_eq!(n.gear, 0);
        assert_eq!(n.rpm, cfg.idle_rpm);
    }

    #[test]
    fn straight_throttle_keeps_heading() {
        let v = sedan();
        let cfg = DynamicsConfig::default();
        let mut s = VehicleState::at_rest(Vec2::ZERO, 0.3, &cfg);
        let c = ControlCommand::clamped(0.6, 0.0, 0.0);
        for _ in 0..200 {
            s = step_dynamics(&s, &c, &v, &cfg, 0.05).unwrap();
            assert_eq!(s.heading, 0.3);
            let off_axis = s.position.cross(Vec2::from_angle(0.3));
            assert!(off_axis.abs() < 1e-9);
        }
        assert!(s.speed > 5.0);
    }

    #[test]
    fn constant_steer_traces_kinematic_circle() {
        let v = sedan();
        let cfg = DynamicsConfig::default();
        let steer = 0.3;
        let radius = v.wheelbase / (steer * cfg.max_steer_angle(&v)).tan();
        let mut s = VehicleState {
            position: Vec2::ZERO,
            heading: 0.0,
            speed: 5.0,
            rpm: cfg.engine_rpm(&v, 5.0, 1),
            gear: 1,
        };
        // Circle centre sits at `radius` along the left normal of the start pose.
        let centre = Vec2::new(0.0, radius);
        let c = ControlCommand::clamped(0.12, steer, 0.0);
        for _ in 0..100 {
            s = step_dynamics(&s, &c, &v, &cfg, 0.05).unwrap();
            let r = s.position.distance(centre);
            assert!((r - radius).abs() / radius < 0.02, "r={r} expected {radius}");
        }
    }

    #[test]
    fn doubling_mass_halves_acceleration() {
        let v = sedan();
        let mut heavy = v.clone();
        heavy.mass *= 2.0;
        let cfg = DynamicsConfig::default();
        let s = VehicleState {
            position: Vec2::ZERO,
            heading: 0.0,
            speed: 8.0,
            rpm: cfg.engine_rpm(&v, 8.0, 1),
            gear: 1,
        };
        let c = ControlCommand::clamped(0.7, 0.0, 0.0);
        let a1 = step_dynamics(&s, &c, &v, &cfg, 0.05).unwrap().speed - s.speed;
        let a2 = step_dynamics(&s, &c, &heavy, &cfg, 0.05).unwrap().speed - s.speed;
        assert!((a1 / a2 - 2.0).abs() < 1e-9, "ratio {}", a1 / a2);
    }

    #[test]
    fn coasting_never_speeds_up() {
        let v = sedan();
        let cfg = DynamicsConfig::default();
        let mut s = VehicleState {
            position: Vec2::ZERO,
            heading: 0.0,
            speed: 12.0,
            rpm: cfg.engine_rpm(&v, 12.0, 2),
            gear: 2,
        };
        for _ in 0..400 {
            let n = step_dynamics(&s, &ControlCommand::default(), &v, &cfg, 0.05).unwrap();
            assert!(n.speed <= s.speed);
            s = n;
        }
    }

    #[test]
    fn nan_input_is_numeric_error() {
        let v = sedan();
        let cfg = DynamicsConfig::default();
        let s = VehicleState::at_rest(Vec2::ZERO, 0.0, &cfg);
        let c = ControlCommand {
            throttle: f64::NAN,
            steer: 0.0,
            brake: 0.0,
        };
        assert!(matches!(
            step_dynamics(&s, &c, &v, &cfg, 0.05),
            Err(Error::Numeric(_))
        ));
        assert!(step_dynamics(&s, &ControlCommand::default(), &v, &cfg, 0.2).is_err());
    }
}
