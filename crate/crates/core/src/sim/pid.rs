use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::vehicle::{ControlCommand, VehicleState};

/// Fixed low-level controller gains. Never trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    /// Steering per radian of bearing to the aim point.
    pub steer_kp: f64,
    /// Steering per radian/second of bearing rate.
    pub steer_kd: f64,
    /// Aim distance along the waypoint path: `speed * gain`, clamped.
    pub aim_gain: f64,
    pub aim_min: f64,
    pub aim_max: f64,
    /// Commanded acceleration per m/s of speed error, 1/s.
    pub speed_kp: f64,
    /// Integral gain on speed error, 1/s^2.
    pub speed_ki: f64,
    pub integral_limit: f64,
    /// Acceleration that maps to full throttle / full brake, m/s^2.
    pub throttle_accel: f64,
    pub brake_accel: f64,
    /// Horizon-average planned speeds below this are treated as a stop
    /// request, m/s.
    pub stop_speed: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            steer_kp: 1.4,
            steer_kd: 0.08,
            aim_gain: 0.8,
            aim_min: 3.5,
            aim_max: 10.0,
            speed_kp: 2.5,
            speed_ki: 0.2,
            integral_limit: 2.0,
            throttle_accel: 2.0,
            brake_accel: 2.0,
            stop_speed: 0.4,
        }
    }
}

/// Speed implied by the spacing of the first two waypoints.
pub fn waypoint_speed(wps: &[Vec2], dt_wp: f64) -> f64 {
    if wps.len() < 2 {
        return 0.0;
    }
    wps[1].distance(wps[0]) / dt_wp
}

/// Average speed over the whole plan: displacement of the last waypoint
/// divided by the horizon. Less sensitive to per-waypoint noise than
/// [`waypoint_speed`].
pub fn horizon_speed(wps: &[Vec2], dt_wp: f64) -> f64 {
    match wps.last() {
        Some(w) => w.norm() / (wps.len() as f64 * dt_wp),
        None => 0.0,
    }
}

/// Point at arc distance `d` along the path origin → wps[0] → wps[1] → ...,
/// or the last waypoint when the path is shorter.
fn aim_point(wps: &[Vec2], d: f64) -> Vec2 {
    let mut prev = Vec2::ZERO;
    let mut left = d;
    for &w in wps {
        let seg = w.distance(prev);
        if seg >= left && seg > 0.0 {
            return prev + (w - prev) * (left / seg);
        }
        left -= seg;
        prev = w;
    }
    prev
}

/// Stateful PID: carries the steering error derivative and speed integral.
///
/// Sign convention: a target to the left (positive ego-frame y) yields
/// positive steer, matching the vehicle model.
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    dt: f64,
    dt_wp: f64,
    prev_bearing: Option<f64>,
    integral: f64,
}

impl PidController {
    pub fn new(gains: PidGains, dt: f64, dt_wp: f64) -> Self {
        Self {
            gains,
            dt,
            dt_wp,
            prev_bearing: None,
            integral: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.prev_bearing = None;
        self.integral = 0.0;
    }

    pub fn control(&mut self, wps: &[Vec2], s: &VehicleState) -> ControlCommand {
        let g = &self.gains;
        if wps.is_empty() || wps.iter().all(|w| *w == Vec2::ZERO) || wps.iter().any(|w| !w.is_finite()) {
            self.reset();
            return ControlCommand::FULL_BRAKE;
        }

        let path_len: f64 = std::iter::once(Vec2::ZERO)
            .chain(wps.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|p| p[0].distance(p[1]))
            .sum();
        let steer = if path_len < 0.5 {
            self.prev_bearing = None;
            0.0
        } else {
            let aim = aim_point(wps, (s.speed * g.aim_gain).clamp(g.aim_min, g.aim_max));
            let bearing = aim.y.atan2(aim.x.max(1e-3));
            let rate = self.prev_bearing.map_or(0.0, |b| (bearing - b) / self.dt);
            self.prev_bearing = Some(bearing);
            g.steer_kp * bearing + g.steer_kd * rate
        };

        let target = waypoint_speed(wps, self.dt_wp);
        if horizon_speed(wps, self.dt_wp) < g.stop_speed {
            self.integral = 0.0;
            return ControlCommand::clamped(0.0, steer, 1.0);
        }
        let err = target - s.speed;
        self.integral = (self.integral + err * self.dt).clamp(-g.integral_limit, g.integral_limit);
        let accel = g.speed_kp * err + g.speed_ki * self.integral;
        if accel >= 0.0 {
            ControlCommand::clamped(accel / g.throttle_accel, steer, 0.0)
        } else {
            ControlCommand::clamped(0.0, steer, -accel / g.brake_accel)
        }
    }
}

/// One-shot PID evaluation from a fresh controller state.
pub fn pid_control(wps: &[Vec2], s: &VehicleState, gains: &PidGains, dt: f64, dt_wp: f64) -> ControlCommand {
    PidController::new(gains.clone(), dt, dt_wp).control(wps, s)
}
