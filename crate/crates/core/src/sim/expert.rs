use serde::{Deserialize, Serialize};

use super::route::{ActorScript, ObstacleClass, Route, SignalPhase};
use super::tokenizer::N_TARGET;
use super::world::WorldState;
use super::SimConfig;
use crate::geom::Vec2;
use crate::vehicle::{engine_torque, ControlCommand, VehiclePhysics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Planned deceleration is `min(comfort_decel, decel_fraction * max brake decel)`.
    pub comfort_decel: f64,
    pub decel_fraction: f64,
    /// Emergency deceleration as a fraction of the maximum.
    pub hard_decel_fraction: f64,
    pub comfort_accel: f64,
    pub accel_fraction: f64,
    /// Cruise speed is capped so the vehicle can stop within this distance.
    pub sight_distance: f64,
    /// Lateral acceleration cap `ref * (mass_ref / mass)^exponent`, clamped.
    pub lat_accel_ref: f64,
    pub lat_mass_ref: f64,
    pub lat_mass_exponent: f64,
    pub lat_accel_min: f64,
    pub lat_accel_max: f64,
    /// Front bumper stops this far before a line, m.
    pub stop_margin: f64,
    pub pedestrian_margin: f64,
    pub follow_gap: f64,
    pub follow_headway: f64,
    /// Pure-pursuit look-ahead: `speed * gain`, clamped.
    pub pursuit_gain: f64,
    pub pursuit_min: f64,
    pub pursuit_max: f64,
    /// Speed-tracking horizon, s.
    pub track_time: f64,
    /// Planning integration step, s.
    pub plan_step: f64,
    /// Curve look-ahead for the speed envelope, m.
    pub curve_horizon: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            comfort_decel: 3.5,
            decel_fraction: 0.5,
            hard_decel_fraction: 0.8,
            comfort_accel: 1.5,
            accel_fraction: 0.6,
            sight_distance: 25.0,
            lat_accel_ref: 2.5,
            lat_mass_ref: 1800.0,
            lat_mass_exponent: 0.5,
            lat_accel_min: 1.0,
            lat_accel_max: 3.5,
            stop_margin: 2.0,
            pedestrian_margin: 4.0,
            follow_gap: 4.0,
            follow_headway: 1.0,
            pursuit_gain: 0.8,
            pursuit_min: 4.0,
            pursuit_max: 12.0,
            track_time: 0.25,
            plan_step: 0.05,
            curve_horizon: 80.0,
        }
    }
}

/// Vehicle-specific planning limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub decel: f64,
    pub hard_decel: f64,
    pub accel: f64,
    pub lat_accel: f64,
    pub cruise: f64,
}

pub fn limits(p: &VehiclePhysics, r: &Route, cfg: &SimConfig) -> Limits {
    let e = &cfg.expert;
    let max_brake = cfg.dynamics.max_brake_decel(p);
    let decel = e.comfort_decel.min(e.decel_fraction * max_brake);
    let accel = e.comfort_accel.min(e.accel_fraction * cfg.dynamics.max_launch_accel(p));
    let lat_accel = (e.lat_accel_ref * (e.lat_mass_ref / p.mass).powf(e.lat_mass_exponent))
        .clamp(e.lat_accel_min, e.lat_accel_max);
    Limits {
        decel,
        hard_decel: e.hard_decel_fraction * max_brake,
        accel,
        lat_accel,
        cruise: r.speed_limit.min((2.0 * decel * e.sight_distance).sqrt()),
    }
}

/// Position-dependent speed ceiling in route arc (vehicle center).
struct Envelope {
    origin: f64,
    step: f64,
    /// Curve and cruise ceiling on a 1 m grid, already back-propagated.
    grid: Vec<f64>,
    /// (stop arc, speed allowed at that arc).
    stops: Vec<(f64, f64)>,
    decel: f64,
}

impl Envelope {
    fn at(&self, s: f64) -> f64 {
        let x = ((s - self.origin) / self.step).max(0.0);
        let i = x.floor() as usize;
        let base = if i + 1 >= self.grid.len() {
            *self.grid.last().unwrap_or(&0.0)
        } else {
            let t = x - i as f64;
            self.grid[i] * (1.0 - t) + self.grid[i + 1] * t
        };
        self.stops.iter().fold(base, |v, &(at, v_at)| {
            v.min((v_at * v_at + 2.0 * self.decel * (at - s).max(0.0)).sqrt())
        })
    }
}

fn envelope(w: &WorldState, r: &Route, p: &VehiclePhysics, lim: &Limits, cfg: &SimConfig) -> Envelope {
    let e = &cfg.expert;
    let step = 1.0;
    let n = (e.curve_horizon / step) as usize + 1;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| {
            let s = w.arc + i as f64 * step;
            let k = r.max_abs_curvature(s - 0.5 * step, s + 0.5 * step);
            let vc = if k > 1e-9 { (lim.lat_accel / k).sqrt() } else { f64::INFINITY };
            vc.min(lim.cruise)
        })
        .collect();
    for i in (0..n - 1).rev() {
        grid[i] = grid[i].min((grid[i + 1].powi(2) + 2.0 * lim.decel * step).sqrt());
    }

    let hl = p.half_length();
    let front = w.front_arc(p);
    let mut stops = Vec::new();
    for (sig, phase) in r.signals.iter().zip(&w.signal_phases) {
        if *phase == SignalPhase::Green || sig.at <= front {
            continue;
        }
        let stop_at = sig.at - e.stop_margin - hl;
        if *phase == SignalPhase::Amber {
            // Dilemma zone: go if a hard stop before the line is impossible.
            let room = (sig.at - front).max(1e-3);
            if w.ego.speed * w.ego.speed / (2.0 * room) > lim.hard_decel {
                continue;
            }
        }
        stops.push((stop_at, 0.0));
    }
    for (&at, &cleared) in r.stops.iter().zip(&w.stops_cleared) {
        if !cleared && at > front - 0.5 {
            stops.push((at - e.stop_margin - hl, 0.0));
        }
    }
    for (o, a) in r.obstacles.iter().zip(&w.actors) {
        if !a.active {
            continue;
        }
        match (o.class, &o.script) {
            (ObstacleClass::Pedestrian, ActorScript::Crossing { .. })
                if a.triggered_at.is_some() && a.arc + o.radius > front - 0.5 =>
            {
                stops.push((a.arc - o.radius - e.pedestrian_margin - hl, 0.0));
            }
            (ObstacleClass::Vehicle, _) if a.arc > w.arc => {
                let gap = e.follow_gap + e.follow_headway * a.speed;
                stops.push((a.arc - o.radius - gap - hl, a.speed));
            }
            _ => {}
        }
    }
    Envelope {
        origin: w.arc,
        step,
        grid,
        stops,
        decel: lim.decel,
    }
}

/// Expert plan: waypoints at `k * dt_wp` for k = 1..=8 and planned speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub waypoints: [Vec2; N_TARGET],
    pub speeds: [f64; N_TARGET],
    /// Planned speed after `track_time`.
    pub track_speed: f64,
}

pub fn expert_plan(w: &WorldState, r: &Route, p: &VehiclePhysics, cfg: &SimConfig) -> Plan {
    let e = &cfg.expert;
    let lim = limits(p, r, cfg);
    let env = envelope(w, r, p, &lim, cfg);
    let h = e.plan_step;
    let per_wp = (cfg.dt_wp / h).round().max(1.0) as usize;
    let track_steps = (e.track_time / h).round().max(1.0) as usize;

    let (mut s, mut v) = (w.arc, w.ego.speed);
    let mut waypoints = [Vec2::ZERO; N_TARGET];
    let mut speeds = [0.0; N_TARGET];
    let mut track_speed = v;
    for n in 1..=per_wp * N_TARGET {
        // Above the ceiling the plan snaps down to it; recovering is the
        // controller's job.
        let next = env.at(s + v * h).min(v + lim.accel * h).max(0.0);
        s += 0.5 * (v + next) * h;
        v = next;
        if n == track_steps {
            track_speed = v;
        }
        if n % per_wp == 0 {
            let k = n / per_wp - 1;
            waypoints[k] = r.point_at(s).to_local(w.ego.position, w.ego.heading);
            speeds[k] = v;
        }
    }
    Plan {
        waypoints,
        speeds,
        track_speed,
    }
}

/// Plan plus the expert's own control: pure pursuit on the centerline and
/// speed tracking through an inverse of the vehicle's longitudinal model.
pub fn expert_action(
    w: &WorldState,
    r: &Route,
    p: &VehiclePhysics,
    cfg: &SimConfig,
) -> ([Vec2; N_TARGET], ControlCommand) {
    let plan = expert_plan(w, r, p, cfg);
    let e = &cfg.expert;
    let dy = &cfg.dynamics;
    let s = &w.ego;

    let ld = (s.speed * e.pursuit_gain).clamp(e.pursuit_min, e.pursuit_max);
    let aim = r.point_at(w.arc + ld).to_local(s.position, s.heading);
    let alpha = aim.y.atan2(aim.x);
    let delta = (2.0 * p.wheelbase * alpha.sin() / aim.norm().max(1e-3)).atan();
    let steer = delta / dy.max_steer_angle(p);

    if plan.track_speed < 0.05 && s.speed < 0.5 {
        return (plan.waypoints, ControlCommand::clamped(0.0, steer, 1.0));
    }
    let accel = (plan.track_speed - s.speed) / e.track_time;
    let resist = if s.speed > 0.0 {
        dy.drag_coefficient * s.speed * s.speed + dy.rolling_resistance
    } else {
        0.0
    };
    let force = p.mass * accel + resist;
    let cmd = if force >= 0.0 {
        let torque = engine_torque(p, s.rpm.clamp(0.0, p.max_rpm)).unwrap_or(0.0);
        let max_force = torque * p.gears[s.gear.min(p.gears.len() - 1)].ratio / p.wheel_radius;
        ControlCommand::clamped(force / max_force.max(1.0), steer, 0.0)
    } else {
        ControlCommand::clamped(0.0, steer, -force * p.wheel_radius / dy.brake_torque)
    };
    (plan.waypoints, cmd)
}
