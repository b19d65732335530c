use serde::{Deserialize, Serialize};

use super::route::{ActorScript, ObstacleClass, Route, SignalPhase};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::vehicle::{step_dynamics, ControlCommand, VehiclePhysics, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    StopSign,
    OffRoad,
    Stuck,
    RouteComplete,
    /// Kept for completeness of the termination taxonomy; the planar model
    /// cannot roll over, so this is never emitted.
    Rollover,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::CollisionPedestrian,
        EventKind::CollisionVehicle,
        EventKind::CollisionStatic,
        EventKind::RedLight,
        EventKind::StopSign,
        EventKind::OffRoad,
        EventKind::Stuck,
        EventKind::RouteComplete,
        EventKind::Rollover,
    ];

    pub fn is_terminal(self) -> bool {
        !matches!(self, EventKind::RedLight | EventKind::StopSign)
    }

    /// Events that disqualify an expert episode from the dataset.
    pub fn is_infraction(self) -> bool {
        self != EventKind::RouteComplete
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::CollisionPedestrian => "collision_pedestrian",
            EventKind::CollisionVehicle => "collision_vehicle",
            EventKind::CollisionStatic => "collision_static",
            EventKind::RedLight => "red_light",
            EventKind::StopSign => "stop_sign",
            EventKind::OffRoad => "off_road",
            EventKind::Stuck => "stuck",
            EventKind::RouteComplete => "route_complete",
            EventKind::Rollover => "rollover",
        }
    }

    fn collision(class: ObstacleClass) -> Self {
        match class {
            ObstacleClass::Static => EventKind::CollisionStatic,
            ObstacleClass::Vehicle => EventKind::CollisionVehicle,
            ObstacleClass::Pedestrian => EventKind::CollisionPedestrian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub position: Vec2,
    /// Route coordinates of the actor.
    pub arc: f64,
    pub lateral: f64,
    pub speed: f64,
    /// Inactive actors have left the scene and cannot collide.
    pub active: bool,
    /// Crossing pedestrians only: time the crossing started.
    pub triggered_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ego: VehicleState,
    /// Monotone route progress of the ego center, capped at the route length.
    pub progress: f64,
    /// Current (possibly regressing) projection of the ego center.
    pub arc: f64,
    pub lateral: f64,
    pub signal_phases: Vec<SignalPhase>,
    pub actors: Vec<ActorState>,
    pub stops_cleared: Vec<bool>,
    /// Seconds spent below the stuck speed without a blocking reason.
    pub stationary_time: f64,
    pub tick: u64,
    pub elapsed: f64,
    pub active: bool,
    pub termination: Option<EventKind>,
}

impl WorldState {
    /// Ego at rest at the route start, actors at their t = 0 poses.
    pub fn new(r: &Route, p: &VehiclePhysics, cfg: &SimConfig) -> Self {
        let (pos, heading) = r.start_pose();
        Self::with_ego(r, p, VehicleState::at_rest(pos, heading, &cfg.dynamics))
    }

    /// Starts from an arbitrary ego pose (used for perturbed data collection).
    pub fn with_ego(r: &Route, p: &VehiclePhysics, ego: VehicleState) -> Self {
        let pr = r.project(ego.position, 0.0, r.polyline_length());
        let mut w = Self {
            ego,
            progress: pr.arc.clamp(0.0, r.total_length),
            arc: pr.arc,
            lateral: pr.lateral,
            signal_phases: r.signals.iter().map(|s| s.schedule.phase_at(0.0)).collect(),
            actors: Vec::with_capacity(r.obstacles.len()),
            stops_cleared: vec![false; r.stops.len()],
            stationary_time: 0.0,
            tick: 0,
            elapsed: 0.0,
            active: true,
            termination: None,
        };
        let front = w.front_arc(p);
        w.actors = r
            .obstacles
            .iter()
            .map(|o| advance_actor(r, &o.script, None, 0.0, front))
            .collect();
        w
    }

    /// Arc position of the ego front bumper.
    pub fn front_arc(&self, p: &VehiclePhysics) -> f64 {
        self.arc + p.half_length()
    }
}

fn advance_actor(
    r: &Route,
    script: &ActorScript,
    prev: Option<&ActorState>,
    t: f64,
    ego_front: f64,
) -> ActorState {
    let (arc, lateral, speed, active, triggered_at) = match *script {
        ActorScript::Fixed { at, lateral } => (at, lateral, 0.0, true, None),
        ActorScript::Lead { start_at, speed } => {
            let arc = start_at + speed * t;
            (arc, 0.0, speed, arc <= r.polyline_length(), None)
        }
        ActorScript::Crossing {
            at,
            trigger_distance,
            from_lateral,
            to_lateral,
            speed,
        } => {
            let trig = prev.and_then(|a| a.triggered_at).or_else(|| {
                (ego_front >= at - trigger_distance).then_some(t)
            });
            match trig {
                None => (at, from_lateral, 0.0, true, None),
                Some(t0) => {
                    let span = (to_lateral - from_lateral).abs();
                    let walked = speed * (t - t0);
                    let lat = from_lateral + (to_lateral - from_lateral).signum() * walked.min(span);
                    (at, lat, speed, walked < span, Some(t0))
                }
            }
        }
    };
    ActorState {
        position: r.frenet_to_world(arc, lateral),
        arc,
        lateral,
        speed,
        active,
        triggered_at,
    }
}

/// Disc centers covering the ego body; each disc has radius half-width.
pub fn ego_discs(s: &VehicleState, p: &VehiclePhysics) -> (Vec<Vec2>, f64) {
    let r = p.half_width();
    let n = (p.length() / p.width()).ceil().max(1.0) as usize;
    let reach = (p.half_length() - r).max(0.0);
    let fwd = Vec2::from_angle(s.heading);
    let centers = (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
            s.position + fwd * (t * reach)
        })
        .collect();
    (centers, r)
}

/// Why a stationary ego is legitimately waiting, if it is.
pub fn blocking_reason(w: &WorldState, r: &Route, p: &VehiclePhysics, cfg: &SimConfig) -> Option<String> {
    let front = w.front_arc(p);
    let near = |at: f64| (-1.0..=cfg.blocking_distance).contains(&(at - front));
    for (sig, phase) in r.signals.iter().zip(&w.signal_phases) {
        if *phase != SignalPhase::Green && near(sig.at) {
            return Some(format!("signal at {:.1}", sig.at));
        }
    }
    for (o, a) in r.obstacles.iter().zip(&w.actors) {
        if !a.active {
            continue;
        }
        match o.class {
            ObstacleClass::Pedestrian if a.triggered_at.is_some() && near(a.arc) => {
                return Some(format!("pedestrian at {:.1}", a.arc))
            }
            ObstacleClass::Vehicle if a.arc - o.radius - front < cfg.blocking_distance && a.arc > w.arc => {
                return Some(format!("vehicle at {:.1}", a.arc))
            }
            _ => {}
        }
    }
    None
}

/// Advances the world by one tick of `cfg.dt`.
pub fn step_world(
    w: &WorldState,
    c: &ControlCommand,
    r: &Route,
    p: &VehiclePhysics,
    cfg: &SimConfig,
) -> Result<(WorldState, Vec<SimEvent>)> {
    if !w.active {
        return Err(Error::Domain("step on an inactive episode".into()));
    }
    let ego = step_dynamics(&w.ego, c, p, &cfg.dynamics, cfg.dt)?;
    let mut n = w.clone();
    n.ego = ego;
    n.tick += 1;
    n.elapsed = n.tick as f64 * cfg.dt;
    for (phase, sig) in n.signal_phases.iter_mut().zip(&r.signals) {
        *phase = sig.schedule.phase_at(n.elapsed);
    }
    let pr = r.project(ego.position, w.arc, 5.0 + ego.speed * cfg.dt * 4.0);
    n.arc = pr.arc;
    n.lateral = pr.lateral;
    n.progress = w.progress.max(pr.arc).min(r.total_length);

    let prev_front = w.front_arc(p);
    let front = n.front_arc(p);
    for (i, o) in r.obstacles.iter().enumerate() {
        n.actors[i] = advance_actor(r, &o.script, Some(&w.actors[i]), n.elapsed, front);
    }

    let tick = n.tick;
    let mut events: Vec<SimEvent> = Vec::new();
    let mut emit = |kind: EventKind, detail: String| {
        if !events.iter().any(|e| e.kind == kind) {
            events.push(SimEvent { tick, kind, detail });
        }
    };

    let (discs, er) = ego_discs(&ego, p);
    for (o, a) in r.obstacles.iter().zip(&n.actors) {
        if !a.active {
            continue;
        }
        if discs.iter().any(|d| d.distance(a.position) < er + o.radius) {
            emit(
                EventKind::collision(o.class),
                format!("{:?} at arc {:.1}, lateral {:.2}", o.class, a.arc, a.lateral),
            );
        }
    }

    for (sig, phase) in r.signals.iter().zip(&n.signal_phases) {
        if prev_front < sig.at && front >= sig.at && *phase == SignalPhase::Red {
            emit(EventKind::RedLight, format!("signal at {:.1} crossed at {:.2} m/s", sig.at, ego.speed));
        }
    }

    for (i, &at) in r.stops.iter().enumerate() {
        if !n.stops_cleared[i]
            && ego.speed < cfg.stuck_speed
            && front <= at
            && front >= at - cfg.stop_window
        {
            n.stops_cleared[i] = true;
        }
        if prev_front < at && front >= at && !n.stops_cleared[i] && ego.speed > cfg.stuck_speed {
            emit(EventKind::StopSign, format!("stop at {at:.1} crossed at {:.2} m/s", ego.speed));
        }
    }

    if pr.lateral.abs() > r.lane_half_width + p.half_width() {
        emit(EventKind::OffRoad, format!("lateral offset {:.2}", pr.lateral));
    }

    if ego.speed < cfg.stuck_speed && blocking_reason(&n, r, p, cfg).is_none() {
        n.stationary_time += cfg.dt;
    } else {
        n.stationary_time = 0.0;
    }
    // Compare in ticks to avoid float accumulation drift.
    if n.stationary_time >= cfg.stuck_timeout - 0.5 * cfg.dt {
        emit(EventKind::Stuck, format!("stationary for {:.1} s", n.stationary_time));
    }

    if n.progress >= r.total_length {
        emit(EventKind::RouteComplete, String::new());
    }

    if let Some(e) = events.iter().find(|e| e.kind.is_terminal()) {
        n.active = false;
        n.termination = Some(e.kind);
    }
    Ok((n, events))
}
