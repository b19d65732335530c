use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

pub const ROUTE_SCHEMA_VERSION: u32 = 1;
/// Polyline sample spacing, meters.
const SAMPLE_STEP: f64 = 0.5;
/// Straight run-out appended past the finish so look-ahead queries stay defined.
pub const RUNOUT: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Straight { length: f64 },
    /// Positive angle turns left.
    Arc { radius: f64, angle_deg: f64 },
}

/// Cyclic red → green → amber schedule. Only red is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub red: f64,
    pub green: f64,
    #[serde(default)]
    pub amber: f64,
    /// Seconds into the cycle at t = 0.
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPhase {
    Red,
    Green,
    Amber,
}

impl PhaseSchedule {
    pub fn cycle(&self) -> f64 {
        self.red + self.green + self.amber
    }

    pub fn phase_at(&self, t: f64) -> SignalPhase {
        let tau = (t + self.offset).rem_euclid(self.cycle());
        if tau < self.red {
            SignalPhase::Red
        } else if tau < self.red + self.green {
            SignalPhase::Green
        } else {
            SignalPhase::Amber
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub at: f64,
    pub schedule: PhaseSchedule,
    /// Seeded extra offset drawn uniformly from [0, offset_jitter].
    #[serde(default)]
    pub offset_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSpec {
    pub at: f64,
    pub lateral: f64,
    pub radius: f64,
}

/// Constant-speed lane follower starting ahead of the ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadVehicleSpec {
    pub start_at: f64,
    pub speed: f64,
    #[serde(default = "default_vehicle_radius")]
    pub radius: f64,
}

fn default_vehicle_radius() -> f64 {
    1.0
}

/// Pedestrian that starts crossing when the ego gets within
/// `trigger_distance` of the crossing, walks from `from_lateral` to
/// `to_lateral`, then leaves the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianSpec {
    pub at: f64,
    pub trigger_distance: f64,
    pub from_lateral: f64,
    pub to_lateral: f64,
    pub speed: f64,
    #[serde(default = "default_pedestrian_radius")]
    pub radius: f64,
}

fn default_pedestrian_radius() -> f64 {
    0.4
}

/// Seeded roadside clutter: `count` static discs outside the lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterSpec {
    pub count: usize,
    pub lateral_min: f64,
    pub lateral_max: f64,
    pub radius: f64,
}

/// Route description file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub schema_version: u32,
    pub id: String,
    pub lane_half_width: f64,
    pub speed_limit: f64,
    #[serde(default)]
    pub start_heading_deg: f64,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    #[serde(default)]
    pub stops: Vec<f64>,
    #[serde(default)]
    pub static_obstacles: Vec<StaticSpec>,
    #[serde(default)]
    pub lead_vehicles: Vec<LeadVehicleSpec>,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(default)]
    pub clutter: Option<ClutterSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleClass {
    Static,
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActorScript {
    Fixed { at: f64, lateral: f64 },
    Lead { start_at: f64, speed: f64 },
    Crossing {
        at: f64,
        trigger_distance: f64,
        from_lateral: f64,
        to_lateral: f64,
        speed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub class: ObstacleClass,
    pub radius: f64,
    pub script: ActorScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub at: f64,
    pub schedule: PhaseSchedule,
}

/// Result of projecting a point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub arc: f64,
    /// Signed offset, positive to the left of the driving direction.
    pub lateral: f64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: String,
    pub centerline: Vec<Vec2>,
    /// Cumulative arc length at each centerline point.
    pub arc: Vec<f64>,
    curvature: Vec<f64>,
    pub lane_half_width: f64,
    pub speed_limit: f64,
    pub signals: Vec<Signal>,
    pub stops: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
    /// Length to complete (l_total); the polyline continues past it.
    pub total_length: f64,
}

impl RouteSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: RouteSpec =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if spec.schema_version != ROUTE_SCHEMA_VERSION {
            return Err(Error::Compatibility(format!(
                "route schema version {} (expected {ROUTE_SCHEMA_VERSION})",
                spec.schema_version
            )));
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn nominal_length(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| match *s {
                Segment::Straight { length } => length,
                Segment::Arc { radius, angle_deg } => radius * angle_deg.abs().to_radians(),
            })
            .sum()
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generation(format!("route `{}`: {m}", self.id)));
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        if !(self.lane_half_width > 0.0 && self.speed_limit > 0.0) {
            return bad("lane_half_width and speed_limit must be positive".into());
        }
        for s in &self.segments {
            match *s {
                Segment::Straight { length } if !(length > 0.0) => {
                    return bad(format!("straight length {length} must be positive"))
                }
                Segment::Arc { radius, angle_deg } if !(radius > 0.0 && angle_deg != 0.0) => {
                    return bad("arc needs positive radius and non-zero angle".into())
                }
                _ => {}
            }
        }
        let total = self.nominal_length();
        let within = |x: f64| x >= 0.0 && x <= total;
        for s in &self.signals {
            if !within(s.at) {
                return bad(format!("signal at {} outside route", s.at));
            }
            let sch = s.schedule;
            if !(sch.red >= 0.0 && sch.green >= 0.0 && sch.amber >= 0.0 && sch.cycle() > 0.0) {
                return bad("signal schedule needs non-negative phases and a positive cycle".into());
            }
        }
        if let Some(&at) = self.stops.iter().find(|&&a| !within(a)) {
            return bad(format!("stop at {at} outside route"));
        }
        for p in &self.pedestrians {
            if !(p.speed > 0.0 && p.trigger_distance > 0.0 && within(p.at)) {
                return bad("pedestrian needs positive speed/trigger inside the route".into());
            }
        }
        for v in &self.lead_vehicles {
            if !(v.speed > 0.0 && within(v.start_at)) {
                return bad("lead vehicle needs positive speed inside the route".into());
            }
        }
        Ok(())
    }
}

/// Builds the sampled centerline and actor set. Deterministic in `seed`,
/// which only drives signal offset jitter and roadside clutter placement.
pub fn build_route(spec: &RouteSpec, seed: u64) -> Result<Route> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pts = vec![Vec2::ZERO];
    let mut curv = vec![0.0];
    let mut heading = spec.start_heading_deg.to_radians();
    let mut pos = Vec2::ZERO;
    let push = |pos: Vec2, k: f64, pts: &mut Vec<Vec2>, curv: &mut Vec<f64>| {
        pts.push(pos);
        curv.push(k);
    };
    let segments = spec
        .segments
        .iter()
        .cloned()
        .chain(std::iter::once(Segment::Straight { length: RUNOUT }));
    for seg in segments {
        match seg {
            Segment::Straight { length } => {
                let n = (length / SAMPLE_STEP).ceil().max(1.0) as usize;
                let step = length / n as f64;
                let dir = Vec2::from_angle(heading);
                for _ in 0..n {
                    pos += dir * step;
                    push(pos, 0.0, &mut pts, &mut curv);
                }
            }
            Segment::Arc { radius, angle_deg } => {
                let sweep = angle_deg.to_radians();
                let len = radius * sweep.abs();
                let n = (len / SAMPLE_STEP).ceil().max(1.0) as usize;
                let k = sweep.signum() / radius;
                let dtheta = sweep / n as f64;
                if let Some(c) = curv.last_mut() {
                    // Junction sample takes the incoming arc's curvature.
                    *c = if *c == 0.0 { k } else { *c };
                }
                for _ in 0..n {
                    let h1 = heading + dtheta;
                    pos += Vec2::new(h1.sin() - heading.sin(), heading.cos() - h1.cos())
                        * (1.0 / k);
                    heading = h1;
                    push(pos, k, &mut pts, &mut curv);
                }
            }
        }
    }
    let mut arc = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    arc.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].distance(w[1]);
        arc.push(acc);
    }
    let total_length = acc - RUNOUT;

    let signals = spec
        .signals
        .iter()
        .map(|s| {
            let jitter = if s.offset_jitter > 0.0 {
                rng.random::<f64>() * s.offset_jitter
            } else {
                0.0
            };
            Signal {
                at: s.at,
                schedule: PhaseSchedule {
                    offset: s.schedule.offset + jitter,
                    ..s.schedule
                },
            }
        })
        .collect();

    let mut obstacles: Vec<Obstacle> = spec
        .static_obstacles
        .iter()
        .map(|o| Obstacle {
            class: ObstacleClass::Static,
            radius: o.radius,
            script: ActorScript::Fixed {
                at: o.at,
                lateral: o.lateral,
            },
        })
        .collect();
    if let Some(c) = &spec.clutter {
        for _ in 0..c.count {
            let at = rng.random::<f64>() * total_length;
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mag = c.lateral_min + rng.random::<f64>() * (c.lateral_max - c.lateral_min);
            obstacles.push(Obstacle {
                class: ObstacleClass::Static,
                radius: c.radius,
                script: ActorScript::Fixed {
                    at,
                    lateral: side * mag,
                },
            });
        }
    }
    obstacles.extend(spec.lead_vehicles.iter().map(|v| Obstacle {
        class: ObstacleClass::Vehicle,
        radius: v.radius,
        script: ActorScript::Lead {
            start_at: v.start_at,
            speed: v.speed,
        },
    }));
    obstacles.extend(spec.pedestrians.iter().map(|p| Obstacle {
        class: ObstacleClass::Pedestrian,
        radius: p.radius,
        script: ActorScript::Crossing {
            at: p.at,
            trigger_distance: p.trigger_distance,
            from_lateral: p.from_lateral,
            to_lateral: p.to_lateral,
            speed: p.speed,
        },
    }));

    let route = Route {
        id: spec.id.clone(),
        centerline: pts,
        arc,
        curvature: curv,
        lane_half_width: spec.lane_half_width,
        speed_limit: spec.speed_limit,
        signals,
        stops: spec.stops.clone(),
        obstacles,
        total_length,
    };
    route.check_self_intersection()?;
    Ok(route)
}

impl Route {
    fn check_self_intersection(&self) -> Result<()> {
        // Points further apart along the route than a U-turn of lane width
        // must stay a full road width apart.
        let clearance = 2.0 * self.lane_half_width;
        let min_gap = std::f64::consts::PI * clearance;
        let stride = 4;
        let idx: Vec<usize> = (0..self.centerline.len()).step_by(stride).collect();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                if self.arc[j] - self.arc[i] < min_gap {
                    continue;
                }
                if self.centerline[i].distance(self.centerline[j]) < clearance {
                    return Err(Error::Generation(format!(
                        "route `{}` self-intersects near arc {:.1} and {:.1}",
                        self.id, self.arc[i], self.arc[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Polyline length including the run-out.
    pub fn polyline_length(&self) -> f64 {
        *self.arc.last().unwrap_or(&0.0)
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.polyline_length());
        let i = self.arc.partition_point(|&a| a <= s).clamp(1, self.arc.len() - 1) - 1;
        let seg = self.arc[i + 1] - self.arc[i];
        let t = if seg > 0.0 { (s - self.arc[i]) / seg } else { 0.0 };
        (i, t)
    }

    /// Centerline point at arc `s` (clamped to the polyline).
    pub fn point_at(&self, s: f64) -> Vec2 {
        let (i, t) = self.locate(s);
        let (a, b) = (self.centerline[i], self.centerline[i + 1]);
        a + (b - a) * t
    }

    /// Driving direction at arc `s`, radians.
    pub fn heading_at(&self, s: f64) -> f64 {
        let (i, _) = self.locate(s);
        let d = self.centerline[i + 1] - self.centerline[i];
        d.y.atan2(d.x)
    }

    /// Signed curvature at arc `s`, 1/m (positive = left).
    pub fn curvature_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        if t < 0.5 {
            self.curvature[i]
        } else {
            self.curvature[i + 1]
        }
    }

    /// Maximum |curvature| over `[from, to]`.
    pub fn max_abs_curvature(&self, from: f64, to: f64) -> f64 {
        let (i0, _) = self.locate(from);
        let (i1, _) = self.locate(to);
        self.curvature[i0..=(i1 + 1).min(self.curvature.len() - 1)]
            .iter()
            .fold(0.0, |m, k| m.max(k.abs()))
    }

    /// Projects `p` onto the centerline, searching segments within `window`
    /// meters of `hint_arc`.
    pub fn project(&self, p: Vec2, hint_arc: f64, window: f64) -> Projection {
        let (lo, _) = self.locate(hint_arc - window);
        let (hi, _) = self.locate(hint_arc + window);
        let mut best = Projection {
            arc: 0.0,
            lateral: f64::INFINITY,
            index: lo,
        };
        let mut best_d2 = f64::INFINITY;
        for i in lo..=hi.min(self.centerline.len() - 2) {
            let a = self.centerline[i];
            let d = self.centerline[i + 1] - a;
            let len2 = d.dot(d);
            let t = if len2 > 0.0 {
                ((p - a).dot(d) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let foot = a + d * t;
            let d2 = (p - foot).dot(p - foot);
            if d2 < best_d2 {
                best_d2 = d2;
                let side = d.cross(p - a).signum();
                best = Projection {
                    arc: self.arc[i] + t * len2.sqrt(),
                    lateral: side * d2.sqrt(),
                    index: i,
                };
            }
        }
        best
    }

    /// World position of a point given in route coordinates.
    pub fn frenet_to_world(&self, arc: f64, lateral: f64) -> Vec2 {
        let h = self.heading_at(arc);
        self.point_at(arc) + Vec2::from_angle(h).perp() * lateral
    }

    pub fn start_pose(&self) -> (Vec2, f64) {
        (self.centerline[0], self.heading_at(0.0))
    }

    /// Heading error of `heading` relative to the route at `s`.
    pub fn heading_error(&self, s: f64, heading: f64) -> f64 {
        wrap_angle(self.heading_at(s) - heading)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len: f64) -> RouteSpec {
        RouteSpec {
            schema_version: ROUTE_SCHEMA_VERSION,
            id: "straight".into(),
            lane_half_width: 2.0,
            speed_limit: 10.0,
            start_heading_deg: 0.0,
            segments: vec![Segment::Straight { length: len }],
            signals: vec![],
            stops: vec![],
            static_obstacles: vec![],
            lead_vehicles: vec![],
            pedestrians: vec![],
            clutter: None,
        }
    }

    #[test]
    fn straight_route_has_exact_length() {
        let r = build_route(&straight(100.0), 0).unwrap();
        assert!((r.total_length - 100.0).abs() < 1e-6);
        assert!(r.arc.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn arc_route_length_matches_radius_times_angle() {
        let mut spec = straight(20.0);
        spec.segments.push(Segment::Arc {
            radius: 30.0,
            angle_deg: 90.0,
        });
        let r = build_route(&spec, 0).unwrap();
        let want = 20.0 + 30.0 * std::f64::consts::FRAC_PI_2;
        // Chord sampling shortens the arc by O(step^2 / R).
        assert!((r.total_length - want).abs() < 1e-3, "{}", r.total_length);
        let end = r.point_at(r.total_length);
        assert!((end.x - 50.0).abs() < 1e-2 && (end.y - 30.0).abs() < 1e-2, "{end:?}");
        assert!((r.curvature_at(40.0) - 1.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_route() {
        let mut spec = straight(200.0);
        spec.clutter = Some(ClutterSpec {
            count: 6,
            lateral_min: 3.5,
            lateral_max: 5.0,
            radius: 0.5,
        });
        spec.signals.push(SignalSpec {
            at: 50.0,
            schedule: PhaseSchedule {
                red: 10.0,
                green: 10.0,
                amber: 0.0,
                offset: 0.0,
            },
            offset_jitter: 5.0,
        });
        assert_eq!(build_route(&spec, 9).unwrap(), build_route(&spec, 9).unwrap());
        assert_ne!(build_route(&spec, 9).unwrap(), build_route(&spec, 10).unwrap());
    }

    #[test]
    fn self_intersection_is_rejected() {
        let mut spec = straight(10.0);
        spec.segments.push(Segment::Arc {
            radius: 10.0,
            angle_deg: 400.0,
        });
        assert!(matches!(build_route(&spec, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn features_outside_route_are_rejected() {
        let mut spec = straight(50.0);
        spec.stops.push(70.0);
        assert!(build_route(&spec, 0).is_err());
    }

    #[test]
    fn projection_recovers_frenet_coordinates() {
        let mut spec = straight(30.0);
        spec.segments.push(Segment::Arc {
            radius: 40.0,
            angle_deg: -60.0,
        });
        let r = build_route(&spec, 0).unwrap();
        for &(s, l) in &[(5.0, 0.5), (35.0, -1.2), (60.0, 1.8)] {
            let p = r.frenet_to_world(s, l);
            let pr = r.project(p, s, 10.0);
            assert!((pr.arc - s).abs() < 0.05, "arc {} vs {s}", pr.arc);
            assert!((pr.lateral - l).abs() < 0.02, "lat {} vs {l}", pr.lateral);
        }
    }

    #[test]
    fn phase_schedule_cycles() {
        let s = PhaseSchedule {
            red: 2.0,
            green: 3.0,
            amber: 1.0,
            offset: 0.0,
        };
        assert_eq!(s.phase_at(0.0), SignalPhase::Red);
        assert_eq!(s.phase_at(2.0), SignalPhase::Green);
        assert_eq!(s.phase_at(5.5), SignalPhase::Amber);
        assert_eq!(s.phase_at(6.0), SignalPhase::Red);
    }
}
