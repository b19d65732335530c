use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::route::{ObstacleClass, Route, SignalPhase};
use super::world::WorldState;
use super::SimConfig;
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};
use crate::vehicle::VehiclePhysics;

/// Number of scene tokens and of predicted waypoints.
pub const N_TARGET: usize = 8;
/// Raw privileged features per token.
pub const D_SCENE: usize = 16;

/// Raw per-horizon-step features, row-major `N_TARGET x D_SCENE`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFeatures(pub Vec<f64>);

impl SceneFeatures {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.0[k * D_SCENE..(k + 1) * D_SCENE]
    }
}

/// Projected tokens, row-major `N_TARGET x width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTokens {
    pub width: usize,
    pub values: Vec<f64>,
}

impl SceneTokens {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.width..(k + 1) * self.width]
    }
}

/// Feature column indices.
pub mod col {
    pub const AHEAD_X: usize = 0;
    pub const AHEAD_Y: usize = 1;
    pub const HEADING_ERR: usize = 2;
    pub const CURVATURE: usize = 3;
    pub const SIGNAL_DIST: usize = 4;
    pub const SIGNAL_STATE: usize = 5;
    pub const STOP_DIST: usize = 6;
    pub const STATIC_DIST: usize = 7;
    pub const STATIC_LAT: usize = 8;
    pub const VEHICLE_GAP: usize = 9;
    pub const VEHICLE_CLOSING: usize = 10;
    pub const PED_DIST: usize = 11;
    pub const PED_LAT: usize = 12;
    pub const SPEED: usize = 13;
    pub const STEP: usize = 14;
    pub const EGO_OFFSET: usize = 15;
}

/// Distance feature: per-step remaining distance, scaled and clipped.
fn dist_feature(d: f64, range: f64) -> f64 {
    (d / range).clamp(-0.2, 1.0)
}

/// Builds the raw privileged features. Step `k` looks at route arc
/// `arc + (k + 1) * token_spacing`; distances to signals, stops, vehicles
/// and pedestrians are reported relative to that look-ahead point so each
/// token describes its own slice of the horizon.
pub fn scene_features(
    w: &WorldState,
    r: &Route,
    p: &VehiclePhysics,
    cfg: &SimConfig,
) -> Result<SceneFeatures> {
    let limit = 5.0 * 2.0 * r.lane_half_width;
    if !(w.lateral.abs() <= limit) || !w.ego.is_finite() {
        return Err(Error::Feature(format!(
            "ego lateral offset {:.2} beyond {limit:.1} m of the route",
            w.lateral
        )));
    }
    let range = cfg.sensor_range;
    // Relevance is decided at the front bumper; distances are measured from
    // the vehicle reference point, so stopping correctly requires knowing
    // the body length.
    let front = w.front_arc(p);
    let origin = w.arc;

    let signal = r
        .signals
        .iter()
        .zip(&w.signal_phases)
        .find(|(s, _)| s.at > front && s.at - front <= range);
    let stop = r
        .stops
        .iter()
        .zip(&w.stops_cleared)
        .find(|(&at, &cleared)| !cleared && at > front - 0.5 && at - front <= range)
        .map(|(&at, _)| at);

    let mut statik: Option<(f64, f64)> = None;
    let mut vehicle: Option<(f64, f64)> = None;
    let mut ped: Option<(f64, f64)> = None;
    for (o, a) in r.obstacles.iter().zip(&w.actors) {
        if !a.active {
            continue;
        }
        let d = a.arc - o.radius - origin;
        if a.arc + o.radius < front - p.length() || d > range {
            continue;
        }
        let slot = match o.class {
            ObstacleClass::Static => &mut statik,
            ObstacleClass::Vehicle => &mut vehicle,
            ObstacleClass::Pedestrian if a.triggered_at.is_some() => &mut ped,
            ObstacleClass::Pedestrian => continue,
        };
        let aux = match o.class {
            ObstacleClass::Vehicle => w.ego.speed - a.speed,
            _ => a.lateral,
        };
        if slot.is_none_or(|(best, _)| d < best) {
            *slot = Some((d, aux));
        }
    }

    let mut out = Vec::with_capacity(N_TARGET * D_SCENE);
    for k in 0..N_TARGET {
        let ahead = (k + 1) as f64 * cfg.token_spacing;
        let s_k = w.arc + ahead;
        let local = r.point_at(s_k).to_local(w.ego.position, w.ego.heading);
        let mut f = [0.0; D_SCENE];
        f[col::AHEAD_X] = local.x / 25.0;
        f[col::AHEAD_Y] = local.y / 5.0;
        f[col::HEADING_ERR] = wrap_angle(r.heading_at(s_k) - w.ego.heading);
        f[col::CURVATURE] = r.curvature_at(s_k) * 10.0;
        match signal {
            Some((s, phase)) => {
                f[col::SIGNAL_DIST] = dist_feature(s.at - origin - ahead, range);
                f[col::SIGNAL_STATE] = match phase {
                    SignalPhase::Red => 1.0,
                    SignalPhase::Amber => 0.5,
                    SignalPhase::Green => 0.0,
                };
            }
            None => f[col::SIGNAL_DIST] = 1.0,
        }
        f[col::STOP_DIST] = stop.map_or(1.0, |at| dist_feature(at - origin - ahead, range));
        match statik {
            Some((d, lat)) => {
                f[col::STATIC_DIST] = dist_feature(d, range);
                f[col::STATIC_LAT] = lat / 5.0;
            }
            None => f[col::STATIC_DIST] = 1.0,
        }
        match vehicle {
            Some((d, closing)) => {
                f[col::VEHICLE_GAP] = dist_feature(d - ahead, range);
                f[col::VEHICLE_CLOSING] = closing / 10.0;
            }
            None => f[col::VEHICLE_GAP] = 1.0,
        }
        match ped {
            Some((d, lat)) => {
                f[col::PED_DIST] = dist_feature(d - ahead, range);
                f[col::PED_LAT] = lat / 5.0;
            }
            None => f[col::PED_DIST] = 1.0,
        }
        f[col::SPEED] = w.ego.speed / 10.0;
        f[col::STEP] = (k + 1) as f64 / N_TARGET as f64;
        f[col::EGO_OFFSET] = w.lateral / 2.0;
        out.extend_from_slice(&f);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite scene feature".into()));
    }
    Ok(SceneFeatures(out))
}

/// Frozen linear projection from raw features to token width. Weights are
/// a pure function of `(seed, width)` and are never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub seed: u64,
    pub width: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Backbone {
    pub fn new(seed: u64, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4_e70c_b0b5_u64);
        let w = Normal::new(0.0, 1.0 / (D_SCENE as f64).sqrt()).expect("valid std");
        let b = Normal::new(0.0, 0.1).expect("valid std");
        let weight = (0..width * D_SCENE).map(|_| w.sample(&mut rng)).collect();
        let bias = (0..width).map(|_| b.sample(&mut rng)).collect();
        Self { seed, width, weight, bias }
    }

    /// Projects one raw feature row into `out` (length `width`).
    pub fn project_row(&self, f: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weight[j * D_SCENE..(j + 1) * D_SCENE];
            *o = self.bias[j] + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn project(&self, f: &SceneFeatures) -> SceneTokens {
        let mut values = vec![0.0; N_TARGET * self.width];
        for k in 0..N_TARGET {
            self.project_row(f.row(k), &mut values[k * self.width..(k + 1) * self.width]);
        }
        SceneTokens { width: self.width, values }
    }
}

/// Raw features followed by the frozen projection.
pub fn scene_tokens(
    w: &WorldState,
    r: &Route,
    p: &VehiclePhysics,
    backbone: &Backbone,
    cfg: &SimConfig,
) -> Result<SceneTokens> {
    Ok(backbone.project(&scene_features(w, r, p, cfg)?))
}

/// Centerline point `target_lookahead` ahead of the ego projection, in the
/// ego frame, clamped at the route end.
pub fn target_point(w: &WorldState, r: &Route, cfg: &SimConfig) -> Vec2 {
    let s = (w.arc + cfg.target_lookahead).min(r.total_length);
    let p = r.point_at(s).to_local(w.ego.position, w.ego.heading);
    let n = p.norm();
    if n > cfg.lookahead_max {
        p * (cfg.lookahead_max / n)
    } else {
        p
    }
}
