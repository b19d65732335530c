//! Deterministic planar driving world: routes, scripted actors, the frozen
//! scene tokenizer, the rule-based expert and the low-level PID.

mod bundled;
pub mod expert;
pub mod pid;
pub mod route;
pub mod tokenizer;
pub mod world;

use serde::{Deserialize, Serialize};

pub use bundled::{bundled_route_specs, bundled_routes};
pub use expert::{expert_action, expert_plan, ExpertConfig, Plan};
pub use pid::{horizon_speed, pid_control, waypoint_speed, PidController, PidGains};
pub use route::{build_route, ObstacleClass, PhaseSchedule, Route, RouteSpec, Segment, SignalPhase};
pub use tokenizer::{scene_features, scene_tokens, target_point, Backbone, SceneFeatures, SceneTokens, D_SCENE, N_TARGET};
pub use world::{step_world, EventKind, SimEvent, WorldState};

use crate::error::{Error, Result};
use crate::vehicle::DynamicsConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulation tick, s.
    pub dt: f64,
    /// Time between predicted waypoints, s.
    pub dt_wp: f64,
    pub stuck_timeout: f64,
    pub stuck_speed: f64,
    /// A stop counts when made within this distance before the line, m.
    pub stop_window: f64,
    /// Distance ahead for the navigation target point, m.
    pub target_lookahead: f64,
    pub lookahead_max: f64,
    /// Arc spacing between consecutive scene tokens, m.
    pub token_spacing: f64,
    pub sensor_range: f64,
    /// Signals, pedestrians and vehicles closer than this excuse standing still, m.
    pub blocking_distance: f64,
    /// Episode time budget: base + route length / min_speed, s.
    pub time_budget_base: f64,
    pub time_budget_min_speed: f64,
    pub dynamics: DynamicsConfig,
    pub expert: ExpertConfig,
    pub pid: PidGains,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            dt_wp: 0.25,
            stuck_timeout: 30.0,
            stuck_speed: 0.1,
            stop_window: 5.0,
            target_lookahead: 20.0,
            lookahead_max: 30.0,
            token_spacing: 3.0,
            sensor_range: 50.0,
            blocking_distance: 15.0,
            time_budget_base: 60.0,
            time_budget_min_speed: 2.0,
            dynamics: DynamicsConfig::default(),
            expert: ExpertConfig::default(),
            pid: PidGains::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("dt", self.dt),
            ("dt_wp", self.dt_wp),
            ("stuck_timeout", self.stuck_timeout),
            ("target_lookahead", self.target_lookahead),
            ("token_spacing", self.token_spacing),
            ("sensor_range", self.sensor_range),
            ("time_budget_min_speed", self.time_budget_min_speed),
        ];
        if let Some((k, v)) = pos.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("sim.{k} = {v} must be positive")));
        }
        if self.dt > 0.1 {
            return Err(Error::Config(format!("sim.dt = {} exceeds 0.1 s", self.dt)));
        }
        let ratio = self.dt_wp / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config("sim.dt_wp must be a whole number of ticks".into()));
        }
        if self.lookahead_max < self.target_lookahead {
            return Err(Error::Config("sim.lookahead_max below target_lookahead".into()));
        }
        Ok(())
    }

    /// Ticks between waypoint-cadence frames.
    pub fn ticks_per_waypoint(&self) -> u64 {
        (self.dt_wp / self.dt).round() as u64
    }

    pub fn time_budget(&self, route: &Route) -> f64 {
        self.time_budget_base + route.total_length / self.time_budget_min_speed
    }
}
