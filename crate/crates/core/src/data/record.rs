use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Episode, EpisodeFrame};
use crate::error::{Error, Result};
use crate::sim::{
    build_route, expert_action, scene_features, step_world, target_point, Route, RouteSpec,
    SimConfig, SimEvent, WorldState,
};
use crate::vehicle::{flatten_physics, ControlCommand, NormalizationBounds, VehiclePhysics, VehicleState};

/// Perturbations applied to the executed expert command during collection.
/// Labels always come from the unperturbed expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordOptions {
    pub lateral_jitter: f64,
    pub heading_jitter: f64,
    /// Stationary std of the Ornstein-Uhlenbeck steering noise.
    pub steer_noise: f64,
    /// Stationary std of the OU pedal noise (positive = throttle).
    pub pedal_noise: f64,
    /// OU correlation time, s.
    pub noise_tau: f64,
    /// Expected brake pulses per second of driving. Pulses push the vehicle
    /// into slow states the clean expert never visits.
    pub brake_pulse_rate: f64,
    pub brake_pulse_duration: f64,
    pub brake_pulse_strength: f64,
    /// Chance that the executor halts short of a stop line, leaving the
    /// expert to recover from standstill.
    pub early_stop_prob: f64,
    /// Extra distance before the expert's own stopping point, m (uniform).
    pub early_stop_margin: (f64, f64),
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            lateral_jitter: 0.4,
            heading_jitter: 0.04,
            steer_noise: 0.04,
            pedal_noise: 0.15,
            noise_tau: 1.0,
            brake_pulse_rate: 0.05,
            brake_pulse_duration: 1.5,
            brake_pulse_strength: 0.6,
            early_stop_prob: 0.5,
            early_stop_margin: (2.0, 10.0),
        }
    }
}

impl RecordOptions {
    pub fn clean() -> Self {
        Self {
            lateral_jitter: 0.0,
            heading_jitter: 0.0,
            steer_noise: 0.0,
            pedal_noise: 0.0,
            noise_tau: 1.0,
            brake_pulse_rate: 0.0,
            brake_pulse_duration: 0.0,
            brake_pulse_strength: 0.0,
            early_stop_prob: 0.0,
            early_stop_margin: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// `None` when the episode was discarded.
    pub episode: Option<Episode>,
    pub events: Vec<SimEvent>,
    /// Why the episode was discarded, if it was.
    pub discard_reason: Option<String>,
    pub ticks: u64,
}

struct Ou {
    x: f64,
    decay: f64,
    kick: f64,
}

impl Ou {
    fn new(std: f64, tau: f64, dt: f64) -> Self {
        let decay = (-dt / tau).exp();
        Self {
            x: 0.0,
            decay,
            kick: std * (1.0 - decay * decay).sqrt(),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, n: &Normal<f64>) -> f64 {
        self.x = self.decay * self.x + self.kick * n.sample(rng);
        self.x
    }
}

/// Runs the expert on one route and records a frame every waypoint period.
/// Episodes with any infraction, or that run out of time, are discarded.
pub fn record_episode(
    route: &Route,
    route_seed: u64,
    p: &VehiclePhysics,
    bounds: &NormalizationBounds,
    cfg: &SimConfig,
    opts: &RecordOptions,
    noise_seed: u64,
) -> Result<EpisodeOutcome> {
    let physics = flatten_physics(p, bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let sym = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");

    let (_, heading) = route.start_pose();
    let lat = opts.lateral_jitter * sym.sample(&mut rng);
    let head = opts.heading_jitter * sym.sample(&mut rng);
    let pos = route.frenet_to_world(0.0, lat);
    let ego = VehicleState::at_rest(pos, heading + head, &cfg.dynamics);
    let mut w = WorldState::with_ego(route, p, ego);

    let mut steer_ou = Ou::new(opts.steer_noise, opts.noise_tau, cfg.dt);
    let mut pedal_ou = Ou::new(opts.pedal_noise, opts.noise_tau, cfg.dt);
    let period = cfg.ticks_per_waypoint();
    let budget = (cfg.time_budget(route) / cfg.dt).ceil() as u64;

    let pulse_p = (opts.brake_pulse_rate * cfg.dt).clamp(0.0, 1.0);
    let pulse_ticks = (opts.brake_pulse_duration / cfg.dt).round() as u64;
    let mut pulse_left = 0u64;

    // Per stop line: the front-bumper distance at which to brake early, if any.
    let mut early: Vec<Option<f64>> = route
        .stops
        .iter()
        .map(|_| {
            let pick = opts.early_stop_prob > 0.0 && rng.random_bool(opts.early_stop_prob.min(1.0));
            let (lo, hi) = opts.early_stop_margin;
            pick.then(|| lo + (hi - lo) * rng.random::<f64>())
        })
        .collect();
    let mut halting = false;

    let mut frames = Vec::new();
    let mut events = Vec::new();
    while w.active && w.tick < budget {
        let (wps, cmd) = expert_action(&w, route, p, cfg);
        if w.tick.is_multiple_of(period) {
            frames.push(EpisodeFrame {
                tick: w.tick,
                features: scene_features(&w, route, p, cfg)?,
                physics: physics.clone(),
                target_point: target_point(&w, route, cfg),
                waypoints: wps,
                ego: w.ego,
            });
        }
        let ds = steer_ou.step(&mut rng, &unit);
        let dp = pedal_ou.step(&mut rng, &unit);
        // Pedal noise only perturbs the throttle so braking stays intact.
        let throttle = if cmd.brake > 0.0 { 0.0 } else { cmd.throttle + dp };
        if pulse_left == 0 && pulse_p > 0.0 && rng.random_bool(pulse_p) {
            pulse_left = pulse_ticks;
        }
        let front = w.front_arc(p);
        let v = w.ego.speed;
        for (i, &at) in route.stops.iter().enumerate() {
            if let Some(margin) = early[i] {
                let gap = at - front;
                // Stopping distance at a comfortable 3 m/s^2 plus the margin.
                if !w.stops_cleared[i] && gap > 0.0 && gap <= margin + v * v / 6.0 {
                    halting = true;
                    early[i] = None;
                }
            }
        }
        if halting && v < 0.05 {
            halting = false;
        }
        let cmd = if halting {
            ControlCommand::clamped(0.0, cmd.steer + ds, 1.0)
        } else if pulse_left > 0 {
            pulse_left -= 1;
            ControlCommand::clamped(0.0, cmd.steer + ds, cmd.brake.max(opts.brake_pulse_strength))
        } else {
            ControlCommand::clamped(throttle, cmd.steer + ds, cmd.brake)
        };
        let (n, ev) = step_world(&w, &cmd, route, p, cfg)?;
        events.extend(ev);
        w = n;
    }

    let infraction = events.iter().find(|e| e.kind.is_infraction());
    let discard_reason = match infraction {
        Some(e) => Some(e.kind.name().to_string()),
        None if w.active => Some("time_budget".to_string()),
        None => None,
    };
    let episode = discard_reason.is_none().then(|| Episode {
        vehicle_id: p.id.clone(),
        route_id: route.id.clone(),
        route_seed,
        noise_seed,
        frames,
    });
    Ok(EpisodeOutcome {
        episode,
        events,
        discard_reason,
        ticks: w.tick,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub attempted: usize,
    pub retained: usize,
    pub discarded: usize,
    pub discard_reasons: BTreeMap<String, usize>,
    pub frames: usize,
}

/// Deterministic seed mixing (splitmix64 finalizer over the parts).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Records `repeats` passes over every route for one vehicle. Pass 0 is
/// noise-free; later passes use `opts`. Episodes are ordered pass-major so
/// the first episodes cover distinct routes. A discarded noise-free episode
/// means the expert itself failed, which aborts generation.
#[allow(clippy::too_many_arguments)]
pub fn generate_vehicle_dataset(
    p: &VehiclePhysics,
    bounds: &NormalizationBounds,
    routes: &[RouteSpec],
    cfg: &SimConfig,
    opts: &RecordOptions,
    repeats: usize,
    data_seed: u64,
    backbone_seed: u64,
) -> Result<(Dataset, GenerationSummary)> {
    let jobs: Vec<(usize, usize)> = (0..repeats)
        .flat_map(|rep| (0..routes.len()).map(move |ri| (rep, ri)))
        .collect();
    let clean = RecordOptions::clean();
    let outcomes: Vec<Result<EpisodeOutcome>> = jobs
        .par_iter()
        .map(|&(rep, ri)| {
            let route_seed = derive_seed(data_seed, &[1, rep as u64, ri as u64]);
            let noise_seed = derive_seed(data_seed, &[2, rep as u64, ri as u64]);
            let route = build_route(&routes[ri], route_seed)?;
            let o = if rep == 0 { &clean } else { opts };
            record_episode(&route, route_seed, p, bounds, cfg, o, noise_seed)
        })
        .collect();

    let mut d = Dataset::new(backbone_seed, bounds.hash_hex());
    let mut s = GenerationSummary::default();
    for (o, &(rep, ri)) in outcomes.into_iter().zip(&jobs) {
        let o = o?;
        if rep == 0 {
            if let Some(reason) = &o.discard_reason {
                return Err(Error::Generation(format!(
                    "expert failed on `{}` with `{}`: {reason}",
                    routes[ri].id, p.id
                )));
            }
        }
        s.attempted += 1;
        match o.episode {
            Some(ep) => {
                s.retained += 1;
                s.frames += ep.frames.len();
                d.episodes.push(ep);
            }
            None => {
                s.discarded += 1;
                let reason = o.discard_reason.unwrap_or_default();
                log::warn!("discarded episode for `{}`: {reason}", p.id);
                *s.discard_reasons.entry(reason).or_insert(0) += 1;
            }
        }
    }
    Ok((d, s))
}
