use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::policy::{forward, Checkpoint, PolicyInput, PolicyParams, WaypointPlan};
use crate::sim::{
    expert_action, scene_tokens, step_world, target_point, Backbone, PidController, Route, SimConfig, SimEvent,
    WorldState, N_TARGET,
};
use crate::vehicle::{flatten_physics, sample_vehicle, NormalizationBounds, SamplingRanges, VehiclePhysics};

use super::report::BenchmarkReport;
use super::score::{driving_score, infraction_score, route_completion, PenaltyTable};

/// Who produces waypoints in the closed loop.
#[derive(Debug, Clone)]
pub enum Agent {
    Policy {
        params: PolicyParams,
        bounds_hash: String,
        backbone_seed: u64,
    },
    /// Rule-based expert waypoints, tracked by the same PID as the policy.
    Expert,
    /// A constant plan, for degenerate-policy checks.
    Fixed(WaypointPlan),
}

impl Agent {
    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        Agent::Policy {
            params: ck.params.clone(),
            bounds_hash: ck.bounds_hash.clone(),
            backbone_seed: ck.backbone_seed,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Agent::Policy { params, .. } => params.variant.to_string(),
            Agent::Expert => "expert".into(),
            Agent::Fixed(_) => "fixed".into(),
        }
    }

    fn check(&self, ctx: &EvalContext) -> Result<()> {
        if let Agent::Policy {
            bounds_hash,
            backbone_seed,
            ..
        } = self
        {
            let expected = ctx.bounds.hash_hex();
            if *bounds_hash != expected {
                return Err(Error::Compatibility(format!(
                    "policy trained with bounds hash {bounds_hash}, evaluation uses {expected}"
                )));
            }
            if *backbone_seed != ctx.backbone_seed {
                return Err(Error::Compatibility(format!(
                    "policy trained with backbone seed {backbone_seed}, evaluation uses {}",
                    ctx.backbone_seed
                )));
            }
        }
        Ok(())
    }
}

/// Fixed settings shared by every episode of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalContext {
    pub sim: SimConfig,
    pub bounds: NormalizationBounds,
    pub backbone_seed: u64,
    pub penalties: PenaltyTable,
}

impl EvalContext {
    pub fn new(sim: SimConfig, bounds: NormalizationBounds, backbone_seed: u64) -> Self {
        Self {
            sim,
            bounds,
            backbone_seed,
            penalties: PenaltyTable::default(),
        }
    }

    /// Hex sha256 of the serialized context plus the agent label.
    pub fn config_hash(&self, agent: &Agent) -> String {
        let json = serde_json::to_string(self).expect("context serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.update(agent.label().as_bytes());
        if let Agent::Policy { params, .. } = agent {
            for v in &params.values {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResult {
    pub vehicle_id: String,
    pub route_id: String,
    /// True when the vehicle was not part of the agent's training set.
    pub unseen: bool,
    pub l_complete: f64,
    pub l_total: f64,
    pub events: Vec<SimEvent>,
    pub rc: f64,
    pub is: f64,
    pub ds: f64,
    /// Name of the terminal event, or `timeout`.
    pub termination: String,
    pub ticks: u64,
}

/// Drives one vehicle along one route until a terminal event or the time budget.
pub fn run_episode(agent: &Agent, ctx: &EvalContext, vehicle: &VehiclePhysics, route: &Route) -> Result<RouteResult> {
    agent.check(ctx)?;
    let cfg = &ctx.sim;
    let policy = match agent {
        Agent::Policy { params, .. } => Some((
            params,
            Backbone::new(ctx.backbone_seed, params.arch.d),
            flatten_physics(vehicle, &ctx.bounds)?,
        )),
        _ => None,
    };
    let mut pid = PidController::new(cfg.pid.clone(), cfg.dt, cfg.dt_wp);
    let budget = (cfg.time_budget(route) / cfg.dt).ceil() as u64;
    let mut w = WorldState::new(route, vehicle, cfg);
    let mut events = Vec::new();
    while w.active && w.tick < budget {
        let plan = match (agent, &policy) {
            (Agent::Policy { .. }, Some((params, backbone, physics))) => {
                let tokens = scene_tokens(&w, route, vehicle, backbone, cfg)?;
                let input = PolicyInput::new(&tokens, physics, target_point(&w, route, cfg));
                forward(params, &input)?
            }
            (Agent::Fixed(plan), _) => *plan,
            _ => expert_action(&w, route, vehicle, cfg).0,
        };
        let cmd = pid.control(&plan, &w.ego);
        let (next, ev) = step_world(&w, &cmd, route, vehicle, cfg)?;
        events.extend(ev);
        w = next;
    }
    let kinds: Vec<_> = events.iter().map(|e| e.kind).collect();
    let is = infraction_score(&kinds, &ctx.penalties);
    let rc = route_completion(w.progress, route.total_length)?;
    Ok(RouteResult {
        vehicle_id: vehicle.id.clone(),
        route_id: route.id.clone(),
        unseen: false,
        l_complete: w.progress,
        l_total: route.total_length,
        events,
        rc,
        is,
        ds: driving_score(rc, is)?,
        termination: w.termination.map_or("timeout", |k| k.name()).to_string(),
        ticks: w.tick,
    })
}

/// Every vehicle on every route. Episodes may run in parallel; results keep
/// vehicle-major input order.
pub fn run_benchmark(
    agent: &Agent,
    ctx: &EvalContext,
    vehicles: &[VehiclePhysics],
    routes: &[Route],
    seeds: BTreeMap<String, u64>,
) -> Result<BenchmarkReport> {
    if vehicles.is_empty() || routes.is_empty() {
        return Err(Error::Config("benchmark needs at least one vehicle and one route".into()));
    }
    agent.check(ctx)?;
    let pairs: Vec<(&VehiclePhysics, &Route)> =
        vehicles.iter().flat_map(|v| routes.iter().map(move |r| (v, r))).collect();
    let results = pairs
        .par_iter()
        .map(|(v, r)| {
            run_episode(agent, ctx, v, r).map_err(|e| Error::Episode {
                vehicle: v.id.clone(),
                route: r.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport::new(agent.label(), seeds, ctx.config_hash(agent), results))
}

/// Samples `n_sampled` vehicles and benchmarks them; all are flagged unseen.
/// Fails if a sampled id collides with `training_ids`.
pub fn run_zero_shot(
    agent: &Agent,
    ctx: &EvalContext,
    n_sampled: usize,
    ranges: &SamplingRanges,
    sampling_seed: u64,
    routes: &[Route],
    training_ids: &[String],
) -> Result<BenchmarkReport> {
    let vehicles = sample_vehicles(n_sampled, ranges, sampling_seed)?;
    let train: BTreeSet<&str> = training_ids.iter().map(String::as_str).collect();
    if let Some(v) = vehicles.iter().find(|v| train.contains(v.id.as_str())) {
        return Err(Error::Protocol(format!("sampled vehicle `{}` is a training vehicle", v.id)));
    }
    let seeds = BTreeMap::from([("sampling".to_string(), sampling_seed)]);
    let mut report = run_benchmark(agent, ctx, &vehicles, routes, seeds)?;
    report.mark_unseen(&[]);
    Ok(report)
}

/// Deterministic set of sampled vehicles with distinct ids.
pub fn sample_vehicles(n: usize, ranges: &SamplingRanges, seed: u64) -> Result<Vec<VehiclePhysics>> {
    if n == 0 {
        return Err(Error::Config("zero-shot needs at least one sampled vehicle".into()));
    }
    (0..n as u64).map(|i| sample_vehicle(derive_seed(seed, &[i]), ranges)).collect()
}

/// All-origin plan: the PID reads it as a stop request.
pub fn zero_plan() -> WaypointPlan {
    [Vec2::ZERO; N_TARGET]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ArchConfig, Variant};
    use crate::sim::{bundled_routes, EventKind};
    use crate::vehicle::builtin_catalogue;

    fn ctx() -> EvalContext {
        EvalContext::new(SimConfig::default(), NormalizationBounds::default(), 11)
    }

    fn policy(seed: u64) -> Agent {
        Agent::Policy {
            params: PolicyParams::init(Variant::Full, ArchConfig::compact(), seed).unwrap(),
            bounds_hash: NormalizationBounds::default().hash_hex(),
            backbone_seed: 11,
        }
    }

    #[test]
    fn expert_completes_a_route_cleanly() {
        let cat = builtin_catalogue();
        let route = &bundled_routes(0).unwrap()[0];
        let r = run_episode(&Agent::Expert, &ctx(), &cat.vehicles[0], route).unwrap();
        assert_eq!((r.rc, r.is, r.ds), (1.0, 1.0, 1.0));
        assert_eq!(r.termination, "route_complete");
    }

    #[test]
    fn zero_plan_gets_stuck() {
        let cat = builtin_catalogue();
        let route = &bundled_routes(0).unwrap()[1];
        let r = run_episode(&Agent::Fixed(zero_plan()), &ctx(), &cat.vehicles[0], route).unwrap();
        assert_eq!(r.termination, EventKind::Stuck.name());
        assert!(r.rc < 1.0);
        assert!(r.l_complete < 1.0);
    }

    #[test]
    fn policy_episodes_are_deterministic() {
        let cat = builtin_catalogue();
        let route = &bundled_routes(3).unwrap()[2];
        let a = run_episode(&policy(1), &ctx(), &cat.vehicles[1], route).unwrap();
        let b = run_episode(&policy(1), &ctx(), &cat.vehicles[1], route).unwrap();
        assert_eq!(a, b);
        assert!((a.ds - a.rc * a.is).abs() < 1e-12);
        assert!((a.rc - a.l_complete / a.l_total).abs() < 1e-12);
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let cat = builtin_catalogue();
        let route = &bundled_routes(0).unwrap()[0];
        let mut c = ctx();
        c.backbone_seed = 12;
        let err = run_episode(&policy(1), &c, &cat.vehicles[0], route).unwrap_err();
        assert!(err.is_compatibility());
        c = ctx();
        c.bounds.mass.max += 1.0;
        assert!(run_benchmark(&policy(1), &c, &cat.vehicles[..1], std::slice::from_ref(route), BTreeMap::new())
            .unwrap_err()
            .is_compatibility());
    }

    #[test]
    fn benchmark_shape_and_aggregates() {
        let cat = builtin_catalogue();
        let routes: Vec<Route> = bundled_routes(0).unwrap().into_iter().take(2).collect();
        let vehicles = &cat.vehicles[..3];
        let agent = Agent::Fixed(zero_plan());
        let rep = run_benchmark(&agent, &ctx(), vehicles, &routes, BTreeMap::new()).unwrap();
        assert_eq!(rep.results.len(), 6);
        assert_eq!(rep.to_csv().lines().count(), 7);
        let mean = rep.results.iter().map(|r| r.rc).sum::<f64>() / 6.0;
        assert!((rep.overall.rc - mean).abs() < 1e-12);

        let mut rev = vehicles.to_vec();
        rev.reverse();
        let shuffled = run_benchmark(&agent, &ctx(), &rev, &routes, BTreeMap::new()).unwrap();
        assert!((shuffled.overall.ds - rep.overall.ds).abs() < 1e-12);
        assert!((shuffled.overall.rc - rep.overall.rc).abs() < 1e-12);
        for v in &rep.vehicles {
            assert_eq!(shuffled.vehicle(&v.vehicle_id).unwrap().averages, v.averages);
        }

        let single = run_benchmark(&agent, &ctx(), &vehicles[..1], &routes[..1], BTreeMap::new()).unwrap();
        assert_eq!(single.overall.ds, single.results[0].ds);
        assert_eq!(single.vehicles[0].averages.rc, single.results[0].rc);
    }

    #[test]
    fn zero_shot_flags_unseen_and_rejects_overlap() {
        let cat = builtin_catalogue();
        let routes: Vec<Route> = bundled_routes(0).unwrap().into_iter().take(1).collect();
        let agent = Agent::Fixed(zero_plan());
        let rep = run_zero_shot(&agent, &ctx(), 2, &cat.sampling, 5, &routes, &cat.training_ids()).unwrap();
        assert!(rep.vehicles.iter().all(|v| v.unseen));
        assert_eq!(rep.vehicles.len(), 2);
        let again = run_zero_shot(&agent, &ctx(), 2, &cat.sampling, 5, &routes, &cat.training_ids()).unwrap();
        assert_eq!(rep, again);

        let ids: Vec<String> = sample_vehicles(2, &cat.sampling, 5).unwrap().into_iter().map(|v| v.id).collect();
        let err = run_zero_shot(&agent, &ctx(), 2, &cat.sampling, 5, &routes, &ids).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }
}
