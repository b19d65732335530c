use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use physdrive::eval::{infraction_score, PenaltyTable};
use physdrive::policy::{backward, forward, ArchConfig, PolicyInput, PolicyParams, Variant};
use physdrive::sim::{bundled_routes, expert_action, scene_tokens, step_world, target_point, Backbone, EventKind, SimConfig, WorldState};
use physdrive::vehicle::{builtin_catalogue, flatten_physics, step_dynamics, ControlCommand, DynamicsConfig, VehicleState};
use physdrive::geom::Vec2;

fn simulation(c: &mut Criterion) {
    let cat = builtin_catalogue();
    let v = &cat.vehicles[0];
    let cfg = SimConfig::default();
    let routes = bundled_routes(0).unwrap();
    let r = &routes[0];
    let dcfg = DynamicsConfig::default();
    let s = VehicleState { position: Vec2::ZERO, heading: 0.0, speed: 10.0, rpm: 2500.0, gear: 2 };
    let cmd = ControlCommand::clamped(0.6, 0.05, 0.0);
    c.bench_function("step_dynamics", |b| b.iter(|| step_dynamics(black_box(&s), &cmd, v, &dcfg, 0.05).unwrap()));

    let mut w = WorldState::new(r, v, &cfg);
    for _ in 0..100 {
        let (_, a) = expert_action(&w, r, v, &cfg);
        w = step_world(&w, &a, r, v, &cfg).unwrap().0;
    }
    c.bench_function("step_world", |b| b.iter(|| step_world(black_box(&w), &cmd, r, v, &cfg).unwrap()));
    c.bench_function("expert_action", |b| b.iter(|| expert_action(black_box(&w), r, v, &cfg)));
    let backbone = Backbone::new(7, ArchConfig::desk().d);
    c.bench_function("scene_tokens", |b| b.iter(|| scene_tokens(black_box(&w), r, v, &backbone, &cfg).unwrap()));
}

fn policy(c: &mut Criterion) {
    let cat = builtin_catalogue();
    let v = &cat.vehicles[0];
    let cfg = SimConfig::default();
    let routes = bundled_routes(0).unwrap();
    let r = &routes[0];
    let w = WorldState::new(r, v, &cfg);
    let physics = flatten_physics(v, &cat.bounds).unwrap();
    let (plan, _) = expert_action(&w, r, v, &cfg);
    for arch in [ArchConfig::compact(), ArchConfig::desk()] {
        let backbone = Backbone::new(7, arch.d);
        let tokens = scene_tokens(&w, r, v, &backbone, &cfg).unwrap();
        let input = PolicyInput::new(&tokens, &physics, target_point(&w, r, &cfg));
        for variant in [Variant::Full, Variant::Naive] {
            let p = PolicyParams::init(variant, arch, 1).unwrap();
            let tag = format!("{variant}/d{}", arch.d);
            c.bench_function(&format!("forward/{tag}"), |b| b.iter(|| forward(&p, black_box(&input)).unwrap()));
            c.bench_function(&format!("backward/{tag}"), |b| b.iter(|| backward(&p, black_box(&input), &plan).unwrap()));
        }
    }
}

fn scoring(c: &mut Criterion) {
    let t = PenaltyTable::default();
    let events: Vec<EventKind> = EventKind::ALL.iter().cycle().take(64).copied().collect();
    c.bench_function("infraction_score/64", |b| b.iter(|| infraction_score(black_box(&events), &t)));
}

criterion_group!(benches, simulation, policy, scoring);
criterion_main!(benches);
