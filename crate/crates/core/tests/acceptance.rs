//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Trained models are shared across criteria.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use physdrive::data::{
    encode_dataset, few_shot_subset_with_budget, generate_vehicle_dataset, read_dataset, split_dataset, write_dataset,
    Dataset, RecordOptions,
};
use physdrive::eval::{
    driving_score, infraction_score, route_completion, run_benchmark, run_zero_shot, Agent, BenchmarkReport,
    EvalContext, PenaltyTable,
};
use physdrive::policy::{
    evaluate_loss, fine_tune, gradcheck, prepare_samples, train, ArchConfig, Checkpoint, LrSchedule, PolicyInput,
    PolicyParams, Sample, TrainConfig, Variant,
};
use physdrive::sim::{
    bundled_route_specs, bundled_routes, expert_action, scene_tokens, step_world, target_point, Backbone, EventKind,
    Route, SimConfig, WorldState,
};
use physdrive::vehicle::{builtin_catalogue, flatten_physics, Catalogue, VehiclePhysics};

const DATA_SEED: u64 = 1;
const BACKBONE_SEED: u64 = 7;
const SPLIT_SEED: u64 = 3;
const EVAL_ROUTE_SEED: u64 = 100;
const SAMPLING_SEED: u64 = 9;
const REPEATS: usize = 4;
const FULL_EPOCHS: usize = 10;
const NAIVE_EPOCHS: usize = 80;
const FEW_SHOT_FRACTION: f64 = 0.03;
const FT_LR: f64 = 3e-4;
const FT_EPOCHS: usize = 20;
const N_SAMPLED: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Harness {
    failures: usize,
}

impl Harness {
    fn check(&mut self, id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Duration {
        let t = Instant::now();
        let mut o = f();
        let took = t.elapsed();
        if let Some(limit) = limit {
            if took > limit {
                o.pass = false;
                o.detail.push_str(&format!("; exceeded {limit:?}"));
            }
        }
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] {id}. {name}: {} ({:.1}s)", o.detail, took.as_secs_f64());
        if !o.pass {
            self.failures += 1;
        }
        took
    }
}

struct World {
    cat: Catalogue,
    sim: SimConfig,
    ctx: EvalContext,
    routes: Vec<Route>,
    backbone: Backbone,
    data: BTreeMap<String, Dataset>,
}

impl World {
    fn all_vehicles(&self) -> Vec<VehiclePhysics> {
        self.cat.vehicles.iter().chain(&self.cat.held_out).cloned().collect()
    }

    fn agent(&self, p: &PolicyParams) -> Agent {
        Agent::Policy {
            params: p.clone(),
            bounds_hash: self.cat.bounds.hash_hex(),
            backbone_seed: BACKBONE_SEED,
        }
    }

    fn bench(&self, p: &PolicyParams) -> BenchmarkReport {
        run_benchmark(&self.agent(p), &self.ctx, &self.all_vehicles(), &self.routes, BTreeMap::new()).unwrap()
    }

    fn samples(&self, d: &Dataset) -> (Vec<Sample>, Vec<Sample>) {
        let (tr, va) = split_dataset(d, 0.1, SPLIT_SEED).unwrap();
        (prepare_samples(&tr, &self.backbone).unwrap(), prepare_samples(&va, &self.backbone).unwrap())
    }
}

fn train_config(variant: Variant, epochs: usize) -> TrainConfig {
    TrainConfig {
        variant,
        arch: ArchConfig::compact(),
        lr: 1e-3,
        batch_size: 32,
        epochs,
        schedule: LrSchedule::Cosine,
        ..TrainConfig::default()
    }
}

fn ds(r: &BenchmarkReport, id: &str) -> f64 {
    100.0 * r.vehicle(id).unwrap().averages.ds
}

fn mean_ds(r: &BenchmarkReport, ids: &[&str]) -> f64 {
    100.0 * r.mean_ds_over(ids).unwrap()
}

/// Independent product over event counts, written without the table lookup.
fn brute_is(counts: &[u32; 5]) -> f64 {
    let p = [0.5, 0.6, 0.65, 0.7, 0.8];
    let mut s = 1.0;
    for (c, p) in counts.iter().zip(p) {
        for _ in 0..*c {
            s *= p;
        }
    }
    s
}

fn scoring() -> Outcome {
    let t = PenaltyTable::default();
    let kinds = PenaltyTable::PENALIZED;
    let mut worst = 0.0f64;
    let mut combos = 0;
    for code in 0..243u32 {
        let mut counts = [0u32; 5];
        let mut c = code;
        for n in counts.iter_mut() {
            *n = c % 3;
            c /= 3;
        }
        let mut events = vec![EventKind::RouteComplete];
        for (k, n) in kinds.iter().zip(counts) {
            events.extend(std::iter::repeat_n(*k, n as usize));
        }
        worst = worst.max((infraction_score(&events, &t) - brute_is(&counts)).abs());
        combos += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst_rc = 0.0f64;
    let mut worst_ds = 0.0f64;
    for _ in 0..1000 {
        let total: f64 = rng.random_range(1.0..2000.0);
        let done = total * rng.random::<f64>();
        let is: f64 = rng.random_range(1e-4..=1.0);
        let rc = route_completion(done, total).unwrap();
        worst_rc = worst_rc.max((rc - done / total).abs());
        worst_ds = worst_ds.max((driving_score(rc, is).unwrap() - (done / total) * is).abs());
    }
    let pass = combos == 243 && worst <= 1e-12 && worst_rc <= 1e-12 && worst_ds <= 1e-12;
    Outcome::new(pass, format!("{combos} IS combos max err {worst:.1e}, RC {worst_rc:.1e}, DS {worst_ds:.1e}"))
}

/// Real scenes from expert rollouts on different vehicles and routes.
fn scene_batch(w: &World, arch: ArchConfig, n: usize) -> Vec<(PolicyInput, [physdrive::geom::Vec2; 8])> {
    let backbone = Backbone::new(BACKBONE_SEED, arch.d);
    let mut out = Vec::new();
    for k in 0..n {
        let route = &w.routes[k % w.routes.len()];
        let v = &w.cat.vehicles[k % w.cat.vehicles.len()];
        let physics = flatten_physics(v, &w.cat.bounds).unwrap();
        let mut s = WorldState::new(route, v, &w.sim);
        for _ in 0..40 * (k + 1) {
            let (_, cmd) = expert_action(&s, route, v, &w.sim);
            s = step_world(&s, &cmd, route, v, &w.sim).unwrap().0;
        }
        let tokens = scene_tokens(&s, route, v, &backbone, &w.sim).unwrap();
        let input = PolicyInput::new(&tokens, &physics, target_point(&s, route, &w.sim));
        out.push((input, expert_action(&s, route, v, &w.sim).0));
    }
    out
}

fn gradients(w: &World) -> Outcome {
    let arch = ArchConfig::desk();
    let batch = scene_batch(w, arch, 2);
    let mut notes = Vec::new();
    let mut pass = true;
    for v in Variant::ALL {
        let p = PolicyParams::init(v, arch, 11).unwrap();
        let r = gradcheck(&p, &batch, 200, 1e-5, 5).unwrap();
        let sizes_ok = r
            .groups
            .iter()
            .all(|g| g.checked >= 200 || g.checked == p.layout.group_indices(g.group).len());
        let err = r.max_rel_error();
        pass &= sizes_ok && err < 1e-4;
        notes.push(format!("{v} {err:.1e}"));
    }
    Outcome::new(pass, notes.join(", "))
}

fn expert(w: &World) -> Outcome {
    let r = run_benchmark(&Agent::Expert, &w.ctx, &w.all_vehicles(), &w.routes, BTreeMap::new()).unwrap();
    let bad: Vec<String> = r
        .results
        .iter()
        .filter(|x| x.rc != 1.0 || x.is != 1.0)
        .map(|x| format!("{}/{}", x.vehicle_id, x.route_id))
        .collect();
    Outcome::new(
        bad.is_empty(),
        format!("{} episodes, imperfect: {:?}", r.results.len(), bad),
    )
}

fn round_trip_and_determinism(w: &World) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let hash = w.cat.bounds.hash_hex();
    let d = &w.data["sedan"];
    let path = dir.path().join("sedan.pdds");
    write_dataset(d, &path).unwrap();
    let back = read_dataset(&path, BACKBONE_SEED, &hash).unwrap();
    let data_ok = &back == d && encode_dataset(&back).unwrap() == std::fs::read(&path).unwrap();

    let specs = bundled_route_specs().unwrap();
    let v = w.cat.vehicle("compact").unwrap();
    let regen = |_: ()| {
        generate_vehicle_dataset(v, &w.cat.bounds, &specs, &w.sim, &RecordOptions::default(), 2, DATA_SEED, BACKBONE_SEED)
            .unwrap()
            .0
    };
    let gen_ok = encode_dataset(&regen(())).unwrap() == encode_dataset(&regen(())).unwrap();

    let (tr, va) = w.samples(&regen(()));
    let run = || {
        let cfg = train_config(Variant::Full, 2);
        let (p, _) = train(&tr, &va, &cfg).unwrap();
        let ck = Checkpoint {
            params: p.clone(),
            train_config: cfg,
            bounds_hash: hash.clone(),
            backbone_seed: BACKBONE_SEED,
            vehicles: vec!["compact".into()],
        };
        let report = run_benchmark(&w.agent(&p), &w.ctx, &w.cat.vehicles[..2], &w.routes, BTreeMap::new()).unwrap();
        let rp = dir.path().join("r.json");
        report.save_json(&rp).unwrap();
        (ck.encode().unwrap(), std::fs::read(&rp).unwrap())
    };
    let (c1, r1) = run();
    let (c2, r2) = run();
    let pass = data_ok && gen_ok && c1 == c2 && r1 == r2;
    Outcome::new(
        pass,
        format!(
            "dataset round trip {data_ok}, regeneration {gen_ok}, checkpoint {}, report {}",
            c1 == c2,
            r1 == r2
        ),
    )
}

fn overfit(w: &World) -> Outcome {
    let d = &w.data["sedan"];
    let frame = d.episodes[0].frames[60].clone();
    let mut one = Dataset::new(d.backbone_seed, d.bounds_hash.clone());
    let mut ep = d.episodes[0].clone();
    ep.frames = vec![frame];
    one.episodes.push(ep);
    let set = prepare_samples(&one, &w.backbone).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 1,
        lr: 5e-3,
        keep_best: false,
        ..train_config(Variant::Full, 500)
    };
    let (p, h) = train(&set, &[], &cfg).unwrap();
    let steps = h.epochs.last().map_or(0, |e| e.steps);
    let loss = evaluate_loss(&p, &set).unwrap();
    Outcome::new(steps <= 500 && loss < 1e-3, format!("L1 {loss:.2e} after {steps} steps"))
}

fn main() -> ExitCode {
    let mut h = Harness { failures: 0 };
    let cat = builtin_catalogue();
    let sim = SimConfig::default();
    let world = World {
        ctx: EvalContext::new(sim.clone(), cat.bounds.clone(), BACKBONE_SEED),
        routes: bundled_routes(EVAL_ROUTE_SEED).unwrap(),
        backbone: Backbone::new(BACKBONE_SEED, ArchConfig::compact().d),
        data: BTreeMap::new(),
        cat,
        sim,
    };

    h.check(1, "scoring matches brute force", Some(Duration::from_secs(1)), scoring);
    h.check(2, "analytic gradients match central differences", Some(Duration::from_secs(60)), || {
        gradients(&world)
    });
    h.check(3, "expert completes every route cleanly", Some(Duration::from_secs(300)), || expert(&world));

    let mut world = world;
    let specs = bundled_route_specs().unwrap();
    let gen_start = Instant::now();
    for v in world.all_vehicles() {
        let (d, _) = generate_vehicle_dataset(
            &v,
            &world.cat.bounds,
            &specs,
            &world.sim,
            &RecordOptions::default(),
            REPEATS,
            DATA_SEED,
            BACKBONE_SEED,
        )
        .unwrap();
        world.data.insert(v.id.clone(), d);
    }
    let gen_time = gen_start.elapsed();
    let w = &world;


    let all_ids: Vec<String> = w.all_vehicles().iter().map(|v| v.id.clone()).collect();
    let all: Vec<&str> = all_ids.iter().map(String::as_str).collect();
    let source = w.cat.source_vehicle.clone();

    let mut naive = None;
    h.check(4, "naive policy degrades away from its source vehicle", Some(Duration::from_secs(1800)), || {
        let t = Instant::now();
        let (tr, va) = w.samples(&w.data[&source]);
        let (p, _) = train(&tr, &va, &train_config(Variant::Naive, NAIVE_EPOCHS)).unwrap();
        let r = w.bench(&p);
        let others: Vec<&str> = all.iter().copied().filter(|v| *v != source).collect();
        let (src, rest) = (ds(&r, &source), mean_ds(&r, &others));
        naive = Some((p, r));
        Outcome::new(
            others.len() >= 5 && src - rest >= 10.0,
            format!(
                "source DS {src:.1}, mean over {} others {rest:.1} (gap {:.1}; data {:.0}s, train+eval {:.0}s)",
                others.len(),
                src - rest,
                gen_time.as_secs_f64(),
                t.elapsed().as_secs_f64()
            ),
        )
    });
    let (naive_p, naive_r) = naive.expect("naive trained");

    let train_ids = w.cat.training_ids();
    let train_data =
        Dataset::merge(train_ids.iter().map(|id| w.data[id].clone()).collect()).unwrap();
    let (tr, va) = w.samples(&train_data);
    let trained: Vec<(PolicyParams, BenchmarkReport)> = [Variant::Full, Variant::ConcatOnly, Variant::NoPhysEncoder]
        .into_iter()
        .map(|v| {
            let (p, _) = train(&tr, &va, &train_config(v, FULL_EPOCHS)).unwrap();
            let r = w.bench(&p);
            (p, r)
        })
        .collect();
    let (full_p, full_r) = &trained[0];

    h.check(5, "full variant beats naive and both ablations", None, || {
        let f = mean_ds(full_r, &all);
        let n = mean_ds(&naive_r, &all);
        let c = mean_ds(&trained[1].1, &all);
        let e = mean_ds(&trained[2].1, &all);
        Outcome::new(
            train_ids.len() >= 5 && f > n && f >= c && f >= e,
            format!("mean DS over {} vehicles: full {f:.1}, concat_only {c:.1}, no_phys_encoder {e:.1}, naive {n:.1}", all.len()),
        )
    });

    h.check(6, "zero-shot on sampled vehicles", None, || {
        let z = |p: &PolicyParams| {
            let r = run_zero_shot(&w.agent(p), &w.ctx, N_SAMPLED, &w.cat.sampling, SAMPLING_SEED, &w.routes, &all_ids)
                .unwrap();
            (100.0 * r.overall.ds, r.vehicles.len())
        };
        let ((f, nf), (n, _)) = (z(full_p), z(&naive_p));
        Outcome::new(nf >= 5 && f > n, format!("{nf} sampled vehicles: full {f:.1}, naive {n:.1}"))
    });

    h.check(7, "few-shot adaptation helps the weakest vehicle", None, || {
        let outlier = all
            .iter()
            .copied()
            .min_by(|a, b| ds(full_r, a).total_cmp(&ds(full_r, b)))
            .unwrap()
            .to_string();
        let budget = (FEW_SHOT_FRACTION * tr.len() as f64).floor() as usize;
        let few = few_shot_subset_with_budget(&w.data[&outlier], &outlier, budget).unwrap();
        let fs = prepare_samples(&few, &w.backbone).unwrap();
        let cfg = TrainConfig {
            lr: FT_LR,
            epochs: FT_EPOCHS,
            keep_best: false,
            ..train_config(Variant::Full, FT_EPOCHS)
        };
        let (q, _) = fine_tune(full_p, &fs, &[], &cfg).unwrap();
        let before = ds(full_r, &outlier);
        let after = ds(&w.bench(&q), &outlier);
        Outcome::new(
            fs.len() <= budget && after > before,
            format!("{outlier}: {} frames (budget {budget}), DS {before:.1} -> {after:.1}", fs.len()),
        )
    });

    h.check(8, "datasets round trip and runs are reproducible", None, || round_trip_and_determinism(w));
    h.check(9, "full variant overfits a single frame", Some(Duration::from_secs(10)), || overfit(w));

    if h.failures == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", h.failures);
        ExitCode::FAILURE
    }
}
