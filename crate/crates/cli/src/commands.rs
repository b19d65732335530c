use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use physdrive::data::{
    few_shot_subset_with_budget, generate_vehicle_dataset, read_dataset, split_dataset, write_dataset, Dataset,
    GenerationSummary,
};
use physdrive::eval::{
    comparison_svg, comparison_table, run_benchmark, run_zero_shot, Agent, BenchmarkReport, EvalContext,
};
use physdrive::policy::{
    self, fine_tune, gradcheck as check_gradients, load_checkpoint, prepare_samples, save_checkpoint, Checkpoint,
    GradcheckReport, PolicyInput, PolicyParams, TrainConfig, TrainHistory, Variant,
};
use physdrive::sim::{
    build_route, bundled_route_specs, expert_action, scene_tokens, step_world, target_point, Backbone, Route,
    RouteSpec, WorldState,
};
use physdrive::vehicle::{builtin_catalogue, flatten_physics, Catalogue, VehiclePhysics};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const DATASET_EXT: &str = "pdds";

fn catalogue(cfg: &RunConfig) -> Result<Catalogue, CliError> {
    Ok(match &cfg.paths.catalogue {
        Some(p) => Catalogue::load(p)?,
        None => builtin_catalogue(),
    })
}

fn route_specs(cfg: &RunConfig) -> Result<Vec<RouteSpec>, CliError> {
    let Some(dir) = &cfg.paths.routes else {
        return Ok(bundled_route_specs()?);
    };
    let entries = std::fs::read_dir(dir).map_err(|e| physdrive::Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no route files in {}", dir.display())));
    }
    Ok(files.iter().map(|p| RouteSpec::load(p)).collect::<physdrive::Result<_>>()?)
}

fn eval_routes(cfg: &RunConfig) -> Result<Vec<Route>, CliError> {
    Ok(route_specs(cfg)?
        .iter()
        .map(|s| build_route(s, cfg.seeds.eval))
        .collect::<physdrive::Result<_>>()?)
}

fn lookup(cat: &Catalogue, ids: &[String]) -> Result<Vec<VehiclePhysics>, CliError> {
    Ok(ids.iter().map(|id| cat.vehicle(id).cloned()).collect::<physdrive::Result<_>>()?)
}

fn all_vehicles(cat: &Catalogue) -> Vec<VehiclePhysics> {
    cat.vehicles.iter().chain(&cat.held_out).cloned().collect()
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| physdrive::Error::io(dir, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| physdrive::Error::io(path, e).into())
}

fn write_config(cfg: &RunConfig, dir: &Path, stem: &str) -> Result<(), CliError> {
    write_text(&dir.join(format!("{stem}.config.toml")), &cfg.to_toml())
}

fn dataset_path(cfg: &RunConfig, vehicle: &str) -> PathBuf {
    cfg.datasets_dir().join(format!("{vehicle}.{DATASET_EXT}"))
}

fn load_dataset(cfg: &RunConfig, cat: &Catalogue, vehicle: &str) -> Result<Dataset, CliError> {
    let path = dataset_path(cfg, vehicle);
    if !path.exists() {
        return Err(CliError::MissingInput {
            path,
            reason: "dataset not found; run gen-data first".into(),
        });
    }
    Ok(read_dataset(&path, cfg.seeds.backbone, &cat.bounds.hash_hex())?)
}

fn checkpoint_path(cfg: &RunConfig, given: Option<&Path>) -> PathBuf {
    given
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.checkpoints_dir().join(format!("{}.ckpt", cfg.train.variant)))
}

fn open_checkpoint(cfg: &RunConfig, cat: &Catalogue, path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::MissingInput {
            path: path.to_path_buf(),
            reason: "checkpoint not found".into(),
        });
    }
    let ck = load_checkpoint(path)?;
    ck.check_compatible(&cat.bounds.hash_hex(), cfg.seeds.backbone)?;
    Ok(ck)
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub vehicle: String,
    pub file: String,
    #[serde(flatten)]
    pub summary: GenerationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub data_seed: u64,
    pub backbone_seed: u64,
    pub bounds_hash: String,
    pub repeats: usize,
    pub routes: Vec<String>,
    pub vehicles: Vec<ManifestEntry>,
}

/// Records every configured vehicle, then writes all files at once so a
/// failed expert leaves no partial output.
pub fn gen_data(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let cat = catalogue(cfg)?;
    let specs = route_specs(cfg)?;
    let vehicles = if cfg.data.vehicles.is_empty() {
        all_vehicles(&cat)
    } else {
        lookup(&cat, &cfg.data.vehicles)?
    };
    let mut outputs = Vec::new();
    for v in &vehicles {
        let (d, summary) = generate_vehicle_dataset(
            v,
            &cat.bounds,
            &specs,
            &cfg.sim,
            &cfg.record,
            cfg.data.repeats,
            cfg.seeds.data,
            cfg.seeds.backbone,
        )?;
        log::info!(
            "{}: {} of {} episodes retained, {} frames",
            v.id,
            summary.retained,
            summary.attempted,
            summary.frames
        );
        outputs.push((v.id.clone(), d, summary));
    }
    let dir = cfg.datasets_dir();
    create_dir(&dir)?;
    let mut entries = Vec::new();
    for (id, d, summary) in outputs {
        let path = dataset_path(cfg, &id);
        write_dataset(&d, &path)?;
        entries.push(ManifestEntry {
            file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            vehicle: id,
            summary,
        });
    }
    let manifest = Manifest {
        data_seed: cfg.seeds.data,
        backbone_seed: cfg.seeds.backbone,
        bounds_hash: cat.bounds.hash_hex(),
        repeats: cfg.data.repeats,
        routes: specs.iter().map(|s| s.id.clone()).collect(),
        vehicles: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&dir.join("manifest.json"), &json)?;
    write_config(cfg, &dir, "gen-data")?;
    Ok(manifest)
}

fn training_ids(cfg: &RunConfig, cat: &Catalogue) -> Vec<String> {
    if !cfg.data.train_vehicles.is_empty() {
        cfg.data.train_vehicles.clone()
    } else if cfg.train.variant == Variant::Naive {
        vec![cat.source_vehicle.clone()]
    } else {
        cat.training_ids()
    }
}

fn write_history(h: &TrainHistory, path: &Path) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| physdrive::Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    h.write_csv(&mut w).map_err(|e| physdrive::Error::io(path, e))?;
    Ok(())
}

/// Trains `cfg.train` and writes `<stem>.ckpt`, `<stem>_loss.csv` and the resolved config.
pub fn train(cfg: &RunConfig, name: Option<&str>) -> Result<PathBuf, CliError> {
    let cat = catalogue(cfg)?;
    let ids = training_ids(cfg, &cat);
    lookup(&cat, &ids)?;
    let parts = ids.iter().map(|id| load_dataset(cfg, &cat, id)).collect::<Result<Vec<_>, _>>()?;
    let data = Dataset::merge(parts)?;
    let (tr, va) = split_dataset(&data, cfg.data.val_fraction, cfg.seeds.split)?;
    let backbone = Backbone::new(cfg.seeds.backbone, cfg.train.arch.d);
    let trs = prepare_samples(&tr, &backbone)?;
    let vas = prepare_samples(&va, &backbone)?;
    log::info!("training {} on {} frames ({} validation)", cfg.train.variant, trs.len(), vas.len());
    let (params, history) = policy::train(&trs, &vas, &cfg.train)?;

    let stem = name.map_or_else(|| cfg.train.variant.to_string(), str::to_string);
    let dir = cfg.checkpoints_dir();
    create_dir(&dir)?;
    let path = dir.join(format!("{stem}.ckpt"));
    let ck = Checkpoint {
        params,
        train_config: cfg.train.clone(),
        bounds_hash: cat.bounds.hash_hex(),
        backbone_seed: cfg.seeds.backbone,
        vehicles: ids,
    };
    save_checkpoint(&ck, &path)?;
    write_history(&history, &dir.join(format!("{stem}_loss.csv")))?;
    write_config(cfg, &dir, &stem)?;
    Ok(path)
}

/// Writes `<input stem>_ft_<vehicle>.ckpt`; the input checkpoint is only read.
pub fn finetune(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<PathBuf, CliError> {
    let cat = catalogue(cfg)?;
    let input = checkpoint_path(cfg, checkpoint);
    let ck = open_checkpoint(cfg, &cat, &input)?;
    let vehicle = if cfg.finetune.vehicle.is_empty() {
        cat.held_out
            .first()
            .map(|v| v.id.clone())
            .ok_or_else(|| CliError::Config("catalogue has no held-out vehicle; set finetune.vehicle".into()))?
    } else {
        cat.vehicle(&cfg.finetune.vehicle)?.id.clone()
    };
    let mut trained_frames = 0;
    for id in &ck.vehicles {
        trained_frames += load_dataset(cfg, &cat, id)?.num_frames();
    }
    let budget = (cfg.finetune.fraction * trained_frames as f64).floor() as usize;
    let few = few_shot_subset_with_budget(&load_dataset(cfg, &cat, &vehicle)?, &vehicle, budget)?;
    if few.num_frames() > budget {
        return Err(CliError::Config(format!(
            "smallest `{vehicle}` episode has {} frames, over the budget of {budget}",
            few.num_frames()
        )));
    }
    let backbone = Backbone::new(ck.backbone_seed, ck.params.arch.d);
    let samples = prepare_samples(&few, &backbone)?;
    let ft = TrainConfig {
        lr: cfg.finetune.lr,
        epochs: cfg.finetune.epochs,
        batch_size: cfg.finetune.batch_size,
        seed: cfg.train.seed,
        ..ck.train_config.clone()
    };
    log::info!("fine-tuning on {} `{vehicle}` frames (budget {budget} of {trained_frames})", samples.len());
    let (params, history) = fine_tune(&ck.params, &samples, &[], &ft)?;

    let dir = cfg.checkpoints_dir();
    create_dir(&dir)?;
    let stem = format!("{}_ft_{vehicle}", stem_of(&input));
    let out = dir.join(format!("{stem}.ckpt"));
    if out.exists() && input.exists() && std::fs::canonicalize(&out).ok() == std::fs::canonicalize(&input).ok() {
        return Err(CliError::Config("fine-tune output would overwrite its input".into()));
    }
    let mut vehicles = ck.vehicles.clone();
    vehicles.push(vehicle);
    let out_ck = Checkpoint {
        params,
        train_config: ft,
        bounds_hash: ck.bounds_hash.clone(),
        backbone_seed: ck.backbone_seed,
        vehicles,
    };
    save_checkpoint(&out_ck, &out)?;
    write_history(&history, &dir.join(format!("{stem}_loss.csv")))?;
    write_config(cfg, &dir, &stem)?;
    Ok(out)
}

fn context(cfg: &RunConfig, cat: &Catalogue) -> EvalContext {
    EvalContext {
        sim: cfg.sim.clone(),
        bounds: cat.bounds.clone(),
        backbone_seed: cfg.seeds.backbone,
        penalties: cfg.eval.penalties,
    }
}

fn finish_report(cfg: &RunConfig, report: &BenchmarkReport, stem: &str) -> Result<(), CliError> {
    let dir = cfg.reports_dir();
    create_dir(&dir)?;
    report.write_all(&dir, stem)?;
    write_config(cfg, &dir, stem)?;
    println!(
        "{stem}: DS {:.2} RC {:.2} IS {:.3} over {} episodes",
        100.0 * report.overall.ds,
        100.0 * report.overall.rc,
        report.overall.is,
        report.overall.episodes
    );
    Ok(())
}

/// Benchmarks a checkpoint; vehicles outside its training set are flagged unseen.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<BenchmarkReport, CliError> {
    let cat = catalogue(cfg)?;
    let path = checkpoint_path(cfg, checkpoint);
    let ck = open_checkpoint(cfg, &cat, &path)?;
    let vehicles = if cfg.eval.vehicles.is_empty() {
        all_vehicles(&cat)
    } else {
        lookup(&cat, &cfg.eval.vehicles)?
    };
    let routes = eval_routes(cfg)?;
    let seeds = BTreeMap::from([
        ("backbone".to_string(), cfg.seeds.backbone),
        ("eval".to_string(), cfg.seeds.eval),
    ]);
    let mut report = run_benchmark(&Agent::from_checkpoint(&ck), &context(cfg, &cat), &vehicles, &routes, seeds)?;
    report.mark_unseen(&ck.vehicles);
    finish_report(cfg, &report, &format!("eval_{}", stem_of(&path)))?;
    Ok(report)
}

pub fn zero_shot(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<BenchmarkReport, CliError> {
    let cat = catalogue(cfg)?;
    let path = checkpoint_path(cfg, checkpoint);
    let ck = open_checkpoint(cfg, &cat, &path)?;
    let routes = eval_routes(cfg)?;
    let mut known = ck.vehicles.clone();
    known.extend(all_vehicles(&cat).into_iter().map(|v| v.id));
    let mut report = run_zero_shot(
        &Agent::from_checkpoint(&ck),
        &context(cfg, &cat),
        cfg.eval.n_sampled,
        &cat.sampling,
        cfg.seeds.sampling,
        &routes,
        &known,
    )?;
    report.seeds.insert("eval".into(), cfg.seeds.eval);
    report.seeds.insert("backbone".into(), cfg.seeds.backbone);
    finish_report(cfg, &report, &format!("zero_shot_{}", stem_of(&path)))?;
    Ok(report)
}

/// Gradient-check inputs from real scenes: the expert drives route `k` for a
/// few seconds and the state is tokenized with the expert plan as label.
fn gradcheck_batch(cfg: &RunConfig, cat: &Catalogue, d: usize) -> Result<Vec<(PolicyInput, policy::WaypointPlan)>, CliError> {
    let routes = eval_routes(cfg)?;
    let backbone = Backbone::new(cfg.seeds.backbone, d);
    let vehicles = &cat.vehicles;
    let mut batch = Vec::new();
    for k in 0..cfg.gradcheck.samples {
        let route = &routes[k % routes.len()];
        let v = &vehicles[k % vehicles.len()];
        let physics = flatten_physics(v, &cat.bounds)?;
        let mut w = WorldState::new(route, v, &cfg.sim);
        for _ in 0..40 * (k + 1) {
            let (_, cmd) = expert_action(&w, route, v, &cfg.sim);
            w = step_world(&w, &cmd, route, v, &cfg.sim)?.0;
        }
        let tokens = scene_tokens(&w, route, v, &backbone, &cfg.sim)?;
        let input = PolicyInput::new(&tokens, &physics, target_point(&w, route, &cfg.sim));
        batch.push((input, expert_action(&w, route, v, &cfg.sim).0));
    }
    Ok(batch)
}

pub fn gradcheck(cfg: &RunConfig, variant: Option<&str>) -> Result<Vec<GradcheckReport>, CliError> {
    let variants = match variant {
        Some(v) => vec![v.parse::<Variant>()?],
        None => Variant::ALL.to_vec(),
    };
    let cat = catalogue(cfg)?;
    let batch = gradcheck_batch(cfg, &cat, cfg.train.arch.d)?;
    let g = &cfg.gradcheck;
    let mut reports = Vec::new();
    for v in variants {
        let params = PolicyParams::init(v, cfg.train.arch, g.seed)?;
        let r = check_gradients(&params, &batch, g.per_group, g.step, g.seed)?;
        let err = r.max_rel_error();
        let verdict = if err < g.tolerance { "pass" } else { "FAIL" };
        println!("gradcheck {v}: max relative error {err:.3e} ({verdict})");
        reports.push(r);
    }
    let dir = cfg.reports_dir();
    create_dir(&dir)?;
    let json = serde_json::to_string_pretty(&reports).expect("gradcheck reports serialize");
    write_text(&dir.join("gradcheck.json"), &json)?;
    write_config(cfg, &dir, "gradcheck")?;
    let worst = reports.iter().map(GradcheckReport::max_rel_error).fold(0.0, f64::max);
    if !(worst < g.tolerance) {
        return Err(CliError::Gradcheck {
            max_rel_error: worst,
            tolerance: g.tolerance,
        });
    }
    Ok(reports)
}

fn variant_rank(r: &BenchmarkReport) -> usize {
    Variant::ALL
        .iter()
        .position(|v| v.name() == r.variant)
        .unwrap_or(Variant::ALL.len())
}

/// Writes `comparison.csv` and `comparison.svg`, one row per report in
/// variant order (full, concat_only, no_phys_encoder, naive).
pub fn report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<String, CliError> {
    let dir = cfg.reports_dir();
    let paths: Vec<PathBuf> = if inputs.is_empty() {
        let entries = std::fs::read_dir(&dir).map_err(|e| CliError::MissingInput {
            path: dir.clone(),
            reason: e.to_string(),
        })?;
        let mut ps: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().unwrap_or_default().to_string_lossy();
                name.starts_with("eval_") && name.ends_with(".json")
            })
            .collect();
        ps.sort();
        ps
    } else {
        inputs.to_vec()
    };
    if paths.is_empty() {
        return Err(CliError::MissingInput {
            path: dir,
            reason: "no evaluation reports to compare".into(),
        });
    }
    let mut reports = paths
        .iter()
        .map(|p| BenchmarkReport::load_json(p))
        .collect::<physdrive::Result<Vec<_>>>()?;
    reports.sort_by_key(variant_rank);
    let table = comparison_table(&reports);
    create_dir(&dir)?;
    write_text(&dir.join("comparison.csv"), &table)?;
    write_text(&dir.join("comparison.svg"), &comparison_svg(&reports))?;
    write_config(cfg, &dir, "report")?;
    print!("{table}");
    Ok(table)
}
