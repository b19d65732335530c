use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use physdrive::eval::BenchmarkReport;
use physdrive_cli::{commands, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_physdrive");

fn routes_dir(root: &Path) -> PathBuf {
    let dir = root.join("routes");
    std::fs::create_dir_all(&dir).unwrap();
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/routes");
    for name in ["avenue.toml", "crossroads.toml"] {
        std::fs::copy(bundled.join(name), dir.join(name)).unwrap();
    }
    dir
}

fn small_config(root: &Path, out: &str) -> RunConfig {
    let routes = routes_dir(root);
    let text = format!(
        r#"
out_dir = {out:?}
preset = "compact"
[paths]
routes = {routes:?}
[data]
vehicles = ["sedan", "heavy_truck"]
repeats = 1
val_fraction = 0.2
train_vehicles = ["sedan"]
[train]
epochs = 1
batch_size = 16
lr = 1e-3
[finetune]
vehicle = "heavy_truck"
fraction = 1.0
epochs = 1
[eval]
vehicles = ["sedan"]
n_sampled = 1
[gradcheck]
per_group = 25
samples = 1
"#,
        out = root.join(out).to_string_lossy(),
        routes = routes.to_string_lossy(),
    );
    RunConfig::resolve(Some(&text), &[]).unwrap()
}

/// One generated dataset shared by the tests that only read it.
fn fixture() -> &'static (PathBuf, RunConfig) {
    static F: OnceLock<(PathBuf, RunConfig)> = OnceLock::new();
    F.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let cfg = small_config(&root, "out");
        commands::gen_data(&cfg).unwrap();
        (root, cfg)
    })
}

fn fresh_root(name: &str) -> PathBuf {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    root
}

#[test]
fn gen_data_manifest_accounts_for_every_episode() {
    let (_, cfg) = fixture();
    let text = std::fs::read_to_string(cfg.datasets_dir().join("manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    let vehicles = m["vehicles"].as_array().unwrap();
    assert_eq!(vehicles.len(), 2);
    let mut retained = 0;
    for v in vehicles {
        let attempted = v["attempted"].as_u64().unwrap();
        assert_eq!(attempted, 2);
        assert_eq!(attempted, v["retained"].as_u64().unwrap() + v["discarded"].as_u64().unwrap());
        retained += v["retained"].as_u64().unwrap();
        assert!(cfg.datasets_dir().join(v["file"].as_str().unwrap()).exists());
    }
    assert!(retained <= 4);
    assert!(cfg.datasets_dir().join("gen-data.config.toml").exists());
}

#[test]
fn gen_data_rerun_is_byte_identical() {
    let root = fresh_root("cli-gen-twice");
    let cfg = small_config(&root, "out");
    commands::gen_data(&cfg).unwrap();
    let read = |name: &str| std::fs::read(cfg.datasets_dir().join(name)).unwrap();
    let first = (read("sedan.pdds"), read("manifest.json"));
    commands::gen_data(&cfg).unwrap();
    assert_eq!(first, (read("sedan.pdds"), read("manifest.json")));
}

#[test]
fn missing_catalogue_fails_before_any_output() {
    let root = fresh_root("cli-missing-catalogue");
    let out = root.join("out");
    let status = Command::new(BIN)
        .args(["gen-data", "--out-dir"])
        .arg(&out)
        .args(["--set", "paths.catalogue=\"/definitely/not/here.toml\""])
        .env_remove("PHYSDRIVE_CONFIG")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn training_twice_gives_identical_artifacts() {
    let (_, cfg) = fixture();
    let a = commands::train(cfg, Some("det_a")).unwrap();
    let b = commands::train(cfg, Some("det_b")).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let csv = |n: &str| std::fs::read(cfg.checkpoints_dir().join(format!("{n}_loss.csv"))).unwrap();
    assert_eq!(csv("det_a"), csv("det_b"));
}

#[test]
fn pipeline_produces_a_four_row_comparison() {
    let (root, base) = fixture();
    let mut cfg = base.clone();
    cfg.out_dir = root.join("pipeline");
    std::fs::create_dir_all(&cfg.out_dir).unwrap();
    // Reuse the fixture's datasets without regenerating.
    let data = cfg.datasets_dir();
    std::fs::create_dir_all(&data).unwrap();
    for f in ["sedan.pdds", "heavy_truck.pdds"] {
        std::fs::copy(base.datasets_dir().join(f), data.join(f)).unwrap();
    }
    for v in ["full", "concat_only", "no_phys_encoder", "naive"] {
        cfg.train.variant = v.parse().unwrap();
        let ck = commands::train(&cfg, None).unwrap();
        let report = commands::eval(&cfg, Some(&ck)).unwrap();
        assert_eq!(report.results.len(), 2);
    }
    let table = commands::report(&cfg, &[]).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5, "{table}");
    assert!(lines[0].contains("ds") && lines[0].contains("rc") && lines[0].contains("is"));
    assert!(lines[1].starts_with("full"));
    assert!(lines[4].starts_with("naive"));
    assert!(cfg.reports_dir().join("comparison.svg").exists());

    // Fine-tuning writes a new checkpoint and leaves the input untouched.
    cfg.train.variant = "full".parse().unwrap();
    let input = cfg.checkpoints_dir().join("full.ckpt");
    let before = std::fs::read(&input).unwrap();
    let out = commands::finetune(&cfg, None).unwrap();
    assert_ne!(out, input);
    assert!(out.exists());
    assert_eq!(std::fs::read(&input).unwrap(), before);

    let zs = commands::zero_shot(&cfg, Some(&out)).unwrap();
    assert!(zs.results.iter().all(|r| r.unseen));
    let saved = BenchmarkReport::load_json(&cfg.reports_dir().join("zero_shot_full_ft_heavy_truck.json")).unwrap();
    assert_eq!(saved.results.len(), zs.results.len());

    // Every artifact stays under out_dir.
    for entry in walk(&cfg.out_dir) {
        assert!(entry.starts_with(&cfg.out_dir));
    }
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn eval_with_other_backbone_seed_is_a_compatibility_error() {
    let (_, cfg) = fixture();
    let ck = commands::train(cfg, Some("compat")).unwrap();
    let mut other = cfg.clone();
    other.seeds.backbone += 1;
    let err = commands::eval(&other, Some(&ck)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_dataset_is_reported() {
    let root = fresh_root("cli-no-data");
    let cfg = small_config(&root, "out");
    let err = commands::train(&cfg, None).unwrap_err();
    assert!(err.to_string().contains("gen-data"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn gradcheck_passes_on_fresh_parameters() {
    let root = fresh_root("cli-gradcheck");
    let cfg = small_config(&root, "out");
    let reports = commands::gradcheck(&cfg, None).unwrap();
    assert_eq!(reports.len(), 4);
    for r in &reports {
        assert!(r.max_rel_error() < 1e-4, "{}: {}", r.variant, r.max_rel_error());
    }
    assert!(cfg.reports_dir().join("gradcheck.json").exists());
}

#[test]
fn impossible_gradcheck_tolerance_exits_numeric() {
    let root = fresh_root("cli-gradcheck-fail");
    let status = Command::new(BIN)
        .args(["gradcheck", "--variant", "naive", "--out-dir"])
        .arg(root.join("out"))
        .args(["--set", "gradcheck.tolerance=0.0", "--set", "preset=\"compact\""])
        .args(["--set", "gradcheck.per_group=5", "--set", "gradcheck.samples=1"])
        .env_remove("PHYSDRIVE_CONFIG")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
}

#[test]
fn config_comes_from_the_environment_and_flags_win() {
    let root = fresh_root("cli-env-config");
    let cfg_path = root.join("run.toml");
    let from_file = root.join("from_file");
    let from_flag = root.join("from_flag");
    std::fs::write(
        &cfg_path,
        format!(
            "out_dir = {:?}\npreset = \"compact\"\n[gradcheck]\nper_group = 5\nsamples = 1\n",
            from_file.to_string_lossy()
        ),
    )
    .unwrap();
    let run = |extra: &[&str]| {
        Command::new(BIN)
            .args(["gradcheck", "--variant", "naive"])
            .args(extra)
            .env("PHYSDRIVE_CONFIG", &cfg_path)
            .output()
            .unwrap()
    };
    let out = run(&[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(from_file.join("reports/gradcheck.json").exists());
    let resolved = std::fs::read_to_string(from_file.join("reports/gradcheck.config.toml")).unwrap();
    assert!(resolved.contains("per_group = 5"));

    let out = run(&["--out-dir", from_flag.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(from_flag.join("reports/gradcheck.json").exists());
}

#[test]
fn help_lists_every_config_key() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let defaults = toml::Value::try_from(RunConfig::default()).unwrap();
    fn keys(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
        if let toml::Value::Table(t) = v {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                keys(&key, v, out);
            }
        } else {
            out.push(prefix.to_string());
        }
    }
    let mut all = Vec::new();
    keys("", &defaults, &mut all);
    assert!(all.len() > 40);
    for k in all.iter().chain(&["paths.catalogue".to_string(), "paths.routes".to_string()]) {
        assert!(text.contains(&format!("  {k} = ")), "--help misses {k}");
    }
}
