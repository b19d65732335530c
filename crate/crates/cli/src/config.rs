use std::path::{Component, Path, PathBuf};

use physdrive::data::RecordOptions;
use physdrive::eval::PenaltyTable;
use physdrive::policy::{ArchConfig, TrainConfig};
use physdrive::sim::SimConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Architecture preset applied to `train.arch`; `custom` keeps the table as written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Large,
    Compact,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Catalogue TOML; the built-in catalogue when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalogue: Option<PathBuf>,
    /// Directory of route TOML files; the bundled routes when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routes: Option<PathBuf>,
    /// Artifact directories, relative to `out_dir`.
    pub datasets: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            catalogue: None,
            routes: None,
            datasets: "data".into(),
            checkpoints: "models".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub backbone: u64,
    pub split: u64,
    pub eval: u64,
    pub sampling: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            backbone: 7,
            split: 3,
            eval: 100,
            sampling: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Vehicles to record; every catalogue vehicle when empty.
    pub vehicles: Vec<String>,
    /// Passes over every route per vehicle; pass 0 is noise-free.
    pub repeats: usize,
    pub val_fraction: f64,
    /// Training vehicles; when empty the naive variant uses the source
    /// vehicle and every other variant all training vehicles.
    pub train_vehicles: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            vehicles: Vec::new(),
            repeats: 4,
            val_fraction: 0.1,
            train_vehicles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Vehicle to calibrate on; the first held-out vehicle when empty.
    pub vehicle: String,
    /// Frame budget as a fraction of the checkpoint's training frames.
    pub fraction: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        let t = TrainConfig::fine_tune_defaults();
        Self {
            vehicle: String::new(),
            fraction: 0.03,
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Benchmark vehicles; every catalogue vehicle when empty.
    pub vehicles: Vec<String>,
    pub n_sampled: usize,
    pub penalties: PenaltyTable,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            vehicles: Vec::new(),
            n_sampled: 5,
            penalties: PenaltyTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub per_group: usize,
    pub step: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            per_group: 200,
            step: 1e-5,
            samples: 2,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every command writes only below this directory.
    pub out_dir: PathBuf,
    pub preset: Preset,
    pub paths: Paths,
    pub seeds: Seeds,
    pub data: DataConfig,
    pub record: RecordOptions,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: "runs".into(),
            preset: Preset::Desk,
            paths: Paths::default(),
            seeds: Seeds::default(),
            data: DataConfig::default(),
            record: RecordOptions::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

fn relative_inside(name: &str, p: &Path) -> Result<(), CliError> {
    let ok = p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{name} = {} must be a relative path inside out_dir",
            p.display()
        )))
    }
}

impl RunConfig {
    /// Parses a config document, applies `key=value` overrides and the preset.
    pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| CliError::Config(format!("config file: {e}")))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            set_key(&mut root, key.trim(), parse_value(value.trim()))?;
        }
        let mut cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.apply_preset();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_preset(&mut self) {
        match self.preset {
            Preset::Desk => self.train.arch = ArchConfig::desk(),
            Preset::Large => self.train.arch = ArchConfig::large(),
            Preset::Compact => self.train.arch = ArchConfig::compact(),
            Preset::Custom => {}
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        relative_inside("paths.datasets", &self.paths.datasets)?;
        relative_inside("paths.checkpoints", &self.paths.checkpoints)?;
        relative_inside("paths.reports", &self.paths.reports)?;
        self.train.validate()?;
        self.sim.validate()?;
        self.eval.penalties.validate()?;
        if self.data.repeats == 0 {
            return Err(CliError::Config("data.repeats must be positive".into()));
        }
        if !(self.finetune.fraction > 0.0 && self.finetune.fraction <= 1.0) {
            return Err(CliError::Config("finetune.fraction must lie in (0, 1]".into()));
        }
        if self.finetune.epochs == 0 || self.finetune.batch_size == 0 {
            return Err(CliError::Config("finetune epochs and batch_size must be positive".into()));
        }
        if self.gradcheck.samples == 0 || self.gradcheck.per_group == 0 {
            return Err(CliError::Config("gradcheck samples and per_group must be positive".into()));
        }
        for (name, p) in [("paths.catalogue", &self.paths.catalogue), ("paths.routes", &self.paths.routes)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::Config(format!("{name} = {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.out_dir.join(&self.paths.datasets)
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.out_dir.join(&self.paths.checkpoints)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join(&self.paths.reports)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_key(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty());
    let last = last.ok_or_else(|| CliError::Config(format!("empty override key `{key}`")))?;
    let mut table = root;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("  {prefix} = {other}")),
    }
}

/// Every config key with its default, one `key = value` line each.
pub fn keys_help() -> String {
    let v = toml::Value::try_from(RunConfig::default()).expect("run config serializes");
    let mut lines = vec![
        "  paths.catalogue = <built-in catalogue>".to_string(),
        "  paths.routes = <bundled routes>".to_string(),
    ];
    flatten("", &v, &mut lines);
    lines.sort();
    format!("Config keys (set in a TOML file or with --set key=value):\n{}", lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::resolve(None, &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_beat_the_file() {
        let cfg = RunConfig::resolve(
            Some("[train]\nlr = 0.5\nepochs = 3\n"),
            &["train.lr=0.25".into(), "out_dir=elsewhere".into(), "train.variant=\"naive\"".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.25);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.train.variant, physdrive::policy::Variant::Naive);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(Some("[train]\nlearning_rate = 1.0\n"), &[]).is_err());
        assert!(RunConfig::resolve(None, &["seeds.dta=3".into()]).is_err());
    }

    #[test]
    fn preset_sets_architecture() {
        let cfg = RunConfig::resolve(Some("preset = \"large\"\n"), &[]).unwrap();
        assert_eq!(cfg.train.arch, ArchConfig::large());
        let cfg = RunConfig::resolve(
            Some("preset = \"custom\"\n[train.arch]\nd = 16\nd_hid = 16\nd_ff = 16\nlayers = 1\nheads = 4\ntarget_scale = 0.05\n"),
            &[],
        )
        .unwrap();
        assert_eq!(cfg.train.arch.d, 16);
    }

    #[test]
    fn artifact_dirs_must_stay_inside_out_dir() {
        assert!(RunConfig::resolve(None, &["paths.reports=\"../x\"".into()]).is_err());
        assert!(RunConfig::resolve(None, &["paths.datasets=\"/tmp/x\"".into()]).is_err());
    }

    #[test]
    fn missing_catalogue_is_a_config_error() {
        let err = RunConfig::resolve(None, &["paths.catalogue=\"/no/such/catalogue.toml\"".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn help_lists_nested_keys() {
        let h = keys_help();
        for k in ["train.lr = 0.0001", "seeds.backbone = 7", "sim.pid.", "eval.penalties.red_light = 0.7"] {
            assert!(h.contains(k), "missing {k}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::resolve(None, &["data.repeats=2".into()]).unwrap();
        let back = RunConfig::resolve(Some(&cfg.to_toml()), &[]).unwrap();
        assert_eq!(cfg, back);
    }
}
