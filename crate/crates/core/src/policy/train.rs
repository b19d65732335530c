use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::sim::{Backbone, N_TARGET};

use super::model::{backward_into, forward, l1_loss, PolicyInput, WaypointPlan};
use super::params::{ArchConfig, PolicyParams, Variant};

/// Samples per gradient chunk. Chunks are reduced in index order, so results
/// do not depend on the number of worker threads.
const CHUNK: usize = 8;

pub type Sample = (PolicyInput, WaypointPlan);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from `lr` to zero over the whole run.
    Cosine,
}

impl LrSchedule {
    fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub schedule: LrSchedule,
    /// Return the parameters of the epoch with the lowest validation loss.
    pub keep_best: bool,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            lr: 1e-4,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            schedule: LrSchedule::Constant,
            keep_best: true,
            arch: ArchConfig::desk(),
        }
    }
}

impl TrainConfig {
    /// Defaults for few-shot adaptation: lower learning rate, short schedule.
    pub fn fine_tune_defaults() -> Self {
        Self {
            lr: 3e-5,
            epochs: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        pos("eps", self.eps)?;
        pos("clip_norm", self.clip_norm)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned (1-based; 0 means the initial ones).
    pub selected_epoch: usize,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,steps,train_loss,val_loss,grad_norm")?;
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", e.epoch, e.steps, e.train_loss, val, e.grad_norm)?;
        }
        Ok(())
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Projects every frame of `data` through the frozen backbone.
pub fn prepare_samples(data: &Dataset, backbone: &Backbone) -> Result<Vec<Sample>> {
    if backbone.seed != data.backbone_seed {
        return Err(Error::Compatibility(format!(
            "dataset recorded with backbone seed {}, got {}",
            data.backbone_seed, backbone.seed
        )));
    }
    Ok(data
        .frames()
        .map(|f| (PolicyInput::from_frame(f, backbone), f.waypoints))
        .collect())
}

/// Sum of losses and gradients over `samples`, reduced in a fixed order.
pub fn accumulate(p: &PolicyParams, samples: &[&Sample]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; p.len()];
            let mut l = 0.0;
            for (x, e) in chunk {
                l += backward_into(p, x, e, &mut g)?;
            }
            Ok((l, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Mean L1 loss of `p` over `samples`.
pub fn evaluate_loss(p: &PolicyParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate loss on an empty set".into()));
    }
    let parts: Vec<Result<f64>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut l = 0.0;
            for (x, e) in chunk {
                l += l1_loss(&forward(p, x)?, e);
            }
            Ok(l)
        })
        .collect();
    let mut total = 0.0;
    for l in parts {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

fn run(
    mut params: PolicyParams,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(PolicyParams, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let d = params.arch.d;
    if let Some((x, _)) = train_set.iter().chain(val_set).find(|(x, _)| x.tokens.len() != N_TARGET * d) {
        return Err(Error::Shape(format!(
            "samples carry {}-wide tokens, model width is {d}",
            x.tokens.len() / N_TARGET
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x007a_110c_0de5_eed5_u64);
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = if cfg.keep_best && !val_set.is_empty() {
        Some((evaluate_loss(&params, val_set)?, params.values.clone()))
    } else {
        None
    };
    let mut steps = 0;
    let total_steps = cfg.epochs * train_set.len().div_ceil(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut n_batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grad) = accumulate(&params, &refs)?;
            let inv = 1.0 / refs.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Divergence(format!("gradient norm {norm} at epoch {epoch}")));
            }
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            let lr = cfg.lr * cfg.schedule.factor(steps, total_steps);
            adam.step(&mut params.values, &grad, lr, cfg);
            loss_sum += loss;
            norm_sum += norm;
            n_batches += 1;
            steps += 1;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(&params, val_set).map_err(|e| match e {
                Error::Numeric(m) => Error::Divergence(format!("validation at epoch {epoch}: {m}")),
                e => e,
            })?)
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "epoch {epoch}: train loss {train_loss}, val loss {val_loss:?}"
            )));
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        history.epochs.push(EpochStats {
            epoch,
            steps,
            train_loss,
            val_loss,
            grad_norm: norm_sum / n_batches as f64,
        });
        if let (Some((b, vals)), Some(v)) = (best.as_mut(), val_loss) {
            if v < *b {
                *b = v;
                vals.clone_from(&params.values);
                history.selected_epoch = epoch;
            }
        }
    }
    match best {
        Some((_, vals)) => params.values = vals,
        None => history.selected_epoch = cfg.epochs,
    }
    Ok((params, history))
}

/// Trains a fresh model from a seeded initialization.
pub fn train(train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<(PolicyParams, TrainHistory)> {
    cfg.validate()?;
    let params = PolicyParams::init(cfg.variant, cfg.arch, cfg.seed)?;
    run(params, train_set, val_set, cfg)
}

/// Continues training `params` on a small set; every weight stays trainable.
pub fn fine_tune(
    params: &PolicyParams,
    few_shot: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(PolicyParams, TrainHistory)> {
    if few_shot.is_empty() {
        return Err(Error::Config("few-shot set is empty".into()));
    }
    if cfg.variant != params.variant || cfg.arch != params.arch {
        return Err(Error::Compatibility(format!(
            "fine-tune config is `{}`, checkpoint is `{}`",
            cfg.variant, params.variant
        )));
    }
    run(params.clone(), few_shot, val_set, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::model::tests::{random_input, random_plan};

    fn cfg(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            arch: ArchConfig::compact(),
            batch_size: 4,
            epochs: 3,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn samples(n: u64, d: usize) -> Vec<Sample> {
        (0..n).map(|s| (random_input(d, s), random_plan(s))).collect()
    }

    #[test]
    fn overfits_single_frame() {
        let mut plan = [crate::geom::Vec2::ZERO; 8];
        for (t, w) in plan.iter_mut().enumerate() {
            let s = (t + 1) as f64;
            *w = crate::geom::Vec2::new(1.2 * s, 0.05 * s * s);
        }
        let set = vec![(random_input(32, 0), plan)];
        let c = TrainConfig {
            epochs: 500,
            batch_size: 1,
            lr: 5e-3,
            schedule: LrSchedule::Cosine,
            keep_best: false,
            ..cfg(Variant::Full)
        };
        let (p, h) = train(&set, &[], &c).unwrap();
        assert_eq!(h.epochs.last().unwrap().steps, 500);
        assert!(evaluate_loss(&p, &set).unwrap() < 1e-3);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let set = samples(10, 32);
        let c = TrainConfig { lr: 0.0, keep_best: false, ..cfg(Variant::ConcatOnly) };
        let (p, h) = train(&set, &set[..3], &c).unwrap();
        assert_eq!(p, PolicyParams::init(c.variant, c.arch, c.seed).unwrap());
        let v: Vec<f64> = h.epochs.iter().map(|e| e.val_loss.unwrap()).collect();
        assert!(v.windows(2).all(|w| w[0] == w[1]));
        let t: Vec<f64> = h.epochs.iter().map(|e| e.train_loss).collect();
        assert!(t.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn same_seed_same_result() {
        let set = samples(12, 32);
        let c = cfg(Variant::NoPhysEncoder);
        let a = train(&set, &set[..4], &c).unwrap();
        let b = train(&set, &set[..4], &c).unwrap();
        assert_eq!(a, b);
        let other = train(&set, &set[..4], &TrainConfig { seed: 1, ..c }).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn fine_tune_rejects_empty_and_mismatched_inputs() {
        let set = samples(4, 32);
        let c = cfg(Variant::Full);
        let (p, _) = train(&set, &[], &c).unwrap();
        assert!(matches!(fine_tune(&p, &[], &set, &c), Err(Error::Config(_))));
        let other = TrainConfig { variant: Variant::Naive, ..c.clone() };
        assert!(fine_tune(&p, &set, &[], &other).unwrap_err().is_compatibility());
        let (q, _) = fine_tune(&p, &set, &[], &c).unwrap();
        assert_ne!(p, q);
    }

    #[test]
    fn history_csv_has_row_per_epoch() {
        let set = samples(6, 32);
        let (_, h) = train(&set, &set[..2], &cfg(Variant::Naive)).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("epoch,steps,train_loss,val_loss,grad_norm"));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let set = samples(2, 32);
        for bad in [
            TrainConfig { batch_size: 0, ..cfg(Variant::Full) },
            TrainConfig { lr: f64::NAN, ..cfg(Variant::Full) },
            TrainConfig { beta2: 1.0, ..cfg(Variant::Full) },
        ] {
            assert!(matches!(train(&set, &[], &bad), Err(Error::Config(_))));
        }
        let wide = samples(2, 16);
        assert!(matches!(train(&wide, &[], &cfg(Variant::Full)), Err(Error::Shape(_))));
    }
}
