use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

use super::model::{backward_into, forward, l1_loss, PolicyInput, WaypointPlan};
use super::params::{Group, PolicyParams};

/// Denominator floor for the relative error, so parameters whose true
/// gradient is zero up to roundoff are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub group: Group,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub variant: String,
    pub step: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn batch_loss(p: &PolicyParams, batch: &[(PolicyInput, WaypointPlan)]) -> Result<f64> {
    let mut s = 0.0;
    for (x, e) in batch {
        s += l1_loss(&forward(p, x)?, e);
    }
    Ok(s / batch.len() as f64)
}

/// Compares analytic gradients of the mean L1 loss with central differences
/// on up to `per_group` randomly chosen parameters of every group.
pub fn gradcheck(
    params: &PolicyParams,
    batch: &[(PolicyInput, WaypointPlan)],
    per_group: usize,
    step: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    if batch.is_empty() {
        return Err(Error::Config("gradient check needs at least one sample".into()));
    }
    let mut grad = vec![0.0; params.len()];
    for (x, e) in batch {
        backward_into(params, x, e, &mut grad)?;
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut groups = Vec::new();
    for group in params.layout.groups() {
        let idx = params.layout.group_indices(group);
        let chosen: Vec<usize> = if idx.len() <= per_group {
            idx.clone()
        } else {
            sample(&mut rng, idx.len(), per_group).into_iter().map(|i| idx[i]).collect()
        };
        let mut worst = (0.0, 0);
        for &i in &chosen {
            let orig = probe.values[i];
            probe.values[i] = orig + step;
            let up = batch_loss(&probe, batch)?;
            probe.values[i] = orig - step;
            let down = batch_loss(&probe, batch)?;
            probe.values[i] = orig;
            let num = (up - down) / (2.0 * step);
            let e = relative_error(grad[i], num);
            if e >= worst.0 {
                worst = (e, i);
            }
        }
        groups.push(GroupCheck {
            group,
            checked: chosen.len(),
            max_rel_error: worst.0,
            worst_param: param_name(params, worst.1),
        });
    }
    Ok(GradcheckReport {
        variant: params.variant.to_string(),
        step,
        groups,
    })
}

fn param_name(p: &PolicyParams, i: usize) -> String {
    p.layout
        .entries
        .iter()
        .find(|(_, s, _)| s.range().contains(&i))
        .map(|(n, s, _)| format!("{n}[{}]", i - s.offset))
        .unwrap_or_default()
}
