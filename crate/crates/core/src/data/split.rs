use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Splits whole episodes into (train, val), stratified per vehicle. Each
/// vehicle contributes `max(1, round(n * val_fraction))` validation
/// episodes, never all of them. Episode order is preserved in both parts.
pub fn split_dataset(d: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 0.5) {
        return Err(Error::Domain(format!("val_fraction {val_fraction} outside (0, 0.5)")));
    }
    let mut by_vehicle: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in d.episodes.iter().enumerate() {
        by_vehicle.entry(e.vehicle_id.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; d.episodes.len()];
    for (vehicle, mut idx) in by_vehicle {
        if idx.len() < 2 {
            return Err(Error::Stratification(format!(
                "vehicle `{vehicle}` has {} episode(s); need at least 2 to split",
                idx.len()
            )));
        }
        let n_val = ((idx.len() as f64 * val_fraction).round() as usize).clamp(1, idx.len() - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..n_val] {
            is_val[i] = true;
        }
    }
    let part = |want: bool| Dataset {
        backbone_seed: d.backbone_seed,
        bounds_hash: d.bounds_hash.clone(),
        episodes: d
            .episodes
            .iter()
            .zip(&is_val)
            .filter(|(_, &v)| v == want)
            .map(|(e, _)| e.clone())
            .collect(),
    };
    Ok((part(false), part(true)))
}

/// Few-shot set for one vehicle: its leading whole episodes within a frame
/// budget of `ceil(fraction * total frames of d)`, at least one episode.
pub fn few_shot_subset(d: &Dataset, vehicle_id: &str, fraction: f64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("few-shot fraction {fraction} outside (0, 1]")));
    }
    let budget = (fraction * d.num_frames() as f64).ceil() as usize;
    few_shot_subset_with_budget(d, vehicle_id, budget)
}

/// As [`few_shot_subset`] with an explicit frame budget.
pub fn few_shot_subset_with_budget(d: &Dataset, vehicle_id: &str, budget: usize) -> Result<Dataset> {
    if budget == 0 {
        return Err(Error::Domain("few-shot frame budget is zero".into()));
    }
    let mut out = Dataset::new(d.backbone_seed, d.bounds_hash.clone());
    let mut used = 0;
    let mut seen = false;
    for e in d.episodes.iter().filter(|e| e.vehicle_id == vehicle_id) {
        seen = true;
        if !out.episodes.is_empty() && used + e.frames.len() > budget {
            break;
        }
        used += e.frames.len();
        out.episodes.push(e.clone());
    }
    if !seen {
        return Err(Error::Lookup(format!("vehicle `{vehicle_id}` not in dataset")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Episode;

    fn ds(per_vehicle: &[(&str, usize, usize)]) -> Dataset {
        let mut d = Dataset::new(0, "h");
        for &(v, episodes, frames) in per_vehicle {
            for k in 0..episodes {
                d.episodes.push(Episode {
                    vehicle_id: v.into(),
                    route_id: format!("r{k}"),
                    route_seed: k as u64,
                    noise_seed: 0,
                    frames: vec![crate::data::format_test_frame(); frames],
                });
            }
        }
        d
    }

    #[test]
    fn stratified_split_counts() {
        let d = ds(&[("a", 10, 1), ("b", 10, 1)]);
        let (tr, va) = split_dataset(&d, 0.1, 3).unwrap();
        assert_eq!(va.vehicle_counts()["a"], 1);
        assert_eq!(va.vehicle_counts()["b"], 1);
        assert_eq!(tr.episodes.len() + va.episodes.len(), 20);
        assert_eq!(split_dataset(&d, 0.1, 3).unwrap(), (tr, va));
    }

    #[test]
    fn single_episode_vehicle_cannot_be_split() {
        let d = ds(&[("a", 10, 1), ("b", 1, 1)]);
        assert!(matches!(split_dataset(&d, 0.2, 0), Err(Error::Stratification(_))));
    }

    #[test]
    fn few_shot_budget_rules() {
        let d = ds(&[("a", 10, 30), ("b", 5, 40)]);
        // 500 frames total: 3% -> 15 frames, less than one 40-frame episode.
        let one = few_shot_subset(&d, "b", 0.03).unwrap();
        assert_eq!(one.episodes.len(), 1);
        // 20% -> 100 frames -> two whole 40-frame episodes.
        let two = few_shot_subset(&d, "b", 0.2).unwrap();
        assert_eq!(two.episodes.len(), 2);
        assert_eq!(few_shot_subset(&d, "b", 1.0).unwrap().episodes.len(), 5);
        assert!(matches!(few_shot_subset(&d, "zz", 0.5), Err(Error::Lookup(_))));
        assert!(few_shot_subset(&d, "b", 0.0).is_err());
    }
}
