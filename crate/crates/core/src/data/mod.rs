//! Expert episode recording, the on-disk dataset format and splitting.

mod format;
mod record;
mod split;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use format::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use record::{derive_seed, generate_vehicle_dataset, record_episode, EpisodeOutcome, GenerationSummary, RecordOptions};
pub use split::{few_shot_subset, few_shot_subset_with_budget, split_dataset};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::sim::{SceneFeatures, D_SCENE, N_TARGET};
use crate::vehicle::{PhysicsVector, VehicleState, D_PHYS};

/// One training sample at waypoint cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFrame {
    pub tick: u64,
    /// Raw privileged features; the frozen projection is applied by the policy.
    pub features: SceneFeatures,
    pub physics: PhysicsVector,
    pub target_point: Vec2,
    pub waypoints: [Vec2; N_TARGET],
    pub ego: VehicleState,
}

impl EpisodeFrame {
    pub fn is_finite(&self) -> bool {
        self.features.0.iter().all(|v| v.is_finite())
            && self.physics.values.iter().all(|v| v.is_finite())
            && self.target_point.is_finite()
            && self.waypoints.iter().all(|w| w.is_finite())
            && self.ego.is_finite()
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.features.0.len() != N_TARGET * D_SCENE {
            return Err(Error::Shape(format!(
                "frame features have {} values, expected {}",
                self.features.0.len(),
                N_TARGET * D_SCENE
            )));
        }
        if self.physics.values.len() != D_PHYS || self.physics.mask.len() != D_PHYS {
            return Err(Error::Shape("frame physics vector has wrong width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub vehicle_id: String,
    pub route_id: String,
    pub route_seed: u64,
    pub noise_seed: u64,
    pub frames: Vec<EpisodeFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub vehicle_id: String,
    pub route_id: String,
    pub route_seed: u64,
    pub noise_seed: u64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub backbone_seed: u64,
    pub bounds_hash: String,
    pub route_seeds: Vec<u64>,
    pub vehicle_counts: BTreeMap<String, usize>,
    pub episodes: Vec<EpisodeMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub backbone_seed: u64,
    pub bounds_hash: String,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn new(backbone_seed: u64, bounds_hash: impl Into<String>) -> Self {
        Self {
            backbone_seed,
            bounds_hash: bounds_hash.into(),
            episodes: Vec::new(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.episodes.iter().map(|e| e.frames.len()).sum()
    }

    pub fn frames(&self) -> impl Iterator<Item = &EpisodeFrame> {
        self.episodes.iter().flat_map(|e| e.frames.iter())
    }

    /// Frame counts per vehicle, recomputed from content.
    pub fn vehicle_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for e in &self.episodes {
            *m.entry(e.vehicle_id.clone()).or_insert(0) += e.frames.len();
        }
        m
    }

    pub fn vehicle_ids(&self) -> Vec<String> {
        self.vehicle_counts().into_keys().collect()
    }

    pub fn header(&self) -> DatasetHeader {
        let mut route_seeds: Vec<u64> = self.episodes.iter().map(|e| e.route_seed).collect();
        route_seeds.sort_unstable();
        route_seeds.dedup();
        DatasetHeader {
            schema_version: DATASET_VERSION as u32,
            backbone_seed: self.backbone_seed,
            bounds_hash: self.bounds_hash.clone(),
            route_seeds,
            vehicle_counts: self.vehicle_counts(),
            episodes: self
                .episodes
                .iter()
                .map(|e| EpisodeMeta {
                    vehicle_id: e.vehicle_id.clone(),
                    route_id: e.route_id.clone(),
                    route_seed: e.route_seed,
                    noise_seed: e.noise_seed,
                    frames: e.frames.len(),
                })
                .collect(),
        }
    }

    /// Fails unless `other` was produced under the same tokenizer and bounds.
    pub fn check_compatible(&self, backbone_seed: u64, bounds_hash: &str) -> Result<()> {
        if self.backbone_seed != backbone_seed {
            return Err(Error::Compatibility(format!(
                "dataset backbone seed {} differs from {backbone_seed}",
                self.backbone_seed
            )));
        }
        if self.bounds_hash != bounds_hash {
            return Err(Error::Compatibility(format!(
                "dataset bounds hash {} differs from active bounds {bounds_hash}",
                self.bounds_hash
            )));
        }
        Ok(())
    }

    /// Concatenates datasets in order; all must share backbone seed and bounds.
    pub fn merge(parts: Vec<Dataset>) -> Result<Dataset> {
        let mut it = parts.into_iter();
        let mut out = it
            .next()
            .ok_or_else(|| Error::Domain("nothing to merge".into()))?;
        for d in it {
            d.check_compatible(out.backbone_seed, &out.bounds_hash)?;
            out.episodes.extend(d.episodes);
        }
        Ok(out)
    }

    /// Keeps only episodes of the given vehicles.
    pub fn filter_vehicles(&self, ids: &[&str]) -> Dataset {
        Dataset {
            backbone_seed: self.backbone_seed,
            bounds_hash: self.bounds_hash.clone(),
            episodes: self
                .episodes
                .iter()
                .filter(|e| ids.contains(&e.vehicle_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

#[cfg(test)]
pub(crate) fn format_test_frame() -> EpisodeFrame {
    EpisodeFrame {
        tick: 0,
        features: SceneFeatures(vec![0.0; N_TARGET * D_SCENE]),
        physics: PhysicsVector::zeros(),
        target_point: Vec2::new(20.0, 0.0),
        waypoints: [Vec2::ZERO; N_TARGET],
        ego: VehicleState {
            position: Vec2::ZERO,
            heading: 0.0,
            speed: 0.0,
            rpm: 800.0,
            gear: 0,
        },
    }
}
