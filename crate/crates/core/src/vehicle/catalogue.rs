use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    flatten_physics, Gear, NormalizationBounds, SamplingRanges, TorquePoint, VehiclePhysics,
};
use crate::error::{Error, Result};

pub const CATALOGUE_SCHEMA_VERSION: u32 = 1;

/// Vehicle catalogue document: training vehicles, held-out extremes,
/// normalization bounds and zero-shot sampling ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalogue {
    pub schema_version: u32,
    /// Id of the vehicle single-vehicle baselines are trained on.
    pub source_vehicle: String,
    pub bounds: NormalizationBounds,
    pub sampling: SamplingRanges,
    pub vehicles: Vec<VehiclePhysics>,
    /// Vehicles excluded from training (extreme outliers).
    #[serde(default)]
    pub held_out: Vec<VehiclePhysics>,
}

impl Catalogue {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cat: Catalogue =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if cat.schema_version != CATALOGUE_SCHEMA_VERSION {
            return Err(Error::Compatibility(format!(
                "catalogue schema version {} (expected {CATALOGUE_SCHEMA_VERSION})",
                cat.schema_version
            )));
        }
        cat.validate()?;
        Ok(cat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.sampling.validate(&self.bounds)?;
        let mut ids = std::collections::BTreeSet::new();
        for v in self.vehicles.iter().chain(&self.held_out) {
            v.validate()?;
            flatten_physics(v, &self.bounds)?;
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Config(format!("duplicate vehicle id `{}`", v.id)));
            }
        }
        if self.vehicles.is_empty() {
            return Err(Error::Config("catalogue has no training vehicles".into()));
        }
        self.vehicle(&self.source_vehicle)?;
        Ok(())
    }

    /// Looks up a training or held-out vehicle by id.
    pub fn vehicle(&self, id: &str) -> Result<&VehiclePhysics> {
        self.vehicles
            .iter()
            .chain(&self.held_out)
            .find(|v| v.id == id)
            .ok_or_else(|| Error::Lookup(format!("unknown vehicle `{id}`")))
    }

    pub fn training_ids(&self) -> Vec<String> {
        self.vehicles.iter().map(|v| v.id.clone()).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn vehicle(
    id: &str,
    extent: [f64; 3],
    mass: f64,
    com: [f64; 3],
    wheelbase: f64,
    wheel_radius: f64,
    max_rpm: f64,
    torque: &[(f64, f64)],
    gears: &[(f64, f64, f64)],
) -> VehiclePhysics {
    VehiclePhysics {
        id: id.to_string(),
        extent,
        torque_curve: torque.iter().map(|&t| TorquePoint::from(t)).collect(),
        max_rpm,
        mass,
        center_of_mass: com,
        wheelbase,
        wheel_radius,
        gears: gears.iter().map(|&g| Gear::from(g)).collect(),
    }
}

/// Desk-scale stand-in for a simulator's stock vehicle blueprints: eight
/// training vehicles spanning compact car to box truck, plus a tiny car and a
/// heavy truck held out as extremes.
pub fn builtin_catalogue() -> Catalogue {
    let vehicles = vec![
        vehicle(
            "sedan",
            [4.9, 1.9, 1.5],
            1800.0,
            [0.1, 0.0, 0.55],
            2.85,
            0.34,
            6000.0,
            &[(0.0, 290.0), (1500.0, 370.0), (3500.0, 400.0), (5000.0, 380.0), (6000.0, 320.0)],
            &[(14.0, 0.80, 0.25), (9.0, 0.80, 0.28), (6.2, 0.82, 0.30), (4.6, 0.85, 0.30), (3.6, 0.90, 0.30)],
        ),
        vehicle(
            "compact",
            [4.0, 1.75, 1.45],
            1150.0,
            [0.05, 0.0, 0.50],
            2.5,
            0.30,
            6500.0,
            &[(0.0, 150.0), (2000.0, 200.0), (4500.0, 210.0), (6500.0, 170.0)],
            &[(15.0, 0.82, 0.25), (9.5, 0.82, 0.28), (6.5, 0.84, 0.30), (4.8, 0.86, 0.30), (3.8, 0.90, 0.30)],
        ),
        vehicle(
            "sports",
            [4.5, 1.95, 1.2],
            1450.0,
            [-0.1, 0.0, 0.42],
            2.6,
            0.33,
            7500.0,
            &[(0.0, 300.0), (2500.0, 450.0), (5500.0, 480.0), (7500.0, 400.0)],
            &[(13.5, 0.85, 0.25), (9.2, 0.85, 0.30), (6.8, 0.86, 0.32), (5.2, 0.88, 0.33), (4.2, 0.88, 0.33), (3.4, 0.92, 0.33)],
        ),
        vehicle(
            "suv",
            [4.85, 2.0, 1.75],
            2300.0,
            [0.05, 0.0, 0.72],
            2.9,
            0.37,
            6000.0,
            &[(0.0, 320.0), (2000.0, 420.0), (4500.0, 430.0), (6000.0, 350.0)],
            &[(15.5, 0.80, 0.25), (9.8, 0.80, 0.28), (6.6, 0.82, 0.30), (4.8, 0.85, 0.30), (3.7, 0.90, 0.30)],
        ),
        vehicle(
            "pickup",
            [5.6, 2.05, 1.9],
            2800.0,
            [0.2, 0.0, 0.78],
            3.5,
            0.40,
            5500.0,
            &[(0.0, 400.0), (1800.0, 560.0), (4000.0, 560.0), (5500.0, 450.0)],
            &[(16.0, 0.80, 0.25), (10.0, 0.80, 0.28), (6.8, 0.82, 0.30), (4.9, 0.85, 0.30), (3.8, 0.90, 0.30)],
        ),
        vehicle(
            "van",
            [5.3, 2.0, 2.3],
            3200.0,
            [0.1, 0.0, 0.85],
            3.3,
            0.36,
            5200.0,
            &[(0.0, 330.0), (1800.0, 430.0), (3800.0, 430.0), (5200.0, 360.0)],
            &[(17.0, 0.80, 0.25), (10.5, 0.80, 0.28), (7.0, 0.82, 0.30), (5.0, 0.85, 0.30), (4.0, 0.90, 0.30)],
        ),
        vehicle(
            "minibus",
            [6.5, 2.2, 2.7],
            4200.0,
            [0.3, 0.0, 0.95],
            3.9,
            0.42,
            5000.0,
            &[(0.0, 520.0), (1500.0, 700.0), (3200.0, 720.0), (5000.0, 600.0)],
            &[(18.0, 0.80, 0.25), (11.5, 0.80, 0.28), (7.6, 0.82, 0.30), (5.4, 0.85, 0.30), (4.2, 0.90, 0.30)],
        ),
        vehicle(
            "box_truck",
            [7.0, 2.3, 3.0],
            5000.0,
            [0.4, 0.0, 1.05],
            4.2,
            0.45,
            4500.0,
            &[(0.0, 600.0), (1400.0, 850.0), (3000.0, 860.0), (4500.0, 700.0)],
            &[(20.0, 0.80, 0.25), (12.5, 0.80, 0.28), (8.0, 0.82, 0.30), (5.6, 0.85, 0.30), (4.2, 0.90, 0.30)],
        ),
    ];
    let held_out = vec![
        vehicle(
            "microcar",
            [2.6, 1.5, 1.5],
            620.0,
            [0.0, 0.0, 0.45],
            1.8,
            0.26,
            6000.0,
            &[(0.0, 70.0), (2500.0, 95.0), (6000.0, 80.0)],
            &[(16.0, 0.85, 0.25), (10.0, 0.85, 0.30), (6.5, 0.88, 0.30), (4.6, 0.90, 0.30)],
        ),
        vehicle(
            "heavy_truck",
            [9.5, 2.5, 3.6],
            12500.0,
            [0.8, 0.0, 1.35],
            5.6,
            0.52,
            3500.0,
            &[(0.0, 1200.0), (1200.0, 1800.0), (2500.0, 1800.0), (3500.0, 1500.0)],
            &[(30.0, 0.80, 0.25), (20.0, 0.80, 0.28), (13.0, 0.82, 0.30), (9.0, 0.85, 0.30), (6.5, 0.88, 0.30), (5.0, 0.90, 0.30)],
        ),
    ];
    Catalogue {
        schema_version: CATALOGUE_SCHEMA_VERSION,
        source_vehicle: "sedan".into(),
        bounds: NormalizationBounds::default(),
        sampling: SamplingRanges::default(),
        vehicles,
        held_out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalogue_validates() {
        builtin_catalogue().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cat = builtin_catalogue();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalogue.toml");
        cat.save(&path).unwrap();
        let back = Catalogue::load(&path).unwrap();
        assert_eq!(cat, back);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut cat = builtin_catalogue();
        cat.schema_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        cat.save(&path).unwrap();
        assert!(Catalogue::load(&path).unwrap_err().is_compatibility());
    }

    #[test]
    fn unknown_vehicle_lookup_fails() {
        assert!(matches!(
            builtin_catalogue().vehicle("zeppelin"),
            Err(Error::Lookup(_))
        ));
    }
}
