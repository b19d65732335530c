use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EventKind;

/// Multiplier applied to the infraction score per penalized event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyTable {
    pub collision_pedestrian: f64,
    pub collision_vehicle: f64,
    pub collision_static: f64,
    pub red_light: f64,
    pub stop_sign: f64,
}

impl Default for PenaltyTable {
    fn default() -> Self {
        Self {
            collision_pedestrian: 0.5,
            collision_vehicle: 0.6,
            collision_static: 0.65,
            red_light: 0.7,
            stop_sign: 0.8,
        }
    }
}

impl PenaltyTable {
    pub const PENALIZED: [EventKind; 5] = [
        EventKind::CollisionPedestrian,
        EventKind::CollisionVehicle,
        EventKind::CollisionStatic,
        EventKind::RedLight,
        EventKind::StopSign,
    ];

    pub fn validate(&self) -> Result<()> {
        for k in Self::PENALIZED {
            let p = self.multiplier(k).expect("penalized kind");
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("penalty for {} must lie in (0, 1), got {p}", k.name())));
            }
        }
        Ok(())
    }

    /// `None` for events that end the route without a multiplier.
    pub fn multiplier(&self, kind: EventKind) -> Option<f64> {
        match kind {
            EventKind::CollisionPedestrian => Some(self.collision_pedestrian),
            EventKind::CollisionVehicle => Some(self.collision_vehicle),
            EventKind::CollisionStatic => Some(self.collision_static),
            EventKind::RedLight => Some(self.red_light),
            EventKind::StopSign => Some(self.stop_sign),
            EventKind::OffRoad | EventKind::Stuck | EventKind::RouteComplete | EventKind::Rollover => None,
        }
    }
}

/// Parses an event class name as written in reports.
pub fn classify(name: &str) -> Result<EventKind> {
    EventKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| Error::Classification(format!("unknown event class `{name}`")))
}

pub fn route_completion(l_complete: f64, l_total: f64) -> Result<f64> {
    if !(l_total > 0.0 && l_total.is_finite()) || !(0.0..=l_total).contains(&l_complete) {
        return Err(Error::Domain(format!(
            "route completion needs 0 <= {l_complete} <= {l_total} and a positive total"
        )));
    }
    Ok(l_complete / l_total)
}

/// Product of the table multipliers over penalized events; 1 when there are none.
pub fn infraction_score(events: &[EventKind], table: &PenaltyTable) -> f64 {
    events.iter().filter_map(|k| table.multiplier(*k)).product()
}

/// Same as [`infraction_score`] for events given by class name.
pub fn infraction_score_named(events: &[&str], table: &PenaltyTable) -> Result<f64> {
    let kinds = events.iter().map(|n| classify(n)).collect::<Result<Vec<_>>>()?;
    Ok(infraction_score(&kinds, table))
}

pub fn driving_score(rc: f64, is: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rc) || !(is > 0.0 && is <= 1.0) {
        return Err(Error::Domain(format!("driving score needs RC in [0, 1] and IS in (0, 1], got {rc}, {is}")));
    }
    Ok(rc * is)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_examples() {
        assert_eq!(route_completion(100.0, 100.0).unwrap(), 1.0);
        assert_eq!(route_completion(0.0, 100.0).unwrap(), 0.0);
        assert!((route_completion(48.3, 100.0).unwrap() - 0.483).abs() < 1e-15);
        assert!(route_completion(101.0, 100.0).is_err());
        assert!(route_completion(1.0, 0.0).is_err());
    }

    #[test]
    fn infraction_examples() {
        let t = PenaltyTable::default();
        assert_eq!(infraction_score(&[], &t), 1.0);
        assert_eq!(infraction_score(&[EventKind::CollisionPedestrian], &t), 0.5);
        let s = infraction_score(&[EventKind::CollisionVehicle, EventKind::RedLight, EventKind::StopSign], &t);
        assert!((s - 0.336).abs() < 1e-15);
        assert_eq!(infraction_score(&[EventKind::Stuck, EventKind::OffRoad, EventKind::RouteComplete], &t), 1.0);
        assert!(matches!(infraction_score_named(&["jaywalk"], &t), Err(Error::Classification(_))));
        assert_eq!(infraction_score_named(&["red_light", "red_light"], &t).unwrap(), 0.7 * 0.7);
    }

    #[test]
    fn driving_score_examples() {
        assert_eq!(driving_score(1.0, 0.5).unwrap(), 0.5);
        assert_eq!(driving_score(0.0, 1.0).unwrap(), 0.0);
        assert!((driving_score(0.483, 0.336).unwrap() - 0.162288).abs() < 1e-15);
        assert!(driving_score(0.5, 0.0).is_err());
    }

    #[test]
    fn default_table_is_valid() {
        PenaltyTable::default().validate().unwrap();
        let bad = PenaltyTable { stop_sign: 1.0, ..PenaltyTable::default() };
        assert!(bad.validate().is_err());
    }
}
