use super::route::{build_route, Route, RouteSpec, ROUTE_SCHEMA_VERSION};
use crate::error::{Error, Result};

const SOURCES: [(&str, &str); 6] = [
    ("avenue", include_str!("../../routes/avenue.toml")),
    ("crossroads", include_str!("../../routes/crossroads.toml")),
    ("school_zone", include_str!("../../routes/school_zone.toml")),
    ("convoy", include_str!("../../routes/convoy.toml")),
    ("downtown", include_str!("../../routes/downtown.toml")),
    ("hillside", include_str!("../../routes/hillside.toml")),
];

/// Route descriptions shipped with the crate.
pub fn bundled_route_specs() -> Result<Vec<RouteSpec>> {
    SOURCES
        .iter()
        .map(|(name, text)| {
            let spec: RouteSpec = toml::from_str(text)
                .map_err(|e| Error::Config(format!("bundled route `{name}`: {e}")))?;
            if spec.schema_version != ROUTE_SCHEMA_VERSION {
                return Err(Error::Compatibility(format!("bundled route `{name}` schema")));
            }
            Ok(spec)
        })
        .collect()
}

/// All bundled routes built with the same seed.
pub fn bundled_routes(seed: u64) -> Result<Vec<Route>> {
    bundled_route_specs()?.iter().map(|s| build_route(s, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_routes_build() {
        let routes = bundled_routes(0).unwrap();
        assert_eq!(routes.len(), 6);
        for r in &routes {
            assert!(r.total_length > 250.0, "{} {}", r.id, r.total_length);
        }
    }
}
