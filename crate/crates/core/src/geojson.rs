//! Ward boundaries from a GeoJSON `FeatureCollection`.
//!
//! Accepts `Polygon` and `MultiPolygon` geometries. The administrative
//! attributes are read from the feature properties `ward_name`, `lga_code`,
//! `lga_name`, `state_code` and `state_name`; numeric values are stringified.
//! The CRS tag comes from the legacy `crs.properties.name` member when present.

use serde_json::Value;
use thiserror::Error;

use crate::geometry::{GeometryError, Point, Polygon, Ring};
use crate::raster::DEFAULT_CRS;
use crate::zonal::{Zone, ZoneAttrs, ZoneSet};

#[derive(Debug, Error)]
pub enum GeoJsonError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("feature {feature}: {reason}")]
    Feature { feature: usize, reason: String },
    #[error("{0}")]
    Structure(String),
}

fn feature_err(feature: usize, reason: impl Into<String>) -> GeoJsonError {
    GeoJsonError::Feature {
        feature,
        reason: reason.into(),
    }
}

fn parse_ring(v: &Value, feature: usize) -> Result<Ring, GeoJsonError> {
    let coords = v.as_array().ok_or_else(|| feature_err(feature, "ring is not an array"))?;
    let mut points = Vec::with_capacity(coords.len());
    for c in coords {
        let xy = c
            .as_array()
            .filter(|a| a.len() >= 2)
            .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
            .ok_or_else(|| feature_err(feature, format!("bad position {c}")))?;
        points.push(Point::new(xy.0, xy.1));
    }
    Ring::new(points).map_err(|e| feature_err(feature, e.to_string()))
}

fn parse_polygon(v: &Value, feature: usize) -> Result<Polygon, GeoJsonError> {
    let rings = v.as_array().ok_or_else(|| feature_err(feature, "polygon is not an array"))?;
    let (first, rest) = rings.split_first().ok_or_else(|| feature_err(feature, "polygon has no rings"))?;
    let exterior = parse_ring(first, feature)?;
    let holes = rest.iter().map(|r| parse_ring(r, feature)).collect::<Result<Vec<_>, _>>()?;
    Polygon::new(exterior, holes).map_err(|e: GeometryError| feature_err(feature, e.to_string()))
}

fn property(props: &serde_json::Map<String, Value>, key: &str) -> String {
    match props.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    }
}

/// Parses a FeatureCollection into zones, preserving feature order.
pub fn parse_zones(text: &str) -> Result<ZoneSet, GeoJsonError> {
    let root: Value = serde_json::from_str(text)?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoJsonError::Structure("top-level object is not a FeatureCollection".into()));
    }
    let crs = root
        .pointer("/crs/properties/name")
        .and_then(Value::as_str)
        .unwrap_or(DEFAULT_CRS)
        .to_string();
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoJsonError::Structure("missing features array".into()))?;

    let mut zones = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geometry = f.get("geometry").ok_or_else(|| feature_err(i, "missing geometry"))?;
        let coords = geometry.get("coordinates").ok_or_else(|| feature_err(i, "missing coordinates"))?;
        let parts = match geometry.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_polygon(coords, i)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| feature_err(i, "MultiPolygon coordinates are not an array"))?
                .iter()
                .map(|p| parse_polygon(p, i))
                .collect::<Result<Vec<_>, _>>()?,
            other => return Err(feature_err(i, format!("unsupported geometry type {other:?}"))),
        };
        let empty = serde_json::Map::new();
        let props = f.get("properties").and_then(Value::as_object).unwrap_or(&empty);
        let attrs = ZoneAttrs {
            ward_name: property(props, "ward_name"),
            lga_code: property(props, "lga_code"),
            lga_name: property(props, "lga_name"),
            state_code: property(props, "state_code"),
            state_name: property(props, "state_name"),
        };
        zones.push(Zone::new(parts, attrs).map_err(|reason| feature_err(i, reason))?);
    }
    Ok(ZoneSet::new(zones, crs))
}
