//! GeoJSON layer loading.
//!
//! Accepts a FeatureCollection of Polygon / MultiPolygon features. Unit ids
//! come from a configurable property; centroids are area-weighted over
//! polygon parts with holes subtracted. Errors always name the offending
//! feature so bad inputs in large files are findable.

use serde_json::Value;
use std::path::Path;

use super::{
    build_adjacency, check_unique_ids, ArealLayer, ArealUnit, ContiguityRule, GeometryError,
};
use crate::scalar::{cvt, Scalar};

#[derive(Debug, Clone)]
pub struct GeoJsonOptions {
    /// Feature property holding the unit id.
    pub id_property: String,
    pub rule: ContiguityRule,
    /// Vertex snap pitch for contiguity detection.
    pub snap_tolerance: f64,
}

impl Default for GeoJsonOptions {
    fn default() -> Self {
        GeoJsonOptions {
            id_property: "id".into(),
            rule: ContiguityRule::Rook,
            snap_tolerance: 1e-9,
        }
    }
}

pub fn load_geojson<T: Scalar>(
    path: &Path,
    options: &GeoJsonOptions,
) -> Result<ArealLayer<T>, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::GeoJson {
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    load_geojson_str(&text, options)
}

pub fn load_geojson_str<T: Scalar>(
    text: &str,
    options: &GeoJsonOptions,
) -> Result<ArealLayer<T>, GeometryError> {
    let root: Value = serde_json::from_str(text).map_err(|e| GeometryError::GeoJson {
        message: format!("invalid JSON: {e}"),
    })?;
    let fail = |message: String| GeometryError::GeoJson { message };

    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(fail("root object must be a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| fail("FeatureCollection has no features array".into()))?;
    if features.is_empty() {
        return Err(fail("FeatureCollection is empty".into()));
    }

    let mut units = Vec::with_capacity(features.len());
    for (idx, feature) in features.iter().enumerate() {
        units.push(parse_feature::<T>(idx, feature, &options.id_property)?);
    }
    check_unique_ids(&units)?;
    let (adjacency, isolated) = build_adjacency(&units, options.rule, options.snap_tolerance)?;
    Ok(ArealLayer { units, adjacency, rule: options.rule, isolated })
}

fn parse_feature<T: Scalar>(
    idx: usize,
    feature: &Value,
    id_property: &str,
) -> Result<ArealUnit<T>, GeometryError> {
    let fail = |message: String| GeometryError::GeoJson { message };

    if feature.get("type").and_then(Value::as_str) != Some("Feature") {
        return Err(fail(format!("feature {idx}: not a Feature object")));
    }
    let id = match feature.get("properties").and_then(|p| p.get(id_property)) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(other) => {
            return Err(fail(format!(
                "feature {idx}: id property {id_property:?} has unsupported type {other}"
            )))
        }
        None => {
            return Err(fail(format!(
                "feature {idx}: missing id property {id_property:?}"
            )))
        }
    };

    let geometry = feature
        .get("geometry")
        .filter(|g| !g.is_null())
        .ok_or_else(|| fail(format!("feature {idx} ({id}): missing geometry")))?;
    let geom_type = geometry.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| fail(format!("feature {idx} ({id}): missing coordinates")))?;

    let polygons: Vec<&Value> = match geom_type {
        "Polygon" => vec![coords],
        "MultiPolygon" => coords
            .as_array()
            .ok_or_else(|| fail(format!("feature {idx} ({id}): MultiPolygon coordinates must be an array")))?
            .iter()
            .collect(),
        other => {
            return Err(fail(format!(
                "feature {idx} ({id}): unsupported geometry type {other:?}; expected Polygon or MultiPolygon"
            )))
        }
    };

    // Area-weighted centroid over parts, holes subtracted.
    let mut rings: Vec<Vec<(T, T)>> = Vec::new();
    let mut weighted = (0.0f64, 0.0f64);
    let mut net_area = 0.0f64;
    for (part_idx, part) in polygons.iter().enumerate() {
        let part_rings = part
            .as_array()
            .ok_or_else(|| fail(format!("feature {idx} ({id}): polygon {part_idx} rings must be an array")))?;
        if part_rings.is_empty() {
            return Err(fail(format!("feature {idx} ({id}): polygon {part_idx} has no rings")));
        }
        for (ring_idx, ring_val) in part_rings.iter().enumerate() {
            let pts = parse_ring(idx, &id, ring_idx, ring_val)?;
            let (area, cx, cy) = ring_area_centroid(&pts);
            // First ring of each part is the exterior; the rest are holes.
            let sign = if ring_idx == 0 { 1.0 } else { -1.0 };
            net_area += sign * area;
            weighted.0 += sign * area * cx;
            weighted.1 += sign * area * cy;
            rings.push(pts.iter().map(|&(x, y)| (cvt::<T>(x), cvt::<T>(y))).collect());
        }
    }
    if !(net_area > 0.0) {
        return Err(GeometryError::DegenerateArea { id });
    }
    Ok(ArealUnit {
        id,
        centroid: (cvt::<T>(weighted.0 / net_area), cvt::<T>(weighted.1 / net_area)),
        area: Some(cvt::<T>(net_area)),
        rings,
    })
}

/// Parse one linear ring, enforcing RFC 7946 closure, and return it without
/// the duplicated closing vertex.
fn parse_ring(
    idx: usize,
    id: &str,
    ring_idx: usize,
    ring: &Value,
) -> Result<Vec<(f64, f64)>, GeometryError> {
    let fail = |message: String| GeometryError::GeoJson { message };
    let raw = ring
        .as_array()
        .ok_or_else(|| fail(format!("feature {idx} ({id}): ring {ring_idx} must be an array")))?;
    let mut pts = Vec::with_capacity(raw.len());
    for (k, pos) in raw.iter().enumerate() {
        let pair = pos.as_array().filter(|a| a.len() >= 2).ok_or_else(|| {
            fail(format!(
                "feature {idx} ({id}): ring {ring_idx} position {k} is not an [x, y] array"
            ))
        })?;
        let x = pair[0].as_f64();
        let y = pair[1].as_f64();
        match (x, y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => pts.push((x, y)),
            _ => {
                return Err(fail(format!(
                    "feature {idx} ({id}): ring {ring_idx} position {k} has non-finite coordinates"
                )))
            }
        }
    }
    if pts.len() < 4 || pts.first() != pts.last() {
        return Err(fail(format!(
            "feature {idx} ({id}): ring {ring_idx} must be closed (first position repeated last)"
        )));
    }
    pts.pop();
    if pts.len() < 3 {
        return Err(GeometryError::DegenerateRing { id: id.to_string(), ring: ring_idx });
    }
    Ok(pts)
}

/// Shoelace area (absolute) and centroid of a ring given without the
/// closing vertex.
fn ring_area_centroid(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let mut twice_area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for k in 0..pts.len() {
        let (x0, y0) = pts[k];
        let (x1, y1) = pts[(k + 1) % pts.len()];
        let w = x0 * y1 - x1 * y0;
        twice_area += w;
        cx += (x0 + x1) * w;
        cy += (y0 + y1) * w;
    }
    if twice_area == 0.0 {
        // Degenerate ring: fall back to the vertex mean; caller rejects the
        // unit if the net area is not positive.
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        return (0.0, mx, my);
    }
    let area = twice_area / 2.0;
    (area.abs(), cx / (3.0 * twice_area), cy / (3.0 * twice_area))
}
