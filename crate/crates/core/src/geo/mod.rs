//! Region ingestion: GeoJSON footprints to a local metric frame.
//!
//! The parser accepts an RFC 7946 FeatureCollection, keeps Polygon and
//! MultiPolygon features, projects them into a local tangent frame centered
//! on the region, and resolves missing heights through a configurable
//! policy. Everything downstream consumes the resulting [`Region`].

mod polygon;

pub use polygon::{Bbox, Polygon, Ring};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// WGS84 equatorial radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Latitudes at or beyond this magnitude are rejected by the projection.
pub const MAX_LATITUDE_DEG: f64 = 85.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("malformed JSON at byte offset {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("document is not a GeoJSON FeatureCollection: {0}")]
    NotFeatureCollection(String),
    #[error("no valid buildings in document ({issues} feature issues)")]
    EmptyRegion { issues: usize },
    #[error("latitude {0} out of range (|lat| must be < {MAX_LATITUDE_DEG})")]
    LatitudeOutOfRange(f64),
    #[error("building {id}: non-positive height {height}")]
    InvalidHeight { id: String, height: f64 },
}

/// One building footprint in the local metric frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub id: String,
    /// Footprint in local meters, outer ring counter-clockwise.
    pub footprint: Polygon,
    /// Resolved height in meters, always positive.
    pub height: f64,
    /// Area-weighted centroid of the outer ring, local meters.
    pub centroid: [f64; 2],
    /// Floor count as tagged in the source, when present.
    pub levels: Option<i64>,
}

impl BuildingRecord {
    pub fn bbox(&self) -> Bbox {
        self.footprint.bbox()
    }
}

/// A parsed region: immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    /// (lon, lat) degrees; the centroid of all footprint centroids.
    pub origin: [f64; 2],
    /// Sorted by id.
    pub buildings: Vec<BuildingRecord>,
    /// Local-meter rectangle containing every footprint vertex.
    pub bounds: Bbox,
}

impl Region {
    pub fn building(&self, id: &str) -> Option<&BuildingRecord> {
        self.buildings.iter().find(|b| b.id == id)
    }

    /// Canonical JSON dump for inspection and debugging.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("region serializes")
    }
}

/// Fallbacks for buildings with missing height information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightPolicy {
    pub meters_per_level: f64,
    pub default_height: f64,
}

impl Default for HeightPolicy {
    fn default() -> Self {
        HeightPolicy {
            meters_per_level: 3.0,
            default_height: 10.0,
        }
    }
}

/// Resolves a building height from explicit height, floor count, or policy
/// default, in that order.
pub fn resolve_height(
    id: &str,
    height: Option<f64>,
    levels: Option<i64>,
    policy: &HeightPolicy,
) -> Result<f64, GeoError> {
    if let Some(h) = height {
        if h <= 0.0 || !h.is_finite() {
            return Err(GeoError::InvalidHeight {
                id: id.to_string(),
                height: h,
            });
        }
        return Ok(h);
    }
    if let Some(l) = levels {
        let h = l as f64 * policy.meters_per_level;
        if h > 0.0 {
            return Ok(h);
        }
    }
    Ok(policy.default_height)
}

/// Equirectangular projection into the local tangent frame at `origin`.
///
/// `x = (lon - lon0) * cos(lat0) * R * pi/180`, `y = (lat - lat0) * R * pi/180`.
/// Sub-centimeter error within a few kilometers of the origin.
pub fn to_local_frame(lon: f64, lat: f64, origin: [f64; 2]) -> Result<[f64; 2], GeoError> {
    for l in [lat, origin[1]] {
        if l.abs() >= MAX_LATITUDE_DEG {
            return Err(GeoError::LatitudeOutOfRange(l));
        }
    }
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let x = (lon - origin[0]) * origin[1].to_radians().cos() * k;
    let y = (lat - origin[1]) * k;
    Ok([x, y])
}

/// Exact inverse of [`to_local_frame`] for the same origin.
pub fn from_local_frame(x: f64, y: f64, origin: [f64; 2]) -> [f64; 2] {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let lon = x / (origin[1].to_radians().cos() * k) + origin[0];
    let lat = y / k + origin[1];
    [lon, lat]
}

/// A non-fatal problem encountered while parsing one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIssue {
    pub feature_index: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Per-document parse report: issues do not abort the parse.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub issues: Vec<FeatureIssue>,
}

/// Successful parse output.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub region: Region,
    pub report: ParseReport,
}

struct RawBuilding {
    id: String,
    rings_deg: Vec<Vec<[f64; 2]>>,
    height: Option<f64>,
    levels: Option<i64>,
}

/// Parses a GeoJSON FeatureCollection into a [`Region`].
///
/// MultiPolygon features split into one record per part with `_<part>`
/// suffixed ids; ids default to `bldg_<index>` when absent. Unsupported
/// geometries and degenerate rings are collected in the report.
pub fn parse_region(document: &[u8], policy: &HeightPolicy) -> Result<ParseOutcome, GeoError> {
    let value: Value = serde_json::from_slice(document).map_err(|e| GeoError::Json {
        offset: byte_offset(document, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let obj = value
        .as_object()
        .ok_or_else(|| GeoError::NotFeatureCollection("root is not an object".into()))?;
    if obj.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::NotFeatureCollection(
            "type is not \"FeatureCollection\"".into(),
        ));
    }
    let features = obj
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoError::NotFeatureCollection("missing \"features\" array".into()))?;
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or("region")
        .to_string();

    let mut report = ParseReport::default();
    let mut raw: Vec<RawBuilding> = Vec::new();

    for (index, feature) in features.iter().enumerate() {
        match extract_feature(index, feature) {
            Ok(parts) => raw.extend(parts),
            Err(issue) => report.issues.push(issue),
        }
    }

    if raw.is_empty() {
        return Err(GeoError::EmptyRegion {
            issues: report.issues.len(),
        });
    }

    // Origin: mean of outer-ring centroids, computed in degree space.
    let mut origin = [0.0, 0.0];
    for b in &raw {
        let c = Ring(close_ring(&b.rings_deg[0])).centroid();
        origin[0] += c[0];
        origin[1] += c[1];
    }
    origin[0] /= raw.len() as f64;
    origin[1] /= raw.len() as f64;

    let mut buildings: Vec<BuildingRecord> = Vec::new();
    let mut bounds = Bbox::empty();
    for b in raw {
        let mut rings_m: Vec<Ring> = Vec::new();
        let mut bad: Option<String> = None;
        for ring_deg in &b.rings_deg {
            let mut pts = Vec::with_capacity(ring_deg.len());
            for &[lon, lat] in ring_deg {
                match to_local_frame(lon, lat, origin) {
                    Ok(p) => pts.push(p),
                    Err(e) => {
                        bad = Some(e.to_string());
                        break;
                    }
                }
            }
            if bad.is_some() {
                break;
            }
            match Ring::new(pts) {
                Some(r) => rings_m.push(r),
                None => {
                    bad = Some("degenerate ring (fewer than 3 distinct vertices)".into());
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            report.issues.push(FeatureIssue {
                feature_index: usize::MAX,
                id: Some(b.id),
                reason,
            });
            continue;
        }
        let outer = rings_m.remove(0);
        if outer.area() <= 0.0 {
            report.issues.push(FeatureIssue {
                feature_index: usize::MAX,
                id: Some(b.id),
                reason: "zero-area footprint".into(),
            });
            continue;
        }
        let footprint = Polygon::new(outer, rings_m);
        let height = match resolve_height(&b.id, b.height, b.levels, policy) {
            Ok(h) => h,
            Err(e) => {
                report.issues.push(FeatureIssue {
                    feature_index: usize::MAX,
                    id: Some(b.id),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if buildings.iter().any(|x| x.id == b.id) {
            report.issues.push(FeatureIssue {
                feature_index: usize::MAX,
                id: Some(b.id),
                reason: "duplicate building id".into(),
            });
            continue;
        }
        bounds = bounds.union(&footprint.bbox());
        let centroid = footprint.centroid();
        buildings.push(BuildingRecord {
            id: b.id,
            footprint,
            height,
            centroid,
            levels: b.levels,
        });
    }

    if buildings.is_empty() {
        return Err(GeoError::EmptyRegion {
            issues: report.issues.len(),
        });
    }
    buildings.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(ParseOutcome {
        region: Region {
            name,
            origin,
            buildings,
            bounds,
        },
        report,
    })
}

fn extract_feature(index: usize, feature: &Value) -> Result<Vec<RawBuilding>, FeatureIssue> {
    let issue = |reason: &str, id: Option<String>| FeatureIssue {
        feature_index: index,
        id,
        reason: reason.to_string(),
    };
    let obj = feature
        .as_object()
        .ok_or_else(|| issue("feature is not an object", None))?;
    let props = obj.get("properties").and_then(Value::as_object);
    let id = props
        .and_then(|p| p.get("id"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("bldg_{index}"));
    let height = props.and_then(|p| p.get("height")).and_then(Value::as_f64);
    let levels = props.and_then(|p| p.get("levels")).and_then(Value::as_i64);

    let geometry = obj
        .get("geometry")
        .and_then(Value::as_object)
        .ok_or_else(|| issue("missing geometry", Some(id.clone())))?;
    let gtype = geometry.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| issue("missing coordinates", Some(id.clone())))?;

    match gtype {
        "Polygon" => {
            let rings = parse_polygon_coords(coords)
                .map_err(|reason| issue(&reason, Some(id.clone())))?;
            Ok(vec![RawBuilding {
                id,
                rings_deg: rings,
                height,
                levels,
            }])
        }
        "MultiPolygon" => {
            let parts = coords
                .as_array()
                .ok_or_else(|| issue("MultiPolygon coordinates not an array", Some(id.clone())))?;
            let mut out = Vec::new();
            for (part_idx, part) in parts.iter().enumerate() {
                let rings = parse_polygon_coords(part)
                    .map_err(|reason| issue(&reason, Some(id.clone())))?;
                out.push(RawBuilding {
                    id: format!("{id}_{part_idx}"),
                    rings_deg: rings,
                    height,
                    levels,
                });
            }
            if out.is_empty() {
                return Err(issue("empty MultiPolygon", Some(id)));
            }
            Ok(out)
        }
        other => Err(issue(
            &format!("unsupported geometry type \"{other}\""),
            Some(id),
        )),
    }
}

fn parse_polygon_coords(coords: &Value) -> Result<Vec<Vec<[f64; 2]>>, String> {
    let rings = coords
        .as_array()
        .ok_or_else(|| "polygon coordinates not an array".to_string())?;
    if rings.is_empty() {
        return Err("polygon has no rings".into());
    }
    let mut out = Vec::with_capacity(rings.len());
    for ring in rings {
        let verts = ring
            .as_array()
            .ok_or_else(|| "ring is not an array".to_string())?;
        let mut pts = Vec::with_capacity(verts.len());
        for v in verts {
            let pair = v.as_array().ok_or_else(|| "vertex is not an array".to_string())?;
            if pair.len() < 2 {
                return Err("vertex has fewer than 2 coordinates".into());
            }
            let lon = pair[0].as_f64().ok_or_else(|| "non-numeric longitude".to_string())?;
            let lat = pair[1].as_f64().ok_or_else(|| "non-numeric latitude".to_string())?;
            pts.push([lon, lat]);
        }
        out.push(pts);
    }
    Ok(out)
}

fn close_ring(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut v = pts.to_vec();
    if v.first() != v.last() {
        if let Some(first) = v.first().copied() {
            v.push(first);
        }
    }
    v
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current_line = 1usize;
    let mut offset = 0usize;
    for (i, &b) in bytes.iter().enumerate() {
        if current_line == line {
            offset = i;
            break;
        }
        if b == b'\n' {
            current_line += 1;
            offset = i + 1;
        }
    }
    (offset + column.saturating_sub(1)).min(bytes.len())
}
