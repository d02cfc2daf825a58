//! GeoJSON subset: a FeatureCollection of Point, LineString and Polygon
//! features in projected meters, with a top-level `crs_note`.
//!
//! Polygons carry only their exterior ring; holes are rejected on read.
//! Rings are written closed (first vertex repeated).

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{Point, Ring};

pub const DEFAULT_CRS_NOTE: &str = "projected coordinates in meters";

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Point(Point),
    LineString(Vec<Point>),
    Polygon(Ring),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub geometry: Geometry,
    pub properties: Map<String, Value>,
}

impl Feature {
    pub fn new(geometry: Geometry) -> Self {
        Feature {
            geometry,
            properties: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.properties.insert(key.to_string(), value.into());
        self
    }

    pub fn str_prop(&self, key: &str) -> Option<&str> {
        self.properties.get(key).and_then(Value::as_str)
    }

    pub fn u64_prop(&self, key: &str) -> Option<u64> {
        self.properties.get(key).and_then(Value::as_u64)
    }

    pub fn f64_prop(&self, key: &str) -> Option<f64> {
        self.properties.get(key).and_then(Value::as_f64)
    }

    pub fn ring(&self) -> Option<&Ring> {
        match &self.geometry {
            Geometry::Polygon(r) => Some(r),
            _ => None,
        }
    }

    pub fn line(&self) -> Option<&[Point]> {
        match &self.geometry {
            Geometry::LineString(l) => Some(l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCollection {
    pub crs_note: String,
    pub features: Vec<Feature>,
}

impl Default for FeatureCollection {
    fn default() -> Self {
        FeatureCollection {
            crs_note: DEFAULT_CRS_NOTE.to_string(),
            features: Vec::new(),
        }
    }
}

fn pt(p: Point) -> Value {
    json!([p.x, p.y])
}

fn geometry_json(g: &Geometry) -> Value {
    match g {
        Geometry::Point(p) => json!({"type": "Point", "coordinates": pt(*p)}),
        Geometry::LineString(l) => json!({"type": "LineString", "coordinates": l.iter().map(|&p| pt(p)).collect::<Vec<_>>()}),
        Geometry::Polygon(r) => {
            let mut ring: Vec<Value> = r.vertices().iter().map(|&p| pt(p)).collect();
            ring.push(pt(r.vertices()[0]));
            json!({"type": "Polygon", "coordinates": [ring]})
        }
    }
}

fn parse_point(v: &Value) -> std::result::Result<Point, String> {
    let a = v.as_array().ok_or("coordinate is not an array")?;
    if a.len() < 2 {
        return Err("coordinate needs two numbers".into());
    }
    let x = a[0].as_f64().ok_or("coordinate is not numeric")?;
    let y = a[1].as_f64().ok_or("coordinate is not numeric")?;
    Ok(Point::new(x, y))
}

fn parse_points(v: &Value) -> std::result::Result<Vec<Point>, String> {
    v.as_array().ok_or("coordinates are not an array")?.iter().map(parse_point).collect()
}

fn parse_geometry(v: &Value) -> std::result::Result<Geometry, String> {
    let coords = v.get("coordinates").ok_or("geometry without coordinates")?;
    match v.get("type").and_then(Value::as_str) {
        Some("Point") => Ok(Geometry::Point(parse_point(coords)?)),
        Some("LineString") => {
            let l = parse_points(coords)?;
            if l.len() < 2 {
                return Err("LineString needs two points".into());
            }
            Ok(Geometry::LineString(l))
        }
        Some("Polygon") => {
            let rings = coords.as_array().ok_or("Polygon coordinates are not an array")?;
            match rings.len() {
                0 => Err("Polygon without rings".into()),
                1 => Ring::new(parse_points(&rings[0])?).map(Geometry::Polygon).map_err(|e| e.to_string()),
                _ => Err("Polygon holes are not supported".into()),
            }
        }
        Some(t) => Err(format!("unsupported geometry type {t}")),
        None => Err("geometry without type".into()),
    }
}

impl FeatureCollection {
    pub fn new(features: Vec<Feature>) -> Self {
        FeatureCollection {
            features,
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> Value {
        let features: Vec<Value> = self
            .features
            .iter()
            .map(|f| json!({"type": "Feature", "geometry": geometry_json(&f.geometry), "properties": f.properties}))
            .collect();
        json!({"type": "FeatureCollection", "crs_note": self.crs_note, "features": features})
    }

    pub fn to_string_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("json serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if v.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err("not a FeatureCollection".into());
        }
        let crs_note = v.get("crs_note").and_then(Value::as_str).unwrap_or(DEFAULT_CRS_NOTE).to_string();
        let features = v
            .get("features")
            .and_then(Value::as_array)
            .ok_or("missing features array")?
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let geometry = parse_geometry(f.get("geometry").ok_or(format!("feature {i}: no geometry"))?)
                    .map_err(|e| format!("feature {i}: {e}"))?;
                let properties = match f.get("properties") {
                    None | Some(Value::Null) => Map::new(),
                    Some(Value::Object(m)) => m.clone(),
                    Some(_) => return Err(format!("feature {i}: properties is not an object")),
                };
                Ok(Feature { geometry, properties })
            })
            .collect::<std::result::Result<_, String>>()?;
        Ok(FeatureCollection { crs_note, features })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string_pretty()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FeatureCollection::parse(&s).map_err(|m| Error::parse(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let fc = FeatureCollection::new(vec![
            Feature::new(Geometry::Polygon(Ring::rectangle(Point::new(0.1, 0.2), 10.0, 3.3).unwrap())).with("id", 7u64),
            Feature::new(Geometry::LineString(vec![Point::new(0.0, 0.0), Point::new(1.0 / 3.0, 2.0)])).with("highway", "trunk"),
            Feature::new(Geometry::Point(Point::new(-5.0, 1e6))),
        ]);
        let back = FeatureCollection::parse(&fc.to_string_pretty()).unwrap();
        assert_eq!(back, fc);
        assert_eq!(back.features[0].u64_prop("id"), Some(7));
    }

    #[test]
    fn rejects_holes_and_bad_types() {
        let hole = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},
            "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]],[[0,0],[1,0],[1,1],[0,0]]]}}]}"#;
        assert!(FeatureCollection::parse(hole).unwrap_err().contains("holes"));
        assert!(FeatureCollection::parse(r#"{"type":"Feature"}"#).is_err());
    }
}
