use std::collections::BTreeMap;
use std::path::Path;

use geojson::{FeatureCollection, GeoJson, Geometry, JsonObject, JsonValue, Value};
use serde::{Deserialize, Serialize};

use super::geometry::{Envelope, MultiPolygon, Polygon};
use crate::error::{Error, Result};
use crate::ingest::RiskLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Risk,
    Admin,
    FloodExtent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub id: String,
    pub geometry: MultiPolygon,
    pub properties: BTreeMap<String, String>,
}

impl Feature {
    pub fn new(id: impl Into<String>, geometry: MultiPolygon) -> Self {
        Feature {
            id: id.into(),
            geometry,
            properties: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.properties.insert(key.to_string(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.properties.get(key).map(String::as_str)
    }

    pub fn risk_level(&self) -> Option<RiskLevel> {
        self.get("level").and_then(RiskLevel::parse)
    }
}

/// Named, validated collection of polygon features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonLayer {
    pub name: String,
    pub kind: LayerKind,
    pub features: Vec<Feature>,
    envelopes: Vec<Envelope>,
}

impl PolygonLayer {
    /// Validates every ring and, for risk layers, the `level` attribute.
    pub fn new(name: impl Into<String>, kind: LayerKind, features: Vec<Feature>) -> Result<Self> {
        let mut envelopes = Vec::with_capacity(features.len());
        for f in &features {
            f.geometry.validate().map_err(|reason| Error::Geometry {
                feature: f.id.clone(),
                reason,
            })?;
            if kind == LayerKind::Risk {
                match f.risk_level() {
                    Some(RiskLevel::None) | None => {
                        return Err(Error::Geometry {
                            feature: f.id.clone(),
                            reason: "risk feature needs level in {low, medium, high}".into(),
                        })
                    }
                    Some(_) => {}
                }
            }
            envelopes.push(f.geometry.envelope());
        }
        Ok(PolygonLayer {
            name: name.into(),
            kind,
            features,
            envelopes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn envelope(&self, i: usize) -> Envelope {
        self.envelopes[i]
    }

    pub fn from_geojson_str(name: &str, kind: LayerKind, text: &str) -> Result<Self> {
        let gj: GeoJson = text.parse().map_err(|e: geojson::Error| Error::GeoJson(e.to_string()))?;
        let fc = FeatureCollection::try_from(gj).map_err(|e| Error::GeoJson(e.to_string()))?;
        let mut features = Vec::with_capacity(fc.features.len());
        for (i, f) in fc.features.into_iter().enumerate() {
            let mut properties = BTreeMap::new();
            if let Some(props) = &f.properties {
                for (k, v) in props {
                    let s = match v {
                        JsonValue::String(s) => s.clone(),
                        JsonValue::Null => continue,
                        other => other.to_string(),
                    };
                    properties.insert(k.clone(), s);
                }
            }
            let id = properties
                .get("id")
                .cloned()
                .or_else(|| {
                    f.id.as_ref().map(|id| match id {
                        geojson::feature::Id::String(s) => s.clone(),
                        geojson::feature::Id::Number(n) => n.to_string(),
                    })
                })
                .unwrap_or_else(|| format!("{name}-{i}"));
            let geometry = f.geometry.ok_or_else(|| Error::Geometry {
                feature: id.clone(),
                reason: "missing geometry".into(),
            })?;
            let geometry = to_multipolygon(&geometry.value).map_err(|reason| Error::Geometry {
                feature: id.clone(),
                reason,
            })?;
            features.push(Feature {
                id,
                geometry,
                properties,
            });
        }
        PolygonLayer::new(name, kind, features)
    }

    pub fn read_geojson(path: &Path, kind: LayerKind) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_geojson_str(&name, kind, &text)
    }

    /// FeatureCollection text; `meta` goes in as a foreign member.
    pub fn to_geojson_string(&self, meta: Option<&JsonObject>) -> String {
        let features = self
            .features
            .iter()
            .map(|f| {
                let mut props = JsonObject::new();
                props.insert("id".into(), JsonValue::String(f.id.clone()));
                for (k, v) in &f.properties {
                    props.insert(k.clone(), JsonValue::String(v.clone()));
                }
                geojson::Feature {
                    bbox: None,
                    geometry: Some(Geometry::new(from_multipolygon(&f.geometry))),
                    id: None,
                    properties: Some(props),
                    foreign_members: None,
                }
            })
            .collect();
        let fc = FeatureCollection {
            bbox: None,
            features,
            foreign_members: meta.map(|m| {
                let mut fm = JsonObject::new();
                fm.insert("meta".into(), JsonValue::Object(m.clone()));
                fm
            }),
        };
        GeoJson::FeatureCollection(fc).to_string()
    }

    pub fn write_geojson(&self, path: &Path, meta: Option<&JsonObject>) -> Result<()> {
        std::fs::write(path, self.to_geojson_string(meta))?;
        Ok(())
    }
}

fn polygon_from(rings: &[Vec<Vec<f64>>]) -> std::result::Result<Polygon, String> {
    let rings = rings
        .iter()
        .map(|ring| {
            ring.iter()
                .map(|pos| match pos.as_slice() {
                    [x, y, ..] => Ok([*x, *y]),
                    _ => Err("position with fewer than 2 coordinates".to_string()),
                })
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Polygon::new(rings))
}

fn to_multipolygon(value: &Value) -> std::result::Result<MultiPolygon, String> {
    match value {
        Value::Polygon(rings) => Ok(MultiPolygon(vec![polygon_from(rings)?])),
        Value::MultiPolygon(parts) => Ok(MultiPolygon(
            parts
                .iter()
                .map(|p| polygon_from(p))
                .collect::<std::result::Result<_, _>>()?,
        )),
        other => Err(format!("unsupported geometry type {}", other.type_name())),
    }
}

fn from_multipolygon(mp: &MultiPolygon) -> Value {
    let conv = |p: &Polygon| -> Vec<Vec<Vec<f64>>> {
        p.rings
            .iter()
            .map(|r| r.iter().map(|c| vec![c[0], c[1]]).collect())
            .collect()
    };
    if mp.0.len() == 1 {
        Value::Polygon(conv(&mp.0[0]))
    } else {
        Value::MultiPolygon(mp.0.iter().map(conv).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RISK: &str = r#"{
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "properties": {"id": "r1", "level": "low"},
         "geometry": {"type": "Polygon", "coordinates": [[[0,0],[2,0],[2,2],[0,2],[0,0]]]}},
        {"type": "Feature", "id": 7, "properties": {"level": "high"},
         "geometry": {"type": "MultiPolygon", "coordinates": [
            [[[0,0],[1,0],[1,1],[0,1],[0,0]]],
            [[[5,5],[6,5],[6,6],[5,6],[5,5]]]]}}
      ]
    }"#;

    #[test]
    fn parses_polygons_and_multipolygons() {
        let layer = PolygonLayer::from_geojson_str("risk", LayerKind::Risk, RISK).unwrap();
        assert_eq!(layer.len(), 2);
        assert_eq!(layer.features[0].id, "r1");
        assert_eq!(layer.features[1].id, "7");
        assert_eq!(layer.features[1].geometry.0.len(), 2);
        assert_eq!(layer.features[1].risk_level(), Some(RiskLevel::High));
    }

    #[test]
    fn geojson_roundtrip() {
        let layer = PolygonLayer::from_geojson_str("risk", LayerKind::Risk, RISK).unwrap();
        let mut meta = JsonObject::new();
        meta.insert("config_hash".into(), JsonValue::String("abc".into()));
        let text = layer.to_geojson_string(Some(&meta));
        assert!(text.contains("config_hash"));
        let back = PolygonLayer::from_geojson_str("risk", LayerKind::Risk, &text).unwrap();
        assert_eq!(back.features[1].geometry, layer.features[1].geometry);
        assert_eq!(back.features[0].properties, layer.features[0].properties);
    }

    #[test]
    fn bad_ring_names_feature() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"id":"broken","level":"low"},
           "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1]]]}}]}"#;
        let err = PolygonLayer::from_geojson_str("x", LayerKind::Risk, text).unwrap_err();
        assert!(err.to_string().contains("broken"), "{err}");
    }

    #[test]
    fn risk_features_need_a_level() {
        let f = Feature::new("r", MultiPolygon(vec![Polygon::rect(0.0, 0.0, 1.0, 1.0)]));
        assert!(PolygonLayer::new("r", LayerKind::Risk, vec![f.clone()]).is_err());
        assert!(PolygonLayer::new("r", LayerKind::Admin, vec![f]).is_ok());
    }
}
