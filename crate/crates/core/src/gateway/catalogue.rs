//! Catalogue search: equality filters on flattened keys plus a bounding box.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::auth::{EntityKind, EntityRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogueEntry {
    pub entity_id: String,
    pub provider: String,
    pub kind: EntityKind,
    pub catalogue_item: Value,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    /// Parses `minlat,minlon,maxlat,maxlon`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("bbox {s:?} is not four numbers"))?;
        let [min_lat, min_lon, max_lat, max_lon] = parts[..] else {
            return Err(format!("bbox {s:?} needs minlat,minlon,maxlat,maxlon"));
        };
        if min_lat > max_lat || min_lon > max_lon {
            return Err(format!("bbox {s:?} has min above max"));
        }
        Ok(Self { min_lat, min_lon, max_lat, max_lon })
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatalogueQuery {
    pub provider: Option<String>,
    pub bbox: Option<BoundingBox>,
    /// Flattened key (`location.city`) to required value.
    pub equals: BTreeMap<String, String>,
}

impl CatalogueQuery {
    pub fn from_params(params: impl IntoIterator<Item = (String, String)>) -> Result<Self, String> {
        let mut q = Self::default();
        for (k, v) in params {
            match k.as_str() {
                "provider" => q.provider = Some(v),
                "bbox" => q.bbox = Some(BoundingBox::parse(&v)?),
                _ => {
                    q.equals.insert(k, v);
                }
            }
        }
        Ok(q)
    }

    pub fn matches(&self, entity: &EntityRecord) -> bool {
        if self.provider.as_ref().is_some_and(|p| p != &entity.owner) {
            return false;
        }
        let flat = flatten(&entity.catalogue_item);
        for (key, want) in &self.equals {
            let got = match key.as_str() {
                "entity_id" | "id" => Some(entity.entity_id.clone()),
                "kind" => Some(format!("{:?}", entity.kind).to_lowercase()),
                _ => flat.get(key).map(scalar_text),
            };
            if got.as_deref() != Some(want.as_str()) {
                return false;
            }
        }
        if let Some(bbox) = &self.bbox {
            match coordinates(&flat) {
                Some((lat, lon)) if bbox.contains(lat, lon) => {}
                _ => return false,
            }
        }
        true
    }
}

/// Flattens nested objects into dotted keys; arrays index numerically.
pub fn flatten(value: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        let join = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        match v {
            Value::Object(map) => map.iter().for_each(|(k, v)| walk(&join(k), v, out)),
            Value::Array(items) => items
                .iter()
                .enumerate()
                .for_each(|(i, v)| walk(&join(&i.to_string()), v, out)),
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

/// First latitude/longitude pair found among the flattened keys.
fn coordinates(flat: &BTreeMap<String, Value>) -> Option<(f64, f64)> {
    let find = |names: &[&str]| {
        flat.iter().find_map(|(k, v)| {
            let leaf = k.rsplit('.').next().unwrap_or(k).to_ascii_lowercase();
            names.contains(&leaf.as_str()).then(|| number(v)).flatten()
        })
    };
    Some((find(&["lat", "latitude"])?, find(&["lon", "lng", "long", "longitude"])?))
}

pub fn search(entities: &[EntityRecord], query: &CatalogueQuery) -> Vec<CatalogueEntry> {
    let mut out: Vec<CatalogueEntry> = entities
        .iter()
        .filter(|e| query.matches(e))
        .map(|e| CatalogueEntry {
            entity_id: e.entity_id.clone(),
            provider: e.owner.clone(),
            kind: e.kind,
            catalogue_item: e.catalogue_item.clone(),
        })
        .collect();
    out.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::KeyDigest;
    use serde_json::json;

    fn entity(id: &str, owner: &str, item: Value) -> EntityRecord {
        EntityRecord {
            entity_id: id.into(),
            owner: owner.into(),
            kind: EntityKind::Publisher,
            api_key: KeyDigest::compute("x", 1),
            catalogue_item: item,
            created_at: 0,
        }
    }

    fn corpus() -> Vec<EntityRecord> {
        vec![
            entity("flood-1", "pune", json!({"type": "flood-sensor", "location": {"lat": 18.52, "lon": 73.85}})),
            entity("aqi-7", "pune", json!({"type": "aqm", "location": {"latitude": "18.60", "longitude": "73.80"}})),
            entity("bus-3", "metro", json!({"type": "gps", "tags": ["transit", "live"]})),
        ]
    }

    fn ids(q: &CatalogueQuery) -> Vec<String> {
        search(&corpus(), q).into_iter().map(|e| e.entity_id).collect()
    }

    #[test]
    fn flattens_nested_keys() {
        let flat = flatten(&json!({"a": {"b": 1, "c": [true, "x"]}}));
        assert_eq!(flat.get("a.b"), Some(&json!(1)));
        assert_eq!(flat.get("a.c.1"), Some(&json!("x")));
    }

    #[test]
    fn filters_combine_conjunctively() {
        let q = CatalogueQuery::from_params([("provider".into(), "pune".into())]).unwrap();
        assert_eq!(ids(&q), vec!["aqi-7", "flood-1"]);
        let q = CatalogueQuery::from_params([
            ("provider".into(), "pune".into()),
            ("type".into(), "aqm".into()),
        ])
        .unwrap();
        assert_eq!(ids(&q), vec!["aqi-7"]);
        let q = CatalogueQuery::from_params([("tags.0".into(), "transit".into())]).unwrap();
        assert_eq!(ids(&q), vec!["bus-3"]);
        assert_eq!(ids(&CatalogueQuery::default()).len(), 3);
    }

    #[test]
    fn bounding_box() {
        let q = CatalogueQuery::from_params([("bbox".into(), "18.5,73.8,18.55,73.9".into())]).unwrap();
        assert_eq!(ids(&q), vec!["flood-1"]);
        let q = CatalogueQuery::from_params([("bbox".into(), "18,73,19,74".into())]).unwrap();
        assert_eq!(ids(&q), vec!["aqi-7", "flood-1"]);
        assert!(BoundingBox::parse("1,2,3").is_err());
        assert!(BoundingBox::parse("5,0,1,1").is_err());
    }
}
