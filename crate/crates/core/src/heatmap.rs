//! GeoJSON heatmap layers of z-scored per-segment values.

use std::collections::BTreeMap;

use geojson::{Feature, FeatureCollection, JsonObject, JsonValue};

use crate::ingest::{segment_feature, StreetSegment};

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub collection: FeatureCollection,
    /// Segment ids in the field without geometry.
    pub missing: Vec<String>,
}

/// One LineString feature per segment of `field`, in segment id order,
/// with properties `segment_id`, `category_or_pollutant` and `zscore`.
pub fn emit_heatmap(layer: &str, field: &BTreeMap<String, f64>, segments: &[StreetSegment]) -> Heatmap {
    let by_id: BTreeMap<&str, &StreetSegment> = segments.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut features: Vec<Feature> = Vec::with_capacity(field.len());
    let mut missing = Vec::new();
    for (id, &z) in field {
        let Some(seg) = by_id.get(id.as_str()) else {
            log::warn!("heatmap {layer}: segment {id} has no geometry");
            missing.push(id.clone());
            continue;
        };
        let mut props = JsonObject::new();
        props.insert("segment_id".into(), JsonValue::from(id.clone()));
        props.insert("category_or_pollutant".into(), JsonValue::from(layer));
        props.insert("zscore".into(), JsonValue::from(z));
        let mut f = segment_feature(seg, props);
        f.id = None;
        features.push(f);
    }
    Heatmap {
        collection: FeatureCollection {
            bbox: None,
            features,
            foreign_members: None,
        },
        missing,
    }
}

/// File-name-safe form of a layer name.
pub fn layer_file_stem(layer: &str) -> String {
    let s: String = layer
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("layer{s}")
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::LatLon;

    fn seg(id: &str) -> StreetSegment {
        StreetSegment {
            id: id.into(),
            polyline: vec![LatLon::new(51.5, -0.1), LatLon::new(51.501, -0.1)],
            city: String::new(),
        }
    }

    #[test]
    fn two_features() {
        let field: BTreeMap<String, f64> = [("a".into(), -1.0), ("b".into(), 1.0)].into_iter().collect();
        let h = emit_heatmap("nature", &field, &[seg("b"), seg("a")]);
        assert_eq!(h.collection.features.len(), 2);
        let z: Vec<f64> = h
            .collection
            .features
            .iter()
            .map(|f| f.property("zscore").unwrap().as_f64().unwrap())
            .collect();
        assert_eq!(z, vec![-1.0, 1.0]);
        let text = h.collection.to_string();
        let back: geojson::GeoJson = text.parse().unwrap();
        assert!(matches!(back, geojson::GeoJson::FeatureCollection(_)));
    }

    #[test]
    fn empty_and_missing() {
        let h = emit_heatmap("x", &BTreeMap::new(), &[]);
        assert!(h.collection.features.is_empty());
        let field: BTreeMap<String, f64> = [("zz".into(), 0.5)].into_iter().collect();
        let h = emit_heatmap("x", &field, &[seg("a")]);
        assert_eq!(h.missing, vec!["zz"]);
    }

    #[test]
    fn file_stems() {
        assert_eq!(layer_file_stem("PM2.5"), "PM2.5");
        assert_eq!(layer_file_stem("smoking/tobacco"), "smoking_tobacco");
        assert_eq!(layer_file_stem(""), "layer");
        assert_eq!(layer_file_stem(".."), "layer..");
    }
}
