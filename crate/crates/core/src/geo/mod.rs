//! Spatial matching of homes to risk maps, flood extents and administrative
//! units, plus contiguity weights between units.
//!
//! Geometry is planar on lon/lat. Points on an edge count as inside risk and
//! flood-extent polygons; for administrative partitions a boundary point goes
//! to the lexicographically smallest unit id.

mod contiguity;
mod geometry;
mod index;
mod layer;

pub use contiguity::{queen_contiguity, ContiguityMatrix};
pub use geometry::{
    on_segment, segments_intersect, Containment, Coord, Envelope, MultiPolygon, Polygon, Ring,
};
pub use index::{IndexedLayer, SpatialIndex};
pub use layer::{Feature, LayerKind, PolygonLayer};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{HitClass, RiskLevel, Transaction, UNASSIGNED};

/// Build the envelope index of a layer.
pub fn build_index(layer: &PolygonLayer) -> Result<SpatialIndex> {
    SpatialIndex::build(layer)
}

/// Most severe level among risk polygons covering the point.
pub fn tag_risk(point: Coord, risk: &IndexedLayer) -> RiskLevel {
    risk.locate(point)
        .into_iter()
        .filter_map(|(i, _)| risk.layer.features[i].risk_level())
        .max()
        .unwrap_or(RiskLevel::None)
}

/// Administrative layers; province and region fall back to the
/// `province_id` / `region_id` attributes of the municipality.
#[derive(Debug, Clone)]
pub struct AdminLayers {
    pub municipality: IndexedLayer,
    pub omi_zone: Option<IndexedLayer>,
    pub census_tract: Option<IndexedLayer>,
    pub province: Option<IndexedLayer>,
    pub region: Option<IndexedLayer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminAssignment {
    pub municipality_id: String,
    pub omi_zone_id: String,
    pub census_tract_id: String,
    pub province_id: String,
    pub region_id: String,
}

/// Unit of a partition covering `p`, or `None` when no unit does.
///
/// Errors when two units both contain `p` in their interior.
pub fn partition_unit(level: &str, layer: &IndexedLayer, p: Coord) -> Result<Option<usize>> {
    let hits = layer.locate(p);
    let interior: Vec<usize> = hits
        .iter()
        .filter(|(_, c)| *c == Containment::Inside)
        .map(|(i, _)| *i)
        .collect();
    if interior.len() > 1 {
        let f = &layer.layer.features;
        return Err(Error::Overlap {
            level: level.to_string(),
            first: f[interior[0]].id.clone(),
            second: f[interior[1]].id.clone(),
            lon: p[0],
            lat: p[1],
        });
    }
    if let Some(&i) = interior.first() {
        return Ok(Some(i));
    }
    Ok(hits
        .into_iter()
        .map(|(i, _)| i)
        .min_by(|&a, &b| layer.layer.features[a].id.cmp(&layer.layer.features[b].id)))
}

fn unit_id(level: &str, layer: Option<&IndexedLayer>, p: Coord) -> Result<Option<String>> {
    match layer {
        None => Ok(None),
        Some(l) => Ok(Some(
            partition_unit(level, l, p)?
                .map(|i| l.layer.features[i].id.clone())
                .unwrap_or_else(|| UNASSIGNED.to_string()),
        )),
    }
}

pub fn assign_admin(p: Coord, admin: &AdminLayers) -> Result<AdminAssignment> {
    let muni = partition_unit("municipality", &admin.municipality, p)?;
    let muni_feature = muni.map(|i| &admin.municipality.layer.features[i]);
    let from_muni = |key: &str| {
        muni_feature
            .and_then(|f| f.get(key))
            .unwrap_or(UNASSIGNED)
            .to_string()
    };
    let unassigned = || UNASSIGNED.to_string();
    Ok(AdminAssignment {
        municipality_id: muni_feature.map_or_else(unassigned, |f| f.id.clone()),
        omi_zone_id: unit_id("omi_zone", admin.omi_zone.as_ref(), p)?.unwrap_or_else(unassigned),
        census_tract_id: unit_id("census_tract", admin.census_tract.as_ref(), p)?
            .unwrap_or_else(unassigned),
        province_id: unit_id("province", admin.province.as_ref(), p)?
            .unwrap_or_else(|| from_muni("province_id")),
        region_id: unit_id("region", admin.region.as_ref(), p)?
            .unwrap_or_else(|| from_muni("region_id")),
    })
}

/// Fill administrative ids and the risk level of every transaction.
pub fn tag_transactions(
    rows: &mut [Transaction],
    risk: &IndexedLayer,
    admin: &AdminLayers,
) -> Result<()> {
    let tag = |t: &mut Transaction| -> Result<()> {
        let p = [t.lon, t.lat];
        let a = assign_admin(p, admin)?;
        t.municipality_id = Some(a.municipality_id);
        t.omi_zone_id = Some(a.omi_zone_id);
        t.census_tract_id = Some(a.census_tract_id);
        t.province_id = Some(a.province_id);
        t.region_id = Some(a.region_id);
        t.risk_level = Some(tag_risk(p, risk));
        Ok(())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        rows.par_iter_mut().try_for_each(tag)
    }
    #[cfg(not(feature = "parallel"))]
    {
        rows.iter_mut().try_for_each(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitClassification {
    pub class: HitClass,
    pub event_code: String,
    pub affected_municipality: bool,
}

/// Municipalities whose polygon intersects the flood extent.
pub fn affected_municipalities(
    extent: &PolygonLayer,
    municipalities: &IndexedLayer,
) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for f in &extent.features {
        let env = f.geometry.envelope();
        for i in municipalities.index.candidates_in(&env) {
            let m = &municipalities.layer.features[i];
            if m.geometry.intersects(&f.geometry) {
                out.insert(m.id.clone());
            }
        }
    }
    out
}

/// Split risk-tagged, municipality-assigned homes by their exposure to one
/// flood event.
pub fn classify_hit(
    rows: &[Transaction],
    extent: &PolygonLayer,
    municipalities: &IndexedLayer,
    event_code: &str,
) -> Result<Vec<HitClassification>> {
    if extent.is_empty() {
        return Err(Error::invalid("flood extent layer is empty"));
    }
    let extent_idx = IndexedLayer::new(extent.clone())?;
    let missing: Vec<&str> = [
        rows.iter().any(|t| t.risk_level.is_none()).then_some("risk_level"),
        rows.iter()
            .any(|t| t.municipality_id.is_none())
            .then_some("municipality_id"),
    ]
    .into_iter()
    .flatten()
    .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing.join(", ")));
    }

    let inside: Vec<bool> = rows
        .iter()
        .map(|t| !extent_idx.locate([t.lon, t.lat]).is_empty())
        .collect();
    let mut affected = affected_municipalities(extent, municipalities);
    for (t, &hit) in rows.iter().zip(&inside) {
        if hit {
            if let Some(m) = t.municipality_id.as_deref().filter(|m| *m != UNASSIGNED) {
                affected.insert(m.to_string());
            }
        }
    }

    Ok(rows
        .iter()
        .zip(&inside)
        .map(|(t, &hit)| {
            let in_affected = t
                .municipality_id
                .as_deref()
                .is_some_and(|m| affected.contains(m));
            let class = match (hit, t.risk_flag()) {
                (true, true) => HitClass::HitRisk,
                (true, false) => HitClass::HitNoRisk,
                (false, true) if in_affected => HitClass::NoHitRisk,
                _ => HitClass::Outside,
            };
            HitClassification {
                class,
                event_code: event_code.to_string(),
                affected_municipality: in_affected || hit,
            }
        })
        .collect())
}

/// Copy classes onto the transactions.
pub fn attach_hit_classes(rows: &mut [Transaction], classes: &[HitClassification]) {
    for (t, c) in rows.iter_mut().zip(classes) {
        t.hit_class = Some(c.class);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(id: &str, x: f64, y: f64, side: f64) -> Feature {
        Feature::new(id, MultiPolygon(vec![Polygon::rect(x, y, x + side, y + side)]))
    }

    fn risk_layer(parts: &[(&str, f64, f64, f64, &str)]) -> IndexedLayer {
        let features = parts
            .iter()
            .map(|(id, x, y, s, level)| square(id, *x, *y, *s).with("level", *level))
            .collect();
        IndexedLayer::new(PolygonLayer::new("risk", LayerKind::Risk, features).unwrap()).unwrap()
    }

    #[test]
    fn single_square_index() {
        let layer =
            PolygonLayer::new("a", LayerKind::Admin, vec![square("s", 0.0, 0.0, 1.0)]).unwrap();
        let idx = build_index(&layer).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.candidates([0.5, 0.5]), vec![0]);
        assert!(idx.candidates([2.0, 2.0]).is_empty());
    }

    #[test]
    fn empty_layer_cannot_be_indexed() {
        let layer = PolygonLayer::new("a", LayerKind::Admin, vec![]).unwrap();
        assert!(build_index(&layer).is_err());
    }

    #[test]
    fn risk_takes_max_severity() {
        let risk = risk_layer(&[("l", 0.0, 0.0, 2.0, "low"), ("h", 0.5, 0.5, 1.0, "high")]);
        assert_eq!(tag_risk([0.2, 0.2], &risk), RiskLevel::Low);
        assert_eq!(tag_risk([1.0, 1.0], &risk), RiskLevel::High);
        assert_eq!(tag_risk([5.0, 5.0], &risk), RiskLevel::None);
        // Boundary counts as inside.
        assert_eq!(tag_risk([1.5, 1.0], &risk), RiskLevel::High);
    }

    fn nested_admin() -> AdminLayers {
        let muni = PolygonLayer::new(
            "m",
            LayerKind::Admin,
            vec![
                square("M1", 0.0, 0.0, 2.0)
                    .with("province_id", "P1")
                    .with("region_id", "R1"),
                square("M2", 2.0, 0.0, 2.0)
                    .with("province_id", "P1")
                    .with("region_id", "R1"),
            ],
        )
        .unwrap();
        let zones = PolygonLayer::new(
            "z",
            LayerKind::Admin,
            vec![square("Z1", 0.0, 0.0, 1.0), square("Z2", 2.0, 0.0, 2.0)],
        )
        .unwrap();
        let tracts = PolygonLayer::new("t", LayerKind::Admin, vec![square("T1", 0.0, 0.0, 0.5)])
            .unwrap();
        AdminLayers {
            municipality: IndexedLayer::new(muni).unwrap(),
            omi_zone: Some(IndexedLayer::new(zones).unwrap()),
            census_tract: Some(IndexedLayer::new(tracts).unwrap()),
            province: None,
            region: None,
        }
    }

    #[test]
    fn nested_assignment() {
        let admin = nested_admin();
        let a = assign_admin([0.25, 0.25], &admin).unwrap();
        assert_eq!(
            (a.municipality_id.as_str(), a.omi_zone_id.as_str(), a.census_tract_id.as_str()),
            ("M1", "Z1", "T1")
        );
        assert_eq!((a.province_id.as_str(), a.region_id.as_str()), ("P1", "R1"));
        let coastal = assign_admin([1.5, 1.5], &admin).unwrap();
        assert_eq!(coastal.census_tract_id, UNASSIGNED);
        assert_eq!(coastal.omi_zone_id, UNASSIGNED);
        let sea = assign_admin([9.0, 9.0], &admin).unwrap();
        assert_eq!(sea.municipality_id, UNASSIGNED);
        assert_eq!(sea.region_id, UNASSIGNED);
    }

    #[test]
    fn shared_edge_goes_to_smallest_id() {
        let admin = nested_admin();
        let a = assign_admin([2.0, 1.0], &admin).unwrap();
        assert_eq!(a.municipality_id, "M1");
    }

    #[test]
    fn overlapping_partition_is_an_error() {
        let muni = PolygonLayer::new(
            "m",
            LayerKind::Admin,
            vec![square("A", 0.0, 0.0, 2.0), square("B", 1.0, 1.0, 2.0)],
        )
        .unwrap();
        let layer = IndexedLayer::new(muni).unwrap();
        assert!(matches!(
            partition_unit("municipality", &layer, [1.5, 1.5]),
            Err(Error::Overlap { .. })
        ));
    }
}
