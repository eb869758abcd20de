use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Feature, LayerKind, MultiPolygon, Polygon, PolygonLayer};
use crate::ingest::RiskLevel;

use super::DgpConfig;

/// Shares of the at-risk band taken by low, medium and high hazard.
const LEVEL_SHARES: [f64; 3] = [11.0 / 23.0, 8.0 / 23.0, 4.0 / 23.0];

/// Vertical position of the river centerline at the west and east edges of
/// a region, as fractions of its height.
const RIVER_WEST: f64 = 0.35;
const RIVER_EAST: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Interiors overlap.
    pub fn overlaps(&self, o: &Rect) -> bool {
        self.min[0] < o.max[0] && o.min[0] < self.max[0] && self.min[1] < o.max[1] && o.min[1] < self.max[1]
    }

    fn polygon(&self) -> MultiPolygon {
        MultiPolygon(vec![Polygon::rect(self.min[0], self.min[1], self.max[0], self.max[1])])
    }

    /// Cell `(col, row)` of a `cols x rows` split.
    fn cell(&self, cols: usize, rows: usize, col: usize, row: usize) -> Rect {
        let (w, h) = (self.width() / cols as f64, self.height() / rows as f64);
        let x0 = self.min[0] + w * col as f64;
        let y0 = self.min[1] + h * row as f64;
        Rect {
            min: [x0, y0],
            max: [
                if col + 1 == cols { self.max[0] } else { x0 + w },
                if row + 1 == rows { self.max[1] } else { y0 + h },
            ],
        }
    }
}

/// `k` children laid out on the most square `cols x rows` grid with
/// `cols * rows == k`.
fn grid_shape(k: usize) -> (usize, usize) {
    let mut rows = (k as f64).sqrt() as usize;
    while rows > 1 && k % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    (k / rows, rows)
}

fn split(parent: &Rect, k: usize) -> Vec<Rect> {
    let (cols, rows) = grid_shape(k);
    let mut out = Vec::with_capacity(k);
    for row in 0..rows {
        for col in 0..cols {
            out.push(parent.cell(cols, rows, col, row));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    pub rect: Rect,
}

/// Sloped river band of one region, split into stripes of decreasing then
/// increasing hazard. Offsets are vertical distances from the centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiverBand {
    pub region: Rect,
    /// `(lower offset, upper offset, level)`, south to north.
    pub stripes: Vec<(f64, f64, RiskLevel)>,
}

impl RiverBand {
    fn new(region: Rect, coverage: f64) -> Self {
        let total = coverage * region.height();
        let high = total * LEVEL_SHARES[2];
        let medium = total * LEVEL_SHARES[1] / 2.0;
        let low = total * LEVEL_SHARES[0] / 2.0;
        let e = [high / 2.0, high / 2.0 + medium, high / 2.0 + medium + low];
        let stripes = vec![
            (-e[2], -e[1], RiskLevel::Low),
            (-e[1], -e[0], RiskLevel::Medium),
            (-e[0], e[0], RiskLevel::High),
            (e[0], e[1], RiskLevel::Medium),
            (e[1], e[2], RiskLevel::Low),
        ];
        RiverBand { region, stripes }
    }

    pub fn center(&self, x: f64) -> f64 {
        let r = &self.region;
        let s = (x - r.min[0]) / r.width();
        r.min[1] + r.height() * (RIVER_WEST + (RIVER_EAST - RIVER_WEST) * s)
    }

    /// Signed vertical offset of `p` from the centerline.
    pub fn offset(&self, p: [f64; 2]) -> f64 {
        p[1] - self.center(p[0])
    }

    pub fn level(&self, p: [f64; 2]) -> RiskLevel {
        let d = self.offset(p);
        self.stripes
            .iter()
            .filter(|(lo, hi, _)| d >= *lo && d <= *hi)
            .map(|s| s.2)
            .max()
            .unwrap_or(RiskLevel::None)
    }

    /// Distance in offset units to the nearest stripe edge.
    pub fn edge_distance(&self, p: [f64; 2]) -> f64 {
        let d = self.offset(p);
        self.stripes
            .iter()
            .flat_map(|(lo, hi, _)| [(d - lo).abs(), (d - hi).abs()])
            .fold(f64::INFINITY, f64::min)
    }

    fn polygons(&self) -> Vec<(MultiPolygon, RiskLevel)> {
        let (x0, x1) = (self.region.min[0], self.region.max[0]);
        let (c0, c1) = (self.center(x0), self.center(x1));
        self.stripes
            .iter()
            .map(|&(lo, hi, level)| {
                let ring = vec![[x0, c0 + lo], [x1, c1 + lo], [x1, c1 + hi], [x0, c0 + hi], [x0, c0 + lo]];
                (MultiPolygon(vec![Polygon::new(vec![ring])]), level)
            })
            .collect()
    }
}

/// Nested grid partition with one river band per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geography {
    pub regions: Vec<Unit>,
    /// Province of each municipality, by municipality index.
    pub provinces: Vec<String>,
    pub municipalities: Vec<Unit>,
    pub zones: Vec<Unit>,
    pub tracts: Vec<Unit>,
    pub rivers: Vec<RiverBand>,
    pub municipalities_per_region: usize,
    pub zones_per_municipality: usize,
    pub tracts_per_zone: usize,
}

/// Lower-left corner of the first region; everything stays inside the
/// national bounding box.
const ORIGIN: [f64; 2] = [7.0, 37.0];
const MAX_SPAN: f64 = 9.0;

/// Build the nested partition and risk bands for a configuration.
pub fn generate_geography(config: &DgpConfig) -> Result<Geography> {
    let counts = [
        config.n_regions,
        config.municipalities_per_region,
        config.zones_per_municipality,
        config.tracts_per_zone,
        config.provinces_per_region,
    ];
    if counts.contains(&0) {
        return Err(Error::invalid("every partition count must be at least 1"));
    }
    if config.provinces_per_region > config.municipalities_per_region {
        return Err(Error::invalid("more provinces than municipalities in a region"));
    }
    let max_coverage = 2.0 * RIVER_WEST.min(1.0 - RIVER_EAST);
    if !(config.risk_coverage > 0.0 && config.risk_coverage <= max_coverage) {
        return Err(Error::invalid(format!(
            "risk coverage {} is not achievable; it must lie in (0, {max_coverage}]",
            config.risk_coverage
        )));
    }
    let per_row = (config.n_regions as f64).sqrt().ceil() as usize;
    let side = (MAX_SPAN / per_row as f64).min(0.4);
    let mut g = Geography {
        regions: Vec::new(),
        provinces: Vec::new(),
        municipalities: Vec::new(),
        zones: Vec::new(),
        tracts: Vec::new(),
        rivers: Vec::new(),
        municipalities_per_region: config.municipalities_per_region,
        zones_per_municipality: config.zones_per_municipality,
        tracts_per_zone: config.tracts_per_zone,
    };
    for r in 0..config.n_regions {
        let (col, row) = (r % per_row, r / per_row);
        let rect = Rect {
            min: [ORIGIN[0] + side * col as f64, ORIGIN[1] + side * row as f64],
            max: [ORIGIN[0] + side * (col + 1) as f64, ORIGIN[1] + side * (row + 1) as f64],
        };
        let rid = region_id(r);
        g.rivers.push(RiverBand::new(rect, config.risk_coverage));
        for (m, mrect) in split(&rect, config.municipalities_per_region).into_iter().enumerate() {
            let mid = format!("{rid}-M{:03}", m + 1);
            let p = m * config.provinces_per_region / config.municipalities_per_region;
            g.provinces.push(format!("{rid}-P{}", p + 1));
            for (z, zrect) in split(&mrect, config.zones_per_municipality).into_iter().enumerate() {
                let zid = format!("{mid}-Z{:02}", z + 1);
                for (t, trect) in split(&zrect, config.tracts_per_zone).into_iter().enumerate() {
                    g.tracts.push(Unit {
                        id: format!("{zid}-T{:02}", t + 1),
                        rect: trect,
                    });
                }
                g.zones.push(Unit { id: zid, rect: zrect });
            }
            g.municipalities.push(Unit { id: mid, rect: mrect });
        }
        g.regions.push(Unit { id: rid, rect });
    }
    Ok(g)
}

pub fn region_id(r: usize) -> String {
    format!("R{:02}", r + 1)
}

impl Geography {
    /// Region, municipality and zone index of a tract index.
    pub fn parents(&self, tract: usize) -> (usize, usize, usize) {
        let zone = tract / self.tracts_per_zone;
        let muni = zone / self.zones_per_municipality;
        (muni / self.municipalities_per_region, muni, zone)
    }

    pub fn tracts_per_region(&self) -> usize {
        self.municipalities_per_region * self.zones_per_municipality * self.tracts_per_zone
    }

    fn admin_layer(name: &str, units: &[Unit], props: impl Fn(usize) -> Vec<(&'static str, String)>) -> Result<PolygonLayer> {
        let features = units
            .iter()
            .enumerate()
            .map(|(i, u)| {
                props(i)
                    .into_iter()
                    .fold(Feature::new(u.id.clone(), u.rect.polygon()), |f, (k, v)| f.with(k, v))
            })
            .collect();
        PolygonLayer::new(name, LayerKind::Admin, features)
    }

    /// Municipalities carry `province_id` and `region_id` attributes.
    pub fn municipality_layer(&self) -> Result<PolygonLayer> {
        Self::admin_layer("municipalities", &self.municipalities, |i| {
            vec![
                ("province_id", self.provinces[i].clone()),
                ("region_id", self.regions[i / self.municipalities_per_region].id.clone()),
            ]
        })
    }

    pub fn zone_layer(&self) -> Result<PolygonLayer> {
        Self::admin_layer("omi_zones", &self.zones, |_| vec![])
    }

    pub fn tract_layer(&self) -> Result<PolygonLayer> {
        Self::admin_layer("census_tracts", &self.tracts, |_| vec![])
    }

    pub fn region_layer(&self) -> Result<PolygonLayer> {
        Self::admin_layer("regions", &self.regions, |_| vec![])
    }

    pub fn risk_layer(&self) -> Result<PolygonLayer> {
        let mut features = Vec::new();
        for (r, band) in self.rivers.iter().enumerate() {
            for (s, (geom, level)) in band.polygons().into_iter().enumerate() {
                features.push(
                    Feature::new(format!("{}-river-{}", region_id(r), s + 1), geom).with("level", level.label()),
                );
            }
        }
        PolygonLayer::new("risk", LayerKind::Risk, features)
    }
}

/// Flood extent over the western part of a region's river. It follows the
/// band, leaves the southern stripes dry and reaches a little beyond the
/// northern bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodExtent {
    pub band: RiverBand,
    pub x0: f64,
    pub x1: f64,
    /// Offsets from the centerline, as for the band stripes.
    pub lo: f64,
    pub hi: f64,
}

impl FloodExtent {
    pub fn new(g: &Geography, region: usize, width_fraction: f64) -> Self {
        let band = g.rivers[region].clone();
        let r = band.region;
        let reach = band.stripes.last().map_or(0.0, |s| s.1);
        FloodExtent {
            x0: r.min[0] + 1e-6 * r.width(),
            x1: r.min[0] + r.width() * width_fraction,
            lo: -0.3 * reach,
            hi: reach + 0.05 * r.height(),
            band,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let d = self.band.offset(p);
        p[0] >= self.x0 && p[0] <= self.x1 && d >= self.lo && d <= self.hi
    }

    /// Distance to the nearest edge, in coordinate units along each axis.
    pub fn edge_distance(&self, p: [f64; 2]) -> f64 {
        let d = self.band.offset(p);
        [p[0] - self.x0, self.x1 - p[0], d - self.lo, self.hi - d]
            .into_iter()
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }

    /// Interiors overlap. The centerline rises eastwards, so over an x
    /// interval the extent spans from its lower edge at the west end to its
    /// upper edge at the east end.
    pub fn overlaps(&self, rect: &Rect) -> bool {
        let (a, b) = (self.x0.max(rect.min[0]), self.x1.min(rect.max[0]));
        a < b && self.band.center(a) + self.lo < rect.max[1] && self.band.center(b) + self.hi > rect.min[1]
    }

    pub fn layer(&self, code: &str) -> Result<PolygonLayer> {
        let (c0, c1) = (self.band.center(self.x0), self.band.center(self.x1));
        let ring = vec![
            [self.x0, c0 + self.lo],
            [self.x1, c1 + self.lo],
            [self.x1, c1 + self.hi],
            [self.x0, c0 + self.hi],
            [self.x0, c0 + self.lo],
        ];
        PolygonLayer::new(
            "flood_extent",
            LayerKind::FloodExtent,
            vec![Feature::new(code, MultiPolygon(vec![Polygon::new(vec![ring])])).with("event_code", code)],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(grid_shape(1), (1, 1));
        assert_eq!(grid_shape(4), (2, 2));
        assert_eq!(grid_shape(6), (3, 2));
        assert_eq!(grid_shape(7), (7, 1));
    }

    #[test]
    fn two_by_two_municipalities_partition() {
        let cfg = DgpConfig {
            n_regions: 2,
            municipalities_per_region: 2,
            provinces_per_region: 1,
            ..DgpConfig::default()
        };
        let g = generate_geography(&cfg).unwrap();
        assert_eq!(g.municipalities.len(), 4);
        let area: f64 = g.municipalities.iter().map(|m| m.rect.width() * m.rect.height()).sum();
        let total: f64 = g.regions.iter().map(|m| m.rect.width() * m.rect.height()).sum();
        assert!((area - total).abs() < 1e-12);
        for (i, a) in g.municipalities.iter().enumerate() {
            for b in &g.municipalities[i + 1..] {
                assert!(!a.rect.overlaps(&b.rect));
            }
        }
    }

    #[test]
    fn infeasible_coverage() {
        for c in [1.5, 1.0, 0.0, -0.1] {
            let cfg = DgpConfig {
                risk_coverage: c,
                ..DgpConfig::default()
            };
            assert!(generate_geography(&cfg).is_err(), "{c}");
        }
    }

    #[test]
    fn band_area_matches_coverage() {
        let g = generate_geography(&DgpConfig::default()).unwrap();
        let b = &g.rivers[0];
        let width: f64 = b.stripes.iter().map(|s| s.1 - s.0).sum();
        assert!((width / b.region.height() - 0.23).abs() < 1e-12);
    }
}
