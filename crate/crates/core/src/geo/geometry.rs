//! Planar polygon primitives on lon/lat coordinates.

use serde::{Deserialize, Serialize};

/// `[lon, lat]`.
pub type Coord = [f64; 2];

/// Where a point sits relative to a polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Containment {
    Outside,
    Boundary,
    Inside,
}

impl Containment {
    /// Inside or on the boundary.
    pub fn covers(self) -> bool {
        self != Containment::Outside
    }
}

/// Axis-aligned envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub min: Coord,
    pub max: Coord,
}

impl Envelope {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Coord>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut env = Envelope {
            min: first,
            max: first,
        };
        for p in it {
            env.min[0] = env.min[0].min(p[0]);
            env.min[1] = env.min[1].min(p[1]);
            env.max[0] = env.max[0].max(p[0]);
            env.max[1] = env.max[1].max(p[1]);
        }
        Some(env)
    }

    pub fn contains(&self, p: Coord) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Overlap including shared edges or corners.
    pub fn touches(&self, other: &Envelope) -> bool {
        self.min[0] <= other.max[0]
            && other.min[0] <= self.max[0]
            && self.min[1] <= other.max[1]
            && other.min[1] <= self.max[1]
    }

    pub fn union(&self, other: &Envelope) -> Envelope {
        Envelope {
            min: [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])],
            max: [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])],
        }
    }
}

/// A closed ring: first vertex repeated as last.
pub type Ring = Vec<Coord>;

/// Exterior ring followed by zero or more holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub rings: Vec<Ring>,
}

impl Polygon {
    pub fn new(rings: Vec<Ring>) -> Self {
        Polygon { rings }
    }

    /// Axis-aligned rectangle as a closed counter-clockwise ring.
    pub fn rect(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        Polygon {
            rings: vec![vec![
                [min_lon, min_lat],
                [max_lon, min_lat],
                [max_lon, max_lat],
                [min_lon, max_lat],
                [min_lon, min_lat],
            ]],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rings.is_empty() {
            return Err("polygon has no rings".into());
        }
        for (i, ring) in self.rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(format!("ring {i} has {} vertices, need at least 4", ring.len()));
            }
            if ring.first() != ring.last() {
                return Err(format!("ring {i} is not closed"));
            }
            if ring.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
                return Err(format!("ring {i} has non-finite coordinates"));
            }
        }
        Ok(())
    }

    pub fn envelope(&self) -> Envelope {
        Envelope::of_points(self.rings.iter().flatten()).expect("validated polygon")
    }

    pub fn segments(&self) -> impl Iterator<Item = (Coord, Coord)> + '_ {
        self.rings
            .iter()
            .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    /// Even-odd containment over all rings; points on any edge are `Boundary`.
    pub fn locate(&self, p: Coord) -> Containment {
        let mut inside = false;
        for ring in &self.rings {
            for w in ring.windows(2) {
                let (a, b) = (w[0], w[1]);
                if on_segment(p, a, b) {
                    return Containment::Boundary;
                }
                if (a[1] > p[1]) != (b[1] > p[1]) {
                    let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                    if p[0] < x {
                        inside = !inside;
                    }
                }
            }
        }
        if inside {
            Containment::Inside
        } else {
            Containment::Outside
        }
    }

    /// Signed area by the shoelace formula (holes subtract when wound opposite).
    pub fn area(&self) -> f64 {
        self.rings
            .iter()
            .map(|r| {
                r.windows(2)
                    .map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1])
                    .sum::<f64>()
                    / 2.0
            })
            .sum()
    }
}

/// One or more polygons treated as their union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPolygon(pub Vec<Polygon>);

impl MultiPolygon {
    pub fn validate(&self) -> Result<(), String> {
        if self.0.is_empty() {
            return Err("empty multipolygon".into());
        }
        for (i, p) in self.0.iter().enumerate() {
            p.validate().map_err(|e| format!("part {i}: {e}"))?;
        }
        Ok(())
    }

    pub fn envelope(&self) -> Envelope {
        self.0
            .iter()
            .map(Polygon::envelope)
            .reduce(|a, b| a.union(&b))
            .expect("validated multipolygon")
    }

    pub fn locate(&self, p: Coord) -> Containment {
        self.0
            .iter()
            .map(|poly| poly.locate(p))
            .max()
            .unwrap_or(Containment::Outside)
    }

    pub fn segments(&self) -> impl Iterator<Item = (Coord, Coord)> + '_ {
        self.0.iter().flat_map(Polygon::segments)
    }

    pub fn vertices(&self) -> impl Iterator<Item = Coord> + '_ {
        self.0.iter().flat_map(|p| p.rings.iter().flatten().copied())
    }

    /// Any shared point: crossing or touching edges, or one inside the other.
    pub fn intersects(&self, other: &MultiPolygon) -> bool {
        if !self.envelope().touches(&other.envelope()) {
            return false;
        }
        if self.boundaries_touch(other) {
            return true;
        }
        self.vertices().any(|v| other.locate(v).covers())
            || other.vertices().any(|v| self.locate(v).covers())
    }

    /// Boundaries share at least one point (queen contiguity).
    pub fn boundaries_touch(&self, other: &MultiPolygon) -> bool {
        let env = other.envelope();
        self.segments()
            .filter(|(a, b)| segment_envelope(*a, *b).touches(&env))
            .any(|(a, b)| other.segments().any(|(c, d)| segments_intersect(a, b, c, d)))
    }
}

fn segment_envelope(a: Coord, b: Coord) -> Envelope {
    Envelope {
        min: [a[0].min(b[0]), a[1].min(b[1])],
        max: [a[0].max(b[0]), a[1].max(b[1])],
    }
}

fn cross(o: Coord, a: Coord, b: Coord) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn scale_eps(a: Coord, b: Coord) -> f64 {
    let m = a[0].abs().max(a[1].abs()).max(b[0].abs()).max(b[1].abs()).max(1.0);
    1e-12 * m * m
}

/// `p` lies on the closed segment `ab` (within rounding).
pub fn on_segment(p: Coord, a: Coord, b: Coord) -> bool {
    if p[0] < a[0].min(b[0]) || p[0] > a[0].max(b[0]) || p[1] < a[1].min(b[1]) || p[1] > a[1].max(b[1])
    {
        return false;
    }
    cross(a, b, p).abs() <= scale_eps(a, b)
}

/// Closed segments `ab` and `cd` share at least one point.
pub fn segments_intersect(a: Coord, b: Coord, c: Coord, d: Coord) -> bool {
    let eps = scale_eps(a, b).max(scale_eps(c, d));
    let sign = |v: f64| {
        if v > eps {
            1
        } else if v < -eps {
            -1
        } else {
            0
        }
    };
    let d1 = sign(cross(c, d, a));
    let d2 = sign(cross(c, d, b));
    let d3 = sign(cross(a, b, c));
    let d4 = sign(cross(a, b, d));
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment(a, c, d))
        || (d2 == 0 && on_segment(b, c, d))
        || (d3 == 0 && on_segment(c, a, b))
        || (d4 == 0 && on_segment(d, a, b))
}
