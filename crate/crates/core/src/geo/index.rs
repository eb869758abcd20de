use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};

use super::geometry::{Containment, Coord, Envelope};
use super::layer::PolygonLayer;
use crate::error::{Error, Result};

type Entry = GeomWithData<Rectangle<[f64; 2]>, usize>;

/// R-tree over feature envelopes. Candidate lists are a superset of the
/// features that actually contain a point.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    tree: RTree<Entry>,
}

impl SpatialIndex {
    pub fn build(layer: &PolygonLayer) -> Result<Self> {
        if layer.is_empty() {
            return Err(Error::invalid(format!("layer `{}` is empty", layer.name)));
        }
        let entries = (0..layer.len())
            .map(|i| {
                let e = layer.envelope(i);
                GeomWithData::new(Rectangle::from_corners(e.min, e.max), i)
            })
            .collect();
        Ok(SpatialIndex {
            tree: RTree::bulk_load(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.tree.size()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.size() == 0
    }

    /// Features whose envelope contains `p`, in ascending index order.
    pub fn candidates(&self, p: Coord) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tree
            .locate_in_envelope_intersecting(&AABB::from_point(p))
            .map(|e| e.data)
            .collect();
        out.sort_unstable();
        out
    }

    /// Features whose envelope touches `env`, in ascending index order.
    pub fn candidates_in(&self, env: &Envelope) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tree
            .locate_in_envelope_intersecting(&AABB::from_corners(env.min, env.max))
            .map(|e| e.data)
            .collect();
        out.sort_unstable();
        out
    }
}

/// A layer together with its spatial index.
#[derive(Debug, Clone)]
pub struct IndexedLayer {
    pub layer: PolygonLayer,
    pub index: SpatialIndex,
}

impl IndexedLayer {
    pub fn new(layer: PolygonLayer) -> Result<Self> {
        let index = SpatialIndex::build(&layer)?;
        Ok(IndexedLayer { layer, index })
    }

    /// Features covering `p` (inside or on the boundary) with their containment.
    pub fn locate(&self, p: Coord) -> Vec<(usize, Containment)> {
        self.index
            .candidates(p)
            .into_iter()
            .filter_map(|i| {
                let c = self.layer.features[i].geometry.locate(p);
                c.covers().then_some((i, c))
            })
            .collect()
    }

    /// Linear scan over every feature; reference for the indexed path.
    pub fn locate_brute_force(&self, p: Coord) -> Vec<(usize, Containment)> {
        self.layer
            .features
            .iter()
            .enumerate()
            .filter_map(|(i, f)| {
                let c = f.geometry.locate(p);
                c.covers().then_some((i, c))
            })
            .collect()
    }
}
