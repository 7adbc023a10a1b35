//! Signed affinity graph over the selected patches.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::bundle::PredictionBundle;
use crate::consensus::ConsensusField;
use crate::geometry::{Coord, MAX_DIMS};
use crate::partition::{Edge, SignedGraph};

/// Selected patches (by predicting pixel) joined by their pairwise
/// consensus affinities.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph {
    /// Predicting pixel of each node, ascending.
    pub nodes: Vec<usize>,
    pub graph: SignedGraph,
}

impl PatchGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edges.len()
    }

    pub fn neighbors(&self, node: usize) -> Vec<(usize, f64)> {
        self.graph.adjacency()[node].clone()
    }
}

/// Mean consensus affinity over foreground pixel pairs of two patches,
/// counting only pairs with a defined affinity. `None` if there is none.
/// The sum always runs from the lower pixel, so the result is exactly
/// symmetric.
pub fn paff(field: &ConsensusField, bundle: &PredictionBundle, a: usize, b: usize) -> Option<f64> {
    let (a, b) = (a.min(b), a.max(b));
    let fa = PatchForeground::new(field, bundle, a);
    let fb = PatchForeground::new(field, bundle, b);
    paff_between(field, &fa, &fb)
}

/// A patch foreground prepared for repeated affinity lookups.
pub(crate) struct PatchForeground {
    coords: Vec<Coord>,
    rows: Vec<u32>,
    lo: Coord,
    hi: Coord,
}

impl PatchForeground {
    pub(crate) fn new(field: &ConsensusField, bundle: &PredictionBundle, x: usize) -> Self {
        let pixels = bundle.patch_foreground(x, field.restriction());
        Self::from_pixels(field, &pixels)
    }

    pub(crate) fn from_pixels(field: &ConsensusField, pixels: &[usize]) -> Self {
        let grid = field.grid();
        let coords: Vec<Coord> = pixels.iter().map(|&p| grid.coord(p)).collect();
        let rows = pixels.iter().map(|&p| field.row(p)).collect();
        let mut lo = [isize::MAX; MAX_DIMS];
        let mut hi = [isize::MIN; MAX_DIMS];
        for c in &coords {
            for a in 0..MAX_DIMS {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        Self { coords, rows, lo, hi }
    }
}

pub(crate) fn paff_between(field: &ConsensusField, fa: &PatchForeground, fb: &PatchForeground) -> Option<f64> {
    if fa.coords.is_empty() || fb.coords.is_empty() {
        return None;
    }
    let r = field.neighborhood().radius();
    // no pair can be in range if the bounding boxes are too far apart
    if (0..MAX_DIMS).any(|a| fb.lo[a] - fa.hi[a] > r[a] || fa.lo[a] - fb.hi[a] > r[a]) {
        return None;
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (cv, &rv) in fa.coords.iter().zip(&fa.rows) {
        for (cw, &rw) in fb.coords.iter().zip(&fb.rows) {
            if let Some(a) = field.aff_rows(*cv, rv, *cw, rw) {
                sum += a;
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Largest per-axis distance between two predicting pixels whose patch
/// foregrounds can still share a defined affinity.
pub fn pruning_radius(field: &ConsensusField) -> Coord {
    let r = field.neighborhood().radius();
    [2 * r[0], 2 * r[1], 2 * r[2]]
}

/// Evaluates `paff` between all selected patches within the pruning radius
/// and keeps an edge wherever it is defined.
pub fn build_graph(field: &ConsensusField, bundle: &PredictionBundle, selection: &[usize]) -> PatchGraph {
    build_graph_with(field, bundle, selection, true)
}

pub fn build_graph_with(
    field: &ConsensusField,
    bundle: &PredictionBundle,
    selection: &[usize],
    parallel: bool,
) -> PatchGraph {
    let mut nodes = selection.to_vec();
    nodes.sort_unstable();
    nodes.dedup();

    let grid = field.grid();
    let fgs: Vec<PatchForeground> = nodes
        .iter()
        .map(|&x| PatchForeground::new(field, bundle, x))
        .collect();

    let radius = pruning_radius(field);
    let cell = field.geometry().padded_extents().map(|e| e as isize);
    let coords: Vec<Coord> = nodes.iter().map(|&x| grid.coord(x)).collect();
    let key = |c: &Coord| -> Coord { [c[0] / cell[0], c[1] / cell[1], c[2] / cell[2]] };
    let mut buckets: HashMap<Coord, Vec<usize>> = HashMap::new();
    for (i, c) in coords.iter().enumerate() {
        buckets.entry(key(c)).or_default().push(i);
    }
    let reach: Coord = std::array::from_fn(|a| (radius[a] + cell[a] - 1) / cell[a]);

    let mut candidates = Vec::new();
    for (i, ci) in coords.iter().enumerate() {
        let k = key(ci);
        for d0 in -reach[0]..=reach[0] {
            for d1 in -reach[1]..=reach[1] {
                for d2 in -reach[2]..=reach[2] {
                    let Some(bucket) = buckets.get(&[k[0] + d0, k[1] + d1, k[2] + d2]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j <= i {
                            continue;
                        }
                        let cj = &coords[j];
                        if (0..MAX_DIMS).all(|a| (ci[a] - cj[a]).abs() <= radius[a]) {
                            candidates.push((i, j));
                        }
                    }
                }
            }
        }
    }
    candidates.sort_unstable();

    let eval = |&(i, j): &(usize, usize)| {
        paff_between(field, &fgs[i], &fgs[j]).map(|weight| Edge { a: i, b: j, weight })
    };
    let edges: Vec<Edge> = if parallel {
        candidates.par_iter().filter_map(eval).collect()
    } else {
        candidates.iter().filter_map(eval).collect()
    };

    PatchGraph {
        graph: SignedGraph::new(nodes.len(), edges),
        nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::Mask;
    use crate::consensus::{accumulate_with, AccumulateOptions};
    use crate::geometry::{Grid, PatchGeometry};
    use crate::oracle::synth;
    use crate::bundle::GroundTruth;

    fn line_gt(n: usize, instances: &[&[usize]]) -> GroundTruth {
        let grid = Grid::new(&[n]).unwrap();
        let masks = instances
            .iter()
            .map(|px| Mask::from_pixels(&grid, px.iter().copied()))
            .collect();
        GroundTruth::new(grid, masks).unwrap()
    }

    fn field_for(gt: &GroundTruth, side: usize) -> (PredictionBundle, ConsensusField) {
        let geometry = PatchGeometry::new(&[side]).unwrap();
        let b = synth(gt, &geometry).unwrap();
        let fg = b.image_foreground();
        let discard = b.overlap_mask();
        let f = accumulate_with(&b, &fg, &discard, AccumulateOptions { sparse: true, parallel: false }).unwrap();
        (b, f)
    }

    #[test]
    fn same_instance_patches_attract() {
        let gt = line_gt(12, &[&[2, 3, 4, 5, 6, 7]]);
        let (b, f) = field_for(&gt, 5);
        assert_eq!(paff(&f, &b, 3, 5), Some(1.0));
        assert_eq!(paff(&f, &b, 5, 3), Some(1.0));
        let g = build_graph(&f, &b, &[3, 5]);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.graph.edges, vec![Edge { a: 0, b: 1, weight: 1.0 }]);
    }

    #[test]
    fn touching_instances_repel() {
        let gt = line_gt(12, &[&[2, 3, 4, 5], &[6, 7, 8, 9]]);
        let (b, f) = field_for(&gt, 5);
        assert_eq!(paff(&f, &b, 4, 7), Some(-1.0));
    }

    #[test]
    fn remote_patches_are_unconnected() {
        let gt = line_gt(30, &[&[2, 3, 4, 5], &[20, 21, 22]]);
        let (b, f) = field_for(&gt, 3);
        assert_eq!(paff(&f, &b, 3, 21), None);
        let g = build_graph(&f, &b, &[3, 21, 4]);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 1);
        let single = build_graph(&f, &b, &[3]);
        assert_eq!((single.node_count(), single.edge_count()), (1, 0));
    }
}
