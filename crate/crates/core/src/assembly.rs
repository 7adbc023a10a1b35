//! Turning a partition of the selected patches into instance masks and a
//! flattened label map.

use std::collections::HashMap;

use crate::bundle::{stack_masks, stack_shape, Mask, PixelClass, PredictionBundle};
use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::partition::Partition;
use crate::selection::{PatchSelection, ScoredPatch};

/// A selected patch that contributed to an instance, with the foreground
/// pixels it claims and its probability at each.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub patch: ScoredPatch,
    pub claims: Vec<(usize, f32)>,
}

/// Overlap-capable instance masks plus a flattened label map
/// (0 = background, instance ids `1..=N`).
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSegmentation {
    grid: Grid,
    masks: Vec<Mask>,
    label_map: Vec<u32>,
    provenance: Vec<Vec<Contribution>>,
}

impl InstanceSegmentation {
    /// Builds a segmentation from masks alone; multiply-claimed pixels get
    /// the lowest claiming id.
    pub fn from_masks(grid: Grid, masks: Vec<Mask>) -> Result<Self> {
        for (i, m) in masks.iter().enumerate() {
            if m.grid() != &grid {
                return Err(Error::ShapeMismatch(format!(
                    "instance {i} has shape {:?}, expected {:?}",
                    m.grid().shape(),
                    grid.shape()
                )));
            }
        }
        let mut seg = Self {
            provenance: vec![Vec::new(); masks.len()],
            label_map: vec![0; grid.len()],
            grid,
            masks,
        };
        seg.label_map = flatten(&seg);
        Ok(seg)
    }

    /// Builds a segmentation from a `[N, spatial...]` u8 stack.
    pub fn from_stack(spatial: &[usize], data: &[u8]) -> Result<Self> {
        let grid = Grid::new(spatial)?;
        let n = grid.len();
        if !data.len().is_multiple_of(n) {
            return Err(Error::ShapeMismatch(format!(
                "stack of {} values is not a multiple of the image size {}",
                data.len(),
                n
            )));
        }
        let masks = data
            .chunks_exact(n)
            .map(|c| Mask::from_bits(&grid, c.iter().map(|&v| v != 0).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_masks(grid, masks)
    }

    /// One instance per partition component over the given pixels
    /// (non-overlapping by construction).
    pub fn from_pixel_partition(grid: Grid, pixels: &[usize], partition: &Partition) -> Self {
        let mut masks = vec![Mask::empty(&grid); partition.component_count()];
        let mut label_map = vec![0u32; grid.len()];
        for (node, &p) in pixels.iter().enumerate() {
            let l = partition.labels[node];
            masks[l].set(p, true);
            label_map[p] = l as u32 + 1;
        }
        Self {
            provenance: vec![Vec::new(); masks.len()],
            grid,
            masks,
            label_map,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn label_map(&self) -> &[u32] {
        &self.label_map
    }

    pub fn provenance(&self) -> &[Vec<Contribution>] {
        &self.provenance
    }

    /// `[N, spatial...]` u8 stack and its shape.
    pub fn mask_stack(&self) -> (Vec<usize>, Vec<u8>) {
        (stack_shape(self.masks.len(), &self.grid), stack_masks(&self.masks))
    }
}

/// Each partition component becomes one instance: the union of the
/// foregrounds of its patches. `nodes[i]` is the predicting pixel of
/// partition node `i`; every node must be a selected patch. Patch
/// foregrounds are restricted to `restrict` when given.
pub fn assemble(
    selection: &PatchSelection,
    nodes: &[usize],
    partition: &Partition,
    bundle: &PredictionBundle,
    restrict: Option<&Mask>,
) -> Result<InstanceSegmentation> {
    if nodes.len() != partition.labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "partition labels {} nodes, graph has {}",
            partition.labels.len(),
            nodes.len()
        )));
    }
    let by_pixel: HashMap<usize, ScoredPatch> =
        selection.patches.iter().map(|p| (p.pixel, *p)).collect();
    let grid = bundle.grid().clone();
    let k = partition.component_count();
    let mut masks = vec![Mask::empty(&grid); k];
    let mut provenance: Vec<Vec<Contribution>> = vec![Vec::new(); k];
    for (node, &x) in nodes.iter().enumerate() {
        let patch = *by_pixel.get(&x).ok_or_else(|| {
            Error::ShapeMismatch(format!("partition node at pixel {x} is not a selected patch"))
        })?;
        let l = partition.labels[node];
        let claims: Vec<(usize, f32)> = bundle
            .patch_entries(x, restrict)
            .filter(|e| bundle.class_of(e.prob) == PixelClass::Foreground)
            .map(|e| (e.pixel, e.prob))
            .collect();
        for &(q, _) in &claims {
            masks[l].set(q, true);
        }
        provenance[l].push(Contribution { patch, claims });
    }
    let mut seg = InstanceSegmentation {
        label_map: vec![0; grid.len()],
        grid,
        masks,
        provenance,
    };
    seg.label_map = flatten(&seg);
    Ok(seg)
}

#[derive(Clone, Copy)]
struct Claim {
    prob: f32,
    score: f64,
    pixel: usize,
    id: u32,
}

impl Claim {
    /// Higher probability, then higher patch score, then lower patch pixel.
    fn beats(&self, other: &Claim) -> bool {
        self.prob
            .total_cmp(&other.prob)
            .then(self.score.total_cmp(&other.score))
            .then(other.pixel.cmp(&self.pixel))
            .is_gt()
    }
}

/// Label map in which every multiply-claimed pixel takes the id of the
/// patch with the highest probability there. Pixels a mask contains but no
/// recorded patch claims fall back to the lowest containing id.
pub fn flatten(seg: &InstanceSegmentation) -> Vec<u32> {
    let n = seg.grid.len();
    let mut best: Vec<Option<Claim>> = vec![None; n];
    for (i, contributions) in seg.provenance.iter().enumerate() {
        for c in contributions {
            for &(q, prob) in &c.claims {
                let claim = Claim {
                    prob,
                    score: c.patch.score,
                    pixel: c.patch.pixel,
                    id: i as u32 + 1,
                };
                match &best[q] {
                    Some(b) if !claim.beats(b) => {}
                    _ => best[q] = Some(claim),
                }
            }
        }
    }
    let mut labels = vec![0u32; n];
    for (i, m) in seg.masks.iter().enumerate().rev() {
        for q in m.pixels() {
            labels[q] = i as u32 + 1;
        }
    }
    for (q, b) in best.iter().enumerate() {
        if let Some(c) = b {
            if seg.masks[c.id as usize - 1].get(q) {
                labels[q] = c.id;
            }
        }
    }
    labels
}

/// Drops instances smaller than `min_size` pixels and renumbers the rest.
pub fn filter_small(seg: &InstanceSegmentation, min_size: usize) -> InstanceSegmentation {
    let keep: Vec<usize> = (0..seg.masks.len())
        .filter(|&i| seg.masks[i].count() >= min_size)
        .collect();
    let mut out = InstanceSegmentation {
        grid: seg.grid.clone(),
        masks: keep.iter().map(|&i| seg.masks[i].clone()).collect(),
        provenance: keep.iter().map(|&i| seg.provenance[i].clone()).collect(),
        label_map: vec![0; seg.grid.len()],
    };
    out.label_map = flatten(&out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(pixel: usize, score: f64) -> ScoredPatch {
        ScoredPatch {
            pixel,
            score,
            fg_size: 1,
        }
    }

    fn seg_with(grid: &Grid, instances: Vec<Vec<Contribution>>) -> InstanceSegmentation {
        let masks = instances
            .iter()
            .map(|cs| Mask::from_pixels(grid, cs.iter().flat_map(|c| c.claims.iter().map(|&(q, _)| q))))
            .collect();
        let mut seg = InstanceSegmentation {
            grid: grid.clone(),
            masks,
            label_map: vec![0; grid.len()],
            provenance: instances,
        };
        seg.label_map = flatten(&seg);
        seg
    }

    #[test]
    fn flatten_takes_most_probable_patch() {
        let grid = Grid::new(&[4]).unwrap();
        let a = Contribution { patch: sp(0, 0.5), claims: vec![(1, 0.97), (2, 0.9)] };
        let b = Contribution { patch: sp(3, 0.9), claims: vec![(2, 0.95), (1, 0.81)] };
        let seg = seg_with(&grid, vec![vec![a], vec![b]]);
        assert_eq!(seg.label_map(), &[0, 1, 2, 0]);
    }

    #[test]
    fn flatten_tie_goes_to_higher_score_then_lower_pixel() {
        let grid = Grid::new(&[4]).unwrap();
        let a = Contribution { patch: sp(0, 0.9), claims: vec![(1, 0.95)] };
        let b = Contribution { patch: sp(3, 0.8), claims: vec![(1, 0.95)] };
        let seg = seg_with(&grid, vec![vec![b.clone()], vec![a.clone()]]);
        assert_eq!(seg.label_map()[1], 2);
        let a2 = Contribution { patch: sp(0, 0.8), ..a };
        let seg = seg_with(&grid, vec![vec![b], vec![a2]]);
        assert_eq!(seg.label_map()[1], 2);
    }

    #[test]
    fn union_semantics_keep_shared_pixels() {
        let grid = Grid::new(&[5]).unwrap();
        let a = Contribution { patch: sp(0, 1.0), claims: vec![(0, 1.0), (1, 1.0), (2, 1.0)] };
        let b = Contribution { patch: sp(4, 1.0), claims: vec![(2, 1.0), (3, 1.0), (4, 1.0)] };
        let seg = seg_with(&grid, vec![vec![a], vec![b]]);
        assert!(seg.masks()[0].get(2) && seg.masks()[1].get(2));
        assert!(seg.label_map().iter().all(|&l| l > 0));
    }

    #[test]
    fn filter_small_thresholds() {
        let grid = Grid::new(&[120]).unwrap();
        let small = Mask::from_pixels(&grid, 0..5);
        let big = Mask::from_pixels(&grid, 10..110);
        let seg = InstanceSegmentation::from_masks(grid.clone(), vec![small, big]).unwrap();
        assert_eq!(filter_small(&seg, 0), seg);
        let f = filter_small(&seg, 10);
        assert_eq!(f.len(), 1);
        assert_eq!(f.label_map()[50], 1);
        assert_eq!(f.label_map()[2], 0);
        assert!(filter_small(&seg, 1000).is_empty());
    }

    #[test]
    fn empty_selection_gives_empty_segmentation() {
        let grid = Grid::new(&[3]).unwrap();
        let seg = InstanceSegmentation::from_masks(grid, vec![]).unwrap();
        assert!(seg.is_empty());
        assert!(seg.label_map().iter().all(|&l| l == 0));
    }
}
