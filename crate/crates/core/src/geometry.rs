//! Spatial domains, patch offset sets and the pairwise offset neighborhood.
//!
//! Everything is stored padded to rank 3: a 2D image of shape `(h, w)` is a
//! grid of shape `(1, h, w)`, and a 2D patch of extents `(7, 7)` has extents
//! `(1, 7, 7)`. Pixels are addressed by their C-order linear index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum supported spatial rank.
pub const MAX_DIMS: usize = 3;

pub type Coord = [isize; MAX_DIMS];

/// A C-order spatial domain of rank 1, 2 or 3.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    dims: usize,
    shape: [usize; MAX_DIMS],
    strides: [usize; MAX_DIMS],
}

impl Grid {
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_DIMS {
            return Err(Error::InvalidShape(format!(
                "spatial rank must be 1..=3, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidShape(format!("zero-sized axis in {shape:?}")));
        }
        let mut padded = [1usize; MAX_DIMS];
        padded[MAX_DIMS - shape.len()..].copy_from_slice(shape);
        let strides = [padded[1] * padded[2], padded[2], 1];
        Ok(Self {
            dims: shape.len(),
            shape: padded,
            strides,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// The unpadded spatial shape.
    pub fn shape(&self) -> &[usize] {
        &self.shape[MAX_DIMS - self.dims..]
    }

    pub fn padded_shape(&self) -> [usize; MAX_DIMS] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn coord(&self, index: usize) -> Coord {
        let c0 = index / self.strides[0];
        let rem = index % self.strides[0];
        [c0 as isize, (rem / self.strides[1]) as isize, (rem % self.strides[1]) as isize]
    }

    #[inline]
    pub fn index(&self, c: Coord) -> Option<usize> {
        if self.contains(c) {
            Some(c[0] as usize * self.strides[0] + c[1] as usize * self.strides[1] + c[2] as usize)
        } else {
            None
        }
    }

    #[inline]
    pub fn contains(&self, c: Coord) -> bool {
        (0..MAX_DIMS).all(|a| c[a] >= 0 && (c[a] as usize) < self.shape[a])
    }

    /// Linear index of `base + offset`, or `None` if it leaves the grid.
    #[inline]
    pub fn shift(&self, base: usize, offset: Coord) -> Option<usize> {
        let c = self.coord(base);
        self.index([c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]])
    }

    /// Pads an unpadded coordinate (length = `dims`) to rank 3.
    pub fn pad_coord(&self, c: &[isize]) -> Coord {
        let mut out = [0isize; MAX_DIMS];
        out[MAX_DIMS - c.len()..].copy_from_slice(c);
        out
    }
}

/// The fixed dense offset set of a shape patch: a centered box of odd
/// side lengths, enumerated in lexicographic (C) order.
///
/// Channel `c` of a patch prediction corresponds to `offsets()[c]`; the
/// zero offset sits at [`PatchGeometry::center_channel`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGeometry {
    dims: usize,
    extents: [usize; MAX_DIMS],
    offsets: Vec<Coord>,
}

impl PatchGeometry {
    pub fn new(extents: &[usize]) -> Result<Self> {
        if extents.is_empty() || extents.len() > MAX_DIMS {
            return Err(Error::InvalidGeometry(format!(
                "patch rank must be 1..=3, got {}",
                extents.len()
            )));
        }
        if let Some(e) = extents.iter().find(|&&e| e == 0 || e % 2 == 0) {
            return Err(Error::InvalidGeometry(format!(
                "patch extents must be odd and positive, got {e} in {extents:?}"
            )));
        }
        let mut padded = [1usize; MAX_DIMS];
        padded[MAX_DIMS - extents.len()..].copy_from_slice(extents);
        let radius = padded.map(|e| (e / 2) as isize);
        let mut offsets = Vec::with_capacity(padded.iter().product());
        for a in -radius[0]..=radius[0] {
            for b in -radius[1]..=radius[1] {
                for c in -radius[2]..=radius[2] {
                    offsets.push([a, b, c]);
                }
            }
        }
        Ok(Self {
            dims: extents.len(),
            extents: padded,
            offsets,
        })
    }

    /// Square (or cubic) patch of side `side` in `dims` dimensions.
    pub fn cube(dims: usize, side: usize) -> Result<Self> {
        Self::new(&vec![side; dims])
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents[MAX_DIMS - self.dims..]
    }

    pub fn padded_extents(&self) -> [usize; MAX_DIMS] {
        self.extents
    }

    pub fn radius(&self) -> Coord {
        self.extents.map(|e| (e / 2) as isize)
    }

    /// Number of offsets, i.e. channels of a patch prediction.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[Coord] {
        &self.offsets
    }

    #[inline]
    pub fn offset(&self, channel: usize) -> Coord {
        self.offsets[channel]
    }

    pub fn center_channel(&self) -> usize {
        self.offsets.len() / 2
    }

    /// Inverse of [`PatchGeometry::offset`].
    pub fn channel(&self, offset: Coord) -> Option<usize> {
        let r = self.radius();
        if (0..MAX_DIMS).any(|a| offset[a].abs() > r[a]) {
            return None;
        }
        let e = self.extents;
        let idx = ((offset[0] + r[0]) as usize * e[1] + (offset[1] + r[1]) as usize) * e[2]
            + (offset[2] + r[2]) as usize;
        Some(idx)
    }

    /// Whether the patch fits inside `grid` (matching rank, extents no larger
    /// than the image).
    pub fn fits(&self, grid: &Grid) -> bool {
        self.dims == grid.dims()
            && (0..MAX_DIMS).all(|a| self.extents[a] <= grid.padded_shape()[a])
    }

    pub fn neighborhood(&self) -> Neighborhood {
        Neighborhood::new(self)
    }
}

/// The difference set `P - P` of a patch geometry, split into a canonical
/// half: offset `d` is canonical when it is lexicographically `>= 0`.
/// Every unordered pixel pair `{y, z}` with `z - y` in `P - P` maps to
/// exactly one (anchor pixel, plane) slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    radius: Coord,
    sizes: [usize; MAX_DIMS],
    center: usize,
}

impl Neighborhood {
    fn new(geometry: &PatchGeometry) -> Self {
        let radius = geometry.extents.map(|e| e as isize - 1);
        let sizes = radius.map(|r| (2 * r + 1) as usize);
        let total: usize = sizes.iter().product();
        Self {
            radius,
            sizes,
            center: total / 2,
        }
    }

    /// Per-axis maximum absolute offset.
    pub fn radius(&self) -> Coord {
        self.radius
    }

    /// Number of canonical planes, including the zero offset.
    pub fn planes(&self) -> usize {
        self.center + 1
    }

    #[inline]
    fn raster(&self, d: Coord) -> Option<usize> {
        if (0..MAX_DIMS).any(|a| d[a].abs() > self.radius[a]) {
            return None;
        }
        Some(
            ((d[0] + self.radius[0]) as usize * self.sizes[1] + (d[1] + self.radius[1]) as usize)
                * self.sizes[2]
                + (d[2] + self.radius[2]) as usize,
        )
    }

    /// Plane of offset `d` and whether `d` had to be negated to become
    /// canonical. `None` if `d` is outside `P - P`.
    #[inline]
    pub fn plane(&self, d: Coord) -> Option<(usize, bool)> {
        let r = self.raster(d)?;
        if r >= self.center {
            Some((r - self.center, false))
        } else {
            Some((self.center - r, true))
        }
    }

    /// Canonical offset stored in `plane`.
    pub fn plane_offset(&self, plane: usize) -> Coord {
        let mut r = plane + self.center;
        let c2 = r % self.sizes[2];
        r /= self.sizes[2];
        let c1 = r % self.sizes[1];
        let c0 = r / self.sizes[1];
        [
            c0 as isize - self.radius[0],
            c1 as isize - self.radius[1],
            c2 as isize - self.radius[2],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_lexicographic_and_centered() {
        let g = PatchGeometry::new(&[3, 5]).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.offset(g.center_channel()), [0, 0, 0]);
        assert_eq!(g.offset(0), [0, -1, -2]);
        assert_eq!(g.offset(14), [0, 1, 2]);
        assert!(g.offsets().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn channel_round_trip() {
        for ext in [vec![3], vec![5, 7], vec![3, 3, 5]] {
            let g = PatchGeometry::new(&ext).unwrap();
            for c in 0..g.len() {
                assert_eq!(g.channel(g.offset(c)), Some(c));
            }
            assert_eq!(g.channel([0, 0, 99]), None);
        }
    }

    #[test]
    fn rejects_even_or_empty_extents() {
        assert!(matches!(PatchGeometry::new(&[4, 5]), Err(Error::InvalidGeometry(_))));
        assert!(matches!(PatchGeometry::new(&[]), Err(Error::InvalidGeometry(_))));
        assert!(matches!(PatchGeometry::new(&[1, 1, 1, 1]), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn neighborhood_planes_cover_half_of_difference_set() {
        let g = PatchGeometry::new(&[3, 3]).unwrap();
        let n = g.neighborhood();
        // P - P is 5x5; 12 canonical nonzero offsets plus zero
        assert_eq!(n.planes(), 13);
        assert_eq!(n.plane([0, 0, 0]), Some((0, false)));
        let (p, flipped) = n.plane([0, 0, 1]).unwrap();
        assert!(!flipped);
        assert_eq!(n.plane([0, 0, -1]), Some((p, true)));
        assert_eq!(n.plane([0, 3, 0]), None);
        for plane in 0..n.planes() {
            assert_eq!(n.plane(n.plane_offset(plane)), Some((plane, false)));
        }
    }

    #[test]
    fn grid_index_arithmetic() {
        let g = Grid::new(&[4, 5]).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!(g.coord(7), [0, 1, 2]);
        assert_eq!(g.index([0, 1, 2]), Some(7));
        assert_eq!(g.shift(7, [0, -1, -2]), Some(0));
        assert_eq!(g.shift(0, [0, 0, -1]), None);
        assert_eq!(g.shape(), &[4, 5]);
    }
}
