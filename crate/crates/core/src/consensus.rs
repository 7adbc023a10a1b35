//! Consensus affinities between pixel pairs, accumulated over every patch
//! that covers both pixels and classifies at least one of them as
//! foreground.
//!
//! Each unordered pair `{y, z}` with `z - y` in `P - P` is stored once, at
//! the anchor pixel `y` for which `z - y` is lexicographically
//! non-negative. Rows exist only for member pixels (not discarded, and
//! inside the image foreground in sparse mode); pairs touching any other
//! pixel have a zero count and an undefined affinity.
//!
//! Accumulation is organised as a gather: every row is computed
//! independently from the patches covering its anchor pixel, in a fixed
//! order. Rows are therefore bit-identical regardless of how they are
//! distributed over threads.

use rayon::prelude::*;

use crate::bundle::{Mask, PixelClass, PredictionBundle};
use crate::error::{Error, Result};
use crate::geometry::{Coord, Grid, Neighborhood, PatchGeometry};

const NO_ROW: u32 = u32::MAX;

/// Options controlling [`accumulate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccumulateOptions {
    /// Restrict predicting pixels and patch domains to the image foreground.
    pub sparse: bool,
    /// Spread rows over the current rayon pool; `false` is the
    /// single-threaded reference mode.
    pub parallel: bool,
}

impl Default for AccumulateOptions {
    fn default() -> Self {
        Self {
            sparse: true,
            parallel: true,
        }
    }
}

/// Accumulated consensus numerators and informative-patch counts.
#[derive(Debug, Clone)]
pub struct ConsensusField {
    grid: Grid,
    geometry: PatchGeometry,
    neighborhood: Neighborhood,
    restriction: Option<Mask>,
    members: Mask,
    rows: Vec<u32>,
    row_pixels: Vec<u32>,
    numerator: Vec<f64>,
    z_count: Vec<u32>,
    /// `numerator / z_count`, NaN where the count is zero.
    affinity: Vec<f64>,
    channel_planes: Vec<u32>,
}

/// Accumulates the consensus field using the current rayon pool.
pub fn accumulate(
    bundle: &PredictionBundle,
    fg: &Mask,
    discard: &Mask,
    sparse: bool,
) -> Result<ConsensusField> {
    accumulate_with(
        bundle,
        fg,
        discard,
        AccumulateOptions {
            sparse,
            parallel: true,
        },
    )
}

pub fn accumulate_with(
    bundle: &PredictionBundle,
    fg: &Mask,
    discard: &Mask,
    options: AccumulateOptions,
) -> Result<ConsensusField> {
    let grid = bundle.grid().clone();
    for (what, m) in [("foreground", fg), ("discard", discard)] {
        if m.grid() != &grid {
            return Err(Error::ShapeMismatch(format!(
                "{what} mask shape {:?} differs from prediction shape {:?}",
                m.grid().shape(),
                grid.shape()
            )));
        }
    }
    let geometry = bundle.geometry().clone();
    let neighborhood = geometry.neighborhood();
    let k = geometry.len();
    let planes = neighborhood.planes();

    // Member pixels: may appear in a pair and (equivalently) predict a patch.
    let members = if options.sparse {
        fg.difference(discard)
    } else {
        Mask::full(&grid).difference(discard)
    };

    let mut rows = vec![NO_ROW; grid.len()];
    let mut row_pixels = Vec::new();
    for p in members.pixels() {
        rows[p] = row_pixels.len() as u32;
        row_pixels.push(p as u32);
    }

    let channel_planes = channel_plane_table(&geometry, &neighborhood);
    let lists = PatchLists::build(bundle, &members, options.parallel);

    let mut numerator = vec![0.0f64; row_pixels.len() * planes];
    let mut z_count = vec![0u32; row_pixels.len() * planes];

    let ctx = RowContext {
        bundle,
        grid: &grid,
        offsets: geometry.offsets(),
        members: members.bits(),
        channel_planes: &channel_planes,
        lists: &lists,
        k,
    };

    if options.parallel {
        numerator
            .par_chunks_mut(planes)
            .zip(z_count.par_chunks_mut(planes))
            .zip(row_pixels.par_iter())
            .for_each(|((num, cnt), &y)| ctx.fill_row(y as usize, num, cnt));
    } else {
        numerator
            .chunks_mut(planes)
            .zip(z_count.chunks_mut(planes))
            .zip(row_pixels.iter())
            .for_each(|((num, cnt), &y)| ctx.fill_row(y as usize, num, cnt));
    }

    let ratio = |(&num, &cnt): (&f64, &u32)| if cnt > 0 { num / cnt as f64 } else { f64::NAN };
    let affinity: Vec<f64> = if options.parallel {
        numerator.par_iter().zip(z_count.par_iter()).map(ratio).collect()
    } else {
        numerator.iter().zip(z_count.iter()).map(ratio).collect()
    };

    Ok(ConsensusField {
        grid,
        geometry,
        neighborhood,
        restriction: options.sparse.then(|| fg.clone()),
        members,
        rows,
        row_pixels,
        numerator,
        z_count,
        affinity,
        channel_planes,
    })
}

/// `table[a * k + b]` is the plane of offset `o_b - o_a` for `b >= a`.
fn channel_plane_table(geometry: &PatchGeometry, neighborhood: &Neighborhood) -> Vec<u32> {
    let k = geometry.len();
    let mut table = vec![u32::MAX; k * k];
    for a in 0..k {
        let oa = geometry.offset(a);
        for b in a..k {
            let ob = geometry.offset(b);
            let d = [ob[0] - oa[0], ob[1] - oa[1], ob[2] - oa[2]];
            let (plane, flipped) = neighborhood.plane(d).expect("patch offsets lie in P - P");
            debug_assert!(!flipped);
            table[a * k + b] = plane as u32;
        }
    }
    table
}

const CLASS_BITS: u32 = 2;
const CLASS_FG: u32 = 1;
const CLASS_BG: u32 = 2;

/// Per predicting pixel, its in-bounds member channels packed as
/// `channel << 2 | class`, plus the subset classified foreground. CSR
/// layout, channels ascending.
struct PatchLists {
    starts: Vec<usize>,
    entries: Vec<u32>,
    fg_starts: Vec<usize>,
    fg_channels: Vec<u16>,
}

impl PatchLists {
    fn build(bundle: &PredictionBundle, members: &Mask, parallel: bool) -> Self {
        let n = bundle.grid().len();
        let per_pixel = |x: usize| -> Vec<u32> {
            if !members.get(x) {
                return Vec::new();
            }
            bundle
                .patch_entries(x, Some(members))
                .map(|e| {
                    let class = match bundle.class_of(e.prob) {
                        PixelClass::Foreground => CLASS_FG,
                        PixelClass::Background => CLASS_BG,
                        PixelClass::Uncertain => 0,
                    };
                    (e.channel as u32) << CLASS_BITS | class
                })
                .collect()
        };
        let lists: Vec<Vec<u32>> = if parallel {
            (0..n).into_par_iter().map(per_pixel).collect()
        } else {
            (0..n).map(per_pixel).collect()
        };
        let total: usize = lists.iter().map(Vec::len).sum();
        let mut out = Self {
            starts: Vec::with_capacity(n + 1),
            entries: Vec::with_capacity(total),
            fg_starts: Vec::with_capacity(n + 1),
            fg_channels: Vec::new(),
        };
        out.starts.push(0);
        out.fg_starts.push(0);
        for l in lists {
            out.fg_channels.extend(
                l.iter()
                    .filter(|&&e| e & 3 == CLASS_FG)
                    .map(|&e| (e >> CLASS_BITS) as u16),
            );
            out.entries.extend_from_slice(&l);
            out.starts.push(out.entries.len());
            out.fg_starts.push(out.fg_channels.len());
        }
        out
    }

    #[inline]
    fn entries(&self, x: usize) -> &[u32] {
        &self.entries[self.starts[x]..self.starts[x + 1]]
    }

    #[inline]
    fn foreground(&self, x: usize) -> &[u16] {
        &self.fg_channels[self.fg_starts[x]..self.fg_starts[x + 1]]
    }
}

struct RowContext<'a> {
    bundle: &'a PredictionBundle,
    grid: &'a Grid,
    offsets: &'a [Coord],
    members: &'a [bool],
    channel_planes: &'a [u32],
    lists: &'a PatchLists,
    k: usize,
}

impl RowContext<'_> {
    /// Sums the contributions of every patch covering `y` to the pairs
    /// anchored at `y`.
    fn fill_row(&self, y: usize, num: &mut [f64], cnt: &mut [u32]) {
        let cy = self.grid.coord(y);
        let shape = self.grid.padded_shape();
        let in_bounds = |c: Coord| {
            c[0] >= 0
                && c[1] >= 0
                && c[2] >= 0
                && (c[0] as usize) < shape[0]
                && (c[1] as usize) < shape[1]
                && (c[2] as usize) < shape[2]
        };
        for q in 0..self.k {
            let oq = self.offsets[q];
            let cx = [cy[0] - oq[0], cy[1] - oq[1], cy[2] - oq[2]];
            if !in_bounds(cx) {
                continue;
            }
            let x = self.grid.index(cx).expect("checked in bounds");
            if !self.members[x] {
                continue;
            }
            let patch = self.bundle.patch(x);
            let py = patch[q];
            let class_y = self.bundle.class_of(py);
            let planes = &self.channel_planes[q * self.k..(q + 1) * self.k];
            let py = py as f64;
            match class_y {
                PixelClass::Foreground => {
                    // every member z paired with a foreground y is informative
                    let entries = self.lists.entries(x);
                    let start = entries.partition_point(|&e| ((e >> CLASS_BITS) as usize) < q);
                    for &e in &entries[start..] {
                        let c2 = (e >> CLASS_BITS) as usize;
                        let plane = planes[c2] as usize;
                        cnt[plane] += 1;
                        match e & 3 {
                            CLASS_FG => num[plane] += py * patch[c2] as f64,
                            CLASS_BG => num[plane] -= py * (1.0 - patch[c2] as f64),
                            _ => {}
                        }
                    }
                }
                class => {
                    let fg = self.lists.foreground(x);
                    let start = fg.partition_point(|&c| (c as usize) < q);
                    for &c2 in &fg[start..] {
                        let c2 = c2 as usize;
                        let plane = planes[c2] as usize;
                        cnt[plane] += 1;
                        if class == PixelClass::Background {
                            num[plane] -= (1.0 - py) * patch[c2] as f64;
                        }
                    }
                }
            }
        }
    }
}

impl ConsensusField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn neighborhood(&self) -> &Neighborhood {
        &self.neighborhood
    }

    /// The image foreground when accumulated in sparse mode.
    pub fn restriction(&self) -> Option<&Mask> {
        self.restriction.as_ref()
    }

    /// Pixels that predict patches and take part in pairs.
    pub fn members(&self) -> &Mask {
        &self.members
    }

    pub fn planes(&self) -> usize {
        self.neighborhood.planes()
    }

    /// Raw `(numerator, count)` for the pair `{y, z}`; `None` if the pair
    /// is outside the stored neighborhood or touches a non-member pixel.
    #[inline]
    pub fn entry(&self, y: usize, z: usize) -> Option<(f64, u32)> {
        let cy = self.grid.coord(y);
        let cz = self.grid.coord(z);
        let d = [cz[0] - cy[0], cz[1] - cy[1], cz[2] - cy[2]];
        let (plane, flipped) = self.neighborhood.plane(d)?;
        let anchor = if flipped { z } else { y };
        let row = self.rows[anchor];
        if row == NO_ROW {
            return None;
        }
        if self.rows[if flipped { y } else { z }] == NO_ROW {
            return None;
        }
        let i = row as usize * self.planes() + plane;
        Some((self.numerator[i], self.z_count[i]))
    }

    /// Consensus affinity of `{y, z}`, or `None` where undefined.
    #[inline]
    pub fn aff(&self, y: usize, z: usize) -> Option<f64> {
        let cy = self.grid.coord(y);
        let cz = self.grid.coord(z);
        self.aff_rows(cy, self.rows[y], cz, self.rows[z])
    }

    /// Row index of a member pixel, for use with [`Self::aff_rows`].
    #[inline]
    pub(crate) fn row(&self, pixel: usize) -> u32 {
        self.rows[pixel]
    }

    /// Affinity between pixels at coordinates `cy`, `cz` with known rows
    /// (`u32::MAX` for non-members).
    #[inline]
    pub(crate) fn aff_rows(&self, cy: Coord, ry: u32, cz: Coord, rz: u32) -> Option<f64> {
        if ry == NO_ROW || rz == NO_ROW {
            return None;
        }
        let d = [cz[0] - cy[0], cz[1] - cy[1], cz[2] - cy[2]];
        let (plane, flipped) = self.neighborhood.plane(d)?;
        let row = if flipped { rz } else { ry };
        let a = self.affinity[row as usize * self.planes() + plane];
        (!a.is_nan()).then_some(a)
    }

    /// Affinity between `anchor = x + o_a` and `x + o_b` for channels
    /// `a <= b` of some patch `x`.
    #[inline]
    pub(crate) fn aff_channels(&self, anchor: usize, a: usize, b: usize) -> Option<f64> {
        debug_assert!(a <= b);
        let row = self.rows[anchor];
        if row == NO_ROW {
            return None;
        }
        let k = self.geometry.len();
        let i = row as usize * self.planes() + self.channel_planes[a * k + b] as usize;
        let v = self.affinity[i];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_member(&self, pixel: usize) -> bool {
        self.rows[pixel] != NO_ROW
    }

    /// Number of stored rows (member pixels).
    pub fn row_count(&self) -> usize {
        self.row_pixels.len()
    }

    /// Numerators as `[planes, spatial...]`, zero for non-member pixels.
    pub fn numerator_planes(&self) -> Vec<f64> {
        self.dense_planes(&self.numerator, 0.0)
    }

    /// Informative-patch counts as `[planes, spatial...]`.
    pub fn count_planes(&self) -> Vec<u32> {
        self.dense_planes(&self.z_count, 0)
    }

    /// Numerators in row order (row `r` belongs to the r-th member pixel).
    pub fn raw_numerators(&self) -> &[f64] {
        &self.numerator
    }

    pub fn raw_counts(&self) -> &[u32] {
        &self.z_count
    }

    fn dense_planes<T: Copy>(&self, src: &[T], zero: T) -> Vec<T> {
        let n = self.grid.len();
        let planes = self.planes();
        let mut out = vec![zero; planes * n];
        for (row, &p) in self.row_pixels.iter().enumerate() {
            for plane in 0..planes {
                out[plane * n + p as usize] = src[row * planes + plane];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;

    /// Three pixels in a row; only the middle one predicts a non-trivial
    /// patch, the others predict all zeros (no foreground, never
    /// informative).
    fn single_patch(p: [f32; 3], t: f64) -> PredictionBundle {
        let geometry = PatchGeometry::new(&[3]).unwrap();
        let grid = Grid::new(&[3]).unwrap();
        let mut probs = vec![0.0f32; 9];
        probs[3..6].copy_from_slice(&p);
        PredictionBundle::from_pixel_major(geometry, grid, probs, vec![1.0; 3], None)
            .unwrap()
            .with_thresholds(t, 0.5)
            .unwrap()
    }

    fn run(bundle: &PredictionBundle, sparse: bool) -> ConsensusField {
        let fg = Mask::full(bundle.grid());
        let discard = Mask::empty(bundle.grid());
        accumulate_with(bundle, &fg, &discard, AccumulateOptions { sparse, parallel: false }).unwrap()
    }

    #[test]
    fn perfect_single_patch_hand_trace() {
        let f = run(&single_patch([1.0, 1.0, 0.0], 0.5), false);
        assert_eq!(f.entry(0, 1), Some((1.0, 1)));
        assert_eq!(f.aff(0, 1), Some(1.0));
        assert_eq!(f.aff(0, 2), Some(-1.0));
        assert_eq!(f.aff(1, 2), Some(-1.0));
        // symmetric lookup
        assert_eq!(f.aff(2, 0), Some(-1.0));
        assert_eq!(f.aff(2, 1), Some(-1.0));
    }

    #[test]
    fn soft_single_patch_hand_trace() {
        let f = run(&single_patch([0.9, 0.9, 0.05], 0.8), false);
        let (num, cnt) = f.entry(0, 1).unwrap();
        assert!((num - 0.81).abs() < 1e-6);
        assert_eq!(cnt, 1);
        let (num, cnt) = f.entry(1, 2).unwrap();
        assert!((num + 0.855).abs() < 1e-6);
        assert_eq!(cnt, 1);
    }

    #[test]
    fn uncertain_pair_is_not_informative() {
        // pixels 0 and 2 uncertain for the only patch covering both
        let f = run(&single_patch([0.5, 1.0, 0.5], 0.9), false);
        assert_eq!(f.entry(0, 2), Some((0.0, 0)));
        assert_eq!(f.aff(0, 2), None);
        // uncertain / foreground pair counts but adds nothing
        assert_eq!(f.entry(0, 1), Some((0.0, 1)));
    }

    #[test]
    fn self_pair_is_mean_square() {
        let f = run(&single_patch([0.95, 0.92, 0.0], 0.9), false);
        let a = f.aff(0, 0).unwrap();
        assert!((a - 0.95f64 * 0.95).abs() < 1e-6);
    }

    #[test]
    fn two_identical_perfect_patches_average() {
        let geometry = PatchGeometry::new(&[3]).unwrap();
        let grid = Grid::new(&[2]).unwrap();
        // both pixels predict "we are the same instance"
        let probs = vec![0.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        let b = PredictionBundle::from_pixel_major(geometry, grid, probs, vec![1.0; 2], None)
            .unwrap()
            .with_thresholds(0.5, 0.5)
            .unwrap();
        let f = run(&b, false);
        assert_eq!(f.entry(0, 1), Some((2.0, 2)));
        assert_eq!(f.aff(0, 1), Some(1.0));
    }

    #[test]
    fn discarded_pixels_get_no_pairs() {
        let b = single_patch([1.0, 1.0, 1.0], 0.5);
        let fg = Mask::full(b.grid());
        let discard = Mask::from_pixels(b.grid(), [2]);
        let f = accumulate_with(&b, &fg, &discard, AccumulateOptions { sparse: false, parallel: false })
            .unwrap();
        assert_eq!(f.aff(1, 2), None);
        assert_eq!(f.aff(0, 2), None);
        assert_eq!(f.aff(0, 1), Some(1.0));
        // a discarded predictor contributes nothing
        let discard = Mask::from_pixels(b.grid(), [1]);
        let f = accumulate_with(&b, &fg, &discard, AccumulateOptions { sparse: false, parallel: false })
            .unwrap();
        assert_eq!(f.aff(0, 2), None);
    }

    #[test]
    fn rejects_mismatched_masks() {
        let b = single_patch([1.0, 1.0, 0.0], 0.5);
        let other = Grid::new(&[4]).unwrap();
        let r = accumulate(&b, &Mask::full(&other), &Mask::empty(b.grid()), false);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn out_of_range_pair_is_undefined() {
        let geometry = PatchGeometry::new(&[3]).unwrap();
        let grid = Grid::new(&[6]).unwrap();
        let b = PredictionBundle::from_pixel_major(geometry, grid, vec![1.0; 18], vec![1.0; 6], None).unwrap();
        let f = run(&b, false);
        assert!(f.aff(0, 2).is_some());
        assert_eq!(f.aff(0, 3), None);
    }
}
