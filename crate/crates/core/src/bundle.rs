//! Prediction bundles, binary masks and per-patch pixel classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, PatchGeometry, MAX_DIMS};

/// Number of instance-count classes: 0, 1 and "2 or more".
pub const INSTANCE_COUNT_CLASSES: usize = 3;

pub const DEFAULT_PATCH_THRESHOLD: f64 = 0.9;
pub const DEFAULT_FG_THRESHOLD: f64 = 0.5;

/// A dense binary mask over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    grid: Grid,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(grid: &Grid) -> Self {
        Self {
            bits: vec![false; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn full(grid: &Grid) -> Self {
        Self {
            bits: vec![true; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn from_bits(grid: &Grid, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} pixels, grid {:?} has {}",
                bits.len(),
                grid.shape(),
                grid.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            bits,
        })
    }

    pub fn from_pixels<I: IntoIterator<Item = usize>>(grid: &Grid, pixels: I) -> Self {
        let mut m = Self::empty(grid);
        for p in pixels {
            m.bits[p] = true;
        }
        m
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, pixel: usize) -> bool {
        self.bits[pixel]
    }

    #[inline]
    pub fn set(&mut self, pixel: usize, value: bool) {
        self.bits[pixel] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels in increasing index order.
    pub fn pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && !b)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.grid, other.grid, "mask grids differ");
        Mask {
            grid: self.grid.clone(),
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Tri-state classification of one patch entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelClass {
    Foreground,
    Background,
    Uncertain,
}

impl PixelClass {
    /// `p > t` is foreground, `p < 1 - t` background, anything else
    /// (including both boundary values) uncertain.
    #[inline]
    pub fn of(p: f32, t: f64) -> Self {
        let p = p as f64;
        if p > t {
            PixelClass::Foreground
        } else if p < 1.0 - t {
            PixelClass::Background
        } else {
            PixelClass::Uncertain
        }
    }
}

/// One in-bounds entry of a patch: channel, target pixel, probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchEntry {
    pub channel: usize,
    pub pixel: usize,
    pub prob: f32,
}

/// Disjoint split of a patch's in-bounds entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchClassification {
    pub foreground: Vec<PatchEntry>,
    pub background: Vec<PatchEntry>,
    pub uncertain: Vec<PatchEntry>,
}

/// Dense per-pixel shape-patch predictions plus foreground and
/// instance-count estimates.
///
/// Patch probabilities are held pixel-major (`pixel * |P| + channel`) so a
/// single patch is contiguous; the NPY interchange layout is channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    grid: Grid,
    geometry: PatchGeometry,
    patch_probs: Vec<f32>,
    fg_probs: Vec<f32>,
    ninst_probs: Option<Vec<f32>>,
    t: f64,
    fg_threshold: f64,
}

impl PredictionBundle {
    /// Builds a bundle from channel-major tensors (`[|P|, spatial...]` and
    /// `[3, spatial...]`), as stored on disk.
    pub fn from_channel_major(
        geometry: PatchGeometry,
        grid: Grid,
        patch_probs: &[f32],
        fg_probs: Vec<f32>,
        ninst_probs: Option<&[f32]>,
    ) -> Result<Self> {
        let n = grid.len();
        let k = geometry.len();
        if patch_probs.len() != n * k {
            return Err(Error::ShapeMismatch(format!(
                "patch probabilities hold {} values, expected {} channels x {} pixels",
                patch_probs.len(),
                k,
                n
            )));
        }
        let patch = transpose(patch_probs, k, n);
        let ninst = match ninst_probs {
            Some(v) => {
                if v.len() != n * INSTANCE_COUNT_CLASSES {
                    return Err(Error::ShapeMismatch(format!(
                        "instance-count probabilities hold {} values, expected {} x {}",
                        v.len(),
                        INSTANCE_COUNT_CLASSES,
                        n
                    )));
                }
                Some(transpose(v, INSTANCE_COUNT_CLASSES, n))
            }
            None => None,
        };
        Self::from_pixel_major(geometry, grid, patch, fg_probs, ninst)
    }

    /// Builds a bundle from pixel-major tensors.
    pub fn from_pixel_major(
        geometry: PatchGeometry,
        grid: Grid,
        patch_probs: Vec<f32>,
        fg_probs: Vec<f32>,
        ninst_probs: Option<Vec<f32>>,
    ) -> Result<Self> {
        if geometry.dims() != grid.dims() {
            return Err(Error::ShapeMismatch(format!(
                "patch rank {} does not match image rank {}",
                geometry.dims(),
                grid.dims()
            )));
        }
        let n = grid.len();
        if patch_probs.len() != n * geometry.len() {
            return Err(Error::ShapeMismatch(format!(
                "patch probabilities hold {} values, expected {}",
                patch_probs.len(),
                n * geometry.len()
            )));
        }
        if fg_probs.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "foreground probabilities hold {} values, expected {}",
                fg_probs.len(),
                n
            )));
        }
        if let Some(v) = &ninst_probs {
            if v.len() != n * INSTANCE_COUNT_CLASSES {
                return Err(Error::ShapeMismatch(format!(
                    "instance-count probabilities hold {} values, expected {}",
                    v.len(),
                    n * INSTANCE_COUNT_CLASSES
                )));
            }
        }
        check_probs("patch", &patch_probs)?;
        check_probs("foreground", &fg_probs)?;
        if let Some(v) = &ninst_probs {
            check_probs("instance-count", v)?;
        }
        Ok(Self {
            grid,
            geometry,
            patch_probs,
            fg_probs,
            ninst_probs,
            t: DEFAULT_PATCH_THRESHOLD,
            fg_threshold: DEFAULT_FG_THRESHOLD,
        })
    }

    /// Replaces both thresholds. `t` must lie in `[0.5, 1]` so that patch
    /// foreground and background stay disjoint; `fg_threshold` in `(0, 1)`.
    pub fn with_thresholds(mut self, t: f64, fg_threshold: f64) -> Result<Self> {
        if !(0.5..=1.0).contains(&t) {
            return Err(Error::InvalidThreshold(format!("patch threshold t = {t} not in [0.5, 1]")));
        }
        if !(fg_threshold > 0.0 && fg_threshold < 1.0) {
            return Err(Error::InvalidThreshold(format!(
                "foreground threshold {fg_threshold} not in (0, 1)"
            )));
        }
        self.t = t;
        self.fg_threshold = fg_threshold;
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn fg_threshold(&self) -> f64 {
        self.fg_threshold
    }

    pub fn fg_probs(&self) -> &[f32] {
        &self.fg_probs
    }

    pub fn ninst_probs(&self) -> Option<&[f32]> {
        self.ninst_probs.as_deref()
    }

    pub fn patch_probs(&self) -> &[f32] {
        &self.patch_probs
    }

    pub(crate) fn patch_probs_mut(&mut self) -> &mut [f32] {
        &mut self.patch_probs
    }

    /// The `|P|` probabilities predicted at pixel `x`.
    #[inline]
    pub fn patch(&self, x: usize) -> &[f32] {
        let k = self.geometry.len();
        &self.patch_probs[x * k..(x + 1) * k]
    }

    #[inline]
    pub fn prob(&self, x: usize, channel: usize) -> f32 {
        self.patch_probs[x * self.geometry.len() + channel]
    }

    #[inline]
    pub fn class_of(&self, p: f32) -> PixelClass {
        PixelClass::of(p, self.t)
    }

    /// Patch probabilities in the channel-major on-disk layout.
    pub fn patch_probs_channel_major(&self) -> Vec<f32> {
        transpose(&self.patch_probs, self.grid.len(), self.geometry.len())
    }

    pub fn ninst_probs_channel_major(&self) -> Option<Vec<f32>> {
        self.ninst_probs
            .as_ref()
            .map(|v| transpose(v, self.grid.len(), INSTANCE_COUNT_CLASSES))
    }

    /// In-bounds entries of the patch predicted at `x`, optionally
    /// restricted to pixels inside `restrict`.
    pub fn patch_entries<'a>(
        &'a self,
        x: usize,
        restrict: Option<&'a Mask>,
    ) -> impl Iterator<Item = PatchEntry> + 'a {
        let row = self.patch(x);
        let origin = self.grid.coord(x);
        self.geometry
            .offsets()
            .iter()
            .enumerate()
            .filter_map(move |(channel, o)| {
                let c = [origin[0] + o[0], origin[1] + o[1], origin[2] + o[2]];
                let pixel = self.grid.index(c)?;
                if let Some(m) = restrict {
                    if !m.get(pixel) {
                        return None;
                    }
                }
                Some(PatchEntry {
                    channel,
                    pixel,
                    prob: row[channel],
                })
            })
    }

    /// Pixels of `fg(p_x)`, in channel order.
    pub fn patch_foreground(&self, x: usize, restrict: Option<&Mask>) -> Vec<usize> {
        self.patch_entries(x, restrict)
            .filter(|e| self.class_of(e.prob) == PixelClass::Foreground)
            .map(|e| e.pixel)
            .collect()
    }

    /// Splits the in-bounds entries of patch `x` into foreground,
    /// background and uncertain sets.
    pub fn classify(&self, x: usize) -> PatchClassification {
        self.classify_restricted(x, None)
    }

    pub fn classify_restricted(&self, x: usize, restrict: Option<&Mask>) -> PatchClassification {
        let mut out = PatchClassification::default();
        for e in self.patch_entries(x, restrict) {
            match self.class_of(e.prob) {
                PixelClass::Foreground => out.foreground.push(e),
                PixelClass::Background => out.background.push(e),
                PixelClass::Uncertain => out.uncertain.push(e),
            }
        }
        out
    }

    /// `fg(I)`: pixels whose foreground probability exceeds the threshold.
    pub fn image_foreground(&self) -> Mask {
        let bits = self
            .fg_probs
            .iter()
            .map(|&p| p as f64 > self.fg_threshold)
            .collect();
        Mask {
            grid: self.grid.clone(),
            bits,
        }
    }

    /// Pixels whose most likely instance count is 2 or more. Ties go to
    /// the lower class. Empty when no instance-count map is present.
    pub fn overlap_mask(&self) -> Mask {
        let Some(v) = &self.ninst_probs else {
            return Mask::empty(&self.grid);
        };
        let bits = v
            .chunks_exact(INSTANCE_COUNT_CLASSES)
            .map(|c| {
                let mut best = 0;
                for k in 1..INSTANCE_COUNT_CLASSES {
                    if c[k] > c[best] {
                        best = k;
                    }
                }
                best >= 2
            })
            .collect();
        Mask {
            grid: self.grid.clone(),
            bits,
        }
    }
}

fn check_probs(what: &str, v: &[f32]) -> Result<()> {
    if let Some((i, p)) = v
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
    {
        return Err(Error::InvalidProbability(format!(
            "{what} value {p} at flat index {i} is not a probability"
        )));
    }
    Ok(())
}

/// Transposes a row-major `rows x cols` matrix.
fn transpose(v: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; v.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = v[r * cols + c];
        }
    }
    out
}

/// Ground-truth instances as individual, possibly overlapping, binary masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    grid: Grid,
    masks: Vec<Mask>,
}

impl GroundTruth {
    pub fn new(grid: Grid, masks: Vec<Mask>) -> Result<Self> {
        for (i, m) in masks.iter().enumerate() {
            if m.grid() != &grid {
                return Err(Error::ShapeMismatch(format!(
                    "instance {i} has shape {:?}, expected {:?}",
                    m.grid().shape(),
                    grid.shape()
                )));
            }
            if m.is_empty() {
                return Err(Error::EmptyInstance(i));
            }
        }
        Ok(Self { grid, masks })
    }

    /// Builds ground truth from a `[N, spatial...]` u8 stack (nonzero = set).
    pub fn from_stack(spatial: &[usize], data: &[u8]) -> Result<Self> {
        let grid = Grid::new(spatial)?;
        let n = grid.len();
        if n == 0 || !data.len().is_multiple_of(n) {
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
        Self::new(grid, masks)
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

    pub fn union(&self) -> Mask {
        let mut u = Mask::empty(&self.grid);
        for m in &self.masks {
            for p in m.pixels() {
                u.set(p, true);
            }
        }
        u
    }

    /// Number of instances covering each pixel.
    pub fn instance_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.grid.len()];
        for m in &self.masks {
            for p in m.pixels() {
                counts[p] += 1;
            }
        }
        counts
    }

    /// `[N, spatial...]` u8 stack.
    pub fn to_stack(&self) -> Vec<u8> {
        stack_masks(&self.masks)
    }
}

pub(crate) fn stack_masks(masks: &[Mask]) -> Vec<u8> {
    let mut out = Vec::with_capacity(masks.iter().map(|m| m.bits.len()).sum());
    for m in masks {
        out.extend(m.bits.iter().map(|&b| b as u8));
    }
    out
}

/// Shape `[count, spatial...]` for a stack of masks over `grid`.
pub(crate) fn stack_shape(count: usize, grid: &Grid) -> Vec<usize> {
    let mut s = Vec::with_capacity(MAX_DIMS + 1);
    s.push(count);
    s.extend_from_slice(grid.shape());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle_1d(p: &[f32], t: f64) -> PredictionBundle {
        // three pixels, patch {-1, 0, +1}; prediction only at the middle pixel
        let geometry = PatchGeometry::new(&[3]).unwrap();
        let grid = Grid::new(&[3]).unwrap();
        let mut probs = vec![0.0f32; 9];
        probs[3..6].copy_from_slice(p);
        PredictionBundle::from_pixel_major(geometry, grid, probs, vec![1.0; 3], None)
            .unwrap()
            .with_thresholds(t, 0.5)
            .unwrap()
    }

    fn channels(v: &[PatchEntry]) -> Vec<usize> {
        v.iter().map(|e| e.channel).collect()
    }

    #[test]
    fn classify_direct_threshold() {
        let b = bundle_1d(&[0.95, 0.30, 0.50], 0.9);
        let c = b.classify(1);
        assert_eq!(channels(&c.foreground), vec![0]);
        assert!(c.background.is_empty());
        assert_eq!(channels(&c.uncertain), vec![1, 2]);
    }

    #[test]
    fn classify_extreme_probabilities() {
        let b = bundle_1d(&[1.0, 1.0, 0.0], 0.5);
        let c = b.classify(1);
        assert_eq!(channels(&c.foreground), vec![0, 1]);
        assert_eq!(channels(&c.background), vec![2]);
        assert!(c.uncertain.is_empty());
    }

    #[test]
    fn classify_boundary_values_are_uncertain() {
        for t in [0.5, 0.7, 1.0] {
            let b = bundle_1d(&[0.5, 0.5, 0.5], t);
            let c = b.classify(1);
            assert!(c.foreground.is_empty() && c.background.is_empty());
            assert_eq!(c.uncertain.len(), 3);
        }
        // p = t and p = 1 - t exactly
        assert_eq!(PixelClass::of(0.75, 0.75), PixelClass::Uncertain);
        assert_eq!(PixelClass::of(0.25, 0.75), PixelClass::Uncertain);
    }

    #[test]
    fn classify_clips_at_border() {
        let b = bundle_1d(&[1.0, 1.0, 0.0], 0.5);
        let c = b.classify(0);
        let total = c.foreground.len() + c.background.len() + c.uncertain.len();
        assert_eq!(total, 2);
    }

    #[test]
    fn rejects_threshold_below_half() {
        let b = bundle_1d(&[1.0, 1.0, 0.0], 0.5);
        assert!(matches!(b.with_thresholds(0.4, 0.5), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        let g = PatchGeometry::new(&[3]).unwrap();
        let grid = Grid::new(&[2]).unwrap();
        let r = PredictionBundle::from_pixel_major(g, grid, vec![0.0, 1.2, 0.0, 0.0, 0.0, 0.0], vec![0.0; 2], None);
        assert!(matches!(r, Err(Error::InvalidProbability(_))));
    }

    fn fg_bundle(fg: Vec<f32>, ninst: Option<Vec<f32>>) -> PredictionBundle {
        let g = PatchGeometry::new(&[1]).unwrap();
        let n = fg.len();
        let grid = Grid::new(&[n]).unwrap();
        PredictionBundle::from_pixel_major(g, grid, vec![0.0; n], fg, ninst).unwrap()
    }

    #[test]
    fn image_foreground_thresholds() {
        assert!(fg_bundle(vec![0.0; 4], None).image_foreground().is_empty());
        let m = fg_bundle(vec![0.4, 0.6], None).image_foreground();
        assert_eq!(m.pixels().collect::<Vec<_>>(), vec![1]);
        let m = fg_bundle(vec![1.0, 0.0, 1.0], None).image_foreground();
        assert_eq!(m.pixels().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn overlap_mask_argmax() {
        assert!(fg_bundle(vec![0.0; 2], None).overlap_mask().is_empty());
        let b = fg_bundle(vec![1.0, 1.0], Some(vec![0.1, 0.2, 0.7, 0.2, 0.7, 0.1]));
        assert_eq!(b.overlap_mask().pixels().collect::<Vec<_>>(), vec![0]);
        // tie between count 1 and count >= 2 goes to the lower class
        let b = fg_bundle(vec![1.0], Some(vec![0.0, 0.5, 0.5]));
        assert!(b.overlap_mask().is_empty());
    }

    #[test]
    fn channel_major_round_trip() {
        let g = PatchGeometry::new(&[3]).unwrap();
        let grid = Grid::new(&[2]).unwrap();
        let cm = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let b = PredictionBundle::from_channel_major(g, grid, &cm, vec![0.0; 2], None).unwrap();
        assert_eq!(b.patch(0), &[0.1, 0.3, 0.5]);
        assert_eq!(b.patch_probs_channel_major(), cm);
    }
}
