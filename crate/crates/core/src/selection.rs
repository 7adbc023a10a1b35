//! Patch scoring against the consensus field and covering-subset selection.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;

use crate::bundle::{Mask, PixelClass, PredictionBundle};
use crate::consensus::ConsensusField;
use crate::error::{Error, Result};

/// A patch with non-empty foreground and its agreement score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPatch {
    /// Predicting pixel.
    pub pixel: usize,
    pub score: f64,
    pub fg_size: usize,
}

/// Ranking order: score descending, then foreground size descending, then
/// pixel index ascending.
pub fn rank_order(a: &ScoredPatch, b: &ScoredPatch) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.fg_size.cmp(&a.fg_size))
        .then(a.pixel.cmp(&b.pixel))
}

/// Agreement of patch `x` with the consensus: affinities of its
/// foreground pairs minus affinities of its foreground/background pairs,
/// normalised by the number of patch pairs with at least one foreground
/// endpoint. Undefined affinities add nothing to the sum but still count in
/// the normaliser.
///
/// A patch whose (restricted) domain is a single foreground pixel has no
/// pairs and scores 0.
pub fn score_patch(field: &ConsensusField, bundle: &PredictionBundle, x: usize) -> Result<f64> {
    let (score, _) = score_with_size(field, bundle, x)?;
    Ok(score)
}

fn score_with_size(field: &ConsensusField, bundle: &PredictionBundle, x: usize) -> Result<(f64, usize)> {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut total = 0usize;
    for e in bundle.patch_entries(x, field.restriction()) {
        total += 1;
        match bundle.class_of(e.prob) {
            PixelClass::Foreground => fg.push((e.channel, e.pixel)),
            PixelClass::Background => bg.push((e.channel, e.pixel)),
            PixelClass::Uncertain => {}
        }
    }
    let nf = fg.len();
    if nf == 0 {
        return Err(Error::EmptyForeground(x));
    }
    let z = nf * (nf - 1) / 2 + nf * (total - nf);
    if z == 0 {
        return Ok((0.0, nf));
    }
    let mut sum = 0.0f64;
    for (i, &(ca, pa)) in fg.iter().enumerate() {
        for &(cb, _) in &fg[i + 1..] {
            if let Some(a) = field.aff_channels(pa, ca, cb) {
                sum += a;
            }
        }
    }
    for &(ca, pa) in &fg {
        for &(cb, pb) in &bg {
            let a = if ca < cb {
                field.aff_channels(pa, ca, cb)
            } else {
                field.aff_channels(pb, cb, ca)
            };
            if let Some(a) = a {
                sum -= a;
            }
        }
    }
    Ok((sum / z as f64, nf))
}

/// Scores every non-discarded foreground pixel with a non-empty patch
/// foreground and sorts by [`rank_order`].
pub fn rank(
    field: &ConsensusField,
    bundle: &PredictionBundle,
    fg: &Mask,
    discard: &Mask,
) -> Vec<ScoredPatch> {
    rank_with(field, bundle, fg, discard, true)
}

pub fn rank_with(
    field: &ConsensusField,
    bundle: &PredictionBundle,
    fg: &Mask,
    discard: &Mask,
    parallel: bool,
) -> Vec<ScoredPatch> {
    let candidates: Vec<usize> = fg.difference(discard).pixels().collect();
    let score = |&x: &usize| {
        score_with_size(field, bundle, x)
            .ok()
            .map(|(score, fg_size)| ScoredPatch {
                pixel: x,
                score,
                fg_size,
            })
    };
    let mut ranked: Vec<ScoredPatch> = if parallel {
        candidates.par_iter().filter_map(score).collect()
    } else {
        candidates.iter().filter_map(score).collect()
    };
    ranked.sort_by(rank_order);
    ranked
}

/// Dense score image: the patch score at each ranked pixel, NaN elsewhere.
pub fn score_image(ranked: &[ScoredPatch], pixels: usize) -> Vec<f32> {
    let mut out = vec![f32::NAN; pixels];
    for p in ranked {
        out[p.pixel] = p.score as f32;
    }
    out
}

/// Source of patch foregrounds for the covering procedures.
pub trait PatchForegrounds {
    fn foreground(&self, x: usize) -> Vec<usize>;
}

/// Patch foregrounds read from a prediction bundle, optionally restricted
/// to the image foreground.
pub struct BundleForegrounds<'a> {
    pub bundle: &'a PredictionBundle,
    pub restrict: Option<&'a Mask>,
}

impl PatchForegrounds for BundleForegrounds<'_> {
    fn foreground(&self, x: usize) -> Vec<usize> {
        self.bundle.patch_foreground(x, self.restrict)
    }
}

impl PatchForegrounds for HashMap<usize, Vec<usize>> {
    fn foreground(&self, x: usize) -> Vec<usize> {
        self.get(&x).cloned().unwrap_or_default()
    }
}

/// Extra covering demand for overlap pixels: each should end up covered by
/// patches of two distinct instances. `distinct(a, b)` decides whether two
/// patches describe different instances.
pub struct OverlapCover<'a> {
    pub pixels: Mask,
    pub distinct: Box<dyn Fn(usize, usize) -> bool + 'a>,
}

/// A subset of ranked patches covering the image foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSelection {
    /// Selected patches in selection order.
    pub patches: Vec<ScoredPatch>,
    /// Covered pixels of the image foreground.
    pub coverage: Mask,
    /// Non-discarded foreground pixels no patch covers.
    pub uncovered: Vec<usize>,
    /// Overlap pixels not reached by two distinct instances.
    pub overlap_unsatisfied: Vec<usize>,
}

impl PatchSelection {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn pixels(&self) -> Vec<usize> {
        self.patches.iter().map(|p| p.pixel).collect()
    }
}

struct CoverState<'a, 'b> {
    needed: Vec<bool>,
    remaining: usize,
    overlap: Option<&'b OverlapCover<'a>>,
    coverers: HashMap<usize, Vec<usize>>,
    satisfied: HashMap<usize, bool>,
    unsatisfied: usize,
    distinct_memo: HashMap<(usize, usize), bool>,
}

impl<'a, 'b> CoverState<'a, 'b> {
    fn new(fg: &Mask, discard: &Mask, overlap: Option<&'b OverlapCover<'a>>) -> Self {
        let target = fg.difference(discard);
        let remaining = target.count();
        let mut satisfied = HashMap::new();
        if let Some(o) = overlap {
            for q in o.pixels.intersection(fg).pixels() {
                satisfied.insert(q, false);
            }
        }
        Self {
            needed: target.bits().to_vec(),
            remaining,
            overlap,
            coverers: HashMap::new(),
            unsatisfied: satisfied.len(),
            satisfied,
            distinct_memo: HashMap::new(),
        }
    }

    fn done(&self) -> bool {
        self.remaining == 0 && self.unsatisfied == 0
    }

    fn distinct(&mut self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        if let Some(&d) = self.distinct_memo.get(&key) {
            return d;
        }
        let d = (self.overlap.expect("overlap demand present").distinct)(key.0, key.1);
        self.distinct_memo.insert(key, d);
        d
    }

    fn overlap_gain(&mut self, x: usize, q: usize) -> bool {
        match self.satisfied.get(&q) {
            Some(false) => {}
            _ => return false,
        }
        let current = self.coverers.get(&q).cloned().unwrap_or_default();
        current.iter().all(|&c| self.distinct(x, c))
    }

    fn gain(&mut self, x: usize, foreground: &[usize]) -> usize {
        let mut g = 0;
        for &q in foreground {
            if self.needed[q] || (self.overlap.is_some() && self.overlap_gain(x, q)) {
                g += 1;
            }
        }
        g
    }

    fn apply(&mut self, x: usize, foreground: &[usize]) {
        for &q in foreground {
            if self.needed[q] {
                self.needed[q] = false;
                self.remaining -= 1;
            } else if self.overlap.is_some() && self.overlap_gain(x, q) {
                let list = self.coverers.entry(q).or_default();
                list.push(x);
                if list.len() >= 2 {
                    self.satisfied.insert(q, true);
                    self.unsatisfied -= 1;
                }
            }
        }
    }

    fn unsatisfied_pixels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .satisfied
            .iter()
            .filter_map(|(&q, &s)| (!s).then_some(q))
            .collect();
        v.sort_unstable();
        v
    }
}

fn finish(
    patches: Vec<ScoredPatch>,
    foregrounds: &dyn PatchForegrounds,
    fg: &Mask,
    discard: &Mask,
    state: &CoverState,
) -> PatchSelection {
    let mut coverage = Mask::empty(fg.grid());
    for p in &patches {
        for q in foregrounds.foreground(p.pixel) {
            if fg.get(q) {
                coverage.set(q, true);
            }
        }
    }
    let uncovered = fg.difference(discard).difference(&coverage).pixels().collect();
    PatchSelection {
        patches,
        coverage,
        uncovered,
        overlap_unsatisfied: state.unsatisfied_pixels(),
    }
}

/// Walks the ranked list once and keeps every patch that covers foreground
/// not yet covered, until the non-discarded foreground is covered.
pub fn greedy_cover(
    ranked: &[ScoredPatch],
    foregrounds: &dyn PatchForegrounds,
    fg: &Mask,
    discard: &Mask,
) -> PatchSelection {
    greedy_cover_with(ranked, foregrounds, fg, discard, None)
}

/// [`greedy_cover`] with an optional overlap demand: a patch is also kept
/// when it brings a new distinct instance to an overlap pixel.
pub fn greedy_cover_with(
    ranked: &[ScoredPatch],
    foregrounds: &dyn PatchForegrounds,
    fg: &Mask,
    discard: &Mask,
    overlap: Option<&OverlapCover>,
) -> PatchSelection {
    let mut state = CoverState::new(fg, discard, overlap);
    let mut selected = Vec::new();
    for p in ranked {
        if state.done() {
            break;
        }
        let f = foregrounds.foreground(p.pixel);
        if state.gain(p.pixel, &f) > 0 {
            state.apply(p.pixel, &f);
            selected.push(*p);
        }
    }
    finish(selected, foregrounds, fg, discard, &state)
}

#[derive(Debug, Clone, Copy)]
struct HeapItem {
    gain: usize,
    patch: ScoredPatch,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // max-heap: larger gain, then higher score, then lower pixel index
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .cmp(&other.gain)
            .then(self.patch.score.total_cmp(&other.patch.score))
            .then(other.patch.pixel.cmp(&self.patch.pixel))
    }
}

/// Repeatedly takes the pre-selected patch covering the most remaining
/// foreground until nothing the pre-selection covered is left.
pub fn thin_out(
    preselection: &PatchSelection,
    foregrounds: &dyn PatchForegrounds,
    fg: &Mask,
    discard: &Mask,
) -> PatchSelection {
    thin_out_with(preselection, foregrounds, fg, discard, None)
}

pub fn thin_out_with(
    preselection: &PatchSelection,
    foregrounds: &dyn PatchForegrounds,
    fg: &Mask,
    discard: &Mask,
    overlap: Option<&OverlapCover>,
) -> PatchSelection {
    let mut state = CoverState::new(fg, discard, overlap);
    let fgs: HashMap<usize, Vec<usize>> = preselection
        .patches
        .iter()
        .map(|p| (p.pixel, foregrounds.foreground(p.pixel)))
        .collect();
    // Gains never increase as coverage grows, so stale heap keys are upper
    // bounds and a popped item whose gain is still current is the maximum.
    let mut heap: BinaryHeap<HeapItem> = preselection
        .patches
        .iter()
        .map(|&patch| HeapItem {
            gain: usize::MAX,
            patch,
        })
        .collect();
    let mut selected = Vec::new();
    while let Some(item) = heap.pop() {
        let f = &fgs[&item.patch.pixel];
        let gain = state.gain(item.patch.pixel, f);
        if gain == 0 {
            continue;
        }
        if gain == item.gain {
            state.apply(item.patch.pixel, f);
            selected.push(item.patch);
        } else {
            heap.push(HeapItem {
                gain,
                patch: item.patch,
            });
        }
    }
    finish(selected, foregrounds, fg, discard, &state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{accumulate_with, AccumulateOptions};
    use crate::geometry::{Grid, PatchGeometry};

    fn sp(pixel: usize, score: f64, fg_size: usize) -> ScoredPatch {
        ScoredPatch {
            pixel,
            score,
            fg_size,
        }
    }

    fn line(n: usize) -> Grid {
        Grid::new(&[n]).unwrap()
    }

    #[test]
    fn perfect_single_patch_scores_one() {
        let geometry = PatchGeometry::new(&[3]).unwrap();
        let grid = line(3);
        let mut probs = vec![0.0f32; 9];
        probs[3..6].copy_from_slice(&[1.0, 1.0, 0.0]);
        let b = PredictionBundle::from_pixel_major(geometry, grid.clone(), probs, vec![1.0; 3], None)
            .unwrap()
            .with_thresholds(0.5, 0.5)
            .unwrap();
        let f = accumulate_with(
            &b,
            &Mask::full(&grid),
            &Mask::empty(&grid),
            AccumulateOptions { sparse: false, parallel: false },
        )
        .unwrap();
        assert_eq!(score_patch(&f, &b, 1).unwrap(), 1.0);
        assert!(matches!(score_patch(&f, &b, 0), Err(Error::EmptyForeground(0))));
    }

    #[test]
    fn rank_tie_breaks() {
        let mut v = [sp(5, 0.4, 3), sp(9, 0.9, 3)];
        v.sort_by(rank_order);
        assert_eq!(v.iter().map(|p| p.score).collect::<Vec<_>>(), vec![0.9, 0.4]);

        let mut v = [sp(1, 0.5, 12), sp(2, 0.5, 30)];
        v.sort_by(rank_order);
        assert_eq!(v[0].fg_size, 30);

        // pixels (3,4) and (3,7) in a 10-wide image
        let mut v = [sp(37, 0.5, 10), sp(34, 0.5, 10)];
        v.sort_by(rank_order);
        assert_eq!(v[0].pixel, 34);
    }

    fn covers(entries: &[(usize, &[usize])]) -> HashMap<usize, Vec<usize>> {
        entries.iter().map(|(k, v)| (*k, v.to_vec())).collect()
    }

    #[test]
    fn greedy_cover_skips_redundant_patch() {
        let grid = line(5);
        let fg = Mask::from_pixels(&grid, [1, 2, 3]);
        let none = Mask::empty(&grid);
        // A = 10, B = 20, C = 30
        let fgs = covers(&[(10, &[1, 2]), (20, &[1, 2]), (30, &[3])]);
        let ranked = vec![sp(10, 0.9, 2), sp(20, 0.8, 2), sp(30, 0.7, 1)];
        let sel = greedy_cover(&ranked, &fgs, &fg, &none);
        assert_eq!(sel.pixels(), vec![10, 30]);
        assert!(sel.uncovered.is_empty());
    }

    #[test]
    fn greedy_cover_single_patch_and_empty() {
        let grid = line(4);
        let fg = Mask::from_pixels(&grid, [0, 1]);
        let none = Mask::empty(&grid);
        let fgs = covers(&[(0, &[0, 1]), (1, &[0, 1])]);
        let ranked = vec![sp(0, 1.0, 2), sp(1, 0.9, 2)];
        assert_eq!(greedy_cover(&ranked, &fgs, &fg, &none).pixels(), vec![0]);
        let empty = greedy_cover(&[], &fgs, &none, &none);
        assert!(empty.is_empty() && empty.uncovered.is_empty());
    }

    #[test]
    fn greedy_cover_reports_uncoverable_pixels() {
        let grid = line(4);
        let fg = Mask::from_pixels(&grid, [0, 1, 3]);
        let none = Mask::empty(&grid);
        let fgs = covers(&[(0, &[0, 1])]);
        let sel = greedy_cover(&[sp(0, 1.0, 2)], &fgs, &fg, &none);
        assert_eq!(sel.uncovered, vec![3]);
    }

    #[test]
    fn thin_out_drops_redundant_patch() {
        let grid = line(5);
        let fg = Mask::from_pixels(&grid, [1, 2, 3, 4]);
        let none = Mask::empty(&grid);
        // pre-selection order as greedy would produce it: B first (higher
        // score), then A, then C
        let fgs = covers(&[(10, &[1, 2, 3]), (20, &[2]), (30, &[4])]);
        let pre = PatchSelection {
            patches: vec![sp(20, 0.9, 1), sp(10, 0.8, 3), sp(30, 0.7, 1)],
            coverage: Mask::from_pixels(&grid, [1, 2, 3, 4]),
            uncovered: vec![],
            overlap_unsatisfied: vec![],
        };
        let thin = thin_out(&pre, &fgs, &fg, &none);
        assert_eq!(thin.pixels(), vec![10, 30]);
        assert_eq!(thin.coverage, pre.coverage);
    }

    #[test]
    fn thin_out_keeps_necessary_patches() {
        let grid = line(3);
        let fg = Mask::from_pixels(&grid, [0, 1]);
        let none = Mask::empty(&grid);
        let fgs = covers(&[(0, &[0]), (1, &[1])]);
        let ranked = vec![sp(0, 1.0, 1), sp(1, 1.0, 1)];
        let pre = greedy_cover(&ranked, &fgs, &fg, &none);
        let thin = thin_out(&pre, &fgs, &fg, &none);
        assert_eq!(thin.pixels(), vec![0, 1]);
        // already minimal: unchanged
        let thin2 = thin_out(&thin, &fgs, &fg, &none);
        assert_eq!(thin2.pixels(), thin.pixels());
    }

    #[test]
    fn overlap_demand_adds_a_distinct_instance() {
        let grid = line(6);
        let fg = Mask::full(&grid);
        let discard = Mask::from_pixels(&grid, [2]);
        // instance A = {0,1,2}, instance B = {2,3,4,5}; patches 0,1 from A,
        // 3,4 from B; pixel 2 belongs to both.
        let fgs = covers(&[(0, &[0, 1]), (1, &[0, 1, 2]), (3, &[2, 3, 4]), (4, &[3, 4, 5])]);
        let instance = |p: usize| if p < 2 { 0 } else { 1 };
        let ranked = vec![sp(0, 1.0, 2), sp(4, 1.0, 3), sp(1, 0.9, 3), sp(3, 0.9, 3)];
        let plain = greedy_cover(&ranked, &fgs, &fg, &discard);
        assert_eq!(plain.pixels(), vec![0, 4]);
        let overlap = OverlapCover {
            pixels: discard.clone(),
            distinct: Box::new(move |a, b| instance(a) != instance(b)),
        };
        let sel = greedy_cover_with(&ranked, &fgs, &fg, &discard, Some(&overlap));
        assert_eq!(sel.pixels(), vec![0, 4, 1, 3]);
        assert!(sel.overlap_unsatisfied.is_empty());
        let thin = thin_out_with(&sel, &fgs, &fg, &discard, Some(&overlap));
        assert!(thin.overlap_unsatisfied.is_empty());
        assert_eq!(thin.coverage, sel.coverage);
    }
}
