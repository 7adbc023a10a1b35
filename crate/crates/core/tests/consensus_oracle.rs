//! Brute-force consensus and score oracles compared against the
//! accumulated field on small random bundles.

use std::collections::HashMap;

use patchseg::bundle::{Mask, PixelClass, PredictionBundle};
use patchseg::consensus::{accumulate_with, AccumulateOptions, ConsensusField};
use patchseg::geometry::{Coord, Grid, PatchGeometry};
use patchseg::oracle::{make_shapes, synth, ShapeKind, ShapeParams};
use patchseg::selection::{rank_with, score_patch};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LEVELS: [f32; 8] = [0.0, 0.05, 0.1, 0.3, 0.5, 0.85, 0.95, 1.0];

struct Case {
    bundle: PredictionBundle,
    fg: Mask,
    discard: Mask,
}

fn random_case(seed: u64, dims: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (shape, extents): (Vec<usize>, Vec<usize>) = if dims == 1 {
        (vec![rng.gen_range(4..14)], vec![[3, 5][rng.gen_range(0..2)]])
    } else {
        (
            vec![rng.gen_range(3..8), rng.gen_range(3..8)],
            vec![3, [3, 5][rng.gen_range(0..2)]],
        )
    };
    let grid = Grid::new(&shape).unwrap();
    let geometry = PatchGeometry::new(&extents).unwrap();
    let n = grid.len();
    let patch: Vec<f32> = (0..n * geometry.len())
        .map(|_| LEVELS[rng.gen_range(0..LEVELS.len())])
        .collect();
    let fg_probs: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let t = [0.5, 0.8, 0.9][rng.gen_range(0..3)];
    let bundle = PredictionBundle::from_pixel_major(geometry, grid.clone(), patch, fg_probs, None)
        .unwrap()
        .with_thresholds(t, 0.5)
        .unwrap();
    let fg = bundle.image_foreground();
    let discard = Mask::from_pixels(&grid, (0..n).filter(|_| rng.gen_bool(0.15)));
    Case { bundle, fg, discard }
}

fn sub(a: Coord, b: Coord) -> Coord {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Numerator and informative count for every ordered pair `(y, z)`, summed
/// straight from the definition by visiting every predicting pixel.
fn brute_consensus(case: &Case, sparse: bool) -> HashMap<(usize, usize), (f64, u32)> {
    let b = &case.bundle;
    let grid = b.grid();
    let offsets = b.geometry().offsets();
    let mut out: HashMap<(usize, usize), (f64, u32)> = HashMap::new();
    for x in 0..grid.len() {
        if case.discard.get(x) || (sparse && !case.fg.get(x)) {
            continue;
        }
        let cx = grid.coord(x);
        // (pixel, prob) for in-bounds patch entries
        let entries: Vec<(usize, f32)> = offsets
            .iter()
            .enumerate()
            .filter_map(|(ch, o)| {
                let pixel = grid.index([cx[0] + o[0], cx[1] + o[1], cx[2] + o[2]])?;
                if sparse && !case.fg.get(pixel) {
                    return None;
                }
                Some((pixel, b.prob(x, ch)))
            })
            .collect();
        for &(y, py) in &entries {
            for &(z, pz) in &entries {
                if case.discard.get(y) || case.discard.get(z) {
                    continue;
                }
                let cy = PixelClass::of(py, b.t());
                let cz = PixelClass::of(pz, b.t());
                let (py, pz) = (py as f64, pz as f64);
                use PixelClass::*;
                let term = match (cy, cz) {
                    (Foreground, Foreground) => Some(py * pz),
                    (Foreground, Background) => Some(-py * (1.0 - pz)),
                    (Background, Foreground) => Some(-(1.0 - py) * pz),
                    _ => None,
                };
                let informative = cy == Foreground || cz == Foreground;
                let e = out.entry((y, z)).or_insert((0.0, 0));
                if let Some(v) = term {
                    e.0 += v;
                }
                if informative {
                    e.1 += 1;
                }
            }
        }
    }
    out
}

fn all_pairs(case: &Case) -> Vec<(usize, usize)> {
    let grid = case.bundle.grid();
    let offsets = case.bundle.geometry().offsets();
    let mut diffs: Vec<Coord> = Vec::new();
    for a in offsets {
        for b in offsets {
            let d = sub(*a, *b);
            if !diffs.contains(&d) {
                diffs.push(d);
            }
        }
    }
    let mut out = Vec::new();
    for y in 0..grid.len() {
        let cy = grid.coord(y);
        for d in &diffs {
            if let Some(z) = grid.index([cy[0] + d[0], cy[1] + d[1], cy[2] + d[2]]) {
                out.push((y, z));
            }
        }
    }
    out
}

fn field(case: &Case, sparse: bool, parallel: bool) -> ConsensusField {
    accumulate_with(&case.bundle, &case.fg, &case.discard, AccumulateOptions { sparse, parallel }).unwrap()
}

fn check_against_oracle(case: &Case, sparse: bool) -> Result<(), TestCaseError> {
    let f = field(case, sparse, false);
    let oracle = brute_consensus(case, sparse);
    for (y, z) in all_pairs(case) {
        let (num, count) = oracle.get(&(y, z)).copied().unwrap_or((0.0, 0));
        match f.aff(y, z) {
            None => prop_assert_eq!(count, 0, "pair ({}, {}) undefined but oracle count {}", y, z, count),
            Some(a) => {
                prop_assert!(count > 0);
                let (fnum, fcount) = f.entry(y, z).unwrap();
                prop_assert_eq!(fcount, count);
                prop_assert!((fnum - num).abs() < 1e-9, "numerator {} vs {}", fnum, num);
                prop_assert!((-1.0..=1.0).contains(&a));
                prop_assert_eq!(Some(a), f.aff(z, y));
            }
        }
    }
    Ok(())
}

/// Score straight from the definition, using the field only for `aff`.
fn brute_score(f: &ConsensusField, bundle: &PredictionBundle, x: usize) -> Option<f64> {
    let entries: Vec<_> = bundle.patch_entries(x, f.restriction()).collect();
    let class = |p: f32| bundle.class_of(p);
    if !entries.iter().any(|e| class(e.prob) == PixelClass::Foreground) {
        return None;
    }
    let mut num = 0.0;
    let mut z = 0usize;
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let (a, b) = (&entries[i], &entries[j]);
            let (ca, cb) = (class(a.prob), class(b.prob));
            if ca != PixelClass::Foreground && cb != PixelClass::Foreground {
                continue;
            }
            z += 1;
            let aff = f.aff(a.pixel, b.pixel).unwrap_or(0.0);
            match (ca, cb) {
                (PixelClass::Foreground, PixelClass::Foreground) => num += aff,
                (PixelClass::Foreground, PixelClass::Background)
                | (PixelClass::Background, PixelClass::Foreground) => num -= aff,
                _ => {}
            }
        }
    }
    Some(if z == 0 { 0.0 } else { num / z as f64 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dense_field_matches_definition(seed in any::<u64>(), dims in 1usize..=2) {
        check_against_oracle(&random_case(seed, dims), false)?;
    }

    #[test]
    fn sparse_field_matches_definition(seed in any::<u64>(), dims in 1usize..=2) {
        check_against_oracle(&random_case(seed, dims), true)?;
    }

    #[test]
    fn parallel_field_is_bit_identical(seed in any::<u64>(), dims in 1usize..=2, sparse in any::<bool>()) {
        let case = random_case(seed, dims);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let par = pool.install(|| field(&case, sparse, true));
        let seq = field(&case, sparse, false);
        prop_assert_eq!(par.raw_numerators(), seq.raw_numerators());
        prop_assert_eq!(par.raw_counts(), seq.raw_counts());
    }

    #[test]
    fn scores_match_definition_and_stay_bounded(seed in any::<u64>(), dims in 1usize..=2, sparse in any::<bool>()) {
        let case = random_case(seed, dims);
        let f = field(&case, sparse, false);
        let ranked = rank_with(&f, &case.bundle, &case.fg, &case.discard, false);
        for p in &ranked {
            let expected = brute_score(&f, &case.bundle, p.pixel).unwrap();
            prop_assert!((p.score - expected).abs() < 1e-9, "score {} vs {}", p.score, expected);
            prop_assert!((-1.0..=1.0).contains(&p.score));
            prop_assert!(p.fg_size >= 1);
        }
        let eligible = case.fg.difference(&case.discard).pixels()
            .filter(|&x| brute_score(&f, &case.bundle, x).is_some())
            .count();
        prop_assert_eq!(ranked.len(), eligible);
    }
}

fn single_patch_1d(probs: [f32; 3], t: f64) -> (PredictionBundle, Mask, Mask) {
    // one predicting pixel in the middle of a 3-pixel line; the others
    // predict empty patches and lie outside the foreground
    let grid = Grid::new(&[3]).unwrap();
    let geometry = PatchGeometry::new(&[3]).unwrap();
    let mut patch = vec![0.0f32; 9];
    patch[3..6].copy_from_slice(&probs);
    let bundle = PredictionBundle::from_pixel_major(geometry, grid.clone(), patch, vec![0.0, 1.0, 0.0], None)
        .unwrap()
        .with_thresholds(t, 0.5)
        .unwrap();
    let fg = bundle.image_foreground();
    (bundle, fg, Mask::empty(&grid))
}

#[test]
fn single_perfect_patch_hand_trace() {
    let (bundle, fg, discard) = single_patch_1d([1.0, 1.0, 0.0], 0.5);
    let f = accumulate_with(&bundle, &fg, &discard, AccumulateOptions { sparse: false, parallel: false }).unwrap();
    assert_eq!(f.entry(0, 1), Some((1.0, 1)));
    assert_eq!(f.aff(0, 1), Some(1.0));
    assert_eq!(f.aff(0, 2), Some(-1.0));
    assert_eq!(f.aff(1, 2), Some(-1.0));
    assert_eq!(score_patch(&f, &bundle, 1).unwrap(), 1.0);
}

#[test]
fn soft_patch_hand_trace() {
    let (bundle, fg, discard) = single_patch_1d([0.9, 0.9, 0.05], 0.8);
    let f = accumulate_with(&bundle, &fg, &discard, AccumulateOptions { sparse: false, parallel: false }).unwrap();
    let (num, count) = f.entry(0, 1).unwrap();
    assert!((num - 0.81).abs() < 1e-6 && count == 1);
    let (num, count) = f.entry(1, 2).unwrap();
    assert!((num + 0.855).abs() < 1e-6 && count == 1);
    // self pair: mean of p^2 over informative patches
    assert!((f.aff(1, 1).unwrap() - 0.81).abs() < 1e-6);
}

#[test]
fn uncertain_pair_is_not_informative() {
    let (bundle, fg, discard) = single_patch_1d([0.6, 0.5, 0.4], 0.8);
    let f = accumulate_with(&bundle, &fg, &discard, AccumulateOptions { sparse: false, parallel: false }).unwrap();
    assert_eq!(f.aff(0, 1), None);
    assert_eq!(f.aff(0, 2), None);
}

#[test]
fn perfect_predictions_are_a_fixed_point() {
    let params = ShapeParams { shape: vec![40, 40], instances: [3, 6], radius: [3.0, 7.0], min_gap: 0, ..Default::default() };
    let geometry = PatchGeometry::new(&[5, 5]).unwrap();
    for seed in 0..4 {
        let gt = make_shapes(ShapeKind::Blobs, &params, seed).unwrap();
        let bundle = synth(&gt, &geometry).unwrap();
        let case = Case { fg: bundle.image_foreground(), discard: bundle.overlap_mask(), bundle };
        let label: Vec<Option<usize>> = (0..gt.grid().len())
            .map(|p| gt.masks().iter().position(|m| m.get(p)))
            .collect();
        for sparse in [false, true] {
            let f = field(&case, sparse, true);
            for (y, z) in all_pairs(&case) {
                let Some(a) = f.aff(y, z) else { continue };
                match (label[y], label[z]) {
                    (Some(l), Some(m)) if l == m => assert_eq!(a, 1.0),
                    _ => assert_eq!(a, -1.0),
                }
            }
            for p in rank_with(&f, &case.bundle, &case.fg, &case.discard, true) {
                assert_eq!(p.score, 1.0);
            }
        }
    }
}
