//! Accumulates the pairwise consensus field for a single hand-made patch
//! and for a synthetic image, and prints a few affinities.

use patchseg::consensus::{accumulate_with, AccumulateOptions};
use patchseg::prelude::*;

fn main() -> Result<()> {
    // a line of three pixels; only the middle one predicts a patch
    let grid = Grid::new(&[3])?;
    let geometry = PatchGeometry::new(&[3])?;
    let mut probs = vec![0.0f32; 9];
    probs[3..6].copy_from_slice(&[0.9, 0.9, 0.05]);
    let bundle = PredictionBundle::from_pixel_major(geometry, grid.clone(), probs, vec![0.0, 1.0, 0.0], None)?
        .with_thresholds(0.8, 0.5)?;
    let fg = bundle.image_foreground();
    let field = accumulate_with(&bundle, &fg, &Mask::empty(&grid), AccumulateOptions { sparse: false, parallel: false })?;
    for (y, z) in [(0, 1), (1, 2), (0, 2), (1, 1)] {
        println!("aff({y}, {z}) = {:?}  entry = {:?}", field.aff(y, z), field.entry(y, z));
    }

    let params = ShapeParams { shape: vec![48, 48], instances: [3, 5], ..Default::default() };
    let gt = make_shapes(ShapeKind::Blobs, &params, 4)?;
    let bundle = synth(&gt, &PatchGeometry::new(&[7, 7])?)?;
    let fg = bundle.image_foreground();
    let discard = bundle.overlap_mask();
    for sparse in [true, false] {
        let field = accumulate(&bundle, &fg, &discard, sparse)?;
        let defined = field.raw_counts().iter().filter(|&&c| c > 0).count();
        println!(
            "sparse={sparse}: {} rows x {} planes, {defined} defined pairs",
            field.row_count(),
            field.planes()
        );
    }
    Ok(())
}
