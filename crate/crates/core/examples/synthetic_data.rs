//! Generates blobs, strips and crossing strips, turns them into perfect
//! patch predictions and corrupts them with label flips and logit noise.

use patchseg::prelude::*;

fn main() -> Result<()> {
    let params = ShapeParams { shape: vec![96, 96], ..Default::default() };
    let geometry = PatchGeometry::new(&[7, 7])?;
    for kind in [ShapeKind::Blobs, ShapeKind::Strips, ShapeKind::CrossingStrips] {
        let gt = make_shapes(kind, &params, 21)?;
        let clean = synth(&gt, &geometry)?;
        let overlap = clean.overlap_mask().count();
        let noisy = corrupt(&clean, &NoiseSpec { flip_prob: 0.1, jitter_sigma: 1.0, seed: 21 })?;
        let changed = clean
            .patch_probs()
            .iter()
            .zip(noisy.patch_probs())
            .filter(|(a, b)| (a.round() - b.round()).abs() > 0.0)
            .count();
        println!(
            "{kind:?}: {} instances, {} foreground px, {overlap} overlap px, {changed} patch values moved across 0.5",
            gt.len(),
            gt.union().count()
        );
    }
    Ok(())
}
