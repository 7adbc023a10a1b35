//! Scores every patch of a corrupted synthetic image against the
//! consensus and shows that low scores flag damaged patches.

use patchseg::prelude::*;

fn patch_iou(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|p| b.contains(p)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

fn main() -> Result<()> {
    let params = ShapeParams { shape: vec![64, 64], instances: [4, 7], ..Default::default() };
    let gt = make_shapes(ShapeKind::Blobs, &params, 11)?;
    let clean = synth(&gt, &PatchGeometry::new(&[7, 7])?)?;
    let noisy = corrupt(&clean, &NoiseSpec { flip_prob: 0.05, jitter_sigma: 1.0, seed: 11 })?;

    let fg = noisy.image_foreground();
    let discard = noisy.overlap_mask();
    let field = accumulate(&noisy, &fg, &discard, true)?;
    let ranked = rank(&field, &noisy, &fg, &discard);
    println!("{} scored patches", ranked.len());

    let quality = |p: &ScoredPatch| {
        patch_iou(&noisy.patch_foreground(p.pixel, Some(&fg)), &clean.patch_foreground(p.pixel, Some(&fg)))
    };
    let decile = ranked.len() / 10;
    let mean = |s: &[ScoredPatch]| s.iter().map(quality).sum::<f64>() / s.len() as f64;
    println!("top decile:    mean score {:.3}, mean patch IoU {:.3}", ranked[0].score, mean(&ranked[..decile]));
    println!(
        "bottom decile: min score {:.3}, mean patch IoU {:.3}",
        ranked[ranked.len() - 1].score,
        mean(&ranked[ranked.len() - decile..])
    );
    Ok(())
}
