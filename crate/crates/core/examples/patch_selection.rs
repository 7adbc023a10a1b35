//! Greedy set cover over ranked patches, then the thin-out pass that drops
//! patches made redundant by later picks.

use patchseg::prelude::*;
use patchseg::selection::BundleForegrounds;

fn main() -> Result<()> {
    let params = ShapeParams { shape: vec![96, 96], instances: [6, 10], ..Default::default() };
    let gt = make_shapes(ShapeKind::Blobs, &params, 3)?;
    let bundle = synth(&gt, &PatchGeometry::new(&[9, 9])?)?;
    let fg = bundle.image_foreground();
    let discard = bundle.overlap_mask();
    let field = accumulate(&bundle, &fg, &discard, true)?;
    let ranked = rank(&field, &bundle, &fg, &discard);

    let foregrounds = BundleForegrounds { bundle: &bundle, restrict: field.restriction() };
    let pre = greedy_cover(&ranked, &foregrounds, &fg, &discard);
    let thin = thin_out(&pre, &foregrounds, &fg, &discard);
    println!("foreground pixels: {}", fg.count());
    println!("ranked patches:    {}", ranked.len());
    println!("pre-selected:      {} (uncovered {})", pre.len(), pre.uncovered.len());
    println!("after thin-out:    {} (coverage unchanged: {})", thin.len(), thin.coverage == pre.coverage);
    Ok(())
}
