//! Two crossing strips share pixels. Overlap pixels are excluded from the
//! consensus, yet both assembled masks still contain them.

use patchseg::assembly::flatten;
use patchseg::prelude::*;

fn main() -> Result<()> {
    let params = ShapeParams { shape: vec![96, 96], strip_width: 5.0, ..Default::default() };
    let gt = make_shapes(ShapeKind::CrossingStrips, &params, 2)?;
    let bundle = synth(&gt, &PatchGeometry::new(&[13, 13])?)?;
    let run = Pipeline::new(PipelineConfig::default()).run(&bundle)?;

    let masks = run.segmentation.masks();
    let overlap = gt.masks()[0].intersection(&gt.masks()[1]);
    let shared = overlap.pixels().filter(|&q| masks.iter().filter(|m| m.get(q)).count() == 2).count();
    println!("overlap pixels: {}, claimed by both masks: {shared}", overlap.count());
    println!("AP@0.8 = {:.3}", ap_dsb(masks, gt.masks(), 0.8)?.ap);

    let labels = flatten(&run.segmentation);
    let mut counts = std::collections::BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    println!("flattened label sizes: {counts:?}");
    Ok(())
}
