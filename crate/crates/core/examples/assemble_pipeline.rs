//! Runs the full assembly pipeline on a noisy synthetic image with a TOML
//! configuration and reports stage timings and accuracy.

use patchseg::prelude::*;

const CONFIG: &str = r#"
patch_extents = [9, 9]
t = 0.9
partitioner = "mws"
min_instance_size = 10
threads = 2
"#;

fn main() -> Result<()> {
    let cfg = PipelineConfig::from_toml(CONFIG)?;
    let params = ShapeParams { shape: vec![128, 128], instances: [8, 14], ..Default::default() };
    let gt = make_shapes(ShapeKind::Blobs, &params, 9)?;
    let clean = synth(&gt, &PatchGeometry::new(&[9, 9])?)?;
    let bundle = corrupt(&clean, &NoiseSpec { flip_prob: 0.03, jitter_sigma: 0.5, seed: 9 })?;

    let run = Pipeline::new(cfg).run(&bundle)?;
    for t in &run.timings {
        println!("{:<10} {:>8.4} s", t.stage, t.seconds);
    }
    println!("{:#?}", run.counts);
    let report = evaluate(run.segmentation.masks(), gt.masks(), &thresholds_fine())?;
    println!("{} of {} instances found, avAP {:.4}", run.segmentation.len(), gt.len(), report.avap);
    Ok(())
}
