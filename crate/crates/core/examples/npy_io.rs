//! Writes a prediction bundle and its ground truth as NPY files and reads
//! them back.

use patchseg::io::{read_bundle, read_gt, write_bundle, write_gt, GT_FILE};
use patchseg::npy::read_npy;
use patchseg::prelude::*;

fn main() -> Result<()> {
    let params = ShapeParams { shape: vec![40, 40], instances: [2, 4], ..Default::default() };
    let gt = make_shapes(ShapeKind::Blobs, &params, 5)?;
    let bundle = synth(&gt, &PatchGeometry::new(&[5, 5])?)?;

    let dir = tempfile::tempdir()?;
    write_bundle(dir.path(), &bundle)?;
    write_gt(&dir.path().join(GT_FILE), &gt)?;
    for entry in std::fs::read_dir(dir.path())? {
        let path = entry?.path();
        let tensor = read_npy(&path)?;
        println!("{:<20} {:?} {:?}", path.file_name().unwrap().to_string_lossy(), tensor.dtype(), tensor.shape);
    }

    let back = read_bundle(dir.path(), &PipelineConfig::default())?;
    println!("bundle round trip exact: {}", back == bundle);
    println!("ground truth round trip exact: {}", read_gt(&dir.path().join(GT_FILE))? == gt);
    Ok(())
}
