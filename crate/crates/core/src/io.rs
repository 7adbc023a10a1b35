//! On-disk layout of bundles, ground truth and segmentations.
//!
//! A bundle directory holds `patch_probs.npy` (`<f4`, `[|P|, spatial...]`),
//! `fg_probs.npy` (`<f4`, `[spatial...]`) and optionally `ninst_probs.npy`
//! (`<f4`, `[3, spatial...]`). Ground truth and instance stacks are `|u1`
//! `[N, spatial...]`; label maps are `<u4` `[spatial...]`.

use std::path::Path;

use serde::Serialize;

use crate::assembly::InstanceSegmentation;
use crate::bundle::{GroundTruth, PredictionBundle};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::npy::{read_npy, write_atomic, write_npy, Tensor};

pub const PATCH_FILE: &str = "patch_probs.npy";
pub const FG_FILE: &str = "fg_probs.npy";
pub const NINST_FILE: &str = "ninst_probs.npy";
pub const GT_FILE: &str = "gt.npy";
pub const INSTANCES_FILE: &str = "instances.npy";
pub const LABELS_FILE: &str = "labels.npy";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_bundle(dir: &Path, bundle: &PredictionBundle) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let spatial = bundle.grid().shape().to_vec();
    let mut patch_shape = vec![bundle.geometry().len()];
    patch_shape.extend(&spatial);
    write_npy(dir.join(PATCH_FILE), &Tensor::f32(patch_shape, bundle.patch_probs_channel_major()))?;
    write_npy(dir.join(FG_FILE), &Tensor::f32(spatial.clone(), bundle.fg_probs().to_vec()))?;
    if let Some(ninst) = bundle.ninst_probs_channel_major() {
        let mut shape = vec![crate::bundle::INSTANCE_COUNT_CLASSES];
        shape.extend(&spatial);
        write_npy(dir.join(NINST_FILE), &Tensor::f32(shape, ninst))?;
    }
    Ok(())
}

/// Reads a bundle directory; patch extents come from `config` or are
/// inferred as a cube.
pub fn read_bundle(dir: &Path, config: &PipelineConfig) -> Result<PredictionBundle> {
    let (fg_shape, fg) = read_npy(dir.join(FG_FILE))?.into_f32()?;
    let (patch_shape, patch) = read_npy(dir.join(PATCH_FILE))?.into_f32()?;
    if patch_shape.len() != fg_shape.len() + 1 || patch_shape[1..] != fg_shape[..] {
        return Err(Error::ShapeMismatch(format!(
            "patch tensor {:?} does not extend foreground tensor {:?}",
            patch_shape, fg_shape
        )));
    }
    let ninst_path = dir.join(NINST_FILE);
    let ninst = if ninst_path.exists() {
        let (shape, data) = read_npy(ninst_path)?.into_f32()?;
        if shape.len() != fg_shape.len() + 1 || shape[1..] != fg_shape[..] {
            return Err(Error::ShapeMismatch(format!(
                "instance-count tensor {:?} does not extend foreground tensor {:?}",
                shape, fg_shape
            )));
        }
        Some(data)
    } else {
        None
    };
    let geometry = config.geometry(patch_shape[0], fg_shape.len())?;
    let grid = crate::geometry::Grid::new(&fg_shape)?;
    PredictionBundle::from_channel_major(geometry, grid, &patch, fg, ninst.as_deref())?
        .with_thresholds(config.t, config.fg_threshold)
}

pub fn write_gt(path: &Path, gt: &GroundTruth) -> Result<()> {
    let mut shape = vec![gt.len()];
    shape.extend(gt.grid().shape());
    write_npy(path, &Tensor::u8(shape, gt.to_stack()))?;
    Ok(())
}

pub fn read_gt(path: &Path) -> Result<GroundTruth> {
    let (shape, data) = read_npy(path)?.into_u8()?;
    if shape.len() < 2 {
        return Err(Error::InvalidShape(format!("mask stack needs rank >= 2, got {:?}", shape)));
    }
    GroundTruth::from_stack(&shape[1..], &data)
}

/// Reads an instance stack as a segmentation.
pub fn read_instances(path: &Path) -> Result<InstanceSegmentation> {
    let (shape, data) = read_npy(path)?.into_u8()?;
    if shape.len() < 2 {
        return Err(Error::InvalidShape(format!("mask stack needs rank >= 2, got {:?}", shape)));
    }
    InstanceSegmentation::from_stack(&shape[1..], &data)
}

/// Writes `instances.npy` and `labels.npy` into `dir`.
pub fn write_segmentation(dir: &Path, seg: &InstanceSegmentation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (shape, data) = seg.mask_stack();
    write_npy(dir.join(INSTANCES_FILE), &Tensor::u8(shape, data))?;
    write_npy(
        dir.join(LABELS_FILE),
        &Tensor::u32(seg.grid().shape().to_vec(), seg.label_map().to_vec()),
    )?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PatchGeometry;
    use crate::oracle::{make_shapes, synth, ShapeKind, ShapeParams};

    #[test]
    fn bundle_and_gt_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = ShapeParams { shape: vec![24, 20], instances: [2, 2], radius: [3.0, 5.0], ..Default::default() };
        let gt = make_shapes(ShapeKind::Blobs, &params, 4).unwrap();
        let bundle = synth(&gt, &PatchGeometry::new(&[3, 5]).unwrap()).unwrap();
        write_bundle(dir.path(), &bundle).unwrap();
        write_gt(&dir.path().join(GT_FILE), &gt).unwrap();
        let cfg = PipelineConfig { patch_extents: Some(vec![3, 5]), ..Default::default() };
        assert_eq!(read_bundle(dir.path(), &cfg).unwrap(), bundle);
        assert_eq!(read_gt(&dir.path().join(GT_FILE)).unwrap(), gt);
        assert!(read_bundle(dir.path(), &PipelineConfig::default()).is_err());
    }
}
