//! Run-time sweeps over patch extents and image sizes.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::geometry::PatchGeometry;
use crate::metrics::{evaluate, thresholds_fine};
use crate::oracle::{make_shapes, synth, ShapeKind, ShapeParams};
use crate::pipeline::{Pipeline, StageTiming};

/// One benchmark configuration: a synthetic blob image of `shape` with
/// roughly `fg_fraction` foreground, assembled with cubic patches of side
/// `extent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub shape: Vec<usize>,
    pub extent: usize,
    pub threads: usize,
    pub fg_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub case: BenchCase,
    pub foreground_fraction: f64,
    pub instances_gt: usize,
    pub instances_pred: usize,
    pub selected_patches: usize,
    pub graph_edges: usize,
    pub avap: f64,
    pub timings: Vec<StageTiming>,
    pub total_seconds: f64,
}

/// Blob parameters sized to the patch so instances are a few patches wide,
/// with enough of them to reach the requested foreground fraction.
pub fn blob_params(case: &BenchCase) -> ShapeParams {
    let dims = case.shape.len();
    let e = case.extent as f64;
    let radius = [0.5 * e + 2.0, 1.0 * e + 2.0];
    let mean_r = 0.5 * (radius[0] + radius[1]);
    let volume = match dims {
        1 => 2.0 * mean_r,
        2 => std::f64::consts::PI * mean_r * mean_r,
        _ => 4.0 / 3.0 * std::f64::consts::PI * mean_r.powi(3),
    };
    let total: usize = case.shape.iter().product();
    let count = ((case.fg_fraction * total as f64 / volume).round() as usize).max(1);
    ShapeParams {
        shape: case.shape.clone(),
        instances: [count, count],
        radius,
        min_gap: 2,
        max_attempts: 2000,
        ..Default::default()
    }
}

pub fn run_case(case: &BenchCase, base: &PipelineConfig) -> Result<BenchRow> {
    let gt = make_shapes(ShapeKind::Blobs, &blob_params(case), case.seed)?;
    let geometry = PatchGeometry::cube(case.shape.len(), case.extent)?;
    let bundle = synth(&gt, &geometry)?;
    let cfg = PipelineConfig {
        threads: Some(case.threads),
        ..base.clone()
    };
    let run = Pipeline::new(cfg).run(&bundle)?;
    let report = evaluate(run.segmentation.masks(), gt.masks(), &thresholds_fine())?;
    Ok(BenchRow {
        case: case.clone(),
        foreground_fraction: gt.union().count() as f64 / gt.grid().len() as f64,
        instances_gt: gt.len(),
        instances_pred: run.segmentation.len(),
        selected_patches: run.counts.selected_patches,
        graph_edges: run.counts.graph_edges,
        avap: report.avap,
        total_seconds: run.total_seconds(),
        timings: run.timings,
    })
}

pub const STAGES: [&str; 8] = [
    "masks", "consensus", "rank", "cover", "thin_out", "graph", "partition", "assemble",
];

pub fn tsv_header() -> String {
    let mut cols = vec!["shape", "extent", "threads", "fg_fraction", "instances", "selected", "avap"];
    cols.extend(STAGES);
    cols.push("total");
    cols.join("\t")
}

impl BenchRow {
    pub fn tsv(&self) -> String {
        let shape = self
            .case
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let mut cols = vec![
            shape,
            self.case.extent.to_string(),
            self.case.threads.to_string(),
            format!("{:.3}", self.foreground_fraction),
            format!("{}/{}", self.instances_pred, self.instances_gt),
            self.selected_patches.to_string(),
            format!("{:.4}", self.avap),
        ];
        for stage in STAGES {
            let s = self.timings.iter().find(|t| t.stage == stage).map_or(0.0, |t| t.seconds);
            cols.push(format!("{s:.4}"));
        }
        cols.push(format!("{:.4}", self.total_seconds));
        cols.join("\t")
    }
}
