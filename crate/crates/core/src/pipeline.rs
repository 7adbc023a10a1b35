//! End-to-end assembly: consensus, ranking, selection, patch graph,
//! partition and instance masks, with per-stage timings.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, filter_small, InstanceSegmentation};
use crate::bundle::{Mask, PredictionBundle};
use crate::config::{Partitioner, PipelineConfig};
use crate::consensus::{accumulate_with, AccumulateOptions, ConsensusField};
use crate::error::{Error, Result};
use crate::partition::{cc_positive, mutex_watershed, mws_dense};
use crate::patchgraph::{build_graph_with, paff, PatchGraph};
use crate::selection::{
    greedy_cover_with, rank_with, thin_out_with, BundleForegrounds, OverlapCover, PatchSelection,
    ScoredPatch,
};

/// Wall time of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Sizes of the intermediate results.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub foreground_pixels: usize,
    pub discarded_pixels: usize,
    pub ranked_patches: usize,
    pub preselected_patches: usize,
    pub selected_patches: usize,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub instances: usize,
    pub uncovered_pixels: usize,
    pub overlap_unsatisfied: usize,
}

/// Output of [`Pipeline::run`] with all intermediate artifacts.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub segmentation: InstanceSegmentation,
    pub timings: Vec<StageTiming>,
    pub counts: RunCounts,
    pub threads: usize,
    pub field: Option<ConsensusField>,
    pub ranked: Vec<ScoredPatch>,
    pub selection: Option<PatchSelection>,
    pub graph: Option<PatchGraph>,
}

impl PipelineRun {
    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }

    pub fn stage_seconds(&self, stage: &str) -> Option<f64> {
        self.timings.iter().find(|t| t.stage == stage).map(|t| t.seconds)
    }
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Assembly pipeline bound to a configuration.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Runs on a dedicated pool of the effective thread count. One thread
    /// runs every stage sequentially and is the determinism reference.
    pub fn run(&self, bundle: &PredictionBundle) -> Result<PipelineRun> {
        self.config.validate()?;
        let threads = self.config.effective_threads();
        let rethresholded;
        let bundle = if bundle.t() == self.config.t && bundle.fg_threshold() == self.config.fg_threshold {
            bundle
        } else {
            rethresholded = bundle
                .clone()
                .with_thresholds(self.config.t, self.config.fg_threshold)?;
            &rethresholded
        };
        if threads == 1 {
            return self.run_inner(bundle, false, 1);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))?;
        pool.install(|| self.run_inner(bundle, true, threads))
    }

    fn run_inner(&self, bundle: &PredictionBundle, parallel: bool, threads: usize) -> Result<PipelineRun> {
        let cfg = &self.config;
        let mut timer = Timer { timings: Vec::new() };
        let (fg, discard) = timer.time("masks", || (bundle.image_foreground(), bundle.overlap_mask()));
        let mut counts = RunCounts {
            foreground_pixels: fg.count(),
            discarded_pixels: discard.intersection_count(&fg),
            ..Default::default()
        };

        if cfg.mws_dense {
            let (pixels, partition) = timer.time("partition", || mws_dense(bundle, &fg));
            let seg = timer.time("assemble", || {
                let seg = InstanceSegmentation::from_pixel_partition(bundle.grid().clone(), &pixels, &partition);
                filter_small(&seg, cfg.min_instance_size)
            });
            counts.graph_nodes = pixels.len();
            counts.instances = seg.len();
            return Ok(PipelineRun {
                segmentation: seg,
                timings: timer.timings,
                counts,
                threads,
                field: None,
                ranked: Vec::new(),
                selection: None,
                graph: None,
            });
        }

        let options = AccumulateOptions { sparse: cfg.sparse, parallel };
        let field = timer.time("consensus", || accumulate_with(bundle, &fg, &discard, options))?;
        let ranked = timer.time("rank", || rank_with(&field, bundle, &fg, &discard, parallel));
        counts.ranked_patches = ranked.len();

        let restrict: Option<&Mask> = field.restriction();
        let foregrounds = BundleForegrounds { bundle, restrict };
        let overlap_pixels = discard.intersection(&fg);
        let overlap = (cfg.cover_overlaps && !overlap_pixels.is_empty()).then(|| OverlapCover {
            pixels: overlap_pixels,
            distinct: Box::new(|a, b| paff(&field, bundle, a, b).is_some_and(|v| v < 0.0)),
        });

        let preselection = timer.time("cover", || {
            greedy_cover_with(&ranked, &foregrounds, &fg, &discard, overlap.as_ref())
        });
        counts.preselected_patches = preselection.len();
        let selection = if cfg.thin_out {
            timer.time("thin_out", || {
                thin_out_with(&preselection, &foregrounds, &fg, &discard, overlap.as_ref())
            })
        } else {
            preselection
        };
        counts.selected_patches = selection.len();
        counts.uncovered_pixels = selection.uncovered.len();
        counts.overlap_unsatisfied = selection.overlap_unsatisfied.len();
        drop(overlap);

        let graph = timer.time("graph", || build_graph_with(&field, bundle, &selection.pixels(), parallel));
        counts.graph_nodes = graph.node_count();
        counts.graph_edges = graph.edge_count();

        let partition = timer.time("partition", || match cfg.partitioner {
            Partitioner::Cc => cc_positive(&graph.graph),
            Partitioner::Mws => mutex_watershed(&graph.graph),
        });
        let seg = timer.time("assemble", || -> Result<InstanceSegmentation> {
            let seg = assemble(&selection, &graph.nodes, &partition, bundle, restrict)?;
            Ok(filter_small(&seg, cfg.min_instance_size))
        })?;
        counts.instances = seg.len();

        Ok(PipelineRun {
            segmentation: seg,
            timings: timer.timings,
            counts,
            threads,
            field: Some(field),
            ranked,
            selection: Some(selection),
            graph: Some(graph),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::GroundTruth;
    use crate::geometry::{Grid, PatchGeometry};
    use crate::oracle::synth;

    fn gt_2d() -> GroundTruth {
        let grid = Grid::new(&[16, 16]).unwrap();
        let a = Mask::from_pixels(&grid, (0..256).filter(|p| p / 16 >= 2 && p / 16 < 7 && p % 16 >= 2 && p % 16 < 8));
        let b = Mask::from_pixels(&grid, (0..256).filter(|p| p / 16 >= 7 && p / 16 < 13 && p % 16 >= 5 && p % 16 < 12));
        GroundTruth::new(grid, vec![a, b]).unwrap()
    }

    #[test]
    fn perfect_input_is_reproduced() {
        let gt = gt_2d();
        let bundle = synth(&gt, &PatchGeometry::new(&[5, 5]).unwrap()).unwrap();
        for partitioner in [Partitioner::Cc, Partitioner::Mws] {
            for threads in [1, 2] {
                let cfg = PipelineConfig { partitioner, threads: Some(threads), ..Default::default() };
                let run = Pipeline::new(cfg).run(&bundle).unwrap();
                assert_eq!(run.segmentation.masks(), gt.masks());
                assert_eq!(run.counts.instances, 2);
                assert_eq!(run.counts.uncovered_pixels, 0);
            }
        }
    }

    #[test]
    fn dense_baseline_on_perfect_input() {
        let gt = gt_2d();
        let bundle = synth(&gt, &PatchGeometry::new(&[5, 5]).unwrap()).unwrap();
        let cfg = PipelineConfig { mws_dense: true, threads: Some(1), ..Default::default() };
        let run = Pipeline::new(cfg).run(&bundle).unwrap();
        assert_eq!(run.segmentation.masks(), gt.masks());
        assert!(run.field.is_none());
    }

    #[test]
    fn timings_cover_every_stage() {
        let gt = gt_2d();
        let bundle = synth(&gt, &PatchGeometry::new(&[5, 5]).unwrap()).unwrap();
        let run = Pipeline::new(PipelineConfig { threads: Some(1), ..Default::default() })
            .run(&bundle)
            .unwrap();
        let stages: Vec<&str> = run.timings.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(
            stages,
            ["masks", "consensus", "rank", "cover", "thin_out", "graph", "partition", "assemble"]
        );
        assert!(run.counts.selected_patches <= run.counts.preselected_patches);
    }
}
