//! One-pass instance assembly from dense shape-patch predictions.
//!
//! Every pixel predicts a small binary patch describing the shape of the
//! instance it belongs to. The pipeline accumulates all patches into a
//! consensus affinity field, scores and selects a small set of patches that
//! covers the foreground, links selected patches by their mean consensus
//! affinity into a signed graph, partitions that graph, and turns each
//! component into an (overlap-capable) instance mask.
//!
//! ```
//! use patchseg::prelude::*;
//!
//! let params = ShapeParams { instances: [2, 3], ..Default::default() };
//! let gt = make_shapes(ShapeKind::Blobs, &params, 1).unwrap();
//! let bundle = synth(&gt, &PatchGeometry::new(&[7, 7]).unwrap()).unwrap();
//! let run = Pipeline::new(PipelineConfig::default()).run(&bundle).unwrap();
//! let report = evaluate(run.segmentation.masks(), gt.masks(), &thresholds_fine()).unwrap();
//! assert_eq!(report.avap, 1.0);
//! ```

pub mod assembly;
pub mod bench;
pub mod bundle;
pub mod cli;
pub mod config;
pub mod consensus;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod npy;
pub mod oracle;
pub mod partition;
pub mod patchgraph;
pub mod pipeline;
pub mod selection;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::assembly::{assemble, filter_small, flatten, InstanceSegmentation};
    pub use crate::bundle::{GroundTruth, Mask, PixelClass, PredictionBundle};
    pub use crate::config::{Partitioner, PipelineConfig};
    pub use crate::consensus::{accumulate, ConsensusField};
    pub use crate::error::{Error, Result};
    pub use crate::geometry::{Grid, PatchGeometry};
    pub use crate::metrics::{
        ap_dsb, av_ap, evaluate, iou, thresholds_coarse, thresholds_fine, EvalReport,
    };
    pub use crate::oracle::{corrupt, make_shapes, synth, NoiseSpec, ShapeKind, ShapeParams};
    pub use crate::partition::{cc_positive, mutex_watershed, Partition, SignedGraph};
    pub use crate::patchgraph::{build_graph, paff, PatchGraph};
    pub use crate::pipeline::{Pipeline, PipelineRun};
    pub use crate::selection::{greedy_cover, rank, thin_out, PatchSelection, ScoredPatch};
}
