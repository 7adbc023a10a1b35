//! The `patchseg` command line: `synth`, `assemble`, `eval` and `bench`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bench::{run_case, tsv_header, BenchCase};
use crate::config::{Partitioner, PipelineConfig, THREADS_ENV};
use crate::error::{Error, Result};
use crate::geometry::PatchGeometry;
use crate::io;
use crate::metrics::{evaluate, threshold_preset};
use crate::npy::{write_npy, Tensor};
use crate::oracle::{corrupt, make_shapes, synth, NoiseSpec, ShapeKind};
use crate::pipeline::Pipeline;
use crate::selection::score_image;

#[derive(Debug, Parser)]
#[command(name = "patchseg", version, about = "Instance assembly from dense shape-patch predictions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random ground truth and its (optionally corrupted) predictions.
    Synth(SynthArgs),
    /// Assemble instances from a prediction bundle directory.
    Assemble(AssembleArgs),
    /// Score predicted instance masks against ground truth.
    Eval(EvalArgs),
    /// Time the pipeline over patch extents and image sizes.
    Bench(BenchArgs),
}

/// Flags mirroring the keys of the TOML configuration.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// TOML config file, or a run manifest whose embedded config is reused.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Patch side lengths per axis (odd), e.g. `7,7`.
    #[arg(long, value_delimiter = ',')]
    pub patch_extents: Option<Vec<usize>>,
    /// Patch threshold in [0.5, 1].
    #[arg(long)]
    pub t: Option<f64>,
    /// Image foreground threshold in (0, 1).
    #[arg(long)]
    pub fg_threshold: Option<f64>,
    /// Restrict consensus to the image foreground.
    #[arg(long)]
    pub sparse: Option<bool>,
    /// Graph partitioner: `cc` or `mws`.
    #[arg(long)]
    pub partitioner: Option<Partitioner>,
    /// Partition pixels directly on the predictions (baseline).
    #[arg(long)]
    pub mws_dense: Option<bool>,
    /// Run the thin-out pass after the greedy cover.
    #[arg(long)]
    pub thin_out: Option<bool>,
    /// Require overlap pixels to be covered by two distinct instances.
    #[arg(long)]
    pub cover_overlaps: Option<bool>,
    /// Drop instances with fewer pixels.
    #[arg(long)]
    pub min_instance_size: Option<usize>,
    /// IoU thresholds: `fine`, `coarse`, or a comma-separated list.
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Worker threads (1 = sequential reference mode).
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input path.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Ground-truth mask stack.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

pub fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    if let Some(p) = threshold_preset(text) {
        return Ok(p);
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad threshold `{s}`")))
        })
        .collect()
}

impl ConfigArgs {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.patch_extents {
            cfg.patch_extents = Some(v.clone());
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(t, fg_threshold, sparse, partitioner, mws_dense, thin_out, cover_overlaps, min_instance_size, seed);
        if let Some(v) = &self.thresholds {
            cfg.thresholds = parse_thresholds(v)?;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        for (slot, v) in [(&mut cfg.input, &self.input), (&mut cfg.output, &self.output), (&mut cfg.gt, &self.gt)] {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing --{what} (or `{what}` config key)")))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Shape family: `blobs`, `strips` or `crossing-strips`.
    #[arg(long)]
    pub kind: Option<ShapeKind>,
    /// Image shape, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    pub shape: Option<Vec<usize>>,
    /// Instance count range `min,max`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub instances: Option<Vec<usize>>,
    /// Strip thickness.
    #[arg(long)]
    pub strip_width: Option<f64>,
    /// Probability of flipping each patch entry.
    #[arg(long)]
    pub flip_prob: Option<f64>,
    /// Logit-space noise standard deviation.
    #[arg(long)]
    pub jitter_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Also write the consensus field (`consensus_numerator.npy`, `consensus_count.npy`).
    #[arg(long)]
    pub dump_consensus: bool,
    /// Also write the patch score image (`scores.npy`).
    #[arg(long)]
    pub dump_scores: bool,
    /// Also write the patch graph edge list (`graph.txt`).
    #[arg(long)]
    pub dump_graph: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Predicted instance stack (`instances.npy`, or a directory holding it).
    #[arg(long)]
    pub pred: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Patch side lengths to sweep.
    #[arg(long, value_delimiter = ',', default_value = "7,13")]
    pub extents: Vec<usize>,
    /// Image sizes to sweep, e.g. `64x64,128x128`.
    #[arg(long, value_delimiter = ',', default_value = "64x64,128x128")]
    pub sizes: Vec<String>,
    /// Target foreground fraction of the synthetic images.
    #[arg(long, default_value_t = 0.15)]
    pub fg_fraction: f64,
}

fn parse_size(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| d.parse::<usize>().map_err(|_| Error::Config(format!("bad image size `{s}`"))))
        .collect()
}

fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(k) = args.kind {
        cfg.synth.kind = k;
    }
    if let Some(s) = &args.shape {
        cfg.synth.shape.shape = s.clone();
    }
    if let Some(i) = &args.instances {
        cfg.synth.shape.instances = [i[0], i[1]];
    }
    if let Some(w) = args.strip_width {
        cfg.synth.shape.strip_width = w;
    }
    if let Some(f) = args.flip_prob {
        cfg.synth.flip_prob = f;
    }
    if let Some(j) = args.jitter_sigma {
        cfg.synth.jitter_sigma = j;
    }
    let dims = cfg.synth.shape.shape.len();
    if cfg.patch_extents.is_none() {
        cfg.patch_extents = Some(vec![7; dims]);
    }
    cfg.validate()?;
    let out = required(&cfg.output, "output")?.to_path_buf();
    let geometry = PatchGeometry::new(cfg.patch_extents.as_deref().expect("set above"))?;
    let gt = make_shapes(cfg.synth.kind, &cfg.synth.shape, cfg.seed)?;
    let bundle = synth(&gt, &geometry)?;
    let noise = NoiseSpec {
        flip_prob: cfg.synth.flip_prob,
        jitter_sigma: cfg.synth.jitter_sigma,
        seed: cfg.seed,
    };
    let bundle = corrupt(&bundle, &noise)?;
    io::write_bundle(&out, &bundle)?;
    io::write_gt(&out.join(io::GT_FILE), &gt)?;
    io::write_json(&out.join(io::MANIFEST_FILE), &json!({ "config": cfg, "instances": gt.len() }))?;
    println!("wrote {} instances to {}", gt.len(), out.display());
    Ok(())
}

fn assemble_cmd(args: &AssembleArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    let input = required(&cfg.input, "input")?.to_path_buf();
    let out = required(&cfg.output, "output")?.to_path_buf();
    let bundle = io::read_bundle(&input, &cfg)?;
    cfg.patch_extents = Some(bundle.geometry().extents().to_vec());
    cfg.threads = Some(cfg.effective_threads());
    let run = Pipeline::new(cfg.clone()).run(&bundle)?;
    io::write_segmentation(&out, &run.segmentation)?;

    if args.dump_consensus {
        if let Some(field) = &run.field {
            let mut shape = vec![field.planes()];
            shape.extend(bundle.grid().shape());
            write_npy(out.join("consensus_numerator.npy"), &Tensor::f64(shape.clone(), field.numerator_planes()))?;
            write_npy(out.join("consensus_count.npy"), &Tensor::u32(shape, field.count_planes()))?;
        }
    }
    if args.dump_scores {
        let scores = score_image(&run.ranked, bundle.grid().len());
        write_npy(out.join("scores.npy"), &Tensor::f32(bundle.grid().shape().to_vec(), scores))?;
    }
    if args.dump_graph {
        if let Some(g) = &run.graph {
            io::write_text(&out.join("graph.txt"), &g.graph.to_edge_list())?;
        }
    }

    let report = match &cfg.gt {
        Some(p) => {
            let gt = io::read_gt(p)?;
            Some(evaluate(run.segmentation.masks(), gt.masks(), &cfg.thresholds)?)
        }
        None => None,
    };
    let timings: BTreeMap<&str, f64> = run.timings.iter().map(|t| (t.stage.as_str(), t.seconds)).collect();
    let manifest = json!({
        "config": cfg,
        "image_shape": bundle.grid().shape(),
        "counts": run.counts,
        "timings": timings,
        "total_seconds": run.total_seconds(),
        "report": report,
    });
    io::write_json(&out.join(io::MANIFEST_FILE), &manifest)?;
    println!(
        "{} instances, {} selected patches, {} edges in {:.3} s",
        run.counts.instances,
        run.counts.selected_patches,
        run.counts.graph_edges,
        run.total_seconds()
    );
    if let Some(r) = report {
        print!("{}", r.to_tsv());
    }
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let gt_path = required(&cfg.gt, "gt")?;
    let pred_path = if args.pred.is_dir() {
        args.pred.join(io::INSTANCES_FILE)
    } else {
        args.pred.clone()
    };
    let pred = io::read_instances(&pred_path)?;
    let gt = io::read_gt(gt_path)?;
    if pred.grid() != gt.grid() {
        return Err(Error::ShapeMismatch(format!(
            "prediction shape {:?} differs from ground truth shape {:?}",
            pred.grid().shape(),
            gt.grid().shape()
        )));
    }
    let report = evaluate(pred.masks(), gt.masks(), &cfg.thresholds)?;
    if let Some(out) = &cfg.output {
        std::fs::create_dir_all(out)?;
        io::write_text(&out.join("report.tsv"), &report.to_tsv())?;
        io::write_text(&out.join("instances.tsv"), &report.instances_tsv())?;
        io::write_text(&out.join("report.json"), &(report.to_json() + "\n"))?;
    }
    print!("{}", report.to_tsv());
    Ok(())
}

fn bench_cmd(args: &BenchArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let threads = cfg.effective_threads();
    println!("{}", tsv_header());
    let mut rows = Vec::new();
    for size in &args.sizes {
        let shape = parse_size(size)?;
        for &extent in &args.extents {
            let case = BenchCase {
                shape: shape.clone(),
                extent,
                threads,
                fg_fraction: args.fg_fraction,
                seed: cfg.seed,
            };
            let row = run_case(&case, &cfg)?;
            println!("{}", row.tsv());
            rows.push(row);
        }
    }
    if let Some(out) = &cfg.output {
        std::fs::create_dir_all(out)?;
        io::write_json(&out.join("bench.json"), &rows)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Assemble(a) => assemble_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

/// Process exit code for a command result: 0 on success, 2 for invalid
/// input, 1 for environment failures.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 1,
    }
}
