//! Pipeline configuration: TOML files, manifest-embedded configs and
//! validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{DEFAULT_FG_THRESHOLD, DEFAULT_PATCH_THRESHOLD};
use crate::error::{Error, Result};
use crate::geometry::PatchGeometry;
use crate::metrics::thresholds_fine;
use crate::oracle::{ShapeKind, ShapeParams};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "PATCHSEG_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Partitioner {
    /// Connected components of the positive subgraph.
    Cc,
    /// Mutex watershed.
    #[default]
    Mws,
}

impl std::str::FromStr for Partitioner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cc" => Ok(Partitioner::Cc),
            "mws" => Ok(Partitioner::Mws),
            other => Err(Error::Config(format!("unknown partitioner `{other}` (cc | mws)"))),
        }
    }
}

/// Settings of the `synth` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub kind: ShapeKind,
    pub shape: ShapeParams,
    pub flip_prob: f64,
    pub jitter_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: ShapeKind::Blobs,
            shape: ShapeParams::default(),
            flip_prob: 0.0,
            jitter_sigma: 0.0,
        }
    }
}

/// Every tunable of the assembly pipeline.
///
/// | key | default |
/// |---|---|
/// | `patch_extents` | inferred: cube whose volume is the channel count |
/// | `t` | 0.9 |
/// | `fg_threshold` | 0.5 |
/// | `sparse` | true |
/// | `partitioner` | `mws` |
/// | `mws_dense` | false |
/// | `thin_out` | true |
/// | `cover_overlaps` | true |
/// | `min_instance_size` | 0 |
/// | `thresholds` | 0.5, 0.55, ..., 0.95 |
/// | `threads` | `$PATCHSEG_THREADS`, else all cores |
/// | `seed` | 0 |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub patch_extents: Option<Vec<usize>>,
    pub t: f64,
    pub fg_threshold: f64,
    /// Restrict consensus and patch domains to the image foreground.
    pub sparse: bool,
    pub partitioner: Partitioner,
    /// Partition pixels directly on the raw predictions instead of
    /// assembling patches.
    pub mws_dense: bool,
    pub thin_out: bool,
    /// Require every predicted overlap pixel to be covered by patches of two
    /// distinct instances.
    pub cover_overlaps: bool,
    pub min_instance_size: usize,
    pub thresholds: Vec<f64>,
    pub threads: Option<usize>,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            patch_extents: None,
            t: DEFAULT_PATCH_THRESHOLD,
            fg_threshold: DEFAULT_FG_THRESHOLD,
            sparse: true,
            partitioner: Partitioner::Mws,
            mws_dense: false,
            thin_out: true,
            cover_overlaps: true,
            min_instance_size: 0,
            thresholds: thresholds_fine(),
            threads: None,
            seed: 0,
            input: None,
            output: None,
            gt: None,
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads a TOML config, or the `config` object of a run manifest when
    /// the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let inner = v
                .get("config")
                .ok_or_else(|| Error::Config("manifest has no `config` key".into()))?;
            let cfg: Self = serde_json::from_value(inner.clone())
                .map_err(|e| Error::Config(e.to_string()))?;
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.t) {
            return Err(Error::InvalidThreshold(format!("t = {} not in [0.5, 1]", self.t)));
        }
        if !(self.fg_threshold > 0.0 && self.fg_threshold < 1.0) {
            return Err(Error::InvalidThreshold(format!(
                "fg_threshold = {} not in (0, 1)",
                self.fg_threshold
            )));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidThreshold(format!(
                "evaluation thresholds {:?} must be a nonempty list in (0, 1)",
                self.thresholds
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if let Some(e) = &self.patch_extents {
            PatchGeometry::new(e)?;
        }
        if !(0.0..=1.0).contains(&self.synth.flip_prob) || self.synth.jitter_sigma.is_nan() || self.synth.jitter_sigma < 0.0 {
            return Err(Error::Config("synth noise parameters out of range".into()));
        }
        Ok(())
    }

    /// Thread count actually used: the config value, then `PATCHSEG_THREADS`,
    /// then the number of available cores.
    pub fn effective_threads(&self) -> usize {
        self.threads
            .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// Patch geometry for a patch tensor with `channels` channels over an
    /// image of rank `dims`.
    pub fn geometry(&self, channels: usize, dims: usize) -> Result<PatchGeometry> {
        let g = match &self.patch_extents {
            Some(e) => PatchGeometry::new(e)?,
            None => {
                let side = (channels as f64).powf(1.0 / dims as f64).round() as usize;
                PatchGeometry::cube(dims, side)?
            }
        };
        if g.len() != channels || g.dims() != dims {
            return Err(Error::ShapeMismatch(format!(
                "patch extents {:?} do not match {} channels over a rank-{} image",
                g.extents(),
                channels,
                dims
            )));
        }
        Ok(g)
    }
}
