//! Ground-truth driven prediction synthesis, controlled corruption and
//! random test shapes.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64`: a counter-based
//! generator whose output stream is fixed by the seed on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{GroundTruth, Mask, PredictionBundle, INSTANCE_COUNT_CLASSES};
use crate::error::{Error, Result};
use crate::geometry::{Grid, PatchGeometry, MAX_DIMS};

/// Probability written into the patch of a pixel covered by two or more
/// instances, whose shape patch is ill-defined.
pub const OVERLAP_PATCH_VALUE: f32 = 0.5;

/// Clamp range applied after logit jitter.
pub const PROB_EPS: f32 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ideal predictions for `gt`: `p(x, dx) = 1` iff `x` and `x + dx` are
/// foreground of the same instance, 0 otherwise; pixels covered by two or
/// more instances predict 0.5 everywhere.
pub fn synth(gt: &GroundTruth, geometry: &PatchGeometry) -> Result<PredictionBundle> {
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let grid = gt.grid().clone();
    if !geometry.fits(&grid) {
        return Err(Error::InvalidGeometry(format!(
            "patch extents {:?} do not fit image {:?}",
            geometry.extents(),
            grid.shape()
        )));
    }
    let n = grid.len();
    let k = geometry.len();
    let counts = gt.instance_counts();
    let mut owner = vec![usize::MAX; n];
    for (i, m) in gt.masks().iter().enumerate() {
        for p in m.pixels() {
            if counts[p] == 1 {
                owner[p] = i;
            }
        }
    }
    let mut patch = vec![0.0f32; n * k];
    for x in 0..n {
        let row = &mut patch[x * k..(x + 1) * k];
        match counts[x] {
            0 => {}
            1 => {
                let mask = &gt.masks()[owner[x]];
                let origin = grid.coord(x);
                for (c, o) in geometry.offsets().iter().enumerate() {
                    if let Some(z) = grid.index([origin[0] + o[0], origin[1] + o[1], origin[2] + o[2]]) {
                        if mask.get(z) {
                            row[c] = 1.0;
                        }
                    }
                }
            }
            _ => row.fill(OVERLAP_PATCH_VALUE),
        }
    }
    let fg: Vec<f32> = counts.iter().map(|&c| (c > 0) as u8 as f32).collect();
    let mut ninst = vec![0.0f32; n * INSTANCE_COUNT_CLASSES];
    for (x, &c) in counts.iter().enumerate() {
        ninst[x * INSTANCE_COUNT_CLASSES + (c as usize).min(INSTANCE_COUNT_CLASSES - 1)] = 1.0;
    }
    PredictionBundle::from_pixel_major(geometry.clone(), grid, patch, fg, Some(ninst))
}

/// Corruption applied to patch probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Probability of replacing an entry `v` by `1 - v`.
    pub flip_prob: f64,
    /// Standard deviation of additive Gaussian noise in logit space.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} not in [0, 1]", self.flip_prob)));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::Config(format!("jitter_sigma {} must be >= 0", self.jitter_sigma)));
        }
        Ok(())
    }
}

/// Applies per-entry flips, then logit jitter, to the patch probabilities
/// only. Entries are visited in channel-major order. Jittered values are
/// clamped to `[1e-6, 1 - 1e-6]`; without jitter, values are left
/// unclamped so zero noise is an exact identity.
pub fn corrupt(bundle: &PredictionBundle, noise: &NoiseSpec) -> Result<PredictionBundle> {
    noise.validate()?;
    let mut out = bundle.clone();
    if noise.flip_prob == 0.0 && noise.jitter_sigma == 0.0 {
        return Ok(out);
    }
    let n = bundle.grid().len();
    let k = bundle.geometry().len();
    let mut rng = rng(noise.seed);
    let probs = out.patch_probs_mut();
    for c in 0..k {
        for x in 0..n {
            let v = &mut probs[x * k + c];
            if noise.flip_prob > 0.0 && rng.gen::<f64>() < noise.flip_prob {
                *v = 1.0 - *v;
            }
            if noise.jitter_sigma > 0.0 {
                let clamped = v.clamp(PROB_EPS, 1.0 - PROB_EPS) as f64;
                let z: f64 = rng.sample(StandardNormal);
                let logit = (clamped / (1.0 - clamped)).ln() + noise.jitter_sigma * z;
                let p = 1.0 / (1.0 + (-logit).exp());
                *v = (p as f32).clamp(PROB_EPS, 1.0 - PROB_EPS);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    /// Non-overlapping ellipses (2D) or ellipsoids (3D).
    Blobs,
    /// Non-overlapping thick polylines.
    Strips,
    /// Two thick straight strips crossing once.
    CrossingStrips,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(ShapeKind::Blobs),
            "strips" => Ok(ShapeKind::Strips),
            "crossing-strips" => Ok(ShapeKind::CrossingStrips),
            other => Err(Error::Config(format!("unknown shape kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeParams {
    /// Spatial shape of the image.
    pub shape: Vec<usize>,
    /// Inclusive range of the instance count (blobs, strips).
    pub instances: [usize; 2],
    /// Inclusive range of blob semi-axes, in pixels.
    pub radius: [f64; 2],
    /// Strip thickness, in pixels.
    pub strip_width: f64,
    /// Inclusive range of strip length, in pixels.
    pub strip_length: [f64; 2],
    /// Number of straight segments per strip polyline.
    pub strip_segments: usize,
    /// Inclusive range of the crossing angle, in degrees.
    pub crossing_angle: [f64; 2],
    /// Minimum Chebyshev distance between distinct instances (0 = may touch).
    pub min_gap: usize,
    /// Placement attempts per instance before giving up.
    pub max_attempts: usize,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            shape: vec![64, 64],
            instances: [3, 8],
            radius: [4.0, 10.0],
            strip_width: 5.0,
            strip_length: [30.0, 60.0],
            strip_segments: 3,
            crossing_angle: [70.0, 90.0],
            min_gap: 1,
            max_attempts: 500,
        }
    }
}

/// Random ground truth of the requested kind; identical for identical seeds.
pub fn make_shapes(kind: ShapeKind, params: &ShapeParams, seed: u64) -> Result<GroundTruth> {
    let grid = Grid::new(&params.shape)?;
    if params.instances[0] > params.instances[1] || params.radius[0] > params.radius[1] {
        return Err(Error::Config("shape parameter ranges must be ordered".into()));
    }
    let mut rng = rng(seed);
    let masks = match kind {
        ShapeKind::Blobs => place_all(&grid, params, &mut rng, |g, r| random_blob(g, params, r))?,
        ShapeKind::Strips => place_all(&grid, params, &mut rng, |g, r| random_strip(g, params, r))?,
        ShapeKind::CrossingStrips => crossing_strips(&grid, params, &mut rng)?,
    };
    GroundTruth::new(grid, masks)
}

fn place_all(
    grid: &Grid,
    params: &ShapeParams,
    rng: &mut ChaCha8Rng,
    mut candidate: impl FnMut(&Grid, &mut ChaCha8Rng) -> Option<Mask>,
) -> Result<Vec<Mask>> {
    let count = rng.gen_range(params.instances[0]..=params.instances[1]);
    let mut blocked = Mask::empty(grid);
    let mut masks = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = None;
        for _ in 0..params.max_attempts.max(1) {
            let Some(m) = candidate(grid, rng) else { continue };
            if m.intersection_count(&blocked) == 0 {
                placed = Some(m);
                break;
            }
        }
        let m = placed.ok_or(Error::PlacementFailure(params.max_attempts))?;
        for p in dilate(&m, params.min_gap).pixels() {
            blocked.set(p, true);
        }
        masks.push(m);
    }
    Ok(masks)
}

/// Chebyshev dilation by `r` pixels.
fn dilate(m: &Mask, r: usize) -> Mask {
    if r == 0 {
        return m.clone();
    }
    let grid = m.grid();
    let r = r as isize;
    let shape = grid.padded_shape();
    let reach: [isize; MAX_DIMS] = std::array::from_fn(|a| if shape[a] > 1 { r } else { 0 });
    let mut out = Mask::empty(grid);
    for p in m.pixels() {
        let c = grid.coord(p);
        for a in -reach[0]..=reach[0] {
            for b in -reach[1]..=reach[1] {
                for d in -reach[2]..=reach[2] {
                    if let Some(q) = grid.index([c[0] + a, c[1] + b, c[2] + d]) {
                        out.set(q, true);
                    }
                }
            }
        }
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

/// Active axes (extent > 1) of a padded grid.
fn active_axes(grid: &Grid) -> Vec<usize> {
    (0..MAX_DIMS).filter(|&a| grid.padded_shape()[a] > 1).collect()
}

fn random_blob(grid: &Grid, params: &ShapeParams, rng: &mut ChaCha8Rng) -> Option<Mask> {
    let shape = grid.padded_shape();
    let axes = active_axes(grid);
    let radii: Vec<f64> = axes.iter().map(|_| uniform(rng, params.radius)).collect();
    let rmax = radii.iter().cloned().fold(0.0, f64::max);
    let mut center = [0.0f64; MAX_DIMS];
    for &a in &axes {
        let lo = rmax;
        let hi = shape[a] as f64 - 1.0 - rmax;
        if hi < lo {
            return None;
        }
        center[a] = rng.gen_range(lo..=hi);
    }
    // random in-plane rotation for 2D; axis-aligned otherwise
    let angle = if axes.len() == 2 { rng.gen_range(0.0..std::f64::consts::PI) } else { 0.0 };
    let (s, c) = angle.sin_cos();
    let mut m = Mask::empty(grid);
    for p in 0..grid.len() {
        let pc = grid.coord(p);
        let d: Vec<f64> = axes.iter().map(|&a| pc[a] as f64 - center[a]).collect();
        let inside = if axes.len() == 2 {
            let u = c * d[0] + s * d[1];
            let v = -s * d[0] + c * d[1];
            (u / radii[0]).powi(2) + (v / radii[1]).powi(2) <= 1.0
        } else {
            d.iter().zip(&radii).map(|(x, r)| (x / r).powi(2)).sum::<f64>() <= 1.0
        };
        if inside {
            m.set(p, true);
        }
    }
    (!m.is_empty()).then_some(m)
}

type Point = [f64; MAX_DIMS];

fn distance_to_segment(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab: Point = std::array::from_fn(|i| b[i] - a[i]);
    let ap: Point = std::array::from_fn(|i| p[i] - a[i]);
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 > 0.0 {
        (ab.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (0..MAX_DIMS)
        .map(|i| (ap[i] - t * ab[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn rasterize_polyline(grid: &Grid, points: &[Point], width: f64) -> Mask {
    let half = width / 2.0;
    let mut m = Mask::empty(grid);
    for p in 0..grid.len() {
        let c = grid.coord(p);
        let pc: Point = c.map(|v| v as f64);
        if points
            .windows(2)
            .any(|w| distance_to_segment(&pc, &w[0], &w[1]) <= half)
        {
            m.set(p, true);
        }
    }
    m
}

fn random_direction(rng: &mut ChaCha8Rng, axes: &[usize]) -> Point {
    loop {
        let mut d = [0.0; MAX_DIMS];
        for &a in axes {
            d[a] = rng.gen_range(-1.0..=1.0);
        }
        let n: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return d.map(|v| v / n);
        }
    }
}

fn inside(grid: &Grid, p: &Point, margin: f64) -> bool {
    let shape = grid.padded_shape();
    (0..MAX_DIMS).all(|a| shape[a] == 1 || (p[a] >= margin && p[a] <= shape[a] as f64 - 1.0 - margin))
}

fn random_strip(grid: &Grid, params: &ShapeParams, rng: &mut ChaCha8Rng) -> Option<Mask> {
    let axes = active_axes(grid);
    let shape = grid.padded_shape();
    let margin = params.strip_width / 2.0;
    let mut start = [0.0; MAX_DIMS];
    for &a in &axes {
        start[a] = rng.gen_range(margin..=(shape[a] as f64 - 1.0 - margin).max(margin));
    }
    let segments = params.strip_segments.max(1);
    let length = uniform(rng, params.strip_length);
    let step = length / segments as f64;
    let mut dir = random_direction(rng, &axes);
    let mut points = vec![start];
    for _ in 0..segments {
        let last = *points.last().expect("non-empty");
        let next: Point = std::array::from_fn(|i| last[i] + dir[i] * step);
        if !inside(grid, &next, margin) {
            return None;
        }
        points.push(next);
        // bend by at most ~45 degrees
        let turn = random_direction(rng, &axes);
        let mixed: Point = std::array::from_fn(|i| dir[i] + 0.7 * turn[i]);
        let n = mixed.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            dir = mixed.map(|v| v / n);
        }
    }
    let m = rasterize_polyline(grid, &points, params.strip_width);
    (!m.is_empty()).then_some(m)
}

fn crossing_strips(grid: &Grid, params: &ShapeParams, rng: &mut ChaCha8Rng) -> Result<Vec<Mask>> {
    let axes = active_axes(grid);
    if axes.len() != 2 {
        return Err(Error::Config("crossing strips need a 2D image".into()));
    }
    let shape = grid.padded_shape();
    let (a0, a1) = (axes[0], axes[1]);
    let margin = params.strip_width / 2.0 + 1.0;
    for _ in 0..params.max_attempts.max(1) {
        let mut center = [0.0; MAX_DIMS];
        center[a0] = shape[a0] as f64 / 2.0 + rng.gen_range(-0.15..=0.15) * shape[a0] as f64;
        center[a1] = shape[a1] as f64 / 2.0 + rng.gen_range(-0.15..=0.15) * shape[a1] as f64;
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let crossing = uniform(rng, params.crossing_angle).to_radians();
        let mut masks = Vec::with_capacity(2);
        let mut ok = true;
        for angle in [theta, theta + crossing] {
            let half_len = uniform(rng, params.strip_length) / 2.0;
            let offset = rng.gen_range(-0.25..=0.25) * half_len;
            let (s, c) = angle.sin_cos();
            let mut a = center;
            let mut b = center;
            a[a0] += c * (-half_len + offset);
            a[a1] += s * (-half_len + offset);
            b[a0] += c * (half_len + offset);
            b[a1] += s * (half_len + offset);
            if !inside(grid, &a, margin) || !inside(grid, &b, margin) {
                ok = false;
                break;
            }
            masks.push(rasterize_polyline(grid, &[a, b], params.strip_width));
        }
        if ok && masks[0].intersection_count(&masks[1]) > 0 {
            return Ok(masks);
        }
    }
    Err(Error::PlacementFailure(params.max_attempts))
}
