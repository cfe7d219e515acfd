//! Dense frame-to-frame motion fields.
//!
//! `FlowVolume::fields()[t]` maps frame `t` onto frame `t + 1`: a pixel at
//! `(x, y)` in frame `t` is found at `(x + dx, y + dy)` in frame `t + 1`.

mod block_match;
pub mod cache;
mod dis;
mod pyramid;

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::video::{Point2D, VideoSequence};

pub use cache::{read_flow_cache, write_flow_cache};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("sequence has {0} frame(s), at least 2 required")]
    TooShort(usize),
    #[error("invalid flow configuration: {0}")]
    BadConfig(String),
    #[error("flow cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Displacement field from frame `t` to frame `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub t: usize,
    pub dx: Grid,
    pub dy: Grid,
}

impl FlowField {
    pub fn zeros(t: usize, width: usize, height: usize) -> Self {
        Self {
            t,
            dx: Grid::new(width, height),
            dy: Grid::new(width, height),
        }
    }

    /// A spatially constant field.
    pub fn constant(t: usize, width: usize, height: usize, dx: f32, dy: f32) -> Self {
        Self {
            t,
            dx: Grid::filled(width, height, dx),
            dy: Grid::filled(width, height, dy),
        }
    }

    pub fn width(&self) -> usize {
        self.dx.width()
    }

    pub fn height(&self) -> usize {
        self.dx.height()
    }
}

/// Bilinear flow lookup at a sub-pixel position, clamping the position to
/// the field bounds.
#[inline]
pub fn sample_flow(field: &FlowField, p: Point2D) -> (f64, f64) {
    (field.dx.sample_bilinear(p.x, p.y), field.dy.sample_bilinear(p.x, p.y))
}

/// Flow for a whole sequence: exactly `T - 1` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowVolume {
    fields: Vec<FlowField>,
    width: usize,
    height: usize,
    /// Frame pairs whose frames were both constant; their flow is zero.
    degenerate: Vec<usize>,
}

impl FlowVolume {
    pub fn new(fields: Vec<FlowField>) -> Result<Self, FlowError> {
        Self::with_degenerate(fields, Vec::new())
    }

    fn with_degenerate(fields: Vec<FlowField>, degenerate: Vec<usize>) -> Result<Self, FlowError> {
        if fields.is_empty() {
            return Err(FlowError::TooShort(fields.len() + 1));
        }
        let (width, height) = (fields[0].width(), fields[0].height());
        for (i, f) in fields.iter().enumerate() {
            if f.t != i {
                return Err(FlowError::BadConfig(format!("field {i} carries index {}", f.t)));
            }
            if f.width() != width || f.height() != height || f.dy.width() != width || f.dy.height() != height {
                return Err(FlowError::BadConfig(format!("field {i} has inconsistent dimensions")));
            }
        }
        Ok(Self {
            fields,
            width,
            height,
            degenerate,
        })
    }

    /// Zero motion everywhere.
    pub fn zeros(frames: usize, width: usize, height: usize) -> Self {
        let fields = (0..frames.saturating_sub(1))
            .map(|t| FlowField::zeros(t, width, height))
            .collect();
        Self::new(fields).expect("zero volume needs at least two frames")
    }

    /// The same constant displacement for every frame pair.
    pub fn constant(frames: usize, width: usize, height: usize, dx: f32, dy: f32) -> Self {
        let fields = (0..frames.saturating_sub(1))
            .map(|t| FlowField::constant(t, width, height, dx, dy))
            .collect();
        Self::new(fields).expect("constant volume needs at least two frames")
    }

    pub fn fields(&self) -> &[FlowField] {
        &self.fields
    }

    pub fn field(&self, t: usize) -> &FlowField {
        &self.fields[t]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of frames `T` in the source sequence.
    pub fn frames(&self) -> usize {
        self.fields.len() + 1
    }

    pub fn degenerate_pairs(&self) -> &[usize] {
        &self.degenerate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowBackend {
    Dis,
    BlockMatch,
}

impl std::str::FromStr for FlowBackend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dis" => Ok(FlowBackend::Dis),
            "block_match" | "block-match" => Ok(FlowBackend::BlockMatch),
            other => Err(format!("unknown flow backend '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub backend: FlowBackend,
    pub patch_size: usize,
    pub patch_stride: usize,
    /// `None` selects the level count from the frame size.
    pub pyramid_levels: Option<usize>,
    pub gradient_descent_iters: usize,
    pub refinement: bool,
    pub refinement_iters: usize,
    /// Smoothness weight of the refinement relative to the data term.
    pub refinement_smoothness: f32,
    /// Search radius in pixels for the block-match backend.
    pub search_radius: usize,
    /// Histogram-equalize each frame before estimation.
    pub equalize: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            backend: FlowBackend::Dis,
            patch_size: 8,
            patch_stride: 4,
            pyramid_levels: None,
            gradient_descent_iters: 12,
            refinement: true,
            refinement_iters: 5,
            refinement_smoothness: 0.5,
            search_radius: 4,
            equalize: false,
        }
    }
}

impl FlowConfig {
    pub fn block_match(search_radius: usize) -> Self {
        Self {
            backend: FlowBackend::BlockMatch,
            refinement: false,
            search_radius,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.patch_size == 0 {
            return Err(FlowError::BadConfig("patch_size must be positive".into()));
        }
        if self.patch_stride == 0 || self.patch_stride > self.patch_size {
            return Err(FlowError::BadConfig(format!(
                "patch_stride {} must be in 1..={}",
                self.patch_stride, self.patch_size
            )));
        }
        if self.pyramid_levels == Some(0) {
            return Err(FlowError::BadConfig("pyramid_levels must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of pyramid levels used for a `width x height` frame.
    pub fn levels_for(&self, width: usize, height: usize) -> usize {
        self.pyramid_levels.unwrap_or_else(|| auto_levels(width, height))
    }
}

/// `floor(log2(min(W, H) / 16))`, clamped to `[1, 6]`.
pub fn auto_levels(width: usize, height: usize) -> usize {
    let m = width.min(height) as f64 / 16.0;
    if m < 2.0 {
        return 1;
    }
    (m.log2().floor() as usize).clamp(1, 6)
}

fn is_constant(g: &Grid) -> bool {
    let (lo, hi) = g.min_max();
    hi - lo < 1e-6
}

/// 256-bin histogram equalization of a `[0, 1]` plane.
pub fn equalize_histogram(g: &Grid) -> Grid {
    let mut hist = [0usize; 256];
    let bin = |v: f32| ((v.clamp(0.0, 1.0) * 255.0).round()) as usize;
    for &v in g.data() {
        hist[bin(v)] += 1;
    }
    let n = g.data().len();
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (i, &h) in hist.iter().enumerate() {
        acc += h;
        cdf[i] = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if n == cdf_min {
        return g.clone();
    }
    let lut: Vec<f32> = cdf
        .iter()
        .map(|&c| (c.saturating_sub(cdf_min)) as f32 / (n - cdf_min) as f32)
        .collect();
    Grid::from_vec(
        g.width(),
        g.height(),
        g.data().iter().map(|&v| lut[bin(v)]).collect(),
    )
}

/// Estimates flow between every pair of consecutive frames.
pub fn compute_flow(video: &VideoSequence, cfg: &FlowConfig) -> Result<FlowVolume, FlowError> {
    compute_flow_with_progress(video, cfg, |_, _| {})
}

/// Like [`compute_flow`], reporting `(pairs_done, pairs_total)` as frame
/// pairs complete. The callback may be invoked from worker threads.
pub fn compute_flow_with_progress<F>(video: &VideoSequence, cfg: &FlowConfig, progress: F) -> Result<FlowVolume, FlowError>
where
    F: Fn(usize, usize) + Sync,
{
    cfg.validate()?;
    let t_count = video.len();
    if t_count < 2 {
        return Err(FlowError::TooShort(t_count));
    }
    let (w, h) = (video.width(), video.height());
    let planes: Vec<Grid> = if cfg.equalize {
        video.frames().par_iter().map(|f| equalize_histogram(&f.pixels)).collect()
    } else {
        video.frames().iter().map(|f| f.pixels.clone()).collect()
    };
    let total = t_count - 1;
    let done = AtomicUsize::new(0);
    let results: Vec<(FlowField, bool)> = (0..total)
        .into_par_iter()
        .map(|t| {
            let (a, b) = (&planes[t], &planes[t + 1]);
            let degenerate = is_constant(a) && is_constant(b);
            let field = if degenerate {
                FlowField::zeros(t, w, h)
            } else {
                let (dx, dy) = match cfg.backend {
                    FlowBackend::Dis => dis::estimate(a, b, cfg),
                    FlowBackend::BlockMatch => block_match::estimate(a, b, cfg),
                };
                FlowField { t, dx, dy }
            };
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            progress(n, total);
            (field, degenerate)
        })
        .collect();
    let degenerate: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, (_, d))| *d)
        .map(|(t, _)| t)
        .collect();
    if !degenerate.is_empty() {
        log::warn!("{} constant frame pair(s); zero flow used", degenerate.len());
    }
    FlowVolume::with_degenerate(results.into_iter().map(|(f, _)| f).collect(), degenerate)
}

/// Shared densification: each patch votes its displacement onto the pixels
/// it covers, weighted by `1 / max(1, |photometric error|)` with the error
/// measured on a 0..255 intensity scale.
pub(crate) fn densify(
    reference: &Grid,
    target: &Grid,
    patches: &[(usize, usize)],
    patch_size: usize,
    displacements: &[(f32, f32)],
) -> (Grid, Grid) {
    let (w, h) = (reference.width(), reference.height());
    let mut sum_x = vec![0.0f32; w * h];
    let mut sum_y = vec![0.0f32; w * h];
    let mut sum_w = vec![0.0f32; w * h];
    for (&(px, py), &(ux, uy)) in patches.iter().zip(displacements) {
        for j in 0..patch_size {
            let y = py + j;
            for i in 0..patch_size {
                let x = px + i;
                let warped = target.sample_bilinear_f32(x as f32 + ux, y as f32 + uy);
                let err = (warped - reference.get(x, y)).abs() * 255.0;
                let lambda = 1.0 / err.max(1.0);
                let k = y * w + x;
                sum_x[k] += lambda * ux;
                sum_y[k] += lambda * uy;
                sum_w[k] += lambda;
            }
        }
    }
    for k in 0..w * h {
        if sum_w[k] > 0.0 {
            sum_x[k] /= sum_w[k];
            sum_y[k] /= sum_w[k];
        }
    }
    (Grid::from_vec(w, h, sum_x), Grid::from_vec(w, h, sum_y))
}

/// Top-left corners of a patch grid covering a `w x h` image.
pub(crate) fn patch_origins(w: usize, h: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    let axis = |len: usize| -> Vec<usize> {
        let last = len - size;
        let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
        if *v.last().unwrap() != last {
            v.push(last);
        }
        v
    };
    let xs = axis(w);
    let ys = axis(h);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            out.push((x, y));
        }
    }
    out
}
