//! Batch analyses over reference trajectories: correction-scaling curves,
//! corrections needed to reach a target accuracy, point replacement, track
//! matching and intervention counting.

pub mod intervention;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::flow::FlowVolume;
use crate::metrics::{app, APPConfig, APPReport, MetricsError};
use crate::track::corridor::CorridorConfig;
use crate::track::{fill_span_with, rebuild_track, rebuild_with, Anchor, Strategy, Track, TrackError};
use crate::video::Point2D;

pub use intervention::{intervention_cost, Detection, FragmentSet, InterventionCount};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unusable reference track: {0}")]
    NoReference(String),
    #[error("no correction frames given")]
    EmptyFrames,
    #[error("target {0} must lie in (0, 1]")]
    BadTarget(f64),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("tolerance {0} must be positive")]
    BadTolerance(f64),
    #[error("fragment data: {0}")]
    Fragments(String),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub trials: usize,
    pub strategy: Strategy,
    pub rng_seed: u64,
    pub app: APPConfig,
    pub corridor: CorridorConfig,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            strategy: Strategy::FlowBlend,
            rng_seed: 0,
            app: APPConfig::default(),
            corridor: CorridorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub k: usize,
    pub app_mean: f64,
    pub app_min: f64,
    pub app_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingCurve {
    pub track_id: String,
    pub strategy: Strategy,
    pub trials: usize,
    pub rng_seed: u64,
    pub rows: Vec<ScalingRow>,
}

impl ScalingCurve {
    pub fn row(&self, k: usize) -> Option<&ScalingRow> {
        self.rows.get(k)
    }

    /// Smallest `k` whose best-of-trials APP reaches `target`.
    pub fn first_reaching(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.app_max >= target).map(|r| r.k)
    }
}

pub const SCALING_CSV_HEADER: &str = "track_id,strategy,k,app_mean,app_min,app_max,trials,rng_seed\n";

/// Appends the curve's rows to `out` (no header).
pub fn write_scaling_rows(curve: &ScalingCurve, out: &mut String) {
    for r in &curve.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            curve.track_id, curve.strategy, r.k, r.app_mean, r.app_min, r.app_max, curve.trials, curve.rng_seed
        );
    }
}

pub fn scaling_csv(curves: &[ScalingCurve]) -> String {
    let mut out = String::from(SCALING_CSV_HEADER);
    for c in curves {
        write_scaling_rows(c, &mut out);
    }
    out
}

/// Non-seed visible frames of `reference`, shuffled for one trial.
pub fn trial_order(frames: &[usize], rng_seed: u64, trial: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(trial as u64);
    let mut order = frames.to_vec();
    order.shuffle(&mut rng);
    order
}

fn check_reference(flow: &FlowVolume, reference: &Track) -> Result<Vec<usize>, ExperimentError> {
    if reference.len() != flow.frames() {
        return Err(ExperimentError::NoReference(format!(
            "track {} has {} frames, flow covers {}",
            reference.id,
            reference.len(),
            flow.frames()
        )));
    }
    if reference.anchors().is_empty() {
        return Err(ExperimentError::NoReference(format!("track {} has no seed", reference.id)));
    }
    if !reference.visibility().iter().any(|&v| v) {
        return Err(ExperimentError::NoReference(format!("track {} is never visible", reference.id)));
    }
    let seed = reference.seed_frame();
    Ok((0..reference.len())
        .filter(|&t| t != seed && reference.visibility()[t])
        .collect())
}

/// APP after each anchor addition, `k = 0..=order.len()`.
fn run_trial(
    flow: &FlowVolume,
    reference: &Track,
    order: &[usize],
    cfg: &ScalingConfig,
) -> Result<Vec<f64>, ExperimentError> {
    let truth = reference.points();
    let vis = reference.visibility();
    let seed = reference.seed_frame();
    let mut anchors = vec![Anchor::seed(seed, truth[seed])];
    let mut points = rebuild_with(cfg.strategy, flow, &anchors, &cfg.corridor)?;
    let mut out = Vec::with_capacity(order.len() + 1);
    out.push(app(&points, truth, vis, &cfg.app)?.app);
    for &t in order {
        let idx = anchors.partition_point(|a| a.frame < t);
        anchors.insert(idx, Anchor::correction(t, truth[t]));
        fill_span_with(cfg.strategy, flow, &anchors, idx, &mut points, &cfg.corridor)?;
        fill_span_with(cfg.strategy, flow, &anchors, idx + 1, &mut points, &cfg.corridor)?;
        out.push(app(&points, truth, vis, &cfg.app)?.app);
    }
    Ok(out)
}

/// APP as a function of the number of corrections, over random insertion
/// orders. Each trial grows one order incrementally, so every `k` sees
/// prefixes of the same orders.
pub fn scaling_curve(flow: &FlowVolume, reference: &Track, cfg: &ScalingConfig) -> Result<ScalingCurve, ExperimentError> {
    if cfg.trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    cfg.app.validate()?;
    let frames = check_reference(flow, reference)?;
    let per_trial: Vec<Vec<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(flow, reference, &trial_order(&frames, cfg.rng_seed, i), cfg))
        .collect::<Result<_, _>>()?;
    let rows = (0..=frames.len())
        .map(|k| {
            let mut sum = 0.0;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for trial in &per_trial {
                let v = trial[k];
                sum += v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            ScalingRow {
                k,
                // Rounding in the sum must not push the mean outside its bounds.
                app_mean: (sum / cfg.trials as f64).clamp(lo, hi),
                app_min: lo,
                app_max: hi,
            }
        })
        .collect();
    Ok(ScalingCurve {
        track_id: reference.id.clone(),
        strategy: cfg.strategy,
        trials: cfg.trials,
        rng_seed: cfg.rng_seed,
        rows,
    })
}

/// Smallest number of corrections whose best-of-trials APP reaches `target`.
pub fn corrections_to_target(
    flow: &FlowVolume,
    reference: &Track,
    target: f64,
    cfg: &ScalingConfig,
) -> Result<usize, ExperimentError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(ExperimentError::BadTarget(target));
    }
    let curve = scaling_curve(flow, reference, cfg)?;
    let k = curve.first_reaching(target);
    assert!(k.is_some(), "full anchoring must reach any target");
    Ok(k.unwrap())
}

/// Anchors at `correction_frames` carrying the reference coordinates,
/// rebuilt with flow blending and scored against the reference.
pub fn point_replacement(
    flow: &FlowVolume,
    correction_frames: &[usize],
    reference: &Track,
    cfg: &APPConfig,
) -> Result<APPReport, ExperimentError> {
    if correction_frames.is_empty() {
        return Err(ExperimentError::EmptyFrames);
    }
    let truth = reference.points();
    let mut anchors = Vec::with_capacity(correction_frames.len());
    for (i, &t) in correction_frames.iter().enumerate() {
        if t >= truth.len() {
            return Err(TrackError::FrameOutOfRange {
                frame: t,
                frames: truth.len(),
            }
            .into());
        }
        anchors.push(if i == 0 { Anchor::seed(t, truth[t]) } else { Anchor::correction(t, truth[t]) });
    }
    score_anchors(flow, &anchors, reference, cfg)
}

pub fn score_anchors(flow: &FlowVolume, anchors: &[Anchor], reference: &Track, cfg: &APPConfig) -> Result<APPReport, ExperimentError> {
    let points = rebuild_track(flow, anchors)?;
    Ok(app(&points, reference.points(), reference.visibility(), cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplacementResult {
    pub track_id: String,
    pub frames: Vec<usize>,
    pub before: APPReport,
    pub after: APPReport,
}

/// Scores `annotated` as placed, then with its anchor coordinates replaced
/// by the reference's at the same frames.
pub fn replacement_study(
    flow: &FlowVolume,
    annotated: &Track,
    reference: &Track,
    cfg: &APPConfig,
) -> Result<ReplacementResult, ExperimentError> {
    let frames: Vec<usize> = annotated.anchors().iter().map(|a| a.frame).collect();
    Ok(ReplacementResult {
        track_id: annotated.id.clone(),
        before: score_anchors(flow, annotated.anchors(), reference, cfg)?,
        after: point_replacement(flow, &frames, reference, cfg)?,
        frames,
    })
}

/// Position at the first visible frame.
pub fn first_visible(track: &Track) -> Option<Point2D> {
    track.visibility().iter().position(|&v| v).map(|t| track.points()[t])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pairing {
    /// `(gt index, candidate index, start distance)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched: Vec<usize>,
}

/// Pairs each ground-truth track, in order, with the nearest unused
/// candidate by first-visible position. Ties go to the lower index.
pub fn match_tracks(gt: &[Track], candidates: &[Track]) -> Pairing {
    let starts: Vec<Option<Point2D>> = candidates.iter().map(first_visible).collect();
    let mut used = vec![false; candidates.len()];
    let mut pairing = Pairing {
        pairs: Vec::new(),
        unmatched: Vec::new(),
    };
    for (i, g) in gt.iter().enumerate() {
        let best = first_visible(g).and_then(|p| {
            starts
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .filter_map(|(j, s)| s.map(|s| (j, p.distance(s))))
                .fold(None, |best: Option<(usize, f64)>, c| match best {
                    Some(b) if b.1 <= c.1 => Some(b),
                    _ => Some(c),
                })
        });
        match best {
            Some((j, d)) => {
                used[j] = true;
                pairing.pairs.push((i, j, d));
            }
            None => pairing.unmatched.push(i),
        }
    }
    pairing
}
