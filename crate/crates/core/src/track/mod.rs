//! Trajectories built from a seed point and sparse corrections.
//!
//! A track is rebuilt from its anchors: between two adjacent anchors the
//! left anchor is propagated forward and the right anchor backward through
//! the flow, and the two traces are blended with a weight that grows
//! linearly from 0 at the left anchor to 1 at the right one. Before the
//! first anchor and after the last one the track is pure one-directional
//! propagation. Every anchor frame holds its anchor position exactly.

pub mod corridor;
pub mod io;

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{sample_flow, FlowVolume};
use crate::video::Point2D;

pub use corridor::{interpolate_corridor_dp, CorridorConfig, CorridorPath};

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("frame {frame} outside [0, {frames})")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("anchors out of order: left frame {left} must precede right frame {right}")]
    BadOrder { left: usize, right: usize },
    #[error("both anchors are on frame {0}")]
    SameFrame(usize),
    #[error("at least one anchor is required")]
    NoAnchors,
    #[error("no anchor on frame {0}")]
    NoSuchAnchor(usize),
    #[error("cannot remove the last remaining anchor")]
    LastAnchor,
    #[error("anchor position is not finite")]
    NonFinite,
    #[error("invalid corridor configuration: {0}")]
    BadCorridor(String),
    #[error("track has {got} frames, expected {want}")]
    LengthMismatch { want: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorOrigin {
    Seed,
    Correction,
}

/// A user-asserted position the track must pass through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub frame: usize,
    pub pos: Point2D,
    pub visible: bool,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub origin: AnchorOrigin,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Anchor {
    pub fn seed(frame: usize, pos: Point2D) -> Self {
        Self {
            frame,
            pos,
            visible: true,
            created_at: now_ms(),
            origin: AnchorOrigin::Seed,
        }
    }

    pub fn correction(frame: usize, pos: Point2D) -> Self {
        Self {
            origin: AnchorOrigin::Correction,
            ..Self::seed(frame, pos)
        }
    }

    pub fn with_visibility(mut self, visible: bool) -> Self {
        self.visible = visible;
        self
    }
}

/// Forward and backward traces of one segment rebuild.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationTrace {
    pub t0: usize,
    pub t1: usize,
    /// `forward[i]` is frame `t0 + i`, propagated from the left anchor.
    pub forward: Vec<Point2D>,
    /// `backward[i]` is frame `t0 + i`, propagated from the right anchor.
    pub backward: Vec<Point2D>,
    /// Blend weight of the backward trace, `(t - t0) / (t1 - t0)`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebuildStats {
    pub elapsed_ms: f64,
    pub frames_touched: usize,
    /// Inclusive frame range that was rewritten.
    pub first_frame: usize,
    pub last_frame: usize,
}

/// How points between anchors are reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FlowBlend,
    Linear,
    CorridorDp,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flow_blend" | "flow-blend" => Ok(Strategy::FlowBlend),
            "linear" => Ok(Strategy::Linear),
            "corridor_dp" | "corridor-dp" => Ok(Strategy::CorridorDp),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::FlowBlend => "flow_blend",
            Strategy::Linear => "linear",
            Strategy::CorridorDp => "corridor_dp",
        })
    }
}

#[inline]
fn step_forward(flow: &FlowVolume, t: usize, p: Point2D) -> Point2D {
    let (dx, dy) = sample_flow(flow.field(t), p);
    Point2D::new(p.x + dx, p.y + dy)
}

#[inline]
fn step_backward(flow: &FlowVolume, t: usize, p: Point2D) -> Point2D {
    let (dx, dy) = sample_flow(flow.field(t - 1), p);
    Point2D::new(p.x - dx, p.y - dy)
}

/// Positions for frames `from..=to`, propagated forward from `start` at `from`.
pub fn forward_trace(flow: &FlowVolume, from: usize, start: Point2D, to: usize) -> Vec<Point2D> {
    let mut out = Vec::with_capacity(to - from + 1);
    let mut p = start;
    out.push(p);
    for t in from..to {
        p = step_forward(flow, t, p);
        out.push(p);
    }
    out
}

/// Positions for frames `to..=from`, propagated backward from `start` at
/// `from`. Index 0 is frame `to`.
pub fn backward_trace(flow: &FlowVolume, from: usize, start: Point2D, to: usize) -> Vec<Point2D> {
    let mut out = vec![Point2D::default(); from - to + 1];
    let mut p = start;
    out[from - to] = p;
    for t in (to + 1..=from).rev() {
        p = step_backward(flow, t, p);
        out[t - 1 - to] = p;
    }
    out
}

fn check_frame(frame: usize, frames: usize) -> Result<(), TrackError> {
    if frame >= frames {
        Err(TrackError::FrameOutOfRange { frame, frames })
    } else {
        Ok(())
    }
}

/// Extends a single seed to every frame by iterative flow lookup.
///
/// Positions are never clamped; only the flow lookup clamps.
pub fn propagate(flow: &FlowVolume, seed: &Anchor) -> Result<Vec<Point2D>, TrackError> {
    let frames = flow.frames();
    check_frame(seed.frame, frames)?;
    let mut out = backward_trace(flow, seed.frame, seed.pos, 0);
    out.extend_from_slice(&forward_trace(flow, seed.frame, seed.pos, frames - 1)[1..]);
    Ok(out)
}

/// Blends forward and backward traces between two anchors.
///
/// Returns the trace and the blended points for frames `left.frame..=right.frame`.
pub fn rebuild_segment(
    flow: &FlowVolume,
    left: &Anchor,
    right: &Anchor,
) -> Result<(PropagationTrace, Vec<Point2D>), TrackError> {
    let frames = flow.frames();
    check_frame(left.frame, frames)?;
    check_frame(right.frame, frames)?;
    if left.frame == right.frame {
        return Err(TrackError::SameFrame(left.frame));
    }
    if left.frame > right.frame {
        return Err(TrackError::BadOrder {
            left: left.frame,
            right: right.frame,
        });
    }
    let (t0, t1) = (left.frame, right.frame);
    let forward = forward_trace(flow, t0, left.pos, t1);
    let backward = backward_trace(flow, t1, right.pos, t0);
    let span = (t1 - t0) as f64;
    let weights: Vec<f64> = (t0..=t1).map(|t| (t - t0) as f64 / span).collect();
    let mut points: Vec<Point2D> = forward
        .iter()
        .zip(&backward)
        .zip(&weights)
        .map(|((f, b), &a)| Point2D::new((1.0 - a) * f.x + a * b.x, (1.0 - a) * f.y + a * b.y))
        .collect();
    points[0] = left.pos;
    *points.last_mut().unwrap() = right.pos;
    Ok((
        PropagationTrace {
            t0,
            t1,
            forward,
            backward,
            weights,
        },
        points,
    ))
}

/// Sorted by frame; later entries win on frame collisions.
pub fn sorted_anchors(anchors: &[Anchor]) -> Vec<Anchor> {
    let mut a = anchors.to_vec();
    a.sort_by_key(|a| a.frame);
    let mut out: Vec<Anchor> = Vec::with_capacity(a.len());
    for x in a {
        match out.last_mut() {
            Some(last) if last.frame == x.frame => *last = x,
            _ => out.push(x),
        }
    }
    out
}

/// Writes frames `first..=last` of `points` for the span between anchor
/// `idx - 1` and anchor `idx` (edges when the index is out of range).
fn fill_span(flow: &FlowVolume, anchors: &[Anchor], idx: usize, points: &mut [Point2D]) -> (usize, usize) {
    let last_frame = points.len() - 1;
    if idx == 0 {
        let a = &anchors[0];
        let trace = backward_trace(flow, a.frame, a.pos, 0);
        points[..=a.frame].copy_from_slice(&trace);
        (0, a.frame)
    } else if idx == anchors.len() {
        let a = &anchors[idx - 1];
        let trace = forward_trace(flow, a.frame, a.pos, last_frame);
        points[a.frame..].copy_from_slice(&trace);
        (a.frame, last_frame)
    } else {
        let (l, r) = (&anchors[idx - 1], &anchors[idx]);
        let (_, seg) = rebuild_segment(flow, l, r).expect("anchors are sorted and distinct");
        points[l.frame..=r.frame].copy_from_slice(&seg);
        (l.frame, r.frame)
    }
}

fn fill_visibility(anchors: &[Anchor], visibility: &mut [bool], first: usize, last: usize) {
    for (t, v) in visibility.iter_mut().enumerate().take(last + 1).skip(first) {
        // The governing anchor is the last one at or before t, or the first one.
        let idx = anchors.partition_point(|a| a.frame <= t);
        let a = if idx == 0 { &anchors[0] } else { &anchors[idx - 1] };
        *v = a.visible;
    }
}

/// Rebuilds every frame from scratch with flow blending.
pub fn rebuild_track(flow: &FlowVolume, anchors: &[Anchor]) -> Result<Vec<Point2D>, TrackError> {
    if anchors.is_empty() {
        return Err(TrackError::NoAnchors);
    }
    let frames = flow.frames();
    for a in anchors {
        check_frame(a.frame, frames)?;
    }
    let anchors = sorted_anchors(anchors);
    let mut points = vec![Point2D::default(); frames];
    for idx in 0..=anchors.len() {
        fill_span(flow, &anchors, idx, &mut points);
    }
    Ok(points)
}

/// Straight lines between adjacent anchors, holding the nearest anchor
/// before the first and after the last.
pub fn interpolate_linear(anchors: &[Anchor], frames: usize) -> Result<Vec<Point2D>, TrackError> {
    if anchors.is_empty() {
        return Err(TrackError::NoAnchors);
    }
    for a in anchors {
        check_frame(a.frame, frames)?;
    }
    let anchors = sorted_anchors(anchors);
    let first = anchors[0];
    let last = *anchors.last().unwrap();
    let mut out = vec![Point2D::default(); frames];
    for (t, p) in out.iter_mut().enumerate() {
        *p = if t <= first.frame {
            first.pos
        } else if t >= last.frame {
            last.pos
        } else {
            let i = anchors.partition_point(|a| a.frame <= t);
            let (l, r) = (&anchors[i - 1], &anchors[i]);
            if t == l.frame {
                l.pos
            } else {
                let a = (t - l.frame) as f64 / (r.frame - l.frame) as f64;
                Point2D::new((1.0 - a) * l.pos.x + a * r.pos.x, (1.0 - a) * l.pos.y + a * r.pos.y)
            }
        };
    }
    Ok(out)
}

/// Rebuilds all frames with the chosen strategy. Corridor-DP fills interior
/// segments; its edge spans use flow propagation like the blend strategy.
pub fn rebuild_with(
    strategy: Strategy,
    flow: &FlowVolume,
    anchors: &[Anchor],
    corridor: &CorridorConfig,
) -> Result<Vec<Point2D>, TrackError> {
    match strategy {
        Strategy::FlowBlend => rebuild_track(flow, anchors),
        Strategy::Linear => interpolate_linear(anchors, flow.frames()),
        Strategy::CorridorDp => {
            if anchors.is_empty() {
                return Err(TrackError::NoAnchors);
            }
            for a in anchors {
                check_frame(a.frame, flow.frames())?;
            }
            let sorted = sorted_anchors(anchors);
            let mut points = vec![Point2D::default(); flow.frames()];
            for idx in 0..=sorted.len() {
                fill_span_with(strategy, flow, &sorted, idx, &mut points, corridor)?;
            }
            Ok(points)
        }
    }
}

/// Rebuilds the single span ending at anchor `idx` (see [`Track`] for the
/// span numbering) with the chosen strategy. `anchors` must be sorted with
/// distinct frames. Returns the first and last frame written.
pub fn fill_span_with(
    strategy: Strategy,
    flow: &FlowVolume,
    anchors: &[Anchor],
    idx: usize,
    points: &mut [Point2D],
    corridor: &CorridorConfig,
) -> Result<(usize, usize), TrackError> {
    let interior = idx > 0 && idx < anchors.len();
    match strategy {
        Strategy::FlowBlend => Ok(fill_span(flow, anchors, idx, points)),
        Strategy::CorridorDp if !interior => Ok(fill_span(flow, anchors, idx, points)),
        Strategy::CorridorDp => {
            let (l, r) = (&anchors[idx - 1], &anchors[idx]);
            let path = interpolate_corridor_dp(flow, l, r, corridor)?;
            points[l.frame..=r.frame].copy_from_slice(&path.points);
            Ok((l.frame, r.frame))
        }
        Strategy::Linear => {
            let last_frame = points.len() - 1;
            if idx == 0 {
                let a = &anchors[0];
                points[..=a.frame].fill(a.pos);
                Ok((0, a.frame))
            } else if idx == anchors.len() {
                let a = &anchors[idx - 1];
                points[a.frame..].fill(a.pos);
                Ok((a.frame, last_frame))
            } else {
                let (l, r) = (&anchors[idx - 1], &anchors[idx]);
                points[l.frame] = l.pos;
                points[r.frame] = r.pos;
                let span = (r.frame - l.frame) as f64;
                for t in l.frame + 1..r.frame {
                    let a = (t - l.frame) as f64 / span;
                    points[t] = Point2D::new((1.0 - a) * l.pos.x + a * r.pos.x, (1.0 - a) * l.pos.y + a * r.pos.y);
                }
                Ok((l.frame, r.frame))
            }
        }
    }
}

/// One annotated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: String,
    pub label: String,
    anchors: Vec<Anchor>,
    points: Vec<Point2D>,
    visibility: Vec<bool>,
}

impl Track {
    /// Creates a track from a seed and propagates it over the whole sequence.
    pub fn from_seed(id: impl Into<String>, seed: Anchor, flow: &FlowVolume) -> Result<Self, TrackError> {
        if !seed.pos.is_finite() {
            return Err(TrackError::NonFinite);
        }
        let seed = Anchor {
            origin: AnchorOrigin::Seed,
            ..seed
        };
        let points = propagate(flow, &seed)?;
        let mut visibility = vec![true; points.len()];
        fill_visibility(&[seed], &mut visibility, 0, points.len() - 1);
        Ok(Self {
            id: id.into(),
            label: String::new(),
            anchors: vec![seed],
            points,
            visibility,
        })
    }

    /// Rebuilds from an arbitrary anchor set with flow blending.
    pub fn from_anchors(id: impl Into<String>, anchors: Vec<Anchor>, flow: &FlowVolume) -> Result<Self, TrackError> {
        if anchors.iter().any(|a| !a.pos.is_finite()) {
            return Err(TrackError::NonFinite);
        }
        let points = rebuild_track(flow, &anchors)?;
        let anchors = sorted_anchors(&anchors);
        let mut visibility = vec![true; points.len()];
        let last = points.len() - 1;
        fill_visibility(&anchors, &mut visibility, 0, last);
        Ok(Self {
            id: id.into(),
            label: String::new(),
            anchors,
            points,
            visibility,
        })
    }

    /// Assembles a track from stored parts without recomputing anything.
    pub fn from_parts(
        id: impl Into<String>,
        label: impl Into<String>,
        anchors: Vec<Anchor>,
        points: Vec<Point2D>,
        visibility: Vec<bool>,
    ) -> Result<Self, TrackError> {
        if anchors.is_empty() {
            return Err(TrackError::NoAnchors);
        }
        if visibility.len() != points.len() {
            return Err(TrackError::LengthMismatch {
                want: points.len(),
                got: visibility.len(),
            });
        }
        for a in &anchors {
            check_frame(a.frame, points.len())?;
        }
        Ok(Self {
            id: id.into(),
            label: label.into(),
            anchors: sorted_anchors(&anchors),
            points,
            visibility,
        })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn points(&self) -> &[Point2D] {
        &self.points
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn anchor_at(&self, frame: usize) -> Option<&Anchor> {
        self.anchors
            .binary_search_by_key(&frame, |a| a.frame)
            .ok()
            .map(|i| &self.anchors[i])
    }

    /// Frame of the seed anchor, or of the first anchor if none is marked.
    pub fn seed_frame(&self) -> usize {
        self.anchors
            .iter()
            .find(|a| a.origin == AnchorOrigin::Seed)
            .unwrap_or(&self.anchors[0])
            .frame
    }

    fn check_flow(&self, flow: &FlowVolume) -> Result<(), TrackError> {
        if flow.frames() != self.points.len() {
            return Err(TrackError::LengthMismatch {
                want: self.points.len(),
                got: flow.frames(),
            });
        }
        Ok(())
    }

    /// Rebuilds the spans on either side of anchor index `idx`.
    fn rebuild_around(&mut self, flow: &FlowVolume, idx: usize) -> (usize, usize) {
        let (a0, a1) = fill_span(flow, &self.anchors, idx, &mut self.points);
        let (b0, b1) = fill_span(flow, &self.anchors, idx + 1, &mut self.points);
        let (first, last) = (a0.min(b0), a1.max(b1));
        fill_visibility(&self.anchors, &mut self.visibility, first, last);
        (first, last)
    }

    /// Inserts (or replaces) an anchor and rebuilds the two adjacent spans.
    pub fn insert_anchor(&mut self, anchor: Anchor, flow: &FlowVolume) -> Result<RebuildStats, TrackError> {
        self.check_flow(flow)?;
        check_frame(anchor.frame, self.points.len())?;
        if !anchor.pos.is_finite() {
            return Err(TrackError::NonFinite);
        }
        let start = Instant::now();
        let idx = match self.anchors.binary_search_by_key(&anchor.frame, |a| a.frame) {
            Ok(i) => {
                // Re-clicking a seed keeps it the seed.
                let origin = if self.anchors[i].origin == AnchorOrigin::Seed {
                    AnchorOrigin::Seed
                } else {
                    anchor.origin
                };
                self.anchors[i] = Anchor { origin, ..anchor };
                i
            }
            Err(i) => {
                self.anchors.insert(i, anchor);
                i
            }
        };
        let (first, last) = self.rebuild_around(flow, idx);
        Ok(RebuildStats {
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            frames_touched: last - first + 1,
            first_frame: first,
            last_frame: last,
        })
    }

    /// Removes the anchor on `frame` and rebuilds the merged span.
    pub fn remove_anchor(&mut self, frame: usize, flow: &FlowVolume) -> Result<RebuildStats, TrackError> {
        self.check_flow(flow)?;
        let idx = self
            .anchors
            .binary_search_by_key(&frame, |a| a.frame)
            .map_err(|_| TrackError::NoSuchAnchor(frame))?;
        if self.anchors.len() == 1 {
            return Err(TrackError::LastAnchor);
        }
        let start = Instant::now();
        self.anchors.remove(idx);
        let (first, last) = fill_span(flow, &self.anchors, idx, &mut self.points);
        fill_visibility(&self.anchors, &mut self.visibility, first, last);
        Ok(RebuildStats {
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            frames_touched: last - first + 1,
            first_frame: first,
            last_frame: last,
        })
    }

    /// Changes the visibility flag of an existing anchor.
    pub fn set_visibility(&mut self, frame: usize, visible: bool) -> Result<(), TrackError> {
        let idx = self
            .anchors
            .binary_search_by_key(&frame, |a| a.frame)
            .map_err(|_| TrackError::NoSuchAnchor(frame))?;
        self.anchors[idx].visible = visible;
        let last = self.points.len() - 1;
        fill_visibility(&self.anchors, &mut self.visibility, 0, last);
        Ok(())
    }

    /// Number of anchors placed by hand (seed plus corrections).
    pub fn click_count(&self) -> usize {
        self.anchors.len()
    }
}
