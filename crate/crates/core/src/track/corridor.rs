//! Dynamic-programming interpolation inside a corridor around the straight
//! line between two anchors.
//!
//! Each intermediate frame contributes a square lattice of candidate
//! positions centered on the linearly interpolated anchor position. The
//! path minimizes the summed disagreement with the flow,
//! `|(v - u) - F_t(u)|` per step. Among equal-cost paths the
//! lexicographically smallest one wins, comparing positions frame by frame
//! by `x` then `y`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{check_frame, Anchor, TrackError};
use crate::flow::{sample_flow, FlowVolume};
use crate::video::Point2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorridorConfig {
    /// Half-width of the candidate square in pixels.
    pub corridor_radius: f64,
    pub lattice_step: f64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            corridor_radius: 16.0,
            lattice_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorridorPath {
    /// Frames `t0..=t1`; the endpoints are the exact anchor positions.
    pub points: Vec<Point2D>,
    /// The chosen lattice nodes, endpoints snapped to the lattice.
    pub lattice_path: Vec<Point2D>,
    pub cost: f64,
}

fn snap(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

fn lex(a: Point2D, b: Point2D) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

/// Candidate nodes per frame for `left.frame..=right.frame`, each sorted by
/// `x` then `y`. The endpoint frames hold only the snapped anchor.
pub fn corridor_lattice(left: &Anchor, right: &Anchor, cfg: &CorridorConfig) -> Vec<Vec<Point2D>> {
    let (t0, t1) = (left.frame, right.frame);
    let step = cfg.lattice_step;
    let n = (cfg.corridor_radius / step + 1e-9).floor() as i64;
    let span = (t1 - t0) as f64;
    (t0..=t1)
        .map(|t| {
            if t == t0 {
                return vec![Point2D::new(snap(left.pos.x, step), snap(left.pos.y, step))];
            }
            if t == t1 {
                return vec![Point2D::new(snap(right.pos.x, step), snap(right.pos.y, step))];
            }
            let a = (t - t0) as f64 / span;
            let cx = snap((1.0 - a) * left.pos.x + a * right.pos.x, step);
            let cy = snap((1.0 - a) * left.pos.y + a * right.pos.y, step);
            let mut nodes = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
            for i in -n..=n {
                for j in -n..=n {
                    nodes.push(Point2D::new(cx + i as f64 * step, cy + j as f64 * step));
                }
            }
            nodes
        })
        .collect()
}

/// Disagreement between the step `u -> v` and the flow at `u` on frame `t`.
#[inline]
pub fn step_cost(flow: &FlowVolume, t: usize, u: Point2D, v: Point2D) -> f64 {
    let (fx, fy) = sample_flow(flow.field(t), u);
    ((v.x - u.x) - fx).hypot((v.y - u.y) - fy)
}

pub fn interpolate_corridor_dp(
    flow: &FlowVolume,
    left: &Anchor,
    right: &Anchor,
    cfg: &CorridorConfig,
) -> Result<CorridorPath, TrackError> {
    check_frame(left.frame, flow.frames())?;
    check_frame(right.frame, flow.frames())?;
    if left.frame >= right.frame {
        return Err(TrackError::BadOrder {
            left: left.frame,
            right: right.frame,
        });
    }
    if !(cfg.corridor_radius >= 1.0) || !(cfg.lattice_step > 0.0) {
        return Err(TrackError::BadCorridor(format!(
            "radius {} must be >= 1 and step {} > 0",
            cfg.corridor_radius, cfg.lattice_step
        )));
    }
    let lattice = corridor_lattice(left, right, cfg);
    debug_assert!(lattice.iter().all(|l| !l.is_empty()), "empty corridor");
    debug_assert!(lattice
        .iter()
        .all(|l| l.windows(2).all(|w| lex(w[0], w[1]) == Ordering::Less)));

    let t0 = left.frame;
    let frames = lattice.len();
    let mut cost: Vec<f64> = vec![0.0];
    // rank[i] orders the best prefixes ending at node i lexicographically.
    let mut rank: Vec<usize> = vec![0];
    let mut preds: Vec<Vec<usize>> = Vec::with_capacity(frames);
    preds.push(vec![0]);
    for k in 1..frames {
        let (prev, cur) = (&lattice[k - 1], &lattice[k]);
        let t = t0 + k - 1;
        let mut next_cost = vec![f64::INFINITY; cur.len()];
        let mut pred = vec![usize::MAX; cur.len()];
        for (j, &v) in cur.iter().enumerate() {
            let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
            for (i, &u) in prev.iter().enumerate() {
                let c = cost[i] + step_cost(flow, t, u, v);
                if c < best.0 || (c == best.0 && rank[i] < best.1) {
                    best = (c, rank[i], i);
                }
            }
            next_cost[j] = best.0;
            pred[j] = best.2;
        }
        let mut order: Vec<usize> = (0..cur.len()).collect();
        order.sort_by_key(|&j| (rank[pred[j]], j));
        let mut next_rank = vec![0; cur.len()];
        for (r, &j) in order.iter().enumerate() {
            next_rank[j] = r;
        }
        cost = next_cost;
        rank = next_rank;
        preds.push(pred);
    }

    let mut idx = 0;
    let mut lattice_path = vec![Point2D::default(); frames];
    for k in (0..frames).rev() {
        lattice_path[k] = lattice[k][idx];
        idx = preds[k][idx];
    }
    let mut points = lattice_path.clone();
    points[0] = left.pos;
    points[frames - 1] = right.pos;
    Ok(CorridorPath {
        points,
        lattice_path,
        cost: cost[0],
    })
}
