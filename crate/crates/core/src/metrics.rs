//! Position-precision accuracy metrics.
//!
//! `PP(τ)` is the fraction of scored frames whose predicted point lies
//! within `τ` pixels (inclusive) of the reference. APP is the mean of `PP`
//! over the thresholds, by default `{1, 2, 4, 8, 16}`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::Point2D;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: pred {pred}, ref {reference}, vis {vis}")]
    LengthMismatch { pred: usize, reference: usize, vis: usize },
    #[error("no visible frames to score")]
    NoVisibleFrames,
    #[error("no reports to aggregate")]
    Empty,
    #[error("no paired frames")]
    NoPairs,
    #[error("paired frame {0} is outside the tracks")]
    MissingFrame(usize),
    #[error("thresholds must be positive and strictly increasing: {0:?}")]
    BadThresholds(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APPConfig {
    pub thresholds: Vec<f64>,
}

impl Default for APPConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![1.0, 2.0, 4.0, 8.0, 16.0],
        }
    }
}

impl APPConfig {
    pub fn new(thresholds: Vec<f64>) -> Result<Self, MetricsError> {
        let cfg = Self { thresholds };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = !self.thresholds.is_empty()
            && self.thresholds.iter().all(|&t| t > 0.0 && t.is_finite())
            && self.thresholds.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(MetricsError::BadThresholds(self.thresholds.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APPReport {
    pub thresholds: Vec<f64>,
    pub per_threshold: Vec<f64>,
    pub app: f64,
    pub scored_frames: usize,
}

impl APPReport {
    pub fn pp(&self, tau: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == tau)
            .map(|i| self.per_threshold[i])
    }
}

fn check_lengths(pred: &[Point2D], reference: &[Point2D], vis: &[bool]) -> Result<usize, MetricsError> {
    if pred.len() != reference.len() || pred.len() != vis.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
            vis: vis.len(),
        });
    }
    match vis.iter().filter(|&&v| v).count() {
        0 => Err(MetricsError::NoVisibleFrames),
        n => Ok(n),
    }
}

/// Frames scored when both tracks are visible.
pub fn joint_visibility(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(&x, &y)| x && y).collect()
}

pub fn point_precision(pred: &[Point2D], reference: &[Point2D], vis: &[bool], tau: f64) -> Result<f64, MetricsError> {
    let n = check_lengths(pred, reference, vis)?;
    let hits = pred
        .iter()
        .zip(reference)
        .zip(vis)
        .filter(|((p, r), &v)| v && p.distance(**r) <= tau)
        .count();
    Ok(hits as f64 / n as f64)
}

pub fn app(pred: &[Point2D], reference: &[Point2D], vis: &[bool], cfg: &APPConfig) -> Result<APPReport, MetricsError> {
    cfg.validate()?;
    let n = check_lengths(pred, reference, vis)?;
    let errors: Vec<f64> = pred
        .iter()
        .zip(reference)
        .zip(vis)
        .filter(|(_, &v)| v)
        .map(|((p, r), _)| p.distance(*r))
        .collect();
    let per_threshold: Vec<f64> = cfg
        .thresholds
        .iter()
        .map(|&tau| errors.iter().filter(|&&e| e <= tau).count() as f64 / n as f64)
        .collect();
    let app = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    Ok(APPReport {
        thresholds: cfg.thresholds.clone(),
        per_threshold,
        app,
        scored_frames: n,
    })
}

/// Unweighted mean of trajectory-level APP values.
pub fn dataset_app(reports: &[APPReport]) -> Result<f64, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(reports.iter().map(|r| r.app).sum::<f64>() / reports.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Disagreement {
    pub frames: Vec<usize>,
    pub distances: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// `(d, fraction of distances <= d)` at every distinct distance, ascending.
    pub cumulative: Vec<(f64, f64)>,
}

pub fn disagreement(a: &[Point2D], b: &[Point2D], paired_frames: &[usize]) -> Result<Disagreement, MetricsError> {
    if paired_frames.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let mut distances = Vec::with_capacity(paired_frames.len());
    for &t in paired_frames {
        if t >= a.len() || t >= b.len() {
            return Err(MetricsError::MissingFrame(t));
        }
        distances.push(a[t].distance(b[t]));
    }
    let n = distances.len();
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mut cumulative: Vec<(f64, f64)> = Vec::new();
    for (i, &d) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n as f64;
        match cumulative.last_mut() {
            Some(last) if last.0 == d => last.1 = frac,
            _ => cumulative.push((d, frac)),
        }
    }
    Ok(Disagreement {
        frames: paired_frames.to_vec(),
        mean: distances.iter().sum::<f64>() / n as f64,
        median,
        distances,
        cumulative,
    })
}

/// A fraction shown as a percentage with two decimals, ties rounded to even.
pub fn format_percent(fraction: f64) -> String {
    let hundredths = (fraction * 10_000.0).round_ties_even();
    format!("{:.2}", hundredths / 100.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedReport {
    pub id: String,
    #[serde(flatten)]
    pub report: APPReport,
}

fn tau_label(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// One row per trajectory: `id, pp_<τ>..., app, scored_frames`.
pub fn reports_to_csv(rows: &[NamedReport]) -> String {
    let mut out = String::from("id");
    if let Some(first) = rows.first() {
        for &t in &first.report.thresholds {
            let _ = write!(out, ",pp_{}", tau_label(t));
        }
    }
    out.push_str(",app,scored_frames\n");
    for r in rows {
        out.push_str(&r.id);
        for v in &r.report.per_threshold {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", r.report.app, r.report.scored_frames);
    }
    out
}
