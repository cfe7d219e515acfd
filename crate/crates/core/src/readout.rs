//! Intensity readout along a track and its normalizations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::track::Track;
use crate::video::VideoSequence;

#[derive(Debug, Error, PartialEq)]
pub enum ReadoutError {
    #[error("track has {track} frames, video has {video}")]
    GeometryMismatch { track: usize, video: usize },
    #[error("baseline mean is zero")]
    ZeroBaseline,
    #[error("need {need} valid leading frames for the baseline, have {have}")]
    ShortTrace { need: usize, have: usize },
    #[error("zero variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    #[default]
    Nearest,
    Bilinear,
}

impl std::str::FromStr for SampleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(SampleMode::Nearest),
            "bilinear" => Ok(SampleMode::Bilinear),
            _ => Err(format!("unknown sampling mode {s:?} (nearest, bilinear)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalTrace {
    pub track_id: String,
    /// `None` where the point is invisible or outside the frame.
    pub values: Vec<Option<f64>>,
}

impl SignalTrace {
    pub fn valid(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_some).collect()
    }
}

/// Reads the frame intensity at each tracked point. A point is in bounds when
/// `0 <= x <= W-1` and `0 <= y <= H-1`. Nearest mode rounds halves away from
/// zero.
pub fn sample_intensity(video: &VideoSequence, track: &Track, mode: SampleMode) -> Result<SignalTrace, ReadoutError> {
    if track.len() != video.len() {
        return Err(ReadoutError::GeometryMismatch {
            track: track.len(),
            video: video.len(),
        });
    }
    let (max_x, max_y) = ((video.width() - 1) as f64, (video.height() - 1) as f64);
    let values = track
        .points()
        .iter()
        .zip(track.visibility())
        .enumerate()
        .map(|(t, (p, &vis))| {
            let inside = p.x >= 0.0 && p.y >= 0.0 && p.x <= max_x && p.y <= max_y;
            if !vis || !inside {
                return None;
            }
            let g = &video.frame(t).pixels;
            Some(match mode {
                SampleMode::Nearest => g.get(p.x.round() as usize, p.y.round() as usize) as f64,
                SampleMode::Bilinear => g.sample_bilinear(p.x, p.y),
            })
        })
        .collect();
    Ok(SignalTrace {
        track_id: track.id.clone(),
        values,
    })
}

/// `(F(t) - F0) / F0` with `F0` the mean of the first `baseline_frames`
/// values, all of which must be valid.
pub fn dff(trace: &[Option<f64>], baseline_frames: usize) -> Result<Vec<Option<f64>>, ReadoutError> {
    let have = trace.iter().take_while(|v| v.is_some()).count();
    if baseline_frames == 0 || have < baseline_frames {
        return Err(ReadoutError::ShortTrace {
            need: baseline_frames.max(1),
            have,
        });
    }
    let f0 = trace[..baseline_frames].iter().map(|v| v.unwrap()).sum::<f64>() / baseline_frames as f64;
    if f0 == 0.0 {
        return Err(ReadoutError::ZeroBaseline);
    }
    Ok(trace.iter().map(|v| v.map(|f| (f - f0) / f0)).collect())
}

/// `(x - μ) / σ` with the population standard deviation over valid entries.
pub fn zscore(values: &[Option<f64>]) -> Result<Vec<Option<f64>>, ReadoutError> {
    let valid: Vec<f64> = values.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(ReadoutError::ZeroVariance);
    }
    let n = valid.len() as f64;
    let mu = valid.iter().sum::<f64>() / n;
    let var = valid.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Err(ReadoutError::ZeroVariance);
    }
    Ok(values.iter().map(|v| v.map(|x| (x - mu) / sigma)).collect())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `frame,raw,dff,zscore,valid`; invalid entries are left empty.
pub fn trace_csv(raw: &[Option<f64>], dff: &[Option<f64>], z: &[Option<f64>]) -> String {
    let mut out = String::from("frame,raw,dff,zscore,valid\n");
    for t in 0..raw.len() {
        let _ = writeln!(
            out,
            "{t},{},{},{},{}",
            cell(raw[t]),
            cell(dff.get(t).copied().flatten()),
            cell(z.get(t).copied().flatten()),
            raw[t].is_some()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowVolume;
    use crate::grid::Grid;
    use crate::track::Anchor;
    use crate::video::Point2D;

    fn video(frames: usize, f: impl Fn(usize, usize, usize) -> f32) -> VideoSequence {
        let planes = (0..frames).map(|t| Grid::from_fn(8, 6, |x, y| f(t, x, y))).collect();
        VideoSequence::from_planes(planes, 8, "mem").unwrap()
    }

    fn track_at(frames: usize, x: f64, y: f64, dx: f32) -> Track {
        let flow = FlowVolume::constant(frames, 8, 6, dx, 0.0);
        Track::from_seed("t", Anchor::seed(0, Point2D::new(x, y)), &flow).unwrap()
    }

    #[test]
    fn constant_video() {
        let v = video(4, |_, _, _| 0.5);
        let s = sample_intensity(&v, &track_at(4, 2.3, 1.7, 0.0), SampleMode::Nearest).unwrap();
        assert!(s.values.iter().all(|&x| x == Some(0.5)));
        let s = sample_intensity(&v, &track_at(4, 2.3, 1.7, 0.0), SampleMode::Bilinear).unwrap();
        assert!(s.values.iter().all(|&x| (x.unwrap() - 0.5).abs() < 1e-7));
    }

    #[test]
    fn lattice_value_and_rounding() {
        let v = video(2, |_, x, y| (x * 10 + y) as f32 / 100.0);
        let s = sample_intensity(&v, &track_at(2, 3.0, 4.0, 0.0), SampleMode::Nearest).unwrap();
        assert_eq!(s.values[0], Some(0.34f32 as f64));
        let s = sample_intensity(&v, &track_at(2, 2.5, 3.5, 0.0), SampleMode::Nearest).unwrap();
        assert_eq!(s.values[0], Some(0.34f32 as f64));
    }

    #[test]
    fn leaving_the_frame_invalidates() {
        let v = video(6, |_, _, _| 0.2);
        let s = sample_intensity(&v, &track_at(6, 4.0, 2.0, 1.0), SampleMode::Nearest).unwrap();
        assert_eq!(s.valid(), vec![true, true, true, true, false, false]);
        assert!(matches!(
            sample_intensity(&v, &track_at(5, 1.0, 1.0, 0.0), SampleMode::Nearest),
            Err(ReadoutError::GeometryMismatch { .. })
        ));
    }

    #[test]
    fn invisible_frames_invalid() {
        let v = video(3, |_, _, _| 0.2);
        let mut t = track_at(3, 1.0, 1.0, 0.0);
        t.set_visibility(0, false).unwrap();
        let s = sample_intensity(&v, &t, SampleMode::Nearest).unwrap();
        assert!(s.values.iter().all(Option::is_none));
    }

    #[test]
    fn dff_examples() {
        let mut tr = vec![Some(10.0); 14];
        tr[12] = Some(15.0);
        tr[13] = None;
        let d = dff(&tr, 11).unwrap();
        assert_eq!(d[12], Some(0.5));
        assert_eq!(d[0], Some(0.0));
        assert_eq!(d[13], None);
        assert_eq!(dff(&vec![Some(0.0); 12], 11), Err(ReadoutError::ZeroBaseline));
        assert_eq!(dff(&vec![Some(1.0); 5], 11), Err(ReadoutError::ShortTrace { need: 11, have: 5 }));
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore(&[Some(0.0), Some(2.0)]).unwrap(), vec![Some(-1.0), Some(1.0)]);
        assert_eq!(zscore(&[Some(3.0); 4]), Err(ReadoutError::ZeroVariance));
        assert_eq!(zscore(&[Some(0.0), None, Some(2.0)]).unwrap()[1], None);
    }

    #[test]
    fn csv_layout() {
        let raw = vec![Some(1.0), None];
        let csv = trace_csv(&raw, &[Some(0.0), None], &[Some(-1.0), None]);
        assert_eq!(csv, "frame,raw,dff,zscore,valid\n0,1,0,-1,true\n1,,,,false\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn zscore_standardizes(v in proptest::collection::vec(-1e3..1e3f64, 2..200)) {
                prop_assume!(v.iter().any(|&x| (x - v[0]).abs() > 1e-3));
                let z: Vec<f64> = zscore(&v.iter().map(|&x| Some(x)).collect::<Vec<_>>()).unwrap().into_iter().flatten().collect();
                let n = z.len() as f64;
                let mean = z.iter().sum::<f64>() / n;
                let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-12);
                prop_assert!((sd - 1.0).abs() < 1e-12);
            }

            #[test]
            fn gain_cancels(v in proptest::collection::vec(0.1..10.0f64, 12..60), gain in 0.01..100.0f64) {
                prop_assume!(v.iter().any(|&x| (x - v[0]).abs() > 1e-3));
                let a: Vec<_> = v.iter().map(|&x| Some(x)).collect();
                let b: Vec<_> = v.iter().map(|&x| Some(x * gain)).collect();
                let za = zscore(&dff(&a, 11).unwrap()).unwrap();
                let zb = zscore(&dff(&b, 11).unwrap()).unwrap();
                for (x, y) in za.iter().zip(&zb) {
                    prop_assert!((x.unwrap() - y.unwrap()).abs() < 1e-9);
                }
            }

            #[test]
            fn bilinear_is_continuous(x in 0.0..6.9f64, y in 0.0..4.9f64, eps in 1e-9..1e-6f64) {
                let v = video(2, |_, x, y| ((x * 7 + y * 3) % 5) as f32 / 5.0);
                let flow = FlowVolume::zeros(2, 8, 6);
                let a = Track::from_seed("a", Anchor::seed(0, Point2D::new(x, y)), &flow).unwrap();
                let b = Track::from_seed("b", Anchor::seed(0, Point2D::new(x + eps, y + eps)), &flow).unwrap();
                let sa = sample_intensity(&v, &a, SampleMode::Bilinear).unwrap().values[0].unwrap();
                let sb = sample_intensity(&v, &b, SampleMode::Bilinear).unwrap().values[0].unwrap();
                prop_assert!((sa - sb).abs() < 10.0 * eps);
            }
        }
    }
}
