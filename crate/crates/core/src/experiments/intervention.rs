//! Counting the clicks needed to rebuild a reference trajectory from the
//! fragments of a detect-and-link tracker.
//!
//! Fragment files use this JSON layout:
//!
//! ```json
//! {"frames": [{"t": 0, "detections": [{"x": 1.0, "y": 2.0, "fragment": "7"}]}]}
//! ```
//!
//! TrackMate XML exports (spots plus track edges) convert to the same form
//! with [`FragmentSet::from_trackmate_xml`].

use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize};

use super::ExperimentError;
use crate::track::Track;
use crate::video::Point2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    #[serde(deserialize_with = "token")]
    pub fragment: String,
}

impl Detection {
    pub fn new(x: f64, y: f64, fragment: impl Into<String>) -> Self {
        Self {
            x,
            y,
            fragment: fragment.into(),
        }
    }

    pub fn pos(&self) -> Point2D {
        Point2D::new(self.x, self.y)
    }
}

fn token<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!("fragment must be a string or number, got {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    detections: Vec<Detection>,
}

#[derive(Serialize, Deserialize)]
struct FragmentFile {
    frames: Vec<FrameRecord>,
}

/// Detections grouped by frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FragmentSet {
    frames: Vec<Vec<Detection>>,
}

impl FragmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: usize, d: Detection) {
        if self.frames.len() <= t {
            self.frames.resize(t + 1, Vec::new());
        }
        self.frames[t].push(d);
    }

    pub fn at(&self, t: usize) -> &[Detection] {
        self.frames.get(t).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Detection)> {
        self.frames
            .iter()
            .enumerate()
            .flat_map(|(t, ds)| ds.iter().map(move |d| (t, d)))
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let file: FragmentFile = serde_json::from_str(text).map_err(|e| ExperimentError::Fragments(e.to_string()))?;
        let mut set = Self::new();
        for fr in file.frames {
            for d in fr.detections {
                set.push(fr.t, d);
            }
        }
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        let file = FragmentFile {
            frames: self
                .frames
                .iter()
                .enumerate()
                .filter(|(_, d)| !d.is_empty())
                .map(|(t, d)| FrameRecord { t, detections: d.clone() })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("plain data serializes")
    }

    /// Reads `Spot` elements (`ID`, `FRAME`, `POSITION_X`, `POSITION_Y`) and
    /// `Edge` elements (`SPOT_SOURCE_ID`, `SPOT_TARGET_ID`). Spots joined by
    /// edges share a fragment, named after the enclosing `Track`'s
    /// `TRACK_ID` when there is one. Unlinked spots form their own
    /// fragments. Positions are divided by `ImageData`'s `pixelwidth` and
    /// `pixelheight` when present. Returns the set and whether such a
    /// calibration was applied.
    pub fn from_trackmate_xml(text: &str) -> Result<(Self, bool), ExperimentError> {
        let bad = |m: String| ExperimentError::Fragments(m);
        let doc = roxmltree::Document::parse(text).map_err(|e| bad(e.to_string()))?;
        let num = |n: roxmltree::Node, a: &str| -> Result<f64, ExperimentError> {
            n.attribute(a)
                .ok_or_else(|| bad(format!("<{}> lacks {a}", n.tag_name().name())))?
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("<{}> {a}: {e}", n.tag_name().name())))
        };

        let (mut sx, mut sy, mut calibrated) = (1.0, 1.0, false);
        if let Some(img) = doc.descendants().find(|n| n.has_tag_name("ImageData")) {
            if let (Ok(pw), Ok(ph)) = (num(img, "pixelwidth"), num(img, "pixelheight")) {
                if pw > 0.0 && ph > 0.0 {
                    (sx, sy, calibrated) = (pw, ph, true);
                }
            }
        }

        let mut spots: Vec<(String, usize, f64, f64)> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for n in doc.descendants().filter(|n| n.has_tag_name("Spot")) {
            let id = n.attribute("ID").ok_or_else(|| bad("<Spot> lacks ID".into()))?.to_string();
            let frame = num(n, "FRAME")?;
            if frame < 0.0 || frame.fract() != 0.0 {
                return Err(bad(format!("spot {id}: bad FRAME {frame}")));
            }
            index.insert(id.clone(), spots.len());
            spots.push((id, frame as usize, num(n, "POSITION_X")? / sx, num(n, "POSITION_Y")? / sy));
        }

        let mut parent: Vec<usize> = (0..spots.len()).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut track_name: HashMap<usize, String> = HashMap::new();
        let mut named: Vec<(usize, String)> = Vec::new();
        for e in doc.descendants().filter(|n| n.has_tag_name("Edge")) {
            let get = |a: &str| -> Result<usize, ExperimentError> {
                let id = e.attribute(a).ok_or_else(|| bad(format!("<Edge> lacks {a}")))?;
                index
                    .get(id.trim())
                    .copied()
                    .ok_or_else(|| bad(format!("edge refers to unknown spot {id}")))
            };
            let (a, b) = (get("SPOT_SOURCE_ID")?, get("SPOT_TARGET_ID")?);
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
            let track = e
                .ancestors()
                .find(|n| n.has_tag_name("Track"))
                .and_then(|t| t.attribute("TRACK_ID").or_else(|| t.attribute("name")));
            if let Some(name) = track {
                named.push((a, name.to_string()));
            }
        }
        for (spot, name) in named {
            let r = root(&mut parent, spot);
            track_name.entry(r).or_insert(name);
        }

        let mut set = Self::new();
        for i in 0..spots.len() {
            let r = root(&mut parent, i);
            let fragment = match track_name.get(&r) {
                Some(name) => name.clone(),
                None => format!("spot{}", spots[r].0),
            };
            let (_, t, x, y) = &spots[i];
            set.push(*t, Detection::new(*x, *y, fragment));
        }
        Ok((set, calibrated))
    }

    /// When coordinates run past the image, rescales them isotropically so
    /// the largest coordinate lands on the last pixel of its axis. Returns the
    /// scale applied, if any.
    pub fn calibrate_isotropic(&mut self, width: usize, height: usize) -> Option<f64> {
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (_, d) in self.iter() {
            max_x = max_x.max(d.x);
            max_y = max_y.max(d.y);
        }
        let (wx, hy) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
        if !(max_x > wx || max_y > hy) {
            return None;
        }
        let scale = if max_x >= max_y { wx / max_x } else { hy / max_y };
        for ds in &mut self.frames {
            for d in ds.iter_mut() {
                d.x *= scale;
                d.y *= scale;
            }
        }
        Some(scale)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InterventionCount {
    pub init_pick: usize,
    pub relink: usize,
    pub manual: usize,
    pub total: usize,
}

impl std::ops::Add for InterventionCount {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            init_pick: self.init_pick + o.init_pick,
            relink: self.relink + o.relink,
            manual: self.manual + o.manual,
            total: self.total + o.total,
        }
    }
}

/// Walks the visible frames of `gt`, following the fragment of the nearest
/// detection closer than `tolerance`.
pub fn intervention_cost(gt: &Track, fragments: &FragmentSet, tolerance: f64) -> Result<InterventionCount, ExperimentError> {
    intervention_cost_points(gt.points(), gt.visibility(), fragments, tolerance)
}

pub fn intervention_cost_points(
    points: &[Point2D],
    visible: &[bool],
    fragments: &FragmentSet,
    tolerance: f64,
) -> Result<InterventionCount, ExperimentError> {
    if !(tolerance > 0.0) {
        return Err(ExperimentError::BadTolerance(tolerance));
    }
    let mut count = InterventionCount::default();
    let mut following: Option<&str> = None;
    for (t, (&p, _)) in points.iter().zip(visible).enumerate().filter(|(_, (_, &v))| v) {
        let mut best: Option<(&Detection, f64)> = None;
        for d in fragments.at(t) {
            let dist = p.distance(d.pos());
            if dist < tolerance && best.is_none_or(|(_, b)| dist < b) {
                best = Some((d, dist));
            }
        }
        match (best, following) {
            (None, _) => {
                count.manual += 1;
                following = None;
            }
            (Some((d, _)), None) => {
                count.init_pick += 1;
                following = Some(&d.fragment);
            }
            (Some((d, _)), Some(f)) if f != d.fragment => {
                count.relink += 1;
                following = Some(&d.fragment);
            }
            _ => {}
        }
    }
    count.total = count.init_pick + count.relink + count.manual;
    Ok(count)
}
