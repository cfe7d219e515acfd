//! Track JSON files.
//!
//! ```json
//! {"id": "...", "label": "...",
//!  "anchors": [{"frame": 0, "x": 1.5, "y": 2.0, "visible": true, "origin": "seed"}],
//!  "points":  [{"frame": 0, "x": 1.5, "y": 2.0, "visible": true}],
//!  "meta": {"source": "...", "W": 64, "H": 64, "T": 10, "created": 1700000000}}
//! ```
//!
//! A file holds one such object or an array of them. Floats are written in
//! shortest round-trip form, so coordinates survive a write/read cycle
//! bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Anchor, AnchorOrigin, Track, TrackError};
use crate::video::Point2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    #[serde(default = "yes")]
    pub visible: bool,
    #[serde(default = "correction")]
    pub origin: AnchorOrigin,
}

fn yes() -> bool {
    true
}

fn correction() -> AnchorOrigin {
    AnchorOrigin::Correction
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackMeta {
    #[serde(default)]
    pub source: String,
    #[serde(rename = "W", default)]
    pub width: usize,
    #[serde(rename = "H", default)]
    pub height: usize,
    #[serde(rename = "T", default)]
    pub frames: usize,
    /// Seconds since the Unix epoch.
    #[serde(default)]
    pub created: u64,
}

impl TrackMeta {
    pub fn new(source: impl Into<String>, width: usize, height: usize, frames: usize) -> Self {
        Self {
            source: source.into(),
            width,
            height,
            frames,
            created: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: String,
    #[serde(default)]
    pub label: String,
    pub anchors: Vec<AnchorRecord>,
    #[serde(default)]
    pub points: Vec<PointRecord>,
    #[serde(default)]
    pub meta: TrackMeta,
}

impl AnchorRecord {
    pub fn from_anchor(a: &Anchor) -> Self {
        Self {
            frame: a.frame,
            x: a.pos.x,
            y: a.pos.y,
            visible: a.visible,
            origin: a.origin,
        }
    }

    pub fn to_anchor(&self) -> Anchor {
        Anchor {
            frame: self.frame,
            pos: Point2D::new(self.x, self.y),
            visible: self.visible,
            created_at: 0,
            origin: self.origin,
        }
    }
}

impl TrackRecord {
    pub fn from_track(track: &Track, meta: TrackMeta) -> Self {
        Self {
            id: track.id.clone(),
            label: track.label.clone(),
            anchors: track.anchors().iter().map(AnchorRecord::from_anchor).collect(),
            points: track
                .points()
                .iter()
                .zip(track.visibility())
                .enumerate()
                .map(|(frame, (p, &visible))| PointRecord {
                    frame,
                    x: p.x,
                    y: p.y,
                    visible,
                })
                .collect(),
            meta,
        }
    }

    pub fn anchors(&self) -> Vec<Anchor> {
        self.anchors.iter().map(AnchorRecord::to_anchor).collect()
    }

    /// Rebuilds the in-memory track from stored points, without recomputing.
    /// Fails if the point list is empty or not ordered by frame.
    pub fn to_track(&self) -> Result<Track, TrackError> {
        if self.points.is_empty() {
            return Err(TrackError::LengthMismatch {
                want: self.meta.frames.max(1),
                got: 0,
            });
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.frame != i {
                return Err(TrackError::LengthMismatch {
                    want: i,
                    got: p.frame,
                });
            }
        }
        let points = self.points.iter().map(|p| Point2D::new(p.x, p.y)).collect();
        let vis = self.points.iter().map(|p| p.visible).collect();
        Track::from_parts(self.id.clone(), self.label.clone(), self.anchors(), points, vis)
    }

    pub fn positions(&self) -> Vec<Point2D> {
        self.points.iter().map(|p| Point2D::new(p.x, p.y)).collect()
    }

    pub fn visibility(&self) -> Vec<bool> {
        self.points.iter().map(|p| p.visible).collect()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<TrackRecord>),
    One(Box<TrackRecord>),
}

pub fn parse_tracks(text: &str) -> Result<Vec<TrackRecord>, serde_json::Error> {
    Ok(match serde_json::from_str::<OneOrMany>(text)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(r) => vec![*r],
    })
}

pub fn read_tracks(path: &Path) -> anyhow::Result<Vec<TrackRecord>> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_tracks(&text)?)
}

/// Writes a single object for one track, an array otherwise.
pub fn write_tracks(path: &Path, records: &[TrackRecord]) -> anyhow::Result<()> {
    let text = if records.len() == 1 {
        serde_json::to_string_pretty(&records[0])?
    } else {
        serde_json::to_string_pretty(records)?
    };
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowVolume;

    #[test]
    fn field_order_is_fixed() {
        let flow = FlowVolume::constant(3, 8, 8, 0.5, 0.0);
        let t = Track::from_seed("t1", Anchor::seed(0, Point2D::new(1.0, 2.0)), &flow).unwrap();
        let rec = TrackRecord::from_track(&t, TrackMeta::new("v.tif", 8, 8, 3));
        let json = serde_json::to_string(&rec).unwrap();
        let keys = ["\"id\"", "\"label\"", "\"anchors\"", "\"points\"", "\"meta\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert!(json.contains(r#"{"frame":0,"x":1.0,"y":2.0,"visible":true,"origin":"seed"}"#));
        assert!(json.contains(r#""W":8,"H":8,"T":3"#));
    }

    #[test]
    fn coordinates_roundtrip_bit_exact() {
        let flow = FlowVolume::constant(5, 8, 8, 0.1, 0.2);
        let mut t = Track::from_seed("x", Anchor::seed(1, Point2D::new(1.0 / 3.0, std::f64::consts::PI)), &flow).unwrap();
        t.insert_anchor(Anchor::correction(4, Point2D::new(2.718281828459045, 1e-7)), &flow).unwrap();
        let rec = TrackRecord::from_track(&t, TrackMeta::default());
        let back = parse_tracks(&serde_json::to_string(&vec![rec.clone()]).unwrap()).unwrap();
        assert_eq!(back[0], rec);
        let tr = back[0].to_track().unwrap();
        assert_eq!(tr.points(), t.points());
        let one = parse_tracks(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn minimal_anchor_input() {
        let text = r#"{"id": "a", "anchors": [{"frame": 2, "x": 3, "y": 4}]}"#;
        let recs = parse_tracks(text).unwrap();
        let a = recs[0].anchors()[0];
        assert_eq!((a.frame, a.pos, a.visible, a.origin), (2, Point2D::new(3.0, 4.0), true, AnchorOrigin::Correction));
    }
}
