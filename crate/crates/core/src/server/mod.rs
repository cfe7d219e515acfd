//! Line-delimited JSON protocol, one session per connection.
//!
//! Requests are `{"op": ..., "request_id": ..., "payload": {...}}`. Replies
//! echo `op` and `request_id` and carry either `"ok": true, "result": ...` or
//! `"ok": false, "error": {"code": ..., "message": ...}`. Flow progress is
//! pushed as unsolicited `{"op": "flow_progress", "payload": ...}` lines.
//! See `PROTOCOL.md` for every op.

pub mod net;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Condvar, Mutex};

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::experiments::ExperimentError;
use crate::flow::{compute_flow_with_progress, read_flow_cache, write_flow_cache, FlowConfig, FlowError, FlowVolume};
use crate::metrics::{app, joint_visibility, APPConfig, MetricsError};
use crate::synth::{Preset, Scene, SynthConfig};
use crate::track::io::{TrackMeta, TrackRecord};
use crate::track::{Anchor, Track, TrackError};
use crate::video::{encode_png, load_sequence_with, LoadOptions, Point2D, SourceKind, VideoError, VideoSequence};

pub use net::{serve, DEFAULT_PORT};

#[derive(Debug, Clone, PartialEq)]
pub struct ProtoError {
    pub code: &'static str,
    pub message: String,
}

impl ProtoError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<TrackError> for ProtoError {
    fn from(e: TrackError) -> Self {
        let code = match e {
            TrackError::FrameOutOfRange { .. } => "FrameOutOfRange",
            TrackError::BadOrder { .. } => "BadOrder",
            TrackError::SameFrame(_) => "SameFrame",
            TrackError::NoAnchors => "NoAnchors",
            TrackError::NoSuchAnchor(_) => "NoSuchAnchor",
            TrackError::LastAnchor => "LastAnchor",
            TrackError::NonFinite => "NonFinite",
            TrackError::BadCorridor(_) => "BadCorridor",
            TrackError::LengthMismatch { .. } => "LengthMismatch",
        };
        Self::new(code, e.to_string())
    }
}

impl From<VideoError> for ProtoError {
    fn from(e: VideoError) -> Self {
        let code = match e {
            VideoError::NotFound(_) => "NotFound",
            VideoError::DimensionMismatch { .. } => "DimensionMismatch",
            VideoError::UnsupportedDepth(_) => "UnsupportedDepth",
            VideoError::TooShort(_) => "TooShort",
            VideoError::BadSize(..) => "BadSize",
            VideoError::BadChannel { .. } => "BadChannel",
            VideoError::Decode { .. } => "DecodeError",
            VideoError::Io(_) => "IoError",
        };
        Self::new(code, e.to_string())
    }
}

impl From<FlowError> for ProtoError {
    fn from(e: FlowError) -> Self {
        let code = match e {
            FlowError::TooShort(_) => "TooShort",
            FlowError::BadConfig(_) => "BadFlowConfig",
            FlowError::Cache(_) => "FlowCacheError",
            FlowError::Io(_) => "IoError",
        };
        Self::new(code, e.to_string())
    }
}

impl From<MetricsError> for ProtoError {
    fn from(e: MetricsError) -> Self {
        let code = match e {
            MetricsError::LengthMismatch { .. } => "LengthMismatch",
            MetricsError::NoVisibleFrames => "NoVisibleFrames",
            MetricsError::Empty => "Empty",
            MetricsError::NoPairs => "NoPairs",
            MetricsError::MissingFrame(_) => "MissingFrame",
            MetricsError::BadThresholds(_) => "BadThresholds",
        };
        Self::new(code, e.to_string())
    }
}

impl From<ExperimentError> for ProtoError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Track(t) => t.into(),
            ExperimentError::Metrics(m) => m.into(),
            other => Self::new("ExperimentError", other.to_string()),
        }
    }
}

type Res = Result<Value, ProtoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Idle,
    Pending,
    Ready,
    Failed,
}

impl FlowStatus {
    fn as_str(self) -> &'static str {
        match self {
            FlowStatus::Idle => "idle",
            FlowStatus::Pending => "pending",
            FlowStatus::Ready => "ready",
            FlowStatus::Failed => "failed",
        }
    }
}

struct FlowSlot {
    generation: u64,
    status: FlowStatus,
    done: usize,
    total: usize,
    error: Option<String>,
    flow: Option<Arc<FlowVolume>>,
}

type Shared = Arc<(Mutex<FlowSlot>, Condvar)>;

static SESSIONS: AtomicU64 = AtomicU64::new(1);

pub struct Session {
    pub id: String,
    video: Option<Arc<VideoSequence>>,
    slot: Shared,
    tracks: BTreeMap<String, Track>,
    next_track: u64,
    push: Option<Sender<String>>,
}

fn payload<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T, ProtoError> {
    serde_json::from_value(v.clone()).map_err(|e| ProtoError::new("BadPayload", e.to_string()))
}

#[derive(Deserialize)]
struct SynthSpec {
    preset: String,
    frames: usize,
    size: usize,
    #[serde(default)]
    seed: u64,
    noise: Option<f64>,
    blobs: Option<usize>,
    #[serde(default)]
    truth_flow: bool,
}

#[derive(Deserialize)]
struct LoadVideo {
    path: Option<String>,
    kind: Option<String>,
    channel: Option<usize>,
    synth: Option<SynthSpec>,
    flow_cache: Option<String>,
    #[serde(default)]
    flow: FlowConfig,
    #[serde(default)]
    wait: bool,
}

#[derive(Deserialize)]
struct CreateTrack {
    frame: usize,
    x: f64,
    y: f64,
    id: Option<String>,
    #[serde(default)]
    label: String,
    #[serde(default = "yes")]
    visible: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
struct AnchorEdit {
    track_id: String,
    frame: usize,
    x: Option<f64>,
    y: Option<f64>,
    visible: Option<bool>,
}

#[derive(Deserialize)]
struct TrackRef {
    track_id: String,
}

#[derive(Deserialize)]
struct FrameRef {
    frame: usize,
}

#[derive(Deserialize)]
struct Evaluate {
    track_id: String,
    reference_id: Option<String>,
    reference: Option<TrackRecord>,
    thresholds: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
struct Export {
    track_ids: Option<Vec<String>>,
    path: Option<String>,
}

#[derive(Deserialize)]
struct Import {
    tracks: Option<Vec<TrackRecord>>,
    path: Option<String>,
    #[serde(default)]
    replace: bool,
}

impl Default for Session {
    fn default() -> Self {
        Self::new(None)
    }
}

impl Session {
    /// `push` receives unsolicited lines (flow progress).
    pub fn new(push: Option<Sender<String>>) -> Self {
        let slot = FlowSlot {
            generation: 0,
            status: FlowStatus::Idle,
            done: 0,
            total: 0,
            error: None,
            flow: None,
        };
        Self {
            id: format!("s{}", SESSIONS.fetch_add(1, Ordering::Relaxed)),
            video: None,
            slot: Arc::new((Mutex::new(slot), Condvar::new())),
            tracks: BTreeMap::new(),
            next_track: 1,
            push,
        }
    }

    /// Handles one request line and returns the reply line.
    pub fn handle_line(&mut self, line: &str) -> String {
        let msg: Value = match serde_json::from_str(line) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => return error_reply(&Value::Null, &Value::Null, &ProtoError::new("ParseError", "message must be a JSON object")),
            Err(e) => return error_reply(&Value::Null, &Value::Null, &ProtoError::new("ParseError", e.to_string())),
        };
        let rid = msg.get("request_id").cloned().unwrap_or(Value::Null);
        let op = msg.get("op").cloned().unwrap_or(Value::Null);
        let body = msg.get("payload").cloned().unwrap_or_else(|| json!({}));
        let result = match op.as_str() {
            Some(name) => self.dispatch(name, &body),
            None => Err(ProtoError::new("UnknownOp", "missing op")),
        };
        match result {
            Ok(v) => json!({"op": op, "request_id": rid, "ok": true, "result": v}).to_string(),
            Err(e) => error_reply(&op, &rid, &e),
        }
    }

    pub fn dispatch(&mut self, op: &str, body: &Value) -> Res {
        match op {
            "load_video" => self.load_video(payload(body)?),
            "flow_status" => Ok(self.flow_status()),
            "create_track" => self.create_track(payload(body)?),
            "insert_anchor" => self.insert_anchor(payload(body)?),
            "remove_anchor" => self.remove_anchor(payload(body)?),
            "set_visibility" => self.set_visibility(payload(body)?),
            "get_track" => self.get_track(payload(body)?),
            "list_tracks" => Ok(self.list_tracks()),
            "delete_track" => self.delete_track(payload(body)?),
            "get_frame" => self.get_frame(payload(body)?),
            "evaluate_app" => self.evaluate_app(payload(body)?),
            "export_tracks" => self.export_tracks(if body.is_null() { Export::default() } else { payload(body)? }),
            "import_tracks" => self.import_tracks(payload(body)?),
            other => Err(ProtoError::new("UnknownOp", format!("unknown op {other:?}"))),
        }
    }

    pub fn video(&self) -> Option<&VideoSequence> {
        self.video.as_deref()
    }

    pub fn tracks(&self) -> &BTreeMap<String, Track> {
        &self.tracks
    }

    pub fn flow(&self) -> Option<Arc<FlowVolume>> {
        self.slot.0.lock().unwrap().flow.clone()
    }

    fn require_video(&self) -> Result<&Arc<VideoSequence>, ProtoError> {
        self.video
            .as_ref()
            .ok_or_else(|| ProtoError::new("SessionStateError", "no video loaded"))
    }

    fn require_flow(&self) -> Result<Arc<FlowVolume>, ProtoError> {
        self.require_video()?;
        let slot = self.slot.0.lock().unwrap();
        match (&slot.flow, slot.status) {
            (Some(f), FlowStatus::Ready) => Ok(f.clone()),
            (_, status) => Err(ProtoError::new(
                "SessionStateError",
                format!("flow is {}, not ready", status.as_str()),
            )),
        }
    }

    fn track_mut(&mut self, id: &str) -> Result<&mut Track, ProtoError> {
        self.tracks
            .get_mut(id)
            .ok_or_else(|| ProtoError::new("NoSuchTrack", format!("no track {id:?}")))
    }

    fn track(&self, id: &str) -> Result<&Track, ProtoError> {
        self.tracks
            .get(id)
            .ok_or_else(|| ProtoError::new("NoSuchTrack", format!("no track {id:?}")))
    }

    fn meta(&self) -> TrackMeta {
        match &self.video {
            Some(v) => TrackMeta::new(v.source_path(), v.width(), v.height(), v.len()),
            None => TrackMeta::default(),
        }
    }

    fn load_video(&mut self, p: LoadVideo) -> Res {
        p.flow.validate()?;
        let mut ready_flow = None;
        let video = match (&p.synth, &p.path) {
            (Some(s), _) => {
                let preset: Preset = s.preset.parse().map_err(|e: String| ProtoError::new("BadPayload", e))?;
                let mut cfg = SynthConfig::new(preset, s.frames, s.size);
                cfg.seed = s.seed;
                if let Some(n) = s.noise {
                    cfg.noise = n;
                }
                if let Some(b) = s.blobs {
                    cfg.blobs = b;
                }
                let scene = Scene::new(cfg)?;
                if s.truth_flow {
                    ready_flow = Some(scene.truth_flow());
                }
                scene.render()?
            }
            (None, Some(path)) => {
                let path = Path::new(path);
                let kind = match &p.kind {
                    Some(k) => k.parse::<SourceKind>().map_err(|e| ProtoError::new("BadPayload", e))?,
                    None if path.is_dir() => SourceKind::ImageDir,
                    None => SourceKind::TiffStack,
                };
                load_sequence_with(path, kind, LoadOptions { channel: p.channel })?
            }
            (None, None) => return Err(ProtoError::new("BadPayload", "need path or synth")),
        };
        let cache = p.flow_cache.as_ref().map(PathBuf::from);
        if ready_flow.is_none() {
            if let Some(c) = cache.as_ref().filter(|c| c.exists()) {
                let f = read_flow_cache(c)?;
                if f.width() != video.width() || f.height() != video.height() || f.frames() != video.len() {
                    return Err(ProtoError::new("GeometryMismatch", "flow cache does not match the video"));
                }
                ready_flow = Some(f);
            }
        }

        let video = Arc::new(video);
        self.video = Some(video.clone());
        self.tracks.clear();
        let generation = {
            let mut slot = self.slot.0.lock().unwrap();
            slot.generation += 1;
            slot.total = video.len() - 1;
            slot.error = None;
            match ready_flow {
                Some(f) => {
                    slot.status = FlowStatus::Ready;
                    slot.done = slot.total;
                    slot.flow = Some(Arc::new(f));
                }
                None => {
                    slot.status = FlowStatus::Pending;
                    slot.done = 0;
                    slot.flow = None;
                }
            }
            slot.generation
        };
        if self.slot.0.lock().unwrap().status == FlowStatus::Pending {
            self.spawn_flow(video.clone(), p.flow.clone(), cache, generation);
        } else {
            self.push_progress();
        }
        if p.wait {
            let (lock, cv) = &*self.slot;
            let _slot = cv
                .wait_while(lock.lock().unwrap(), |s| s.generation == generation && s.status == FlowStatus::Pending)
                .unwrap();
        }
        Ok(json!({
            "width": video.width(),
            "height": video.height(),
            "frames": video.len(),
            "source": video.source_path(),
            "flow": self.flow_status(),
        }))
    }

    fn spawn_flow(&self, video: Arc<VideoSequence>, cfg: FlowConfig, cache: Option<PathBuf>, generation: u64) {
        let slot = self.slot.clone();
        let push = self.push.clone();
        let session = self.id.clone();
        std::thread::spawn(move || {
            let last_pct = AtomicUsize::new(usize::MAX);
            let total = video.len() - 1;
            let result = compute_flow_with_progress(&video, &cfg, |done, total| {
                {
                    let mut s = slot.0.lock().unwrap();
                    if s.generation != generation {
                        return;
                    }
                    s.done = done;
                }
                let pct = done * 100 / total.max(1);
                if let Some(tx) = &push {
                    if last_pct.swap(pct, Ordering::Relaxed) != pct {
                        let msg = json!({"op": "flow_progress", "payload": {"status": "pending", "done": done, "total": total}});
                        let _ = tx.send(msg.to_string());
                    }
                }
            });
            let result = result.and_then(|f| {
                if let Some(c) = &cache {
                    write_flow_cache(&f, c)?;
                }
                Ok(f)
            });
            let (lock, cv) = &*slot;
            let mut s = lock.lock().unwrap();
            if s.generation != generation {
                return;
            }
            let payload = match result {
                Ok(f) => {
                    s.status = FlowStatus::Ready;
                    s.done = total;
                    s.flow = Some(Arc::new(f));
                    json!({"status": "ready", "done": total, "total": total})
                }
                Err(e) => {
                    log::error!("session {session}: flow failed: {e}");
                    s.status = FlowStatus::Failed;
                    s.error = Some(e.to_string());
                    json!({"status": "failed", "done": s.done, "total": total, "error": e.to_string()})
                }
            };
            if let Some(tx) = &push {
                let _ = tx.send(json!({"op": "flow_progress", "payload": payload}).to_string());
            }
            cv.notify_all();
        });
    }

    fn push_progress(&self) {
        if let Some(tx) = &self.push {
            let _ = tx.send(json!({"op": "flow_progress", "payload": self.flow_status()}).to_string());
        }
    }

    fn flow_status(&self) -> Value {
        let s = self.slot.0.lock().unwrap();
        let mut v = json!({"status": s.status.as_str(), "done": s.done, "total": s.total});
        if let Some(e) = &s.error {
            v["error"] = json!(e);
        }
        v
    }

    fn fresh_id(&mut self) -> String {
        loop {
            let id = format!("track{}", self.next_track);
            self.next_track += 1;
            if !self.tracks.contains_key(&id) {
                return id;
            }
        }
    }

    fn create_track(&mut self, p: CreateTrack) -> Res {
        let flow = self.require_flow()?;
        let id = match p.id {
            Some(id) if self.tracks.contains_key(&id) => {
                return Err(ProtoError::new("DuplicateTrack", format!("track {id:?} exists")));
            }
            Some(id) => id,
            None => self.fresh_id(),
        };
        let seed = Anchor::seed(p.frame, Point2D::new(p.x, p.y)).with_visibility(p.visible);
        let mut track = Track::from_seed(id.clone(), seed, &flow)?;
        track.label = p.label;
        let reply = json!({
            "track_id": id,
            "points": track.points(),
            "visibility": track.visibility(),
            "anchors": anchors_json(&track),
        });
        self.tracks.insert(id, track);
        Ok(reply)
    }

    fn insert_anchor(&mut self, p: AnchorEdit) -> Res {
        let flow = self.require_flow()?;
        let (x, y) = match (p.x, p.y) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(ProtoError::new("BadPayload", "insert_anchor needs x and y")),
        };
        let track = self.track_mut(&p.track_id)?;
        let anchor = Anchor::correction(p.frame, Point2D::new(x, y)).with_visibility(p.visible.unwrap_or(true));
        let stats = track.insert_anchor(anchor, &flow)?;
        Ok(span_reply(track, &stats))
    }

    fn remove_anchor(&mut self, p: AnchorEdit) -> Res {
        let flow = self.require_flow()?;
        let track = self.track_mut(&p.track_id)?;
        let stats = track.remove_anchor(p.frame, &flow)?;
        Ok(span_reply(track, &stats))
    }

    fn set_visibility(&mut self, p: AnchorEdit) -> Res {
        self.require_flow()?;
        let visible = p
            .visible
            .ok_or_else(|| ProtoError::new("BadPayload", "set_visibility needs visible"))?;
        let track = self.track_mut(&p.track_id)?;
        track.set_visibility(p.frame, visible)?;
        Ok(json!({"track_id": p.track_id, "frame": p.frame, "visible": visible, "visibility": track.visibility()}))
    }

    fn get_track(&self, p: TrackRef) -> Res {
        let t = self.track(&p.track_id)?;
        Ok(serde_json::to_value(TrackRecord::from_track(t, self.meta())).expect("record serializes"))
    }

    fn list_tracks(&self) -> Value {
        let tracks: Vec<Value> = self
            .tracks
            .values()
            .map(|t| json!({"id": t.id, "label": t.label, "anchors": t.anchors().len(), "clicks": t.click_count()}))
            .collect();
        json!({ "tracks": tracks })
    }

    fn delete_track(&mut self, p: TrackRef) -> Res {
        self.tracks
            .remove(&p.track_id)
            .ok_or_else(|| ProtoError::new("NoSuchTrack", format!("no track {:?}", p.track_id)))?;
        Ok(json!({ "deleted": p.track_id }))
    }

    fn get_frame(&self, p: FrameRef) -> Res {
        let video = self.require_video()?;
        if p.frame >= video.len() {
            return Err(TrackError::FrameOutOfRange {
                frame: p.frame,
                frames: video.len(),
            }
            .into());
        }
        let png = encode_png(&video.frame(p.frame).pixels);
        Ok(json!({
            "frame": p.frame,
            "width": video.width(),
            "height": video.height(),
            "png": base64::engine::general_purpose::STANDARD.encode(png),
        }))
    }

    fn evaluate_app(&self, p: Evaluate) -> Res {
        let pred = self.track(&p.track_id)?;
        let cfg = match p.thresholds {
            Some(t) => APPConfig::new(t)?,
            None => APPConfig::default(),
        };
        let (ref_points, ref_vis) = match (&p.reference_id, &p.reference) {
            (Some(id), _) => {
                let r = self.track(id)?;
                (r.points().to_vec(), r.visibility().to_vec())
            }
            (None, Some(rec)) => (rec.positions(), rec.visibility()),
            (None, None) => return Err(ProtoError::new("BadPayload", "need reference_id or reference")),
        };
        if ref_vis.len() != pred.len() {
            return Err(MetricsError::LengthMismatch {
                pred: pred.len(),
                reference: ref_points.len(),
                vis: ref_vis.len(),
            }
            .into());
        }
        let vis = joint_visibility(pred.visibility(), &ref_vis);
        let report = app(pred.points(), &ref_points, &vis, &cfg)?;
        Ok(serde_json::to_value(report).expect("report serializes"))
    }

    fn export_tracks(&self, p: Export) -> Res {
        let ids: Vec<String> = match p.track_ids {
            Some(ids) => ids,
            None => self.tracks.keys().cloned().collect(),
        };
        let meta = self.meta();
        let records = ids
            .iter()
            .map(|id| Ok(TrackRecord::from_track(self.track(id)?, meta.clone())))
            .collect::<Result<Vec<_>, ProtoError>>()?;
        if let Some(path) = &p.path {
            let text = serde_json::to_string_pretty(&records).expect("records serialize");
            std::fs::write(path, text + "\n").map_err(|e| ProtoError::new("IoError", format!("{path}: {e}")))?;
        }
        Ok(json!({ "tracks": records }))
    }

    fn import_tracks(&mut self, p: Import) -> Res {
        let flow = self.require_flow()?;
        let records = match (p.tracks, &p.path) {
            (Some(r), _) => r,
            (None, Some(path)) => crate::track::io::read_tracks(Path::new(path))
                .map_err(|e| ProtoError::new("IoError", format!("{path}: {e}")))?,
            (None, None) => return Err(ProtoError::new("BadPayload", "need tracks or path")),
        };
        let frames = flow.frames();
        let mut built = Vec::with_capacity(records.len());
        for rec in &records {
            if !p.replace && self.tracks.contains_key(&rec.id) {
                return Err(ProtoError::new("DuplicateTrack", format!("track {:?} exists", rec.id)));
            }
            if rec.meta.frames != 0 && rec.meta.frames != frames {
                return Err(ProtoError::new(
                    "GeometryMismatch",
                    format!("track {:?} spans {} frames, video has {frames}", rec.id, rec.meta.frames),
                ));
            }
            let track = if rec.points.is_empty() {
                let mut t = Track::from_anchors(rec.id.clone(), rec.anchors(), &flow)?;
                t.label = rec.label.clone();
                t
            } else {
                if rec.points.len() != frames {
                    return Err(TrackError::LengthMismatch {
                        want: frames,
                        got: rec.points.len(),
                    }
                    .into());
                }
                rec.to_track()?
            };
            built.push(track);
        }
        let ids: Vec<String> = built.iter().map(|t| t.id.clone()).collect();
        for t in built {
            self.tracks.insert(t.id.clone(), t);
        }
        Ok(json!({ "imported": ids }))
    }
}

fn anchors_json(track: &Track) -> Value {
    serde_json::to_value(
        track
            .anchors()
            .iter()
            .map(crate::track::io::AnchorRecord::from_anchor)
            .collect::<Vec<_>>(),
    )
    .expect("anchors serialize")
}

fn span_reply(track: &Track, stats: &crate::track::RebuildStats) -> Value {
    let span = stats.first_frame..=stats.last_frame;
    json!({
        "track_id": track.id,
        "first_frame": stats.first_frame,
        "points": &track.points()[span.clone()],
        "visibility": &track.visibility()[span],
        "anchors": anchors_json(track),
        "stats": stats,
    })
}

fn error_reply(op: &Value, rid: &Value, e: &ProtoError) -> String {
    json!({"op": op, "request_id": rid, "ok": false, "error": {"code": e.code, "message": e.message}}).to_string()
}
