//! Python bindings for the tracking engine, metrics and experiments.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sparsetrack::experiments::{self, intervention::intervention_cost_points, FragmentSet, ScalingConfig};
use sparsetrack::flow::{self, FlowBackend, FlowConfig};
use sparsetrack::metrics::{self, APPConfig};
use sparsetrack::synth::{Preset, Scene, SynthConfig};
use sparsetrack::track::io::{parse_tracks, TrackMeta, TrackRecord};
use sparsetrack::track::{self as engine, Anchor, Strategy};
use sparsetrack::video::{self, Point2D, SourceKind};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn points(v: &[(f64, f64)]) -> Vec<Point2D> {
    v.iter().map(|&(x, y)| Point2D::new(x, y)).collect()
}

fn pairs(v: &[Point2D]) -> Vec<(f64, f64)> {
    v.iter().map(|p| (p.x, p.y)).collect()
}

/// A loaded grayscale video with intensities in [0, 1].
#[pyclass(frozen, module = "sparsetrack_py")]
pub struct Video(Arc<video::VideoSequence>);

#[pymethods]
impl Video {
    /// Reads a TIFF stack or a directory of frames.
    #[staticmethod]
    #[pyo3(signature = (path, kind=None, channel=None))]
    fn load(path: PathBuf, kind: Option<&str>, channel: Option<usize>) -> PyResult<Self> {
        let kind = match kind {
            Some(k) => k.parse::<SourceKind>().map_err(err)?,
            None if path.is_dir() => SourceKind::ImageDir,
            None => SourceKind::TiffStack,
        };
        let v = video::load_sequence_with(&path, kind, video::LoadOptions { channel }).map_err(err)?;
        Ok(Self(Arc::new(v)))
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Row-major intensities of frame `t`.
    fn frame(&self, t: usize) -> PyResult<Vec<f32>> {
        if t >= self.0.len() {
            return Err(PyIndexError::new_err(format!("frame {t} outside [0, {})", self.0.len())));
        }
        Ok(self.0.frame(t).pixels.data().to_vec())
    }

    fn write_tiff(&self, path: PathBuf) -> PyResult<()> {
        video::write_tiff_stack(&self.0, &path).map_err(err)
    }

    fn rescale(&self, width: usize, height: usize) -> PyResult<Self> {
        Ok(Self(Arc::new(video::rescale_sequence(&self.0, width, height).map_err(err)?)))
    }
}

/// Dense forward flow for every consecutive frame pair.
#[pyclass(frozen, module = "sparsetrack_py")]
pub struct Flow(Arc<flow::FlowVolume>);

#[pymethods]
impl Flow {
    #[staticmethod]
    #[pyo3(signature = (video, backend="dis", search_radius=4))]
    fn compute(video: &Video, backend: &str, search_radius: usize) -> PyResult<Self> {
        let backend: FlowBackend = backend.parse().map_err(err)?;
        let cfg = FlowConfig {
            backend,
            search_radius,
            ..FlowConfig::default()
        };
        cfg.validate().map_err(err)?;
        Ok(Self(Arc::new(flow::compute_flow(&video.0, &cfg).map_err(err)?)))
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self(Arc::new(flow::read_flow_cache(&path).map_err(err)?)))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        flow::write_flow_cache(&self.0, &path).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn frames(&self) -> usize {
        self.0.frames()
    }

    /// Bilinearly sampled `(dx, dy)` of field `t` at `(x, y)`.
    fn sample(&self, t: usize, x: f64, y: f64) -> PyResult<(f64, f64)> {
        if t + 1 >= self.0.frames() {
            return Err(PyIndexError::new_err(format!("no flow field {t}")));
        }
        Ok(flow::sample_flow(self.0.field(t), Point2D::new(x, y)))
    }
}

/// A point trajectory defined by its anchors.
#[pyclass(module = "sparsetrack_py")]
pub struct Track(engine::Track);

#[pymethods]
impl Track {
    #[new]
    #[pyo3(signature = (id, frame, x, y, flow, visible=true, label=String::new()))]
    fn new(id: String, frame: usize, x: f64, y: f64, flow: &Flow, visible: bool, label: String) -> PyResult<Self> {
        let seed = Anchor::seed(frame, Point2D::new(x, y)).with_visibility(visible);
        let mut t = engine::Track::from_seed(id, seed, &flow.0).map_err(err)?;
        t.label = label;
        Ok(Self(t))
    }

    /// Parses track JSON (one record or an array) and returns the tracks.
    /// Records without points are rebuilt from their anchors when `flow` is
    /// given.
    #[staticmethod]
    #[pyo3(signature = (text, flow=None))]
    fn from_json(text: &str, flow: Option<&Flow>) -> PyResult<Vec<Self>> {
        parse_tracks(text)
            .map_err(err)?
            .iter()
            .map(|r| {
                let t = match (r.points.is_empty(), flow) {
                    (true, Some(f)) => {
                        let mut t = engine::Track::from_anchors(r.id.clone(), r.anchors(), &f.0).map_err(err)?;
                        t.label = r.label.clone();
                        t
                    }
                    _ => r.to_track().map_err(err)?,
                };
                Ok(Self(t))
            })
            .collect()
    }

    fn to_json(&self) -> String {
        let t = &self.0;
        let meta = TrackMeta::new("", 0, 0, t.len());
        serde_json::to_string(&TrackRecord::from_track(t, meta)).expect("record serializes")
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label.clone()
    }

    #[getter]
    fn points(&self) -> Vec<(f64, f64)> {
        pairs(self.0.points())
    }

    #[getter]
    fn visibility(&self) -> Vec<bool> {
        self.0.visibility().to_vec()
    }

    /// `(frame, x, y, visible, origin)` per anchor, sorted by frame.
    #[getter]
    fn anchors(&self) -> Vec<(usize, f64, f64, bool, &'static str)> {
        self.0
            .anchors()
            .iter()
            .map(|a| {
                let origin = match a.origin {
                    engine::AnchorOrigin::Seed => "seed",
                    engine::AnchorOrigin::Correction => "correction",
                };
                (a.frame, a.pos.x, a.pos.y, a.visible, origin)
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[pyo3(signature = (frame, x, y, flow, visible=true))]
    fn insert_anchor<'py>(&mut self, py: Python<'py>, frame: usize, x: f64, y: f64, flow: &Flow, visible: bool) -> PyResult<Bound<'py, PyDict>> {
        let a = Anchor::correction(frame, Point2D::new(x, y)).with_visibility(visible);
        let s = self.0.insert_anchor(a, &flow.0).map_err(err)?;
        stats(py, &s)
    }

    fn remove_anchor<'py>(&mut self, py: Python<'py>, frame: usize, flow: &Flow) -> PyResult<Bound<'py, PyDict>> {
        let s = self.0.remove_anchor(frame, &flow.0).map_err(err)?;
        stats(py, &s)
    }

    fn set_visibility(&mut self, frame: usize, visible: bool) -> PyResult<()> {
        self.0.set_visibility(frame, visible).map_err(err)
    }

    fn click_count(&self) -> usize {
        self.0.click_count()
    }
}

fn stats<'py>(py: Python<'py>, s: &engine::RebuildStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("elapsed_ms", s.elapsed_ms)?;
    d.set_item("frames_touched", s.frames_touched)?;
    d.set_item("first_frame", s.first_frame)?;
    d.set_item("last_frame", s.last_frame)?;
    Ok(d)
}

fn report<'py>(py: Python<'py>, r: &metrics::APPReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("thresholds", r.thresholds.clone())?;
    d.set_item("per_threshold", r.per_threshold.clone())?;
    d.set_item("app", r.app)?;
    d.set_item("scored_frames", r.scored_frames)?;
    Ok(d)
}

/// Average point precision of `pred` against `reference` over frames where
/// `visible` holds.
#[pyfunction]
#[pyo3(signature = (pred, reference, visible, thresholds=None))]
fn app<'py>(
    py: Python<'py>,
    pred: Vec<(f64, f64)>,
    reference: Vec<(f64, f64)>,
    visible: Vec<bool>,
    thresholds: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = match thresholds {
        Some(t) => APPConfig::new(t).map_err(err)?,
        None => APPConfig::default(),
    };
    let r = metrics::app(&points(&pred), &points(&reference), &visible, &cfg).map_err(err)?;
    report(py, &r)
}

/// Rebuilds a trajectory from `(frame, x, y)` anchors with the given strategy.
#[pyfunction]
#[pyo3(signature = (flow, anchors, strategy="flow_blend"))]
fn rebuild(flow: &Flow, anchors: Vec<(usize, f64, f64)>, strategy: &str) -> PyResult<Vec<(f64, f64)>> {
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let anchors: Vec<Anchor> = anchors
        .iter()
        .enumerate()
        .map(|(i, &(t, x, y))| {
            if i == 0 {
                Anchor::seed(t, Point2D::new(x, y))
            } else {
                Anchor::correction(t, Point2D::new(x, y))
            }
        })
        .collect();
    let pts = engine::rebuild_with(strategy, &flow.0, &anchors, &Default::default()).map_err(err)?;
    Ok(pairs(&pts))
}

/// Renders a synthetic video. Returns `(video, reference_tracks, truth_flow)`.
#[pyfunction]
#[pyo3(signature = (preset, frames, size, seed=0, noise=0.01, blobs=8))]
fn synth(preset: &str, frames: usize, size: usize, seed: u64, noise: f64, blobs: usize) -> PyResult<(Video, Vec<Track>, Flow)> {
    let mut cfg = SynthConfig::new(preset.parse::<Preset>().map_err(err)?, frames, size);
    cfg.seed = seed;
    cfg.noise = noise;
    cfg.blobs = blobs;
    let scene = Scene::new(cfg).map_err(err)?;
    let video = scene.render().map_err(err)?;
    let tracks = scene.reference_tracks().into_iter().map(Track).collect();
    Ok((Video(Arc::new(video)), tracks, Flow(Arc::new(scene.truth_flow()))))
}

/// Scaling curve as a list of `(k, app_mean, app_min, app_max)`.
#[pyfunction]
#[pyo3(signature = (flow, reference, strategy="flow_blend", trials=100, rng_seed=0))]
fn scaling_curve(flow: &Flow, reference: &Track, strategy: &str, trials: usize, rng_seed: u64) -> PyResult<Vec<(usize, f64, f64, f64)>> {
    let cfg = ScalingConfig {
        trials,
        strategy: strategy.parse().map_err(err)?,
        rng_seed,
        ..ScalingConfig::default()
    };
    let c = experiments::scaling_curve(&flow.0, &reference.0, &cfg).map_err(err)?;
    Ok(c.rows.iter().map(|r| (r.k, r.app_mean, r.app_min, r.app_max)).collect())
}

/// Click counts to rebuild `gt` from tracker fragments given as JSON.
#[pyfunction]
#[pyo3(signature = (gt, fragments_json, tolerance=5.0))]
fn intervention_cost<'py>(py: Python<'py>, gt: &Track, fragments_json: &str, tolerance: f64) -> PyResult<Bound<'py, PyDict>> {
    let set = FragmentSet::from_json(fragments_json).map_err(err)?;
    let c = intervention_cost_points(gt.0.points(), gt.0.visibility(), &set, tolerance).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("init_pick", c.init_pick)?;
    d.set_item("relink", c.relink)?;
    d.set_item("manual", c.manual)?;
    d.set_item("total", c.total)?;
    Ok(d)
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    sparsetrack::cli::run(std::iter::once("sparsetrack".to_string()).chain(args))
}

#[pymodule]
fn sparsetrack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Video>()?;
    m.add_class::<Flow>()?;
    m.add_class::<Track>()?;
    m.add_function(wrap_pyfunction!(app, m)?)?;
    m.add_function(wrap_pyfunction!(rebuild, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_curve, m)?)?;
    m.add_function(wrap_pyfunction!(intervention_cost, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("DEFAULT_PORT", sparsetrack::server::DEFAULT_PORT)?;
    Ok(())
}
