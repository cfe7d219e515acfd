//! Synthetic benchmark videos with analytically known motion.
//!
//! A textured material plane (random cosine gratings, speckle and a few
//! bright Gaussian blobs) is moved by a displacement field `D(m, t)`: the
//! material point `m` sits at `m + D(m, t)` on frame `t`. The blob centers
//! give the reference trajectories; the exact forward flow is available too.

use std::f64::consts::TAU;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::flow::{FlowField, FlowVolume};
use crate::grid::Grid;
use crate::track::{Anchor, Track};
use crate::video::{Point2D, VideoError, VideoSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Static,
    Translate,
    Sinusoid,
    Deform,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Preset::Static),
            "translate" => Ok(Preset::Translate),
            "sinusoid" => Ok(Preset::Sinusoid),
            "deform" => Ok(Preset::Deform),
            _ => Err(format!("unknown preset {s:?} (static, translate, sinusoid, deform)")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    pub preset: Preset,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub blobs: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(preset: Preset, frames: usize, size: usize) -> Self {
        Self {
            preset,
            frames,
            width: size,
            height: size,
            blobs: 8,
            noise: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

#[derive(Debug, Clone, Copy)]
struct Spot {
    x: f64,
    y: f64,
    sigma: f64,
    amp: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cfg: SynthConfig,
    /// Blob centers in material coordinates (their frame-0 positions for
    /// every preset except `translate`, where frame 0 is also undisplaced).
    pub centers: Vec<Point2D>,
    waves: Vec<Wave>,
    spots: Vec<Spot>,
    amplitude: f64,
    period: f64,
    wavelength: f64,
    velocity: (f64, f64),
}

pub struct SynthOutput {
    pub scene: Scene,
    pub video: VideoSequence,
    pub tracks: Vec<Track>,
}

impl Scene {
    pub fn new(cfg: SynthConfig) -> Result<Self, VideoError> {
        if cfg.width < 16 || cfg.height < 16 {
            return Err(VideoError::BadSize(cfg.width, cfg.height));
        }
        if cfg.frames < 2 {
            return Err(VideoError::TooShort(cfg.frames));
        }
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let s = w.min(h);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let waves = (0..8)
            .map(|_| {
                let lambda = rng.gen_range(6.0..40.0);
                let dir: f64 = rng.gen_range(0.0..TAU);
                Wave {
                    kx: dir.cos() * TAU / lambda,
                    ky: dir.sin() * TAU / lambda,
                    phase: rng.gen_range(0.0..TAU),
                    amp: 0.035,
                }
            })
            .collect();
        let speed = (s / (4.0 * cfg.frames as f64)).min(1.0);
        let amplitude = match cfg.preset {
            Preset::Sinusoid => s / 12.0,
            Preset::Deform => s / 32.0,
            _ => 0.0,
        };
        let mut scene = Self {
            centers: Vec::new(),
            waves,
            spots: Vec::new(),
            amplitude,
            period: 48.0,
            wavelength: s / 2.0,
            velocity: (speed, 0.5 * speed),
            cfg,
        };
        let margin = scene.max_displacement() + 4.0;
        let (x0, y0, x1, y1) = (-margin, -margin, w - 1.0 + margin, h - 1.0 + margin);
        let n_spots = ((x1 - x0) * (y1 - y0) / 150.0) as usize;
        for _ in 0..n_spots {
            scene.spots.push(Spot {
                x: rng.gen_range(x0..x1),
                y: rng.gen_range(y0..y1),
                sigma: rng.gen_range(1.2..3.5),
                amp: rng.gen_range(-0.12..0.12),
            });
        }
        let inset = 0.2 * s;
        for _ in 0..scene.cfg.blobs {
            let c = Point2D::new(rng.gen_range(inset..w - 1.0 - inset), rng.gen_range(inset..h - 1.0 - inset));
            scene.centers.push(c);
            scene.spots.push(Spot {
                x: c.x,
                y: c.y,
                sigma: 2.5,
                amp: 0.4,
            });
        }
        Ok(scene)
    }

    fn max_displacement(&self) -> f64 {
        match self.cfg.preset {
            Preset::Static => 0.0,
            Preset::Translate => self.velocity.0.hypot(self.velocity.1) * self.cfg.frames as f64,
            Preset::Sinusoid => self.amplitude * 1.5,
            Preset::Deform => self.amplitude * std::f64::consts::SQRT_2,
        }
    }

    /// Displacement of material point `m` on frame `t`.
    pub fn displacement(&self, m: Point2D, t: f64) -> (f64, f64) {
        match self.cfg.preset {
            Preset::Static => (0.0, 0.0),
            Preset::Translate => (self.velocity.0 * t, self.velocity.1 * t),
            Preset::Sinusoid => {
                let ph = TAU * t / self.period;
                (self.amplitude * ph.sin(), 0.5 * self.amplitude * (1.0 - ph.cos()))
            }
            Preset::Deform => {
                let a = self.amplitude * (TAU * t / self.period).sin();
                (
                    a * (TAU * m.y / self.wavelength).sin(),
                    a * (TAU * m.x / self.wavelength).sin(),
                )
            }
        }
    }

    pub fn position(&self, m: Point2D, t: usize) -> Point2D {
        let (dx, dy) = self.displacement(m, t as f64);
        Point2D::new(m.x + dx, m.y + dy)
    }

    /// The material point shown at image position `q` on frame `t`.
    pub fn material_at(&self, q: Point2D, t: usize) -> Point2D {
        let t = t as f64;
        match self.cfg.preset {
            Preset::Deform => {
                let mut m = q;
                for _ in 0..40 {
                    let (dx, dy) = self.displacement(m, t);
                    let next = Point2D::new(q.x - dx, q.y - dy);
                    let done = (next.x - m.x).abs() + (next.y - m.y).abs() < 1e-10;
                    m = next;
                    if done {
                        break;
                    }
                }
                m
            }
            _ => {
                let (dx, dy) = self.displacement(q, t);
                Point2D::new(q.x - dx, q.y - dy)
            }
        }
    }

    /// Material texture sampled on an integer grid covering every point that
    /// can appear in a frame. Returns the grid and its origin.
    fn texture(&self) -> (Grid, f64, f64) {
        let margin = (self.max_displacement() + 4.0).ceil();
        let gw = self.cfg.width + 2 * margin as usize;
        let gh = self.cfg.height + 2 * margin as usize;
        let mut data = vec![0f32; gw * gh];
        data.par_chunks_mut(gw).enumerate().for_each(|(j, row)| {
            let my = j as f64 - margin;
            for (i, v) in row.iter_mut().enumerate() {
                let mx = i as f64 - margin;
                let s: f64 = self
                    .waves
                    .iter()
                    .map(|w| w.amp * (w.kx * mx + w.ky * my + w.phase).cos())
                    .sum();
                *v = (0.3 + s) as f32;
            }
        });
        for sp in &self.spots {
            let r = (4.0 * sp.sigma).ceil() as isize;
            let (ci, cj) = ((sp.x + margin).round() as isize, (sp.y + margin).round() as isize);
            for j in (cj - r).max(0)..(cj + r + 1).min(gh as isize) {
                for i in (ci - r).max(0)..(ci + r + 1).min(gw as isize) {
                    let dx = i as f64 - margin - sp.x;
                    let dy = j as f64 - margin - sp.y;
                    let g = sp.amp * (-(dx * dx + dy * dy) / (2.0 * sp.sigma * sp.sigma)).exp();
                    data[j as usize * gw + i as usize] += g as f32;
                }
            }
        }
        (Grid::from_vec(gw, gh, data), margin, margin)
    }

    pub fn render(&self) -> Result<VideoSequence, VideoError> {
        let (tex, ox, oy) = self.texture();
        let (w, h) = (self.cfg.width, self.cfg.height);
        let noise = Normal::new(0.0, self.cfg.noise.max(0.0)).expect("finite noise");
        let planes: Vec<Grid> = (0..self.cfg.frames)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                rng.set_stream(t as u64 + 1);
                Grid::from_fn(w, h, |x, y| {
                    let m = self.material_at(Point2D::new(x as f64, y as f64), t);
                    let mut v = tex.sample_bilinear(m.x + ox, m.y + oy);
                    if self.cfg.noise > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    v.clamp(0.0, 1.0) as f32
                })
            })
            .collect();
        VideoSequence::from_planes(planes, 8, format!("synth:{:?}", self.cfg.preset).to_lowercase())
    }

    /// One reference track per blob, seeded on frame 0. Frames where the
    /// center lies outside the image are marked invisible.
    pub fn reference_tracks(&self) -> Vec<Track> {
        let (w, h) = ((self.cfg.width - 1) as f64, (self.cfg.height - 1) as f64);
        self.centers
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let points: Vec<Point2D> = (0..self.cfg.frames).map(|t| self.position(c, t)).collect();
                let vis = points
                    .iter()
                    .map(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h)
                    .collect();
                let seed = Anchor::seed(0, points[0]);
                Track::from_parts(format!("blob{i}"), "reference", vec![seed], points, vis)
                    .expect("consistent reference track")
            })
            .collect()
    }

    /// Exact forward flow on the pixel grid of each frame.
    pub fn truth_flow(&self) -> FlowVolume {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let fields = (0..self.cfg.frames - 1)
            .into_par_iter()
            .map(|t| {
                let mut dx = Grid::new(w, h);
                let mut dy = Grid::new(w, h);
                for y in 0..h {
                    for x in 0..w {
                        let q = Point2D::new(x as f64, y as f64);
                        let p = self.position(self.material_at(q, t), t + 1);
                        dx.set(x, y, (p.x - q.x) as f32);
                        dy.set(x, y, (p.y - q.y) as f32);
                    }
                }
                FlowField { t, dx, dy }
            })
            .collect();
        FlowVolume::new(fields).expect("consistent flow fields")
    }
}

pub fn generate(cfg: SynthConfig) -> Result<SynthOutput, VideoError> {
    let scene = Scene::new(cfg)?;
    let video = scene.render()?;
    let tracks = scene.reference_tracks();
    Ok(SynthOutput { scene, video, tracks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_frames_match_up_to_noise() {
        let mut cfg = SynthConfig::new(Preset::Static, 3, 32);
        cfg.noise = 0.0;
        let out = generate(cfg).unwrap();
        assert_eq!(out.video.frame(0).pixels, out.video.frame(2).pixels);
        assert!(out.tracks.iter().all(|t| t.points().iter().all(|p| *p == t.points()[0])));
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig::new(Preset::Deform, 4, 40);
        let a = generate(cfg.clone()).unwrap();
        let b = generate(cfg).unwrap();
        assert_eq!(a.video.frames(), b.video.frames());
    }

    #[test]
    fn material_inverse_roundtrip() {
        for preset in [Preset::Translate, Preset::Sinusoid, Preset::Deform] {
            let scene = Scene::new(SynthConfig::new(preset, 30, 64)).unwrap();
            for t in [0, 7, 19] {
                let q = Point2D::new(13.25, 40.5);
                let p = scene.position(scene.material_at(q, t), t);
                assert!(p.distance(q) < 1e-8, "{preset:?} t={t}");
            }
        }
    }

    #[test]
    fn translate_truth_flow_is_constant() {
        let scene = Scene::new(SynthConfig::new(Preset::Translate, 5, 32)).unwrap();
        let f = scene.truth_flow();
        let (vx, vy) = scene.velocity;
        assert!(f.field(2).dx.data().iter().all(|&v| (v as f64 - vx).abs() < 1e-6));
        assert!(f.field(2).dy.data().iter().all(|&v| (v as f64 - vy).abs() < 1e-6));
    }

    #[test]
    fn blobs_are_bright_at_reference_positions() {
        let mut cfg = SynthConfig::new(Preset::Sinusoid, 20, 64);
        cfg.noise = 0.0;
        let out = generate(cfg).unwrap();
        let mean = out.video.frame(11).pixels.mean();
        for tr in &out.tracks {
            let p = tr.points()[11];
            let v = out.video.frame(11).pixels.sample_bilinear(p.x, p.y);
            assert!(v > mean + 0.2, "{v} vs {mean}");
        }
    }
}
