#![allow(dead_code)]

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsetrack::experiments::{FragmentSet, InterventionCount};
use sparsetrack::flow::{sample_flow, FlowField, FlowVolume};
use sparsetrack::grid::Grid;
use sparsetrack::track::corridor::CorridorConfig;
use sparsetrack::track::Anchor;
use sparsetrack::video::{Point2D, VideoSequence};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth random texture, evaluated at continuous coordinates.
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let waves = (0..12)
            .map(|_| {
                let k = r.gen_range(0.15..0.6);
                let th: f64 = r.gen_range(0.0..std::f64::consts::TAU);
                (k * th.cos(), k * th.sin(), r.gen_range(0.0..std::f64::consts::TAU), r.gen_range(0.02..0.06))
            })
            .collect();
        Self { waves }
    }

    pub fn at(&self, x: f64, y: f64) -> f32 {
        let s: f64 = self.waves.iter().map(|&(kx, ky, ph, a)| a * (kx * x + ky * y + ph).cos()).sum();
        (0.5 + s) as f32
    }
}

/// Two frames of `tex`, the second moved by `(dx, dy)`.
pub fn shifted_pair(tex: &Texture, w: usize, h: usize, dx: f64, dy: f64) -> VideoSequence {
    let a = Grid::from_fn(w, h, |x, y| tex.at(x as f64, y as f64));
    let b = Grid::from_fn(w, h, |x, y| tex.at(x as f64 - dx, y as f64 - dy));
    VideoSequence::from_planes(vec![a, b], 8, "mem").unwrap()
}

/// Uniform noise frame and its copy moved by an integer shift. Pixels that
/// come from outside the first frame get fresh noise.
pub fn noise_pair(seed: u64, w: usize, h: usize, dx: i64, dy: i64) -> VideoSequence {
    let mut r = rng(seed);
    let a = Grid::from_fn(w, h, |_, _| r.gen::<f32>());
    let mut r2 = rng(seed ^ 0x5eed);
    let b = Grid::from_fn(w, h, |x, y| {
        let (sx, sy) = (x as i64 - dx, y as i64 - dy);
        if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
            a.get(sx as usize, sy as usize)
        } else {
            r2.gen::<f32>()
        }
    });
    VideoSequence::from_planes(vec![a, b], 8, "mem").unwrap()
}

/// Random per-pixel flow in `[-amp, amp]`, optionally rounded to `quantum`.
pub fn random_flow(r: &mut impl Rng, frames: usize, w: usize, h: usize, amp: f32, quantum: Option<f32>) -> FlowVolume {
    let fields = (0..frames - 1)
        .map(|t| {
            let mut gen = || {
                let v = r.gen_range(-amp..=amp);
                match quantum {
                    Some(q) => (v / q).round() * q,
                    None => v,
                }
            };
            let dx = Grid::from_fn(w, h, |_, _| gen());
            let dy = Grid::from_fn(w, h, |_, _| gen());
            FlowField { t, dx, dy }
        })
        .collect();
    FlowVolume::new(fields).unwrap()
}

/// Per-frame recount of APP with inclusive thresholds.
pub fn naive_app(pred: &[Point2D], reference: &[Point2D], vis: &[bool], thresholds: &[f64]) -> f64 {
    let mut total = 0.0;
    for &tau in thresholds {
        let mut hits = 0usize;
        let mut seen = 0usize;
        for t in 0..pred.len() {
            if !vis[t] {
                continue;
            }
            seen += 1;
            let d = (pred[t].x - reference[t].x).hypot(pred[t].y - reference[t].y);
            if d <= tau {
                hits += 1;
            }
        }
        total += hits as f64 / seen as f64;
    }
    total / thresholds.len() as f64
}

fn snap(v: f64, s: f64) -> f64 {
    (v / s).round() * s
}

/// Candidate positions per frame, built independently of the library.
pub fn brute_lattice(left: &Anchor, right: &Anchor, cfg: &CorridorConfig) -> Vec<Vec<Point2D>> {
    let s = cfg.lattice_step;
    let n = (cfg.corridor_radius / s + 1e-9).floor() as i64;
    let len = right.frame - left.frame;
    let mut out = vec![vec![Point2D::new(snap(left.pos.x, s), snap(left.pos.y, s))]];
    for k in 1..len {
        let a = k as f64 / len as f64;
        let cx = snap((1.0 - a) * left.pos.x + a * right.pos.x, s);
        let cy = snap((1.0 - a) * left.pos.y + a * right.pos.y, s);
        let mut nodes = Vec::new();
        for i in -n..=n {
            for j in -n..=n {
                nodes.push(Point2D::new(cx + i as f64 * s, cy + j as f64 * s));
            }
        }
        out.push(nodes);
    }
    out.push(vec![Point2D::new(snap(right.pos.x, s), snap(right.pos.y, s))]);
    out
}

fn lex_path(a: &[Point2D], b: &[Point2D]) -> Ordering {
    for (p, q) in a.iter().zip(b) {
        let o = p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y));
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

/// Exhaustive depth-first search over every lattice path. Partial paths
/// whose cost already exceeds the best complete cost are cut, which never
/// drops an optimum because step costs are non-negative.
pub fn brute_corridor(flow: &FlowVolume, lattice: &[Vec<Point2D>], t0: usize) -> (f64, Vec<Point2D>) {
    struct S<'a> {
        flow: &'a FlowVolume,
        lattice: &'a [Vec<Point2D>],
        t0: usize,
        path: Vec<Point2D>,
        best: Option<(f64, Vec<Point2D>)>,
    }
    fn go(s: &mut S, k: usize, cost: f64) {
        if let Some((b, _)) = &s.best {
            if cost > *b {
                return;
            }
        }
        if k == s.lattice.len() {
            let better = match &s.best {
                None => true,
                Some((b, bp)) => cost < *b || (cost == *b && lex_path(&s.path, bp) == Ordering::Less),
            };
            if better {
                s.best = Some((cost, s.path.clone()));
            }
            return;
        }
        let u = *s.path.last().unwrap();
        let field = s.flow.field(s.t0 + k - 1);
        let (fx, fy) = sample_flow(field, u);
        let mut next: Vec<(f64, Point2D)> = s.lattice[k]
            .iter()
            .map(|&v| (cost + ((v.x - u.x) - fx).hypot((v.y - u.y) - fy), v))
            .collect();
        next.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (c, v) in next {
            s.path.push(v);
            go(s, k + 1, c);
            s.path.pop();
        }
    }
    let mut s = S {
        flow,
        lattice,
        t0,
        path: vec![lattice[0][0]],
        best: None,
    };
    go(&mut s, 1, 0.0);
    let (c, p) = s.best.unwrap();
    (c, p)
}

/// Click counting written as an explicit state machine.
pub fn reference_intervention(points: &[Point2D], vis: &[bool], set: &FragmentSet, tol: f64) -> InterventionCount {
    enum State {
        Undefined,
        Following(String),
    }
    let mut state = State::Undefined;
    let (mut pick, mut relink, mut manual) = (0, 0, 0);
    for t in 0..points.len() {
        if !vis[t] {
            continue;
        }
        let nearest = set
            .at(t)
            .iter()
            .map(|d| ((d.x - points[t].x).hypot(d.y - points[t].y), d))
            .filter(|(dist, _)| *dist < tol)
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        state = match (nearest, state) {
            (None, _) => {
                manual += 1;
                State::Undefined
            }
            (Some((_, d)), State::Undefined) => {
                pick += 1;
                State::Following(d.fragment.clone())
            }
            (Some((_, d)), State::Following(f)) => {
                if f != d.fragment {
                    relink += 1;
                }
                State::Following(d.fragment.clone())
            }
        };
    }
    InterventionCount {
        init_pick: pick,
        relink,
        manual,
        total: pick + relink + manual,
    }
}

/// First line of stdout of a `serve --port 0` child: `listening on ADDR`.
pub fn spawn_server() -> (std::process::Child, std::net::SocketAddr) {
    use std::io::BufRead;
    let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_sparsetrack"))
        .args(["serve", "--port", "0"])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .expect("spawn server");
    let mut line = String::new();
    std::io::BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").parse().unwrap();
    (child, addr)
}

/// Blocking JSON-lines client that skips pushed messages.
pub struct Client {
    reader: std::io::BufReader<std::net::TcpStream>,
    writer: std::net::TcpStream,
    next: u64,
}

impl Client {
    pub fn connect(addr: std::net::SocketAddr) -> Self {
        let s = std::net::TcpStream::connect(addr).unwrap();
        Self {
            writer: s.try_clone().unwrap(),
            reader: std::io::BufReader::new(s),
            next: 1,
        }
    }

    pub fn call(&mut self, op: &str, payload: serde_json::Value) -> serde_json::Value {
        use std::io::{BufRead, Write};
        let id = self.next;
        self.next += 1;
        let msg = serde_json::json!({"op": op, "request_id": id, "payload": payload});
        writeln!(self.writer, "{msg}").unwrap();
        loop {
            let mut line = String::new();
            self.reader.read_line(&mut line).unwrap();
            let v: serde_json::Value = serde_json::from_str(&line).unwrap();
            if v["request_id"] == id {
                return v;
            }
        }
    }

    /// Like `call`, panicking unless the reply is ok.
    pub fn ok(&mut self, op: &str, payload: serde_json::Value) -> serde_json::Value {
        let r = self.call(op, payload);
        assert_eq!(r["ok"], true, "{op} failed: {r}");
        r["result"].clone()
    }
}
