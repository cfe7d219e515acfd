//! Command-line entry points.

use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::experiments::intervention::intervention_cost;
use crate::experiments::{
    match_tracks, replacement_study, scaling_csv, scaling_curve, FragmentSet, InterventionCount, ScalingConfig,
};
use crate::flow::{compute_flow, read_flow_cache, write_flow_cache, FlowBackend, FlowConfig, FlowVolume};
use crate::metrics::{app, dataset_app, format_percent, joint_visibility, reports_to_csv, APPConfig, NamedReport};
use crate::readout::{dff, sample_intensity, trace_csv, zscore, SampleMode};
use crate::synth::{Preset, Scene, SynthConfig};
use crate::track::corridor::CorridorConfig;
use crate::track::io::{read_tracks, write_tracks, TrackMeta, TrackRecord};
use crate::track::{rebuild_with, Strategy, Track};
use crate::video::{load_sequence_with, rescale_points, rescale_sequence, write_tiff_stack, LoadOptions, SourceKind, VideoSequence};

#[derive(Parser, Debug)]
#[command(name = "sparsetrack", version, about = "Point tracking from sparse corrections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute dense flow for a video and write the binary cache.
    Flow(FlowCmd),
    /// Build full tracks from seed/anchor JSON.
    Track(TrackCmd),
    /// Score predicted tracks against references.
    Eval(EvalCmd),
    /// APP as a function of the number of corrections (CSV).
    Scaling(ScalingCmd),
    /// Re-score annotated tracks with anchor coordinates replaced by the reference's.
    Replace(ReplaceCmd),
    /// Count clicks needed to rebuild reference tracks from tracker fragments.
    Cost(CostCmd),
    /// Resample a video and its tracks to a new size.
    Rescale(RescaleCmd),
    /// Sample intensities along a track (CSV).
    Readout(ReadoutCmd),
    /// Generate a synthetic video with reference tracks.
    Synth(SynthCmd),
    /// Run the JSON-lines server.
    Serve(ServeCmd),
}

#[derive(Args, Debug, Clone)]
pub struct VideoArgs {
    /// TIFF stack or directory of frames.
    #[arg(long)]
    pub video: Option<PathBuf>,
    /// tiff_stack or image_dir (default: inferred from the path).
    #[arg(long)]
    pub kind: Option<SourceKind>,
    /// Use one channel of multi-channel input instead of the channel mean.
    #[arg(long)]
    pub channel: Option<usize>,
}

impl VideoArgs {
    fn load(&self) -> Result<VideoSequence> {
        let path = self.video.as_ref().ok_or_else(|| anyhow!("missing input: --video"))?;
        load_video(path, self.kind, self.channel)
    }
}

fn load_video(path: &Path, kind: Option<SourceKind>, channel: Option<usize>) -> Result<VideoSequence> {
    let kind = kind.unwrap_or(if path.is_dir() { SourceKind::ImageDir } else { SourceKind::TiffStack });
    load_sequence_with(path, kind, LoadOptions { channel }).with_context(|| format!("video {}", path.display()))
}

#[derive(Args, Debug, Clone)]
pub struct FlowOpts {
    /// dis or block_match.
    #[arg(long, default_value = "dis")]
    pub backend: FlowBackend,
    #[arg(long, default_value_t = 8)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub patch_stride: usize,
    /// Pyramid levels (default: from the frame size).
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, default_value_t = 12)]
    pub iters: usize,
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long, default_value_t = 5)]
    pub refine_iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub smoothness: f32,
    /// Block-match search radius in pixels.
    #[arg(long, default_value_t = 4)]
    pub search_radius: usize,
    /// Equalize histograms before estimating flow.
    #[arg(long)]
    pub equalize: bool,
}

impl FlowOpts {
    fn config(&self) -> FlowConfig {
        FlowConfig {
            backend: self.backend,
            patch_size: self.patch_size,
            patch_stride: self.patch_stride,
            pyramid_levels: self.levels,
            gradient_descent_iters: self.iters,
            refinement: !self.no_refine,
            refinement_iters: self.refine_iters,
            refinement_smoothness: self.smoothness,
            search_radius: self.search_radius,
            equalize: self.equalize,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct FlowSource {
    /// Flow cache; computed from --video and written here when missing.
    #[arg(long)]
    pub flow: Option<PathBuf>,
    #[command(flatten)]
    pub video: VideoArgs,
    #[command(flatten)]
    pub opts: FlowOpts,
}

impl FlowSource {
    fn load(&self) -> Result<FlowVolume> {
        if let Some(path) = self.flow.as_ref().filter(|p| p.exists()) {
            return read_flow_cache(path).with_context(|| format!("flow cache {}", path.display()));
        }
        if self.video.video.is_none() {
            return Err(match &self.flow {
                Some(p) => anyhow!("missing input: flow cache {} not found and no --video given", p.display()),
                None => anyhow!("missing input: need --flow or --video"),
            });
        }
        let video = self.video.load()?;
        let cfg = self.opts.config();
        cfg.validate()?;
        let flow = compute_flow(&video, &cfg)?;
        if let Some(path) = &self.flow {
            write_flow_cache(&flow, path).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(flow)
    }
}

#[derive(Args, Debug)]
pub struct FlowCmd {
    #[command(flatten)]
    pub video: VideoArgs,
    #[command(flatten)]
    pub opts: FlowOpts,
    /// Output cache path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrackCmd {
    /// Track JSON holding at least `id` and `anchors` per track.
    #[arg(long)]
    pub anchors: PathBuf,
    #[command(flatten)]
    pub source: FlowSource,
    /// flow_blend, linear or corridor_dp.
    #[arg(long, default_value = "flow_blend")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 16.0)]
    pub corridor_radius: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lattice_step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Comma-separated pixel thresholds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub thresholds: Vec<f64>,
    /// Write the JSON report here (default: stdout).
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScalingCmd {
    #[command(flatten)]
    pub source: FlowSource,
    /// Reference tracks with full point lists.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Only this track id.
    #[arg(long)]
    pub track: Option<String>,
    #[arg(long, default_value = "flow_blend")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long = "rng-seed", default_value_t = 0)]
    pub rng_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 16.0)]
    pub corridor_radius: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lattice_step: f64,
    /// Also report the fewest corrections reaching this APP.
    #[arg(long)]
    pub target: Option<f64>,
    /// CSV output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplaceCmd {
    #[command(flatten)]
    pub source: FlowSource,
    /// Tracks whose anchor frames are kept.
    #[arg(long)]
    pub annotated: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CostCmd {
    /// Ground-truth tracks.
    #[arg(long)]
    pub gt: PathBuf,
    /// Fragment JSON, or TrackMate XML when the name ends in .xml.
    #[arg(long)]
    pub fragments: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub tolerance: f64,
    /// Image size for rescaling uncalibrated fragment coordinates.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Annotated tracks; their anchors give the comparison click count.
    #[arg(long)]
    pub annotated: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RescaleCmd {
    #[command(flatten)]
    pub video: VideoArgs,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    /// Output TIFF stack.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    #[arg(long)]
    pub tracks_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReadoutCmd {
    #[command(flatten)]
    pub video: VideoArgs,
    #[arg(long)]
    pub tracks: PathBuf,
    /// Track id (default: the first track in the file).
    #[arg(long)]
    pub track: Option<String>,
    /// nearest or bilinear.
    #[arg(long, default_value = "nearest")]
    pub mode: SampleMode,
    #[arg(long, default_value_t = 11)]
    pub baseline: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthCmd {
    /// static, translate, sinusoid or deform.
    #[arg(long)]
    pub preset: Preset,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub blobs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the exact flow as truth.rplf.
    #[arg(long)]
    pub truth_flow: bool,
    /// Output directory (video.tif, reference.json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeCmd {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = crate::server::DEFAULT_PORT)]
    pub port: u16,
}

/// Parses `argv`, runs the command and returns the process exit code:
/// 0 on success, 1 on usage errors, 2 on data errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(argv.get(1)));
            }
            return 1;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn usage_for(sub: Option<&std::ffi::OsString>) -> String {
    use clap::CommandFactory;
    let mut cmd = Cli::command();
    cmd.build();
    let name = sub.and_then(|s| s.to_str()).unwrap_or("");
    match cmd.find_subcommand_mut(name) {
        Some(c) => c.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn read_records(path: &Path) -> Result<Vec<TrackRecord>> {
    read_tracks(path).with_context(|| format!("tracks {}", path.display()))
}

fn read_full_tracks(path: &Path) -> Result<Vec<Track>> {
    read_records(path)?
        .iter()
        .map(|r| {
            r.to_track()
                .with_context(|| format!("{}: track {:?} field points", path.display(), r.id))
        })
        .collect()
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn pair_by_id<'a>(a: &'a [Track], b: &'a [Track], what: &str) -> Result<Vec<(&'a Track, &'a Track)>> {
    if a.len() == 1 && b.len() == 1 {
        return Ok(vec![(&a[0], &b[0])]);
    }
    a.iter()
        .map(|x| {
            b.iter()
                .find(|y| y.id == x.id)
                .map(|y| (x, y))
                .ok_or_else(|| anyhow!("{what}: no reference track with id {:?}", x.id))
        })
        .collect()
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Flow(c) => {
            let video = c.video.load()?;
            let cfg = c.opts.config();
            cfg.validate()?;
            let start = std::time::Instant::now();
            let flow = compute_flow(&video, &cfg)?;
            write_flow_cache(&flow, &c.out).with_context(|| format!("writing {}", c.out.display()))?;
            eprintln!(
                "flow: {} fields of {}x{} in {:.1}s -> {}",
                flow.fields().len(),
                flow.width(),
                flow.height(),
                start.elapsed().as_secs_f64(),
                c.out.display()
            );
            Ok(())
        }
        Command::Track(c) => {
            let records = read_records(&c.anchors)?;
            let flow = c.source.load()?;
            let corridor = CorridorConfig {
                corridor_radius: c.corridor_radius,
                lattice_step: c.lattice_step,
            };
            let source = c
                .source
                .video
                .video
                .as_ref()
                .or(c.source.flow.as_ref())
                .map(|p| p.display().to_string())
                .unwrap_or_default();
            let meta = TrackMeta::new(source, flow.width(), flow.height(), flow.frames());
            let mut out = Vec::with_capacity(records.len());
            for r in &records {
                let anchors = r.anchors();
                let ctx = || format!("{}: track {:?} field anchors", c.anchors.display(), r.id);
                let points = rebuild_with(c.strategy, &flow, &anchors, &corridor).with_context(ctx)?;
                let mut track = Track::from_anchors(r.id.clone(), anchors, &flow).with_context(ctx)?;
                track.label = r.label.clone();
                let track = Track::from_parts(track.id.clone(), track.label.clone(), track.anchors().to_vec(), points, track.visibility().to_vec())?;
                out.push(TrackRecord::from_track(&track, meta.clone()));
            }
            write_tracks(&c.out, &out).with_context(|| format!("writing {}", c.out.display()))
        }
        Command::Eval(c) => {
            let cfg = APPConfig::new(c.thresholds.clone())?;
            let pred = read_full_tracks(&c.pred)?;
            let reference = read_full_tracks(&c.reference)?;
            let mut rows = Vec::new();
            for (p, r) in pair_by_id(&pred, &reference, &c.pred.display().to_string())? {
                let vis = joint_visibility(p.visibility(), r.visibility());
                let report = app(p.points(), r.points(), &vis, &cfg).with_context(|| format!("track {:?}", p.id))?;
                rows.push(NamedReport { id: p.id.clone(), report });
            }
            let reports: Vec<_> = rows.iter().map(|r| r.report.clone()).collect();
            let overall = dataset_app(&reports)?;
            for r in &rows {
                eprintln!("{}: APP {}%", r.id, format_percent(r.report.app));
            }
            eprintln!("dataset APP {}% over {} tracks", format_percent(overall), rows.len());
            let json = to_json(&serde_json::json!({"tracks": rows, "dataset_app": overall}));
            write_out(c.json.as_ref(), &json)?;
            if let Some(p) = &c.csv {
                write_out(Some(p), &reports_to_csv(&rows))?;
            }
            Ok(())
        }
        Command::Scaling(c) => {
            let flow = c.source.load()?;
            let mut refs = read_full_tracks(&c.reference)?;
            if let Some(id) = &c.track {
                refs.retain(|t| &t.id == id);
                if refs.is_empty() {
                    bail!("{}: no track with id {id:?}", c.reference.display());
                }
            }
            let cfg = ScalingConfig {
                trials: c.trials,
                strategy: c.strategy,
                rng_seed: c.rng_seed,
                app: APPConfig::new(c.thresholds.clone())?,
                corridor: CorridorConfig {
                    corridor_radius: c.corridor_radius,
                    lattice_step: c.lattice_step,
                },
            };
            let curves = refs
                .iter()
                .map(|r| scaling_curve(&flow, r, &cfg).with_context(|| format!("{}: track {:?}", c.reference.display(), r.id)))
                .collect::<Result<Vec<_>>>()?;
            if let Some(target) = c.target {
                if !(target > 0.0 && target <= 1.0) {
                    bail!("--target {target} must lie in (0, 1]");
                }
                for curve in &curves {
                    let k = curve.first_reaching(target).expect("full anchoring reaches any target");
                    eprintln!("{}: {} corrections reach APP {}%", curve.track_id, k, format_percent(target));
                }
            }
            write_out(c.out.as_ref(), &scaling_csv(&curves))
        }
        Command::Replace(c) => {
            let flow = c.source.load()?;
            let annotated = read_records(&c.annotated)?;
            let reference = read_full_tracks(&c.reference)?;
            let annotated: Vec<Track> = annotated
                .iter()
                .map(|r| Track::from_anchors(r.id.clone(), r.anchors(), &flow).with_context(|| format!("{}: track {:?}", c.annotated.display(), r.id)))
                .collect::<Result<_>>()?;
            let mut results = Vec::new();
            for (a, r) in pair_by_id(&annotated, &reference, &c.annotated.display().to_string())? {
                let res = replacement_study(&flow, a, r, &APPConfig::default())?;
                eprintln!(
                    "{}: APP {}% -> {}%",
                    res.track_id,
                    format_percent(res.before.app),
                    format_percent(res.after.app)
                );
                results.push(res);
            }
            write_out(c.out.as_ref(), &to_json(&results))
        }
        Command::Cost(c) => {
            let gt = read_full_tracks(&c.gt)?;
            let text = std::fs::read_to_string(&c.fragments).with_context(|| format!("fragments {}", c.fragments.display()))?;
            let is_xml = c.fragments.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml"));
            let (mut frags, calibrated) = if is_xml {
                FragmentSet::from_trackmate_xml(&text)
            } else {
                FragmentSet::from_json(&text).map(|f| (f, false))
            }
            .with_context(|| format!("fragments {}", c.fragments.display()))?;
            let mut scale = None;
            if !calibrated {
                if let (Some(w), Some(h)) = (c.width, c.height) {
                    scale = frags.calibrate_isotropic(w, h);
                }
            }
            let mut rows = Vec::new();
            let mut total = InterventionCount::default();
            for g in &gt {
                let count = intervention_cost(g, &frags, c.tolerance)?;
                total = total + count;
                rows.push(serde_json::json!({"id": g.id, "count": count}));
            }
            let mut report = serde_json::json!({"tolerance": c.tolerance, "scale": scale, "tracks": rows, "total": total});
            if let Some(path) = &c.annotated {
                let annotated: Vec<Track> = read_records(path)?
                    .iter()
                    .map(|r| r.to_track().with_context(|| format!("{}: track {:?} field points", path.display(), r.id)))
                    .collect::<Result<_>>()?;
                let pairing = match_tracks(&gt, &annotated);
                let clicks: usize = pairing.pairs.iter().map(|&(_, j, _)| annotated[j].click_count()).sum();
                let matched: InterventionCount = pairing
                    .pairs
                    .iter()
                    .map(|&(i, _, _)| intervention_cost(&gt[i], &frags, c.tolerance))
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter()
                    .fold(InterventionCount::default(), |a, b| a + b);
                let ratio = if clicks > 0 { Some(matched.total as f64 / clicks as f64) } else { None };
                report["matched"] = serde_json::json!({
                    "pairs": pairing.pairs,
                    "unmatched": pairing.unmatched,
                    "tracker": matched,
                    "annotated_clicks": clicks,
                    "ratio": ratio,
                });
                if let Some(r) = ratio {
                    eprintln!("tracker/annotated interventions: {r:.2}x ({} vs {clicks})", matched.total);
                }
            }
            eprintln!(
                "init_pick {} relink {} manual {} total {}",
                total.init_pick, total.relink, total.manual, total.total
            );
            write_out(c.out.as_ref(), &to_json(&report))
        }
        Command::Rescale(c) => {
            let video = c.video.load()?;
            let out = rescale_sequence(&video, c.width, c.height)?;
            write_tiff_stack(&out, &c.out).with_context(|| format!("writing {}", c.out.display()))?;
            if let Some(tp) = &c.tracks {
                let from = (video.width(), video.height());
                let to = (c.width, c.height);
                let mut records = read_records(tp)?;
                for r in &mut records {
                    for a in &mut r.anchors {
                        let p = rescale_points(&[crate::video::Point2D::new(a.x, a.y)], from, to)[0];
                        (a.x, a.y) = (p.x, p.y);
                    }
                    for q in &mut r.points {
                        let p = rescale_points(&[crate::video::Point2D::new(q.x, q.y)], from, to)[0];
                        (q.x, q.y) = (p.x, p.y);
                    }
                    r.meta.width = c.width;
                    r.meta.height = c.height;
                }
                let dest = c.tracks_out.clone().ok_or_else(|| anyhow!("--tracks needs --tracks-out"))?;
                write_tracks(&dest, &records).with_context(|| format!("writing {}", dest.display()))?;
            }
            Ok(())
        }
        Command::Readout(c) => {
            let video = c.video.load()?;
            let tracks = read_full_tracks(&c.tracks)?;
            let track = match &c.track {
                Some(id) => tracks.iter().find(|t| &t.id == id),
                None => tracks.first(),
            }
            .ok_or_else(|| anyhow!("{}: no matching track", c.tracks.display()))?;
            let trace = sample_intensity(&video, track, c.mode).with_context(|| format!("track {:?}", track.id))?;
            let d = dff(&trace.values, c.baseline).with_context(|| format!("track {:?} baseline", track.id))?;
            let z = zscore(&d).with_context(|| format!("track {:?}", track.id))?;
            write_out(c.out.as_ref(), &trace_csv(&trace.values, &d, &z))
        }
        Command::Synth(c) => {
            let mut cfg = SynthConfig::new(c.preset, c.frames, c.size);
            cfg.blobs = c.blobs;
            cfg.noise = c.noise;
            cfg.seed = c.seed;
            let scene = Scene::new(cfg)?;
            let video = scene.render()?;
            std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
            let vpath = c.out.join("video.tif");
            write_tiff_stack(&video, &vpath).with_context(|| format!("writing {}", vpath.display()))?;
            let meta = TrackMeta::new(vpath.display().to_string(), video.width(), video.height(), video.len());
            let records: Vec<TrackRecord> = scene
                .reference_tracks()
                .iter()
                .map(|t| TrackRecord::from_track(t, meta.clone()))
                .collect();
            write_tracks(&c.out.join("reference.json"), &records)?;
            if c.truth_flow {
                write_flow_cache(&scene.truth_flow(), &c.out.join("truth.rplf"))?;
            }
            eprintln!("synth: {} frames {}x{}, {} tracks -> {}", video.len(), video.width(), video.height(), records.len(), c.out.display());
            Ok(())
        }
        Command::Serve(c) => {
            let listener = TcpListener::bind((c.host.as_str(), c.port)).with_context(|| format!("binding {}:{}", c.host, c.port))?;
            let addr = listener.local_addr()?;
            println!("listening on {addr}");
            std::io::stdout().flush()?;
            crate::server::serve(listener)?;
            Ok(())
        }
    }
}
