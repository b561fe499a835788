//! Command-line front end. Every subcommand reads and checks all of its
//! inputs before writing anything, so a failed run leaves no partial output.
//! File outputs depend only on inputs and seeds, never on the thread count.

mod config;
mod csv;

pub use config::{parse_refine_config, parse_tracker_config, ConfigError};
pub use csv::{pose_csv_string, read_pose_csv, write_pose_csv, CsvError, PoseRow, POSE_CSV_HEADER};

use std::fmt::{Display, Write as _};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::geometry::{geodesic_deg, BBox2, CameraIntrinsics, Pose};
use crate::metrics::{run_reset_protocol, SequenceReport};
use crate::onboarding::{build_template_set, default_template_camera, ObjectModel, OnboardingError, TemplateSet, DEFAULT_TEMPLATE_COUNT, DEFAULT_TEMPLATE_SIZE};
use crate::oracle::{
    default_source_camera, export_sequence, generate_sequence, load_recording, ExportOptions, OracleF2f, OracleM2f, OracleSequence,
    Recording, SceneSpec,
};
use crate::refine::{select_best, FlowProvider, RefineConfig, RefineError, RefineOutcome, Refiner};
use crate::tracking::{FrameDecision, FrameFlowProvider, Tracker, TrackerConfig, TrackingError};

pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

const GT_FILE: &str = "gt.csv";

#[derive(Debug, Error)]
pub enum CliError {
    /// Missing, unreadable or malformed input, or an invalid setting.
    #[error("{0}")]
    BadInput(String),
    /// Valid input on which the algorithm failed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadInput(_) => EXIT_BAD_INPUT,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

fn bad(e: impl Display) -> CliError {
    CliError::BadInput(e.to_string())
}

fn failed(e: impl Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "flowpose", version, about = "Flow-based 6DoF object pose refinement and tracking")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "FLOWPOSE_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Replaces the seed of the config file or scene spec.
    #[arg(long, global = true, env = "FLOWPOSE_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-render a template set for offline refinement.
    Onboard(OnboardArgs),
    /// Refine one or more pose hypotheses on a single frame.
    Refine(RefineArgs),
    /// Track an object through a sequence.
    Track(TrackArgs),
    /// Generate a synthetic sequence and export it for replay.
    Simulate(SimulateArgs),
    /// Score estimated poses against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct OnboardArgs {
    /// Model file (`MODEL` point-list format).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TEMPLATE_COUNT)]
    pub n: usize,
    /// Template side, px.
    #[arg(long, default_value_t = DEFAULT_TEMPLATE_SIZE)]
    pub size: u32,
    /// Render distance, mm; default 2.5 model diameters.
    #[arg(long)]
    pub distance: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Scene spec; flow comes from the synthetic oracle.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Directory written by `simulate`; flow is replayed from its files.
    #[arg(long)]
    pub recording: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Pose CSV with one row per hypothesis.
    #[arg(long)]
    pub init: PathBuf,
    /// Template set from `onboard`; switches to offline templates and sets
    /// the crop size to the template size.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// `key = value` refinement settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pose CSV, one row per hypothesis.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration log, tab-separated, ending with the selected index.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Pose CSV whose first row initializes frame 0; default ground truth.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// `key = value` tracker settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of frames; default all.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Restart from ground truth after every frame outside 5 cm / 5 degrees.
    #[arg(long)]
    pub reset: bool,
    /// Pose CSV, one row per frame.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame decision log, tab-separated.
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Rotation offset of recorded templates from the true pose, degrees.
    #[arg(long, default_value_t = 5.0)]
    pub template_rot_deg: f64,
    /// Translation offset of recorded templates from the true pose, mm.
    #[arg(long, default_value_t = 5.0)]
    pub template_trans_mm: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimated poses.
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth poses; rows match by scene, image and object id.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// `fx fy cx cy width height`; default the synthetic source camera.
    #[arg(long)]
    pub camera: Option<String>,
    /// Report file; default standard output only.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command line on a pool of `cli.threads` workers and
/// returns the summary for standard output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| bad(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Onboard(a) => cmd_onboard(a),
        Command::Refine(a) => cmd_refine(a, cli.seed),
        Command::Track(a) => cmd_track(a, cli.seed),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Eval(a) => cmd_eval(a),
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn read_rows(path: &Path) -> Result<Vec<PoseRow>, CliError> {
    let f = File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    read_pose_csv(BufReader::new(f)).map_err(|e| bad(format!("{}: {e}", path.display())))
}

/// The directory that will hold `path` must already exist.
fn check_output(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(bad(format!("{}: directory does not exist", p.display()))),
        _ => Ok(()),
    }
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ObjectModel, CliError> {
    ObjectModel::load(path).map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn onboarding_error(e: OnboardingError) -> CliError {
    match e {
        OnboardingError::EmptyRender | OnboardingError::EmptyTemplateSet => failed(e),
        other => bad(other),
    }
}

pub fn cmd_onboard(a: &OnboardArgs) -> Result<String, CliError> {
    check_output(&a.out)?;
    let model = load_model(&a.model)?;
    if a.size < 2 {
        return Err(bad("template size must be >= 2"));
    }
    let set = build_template_set(&model, a.n, &default_template_camera(a.size), a.distance).map_err(onboarding_error)?;
    set.save(&a.out).map_err(|e| bad(format!("{}: {e}", a.out.display())))?;
    Ok(format!("templates\t{}\nspacing_deg\t{}\n", set.len(), set.angular_spacing_deg()))
}

enum Source {
    Scene(Box<OracleSequence>),
    Recording(Box<Recording>),
}

impl Source {
    fn load(a: &SourceArgs) -> Result<Self, CliError> {
        match (&a.scene, &a.recording) {
            (Some(p), None) => {
                let spec = SceneSpec::parse(&read_text(p)?).map_err(|e| bad(format!("{}: {e}", p.display())))?;
                Ok(Source::Scene(Box::new(generate_sequence(&spec).map_err(bad)?)))
            }
            (None, Some(d)) => Ok(Source::Recording(Box::new(
                load_recording(d).map_err(|e| bad(format!("{}: {e}", d.display())))?,
            ))),
            _ => Err(bad("give exactly one of --scene and --recording")),
        }
    }

    fn model(&self) -> &ObjectModel {
        match self {
            Source::Scene(s) => &s.model,
            Source::Recording(r) => &r.model,
        }
    }

    fn camera(&self) -> CameraIntrinsics {
        match self {
            Source::Scene(s) => s.camera,
            Source::Recording(r) => r.spec.camera,
        }
    }

    fn gt(&self) -> Vec<Pose> {
        match self {
            Source::Scene(s) => s.gt_poses(),
            Source::Recording(r) => r.gt_poses.clone(),
        }
    }
}

fn oracle_m2f(seq: &OracleSequence) -> OracleM2f<'_> {
    OracleM2f {
        sequence: seq,
        noise: seq.spec.noise,
        seed: seq.spec.seed,
    }
}

fn oracle_f2f(seq: &OracleSequence) -> OracleF2f<'_> {
    OracleF2f {
        sequence: seq,
        noise: seq.spec.noise,
        seed: seq.spec.seed,
    }
}

fn pose_errors(est: &Pose, gt: &Pose) -> (f64, f64) {
    (geodesic_deg(&est.rotation, &gt.rotation), (est.translation - gt.translation).norm())
}

fn refine_all<P: FlowProvider>(
    model: &ObjectModel,
    provider: P,
    cfg: RefineConfig,
    templates: Option<&TemplateSet>,
    hypotheses: &[(Pose, Option<BBox2>)],
    camera: &CameraIntrinsics,
    frame: usize,
) -> Vec<Result<RefineOutcome, RefineError>> {
    let mut refiner = Refiner::new(model, provider, cfg);
    if let Some(t) = templates {
        refiner = refiner.with_templates(t);
    }
    refiner.refine_hypotheses(hypotheses, camera, frame)
}

pub fn cmd_refine(a: &RefineArgs, seed: Option<u64>) -> Result<String, CliError> {
    check_output(&a.out)?;
    if let Some(l) = &a.log {
        check_output(l)?;
    }
    let inits = read_rows(&a.init)?;
    if inits.is_empty() {
        return Err(bad(format!("{}: no hypotheses", a.init.display())));
    }
    let mut cfg = match &a.config {
        Some(p) => parse_refine_config(&read_text(p)?).map_err(|e| bad(format!("{}: {e}", p.display())))?,
        None => RefineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let templates = match &a.templates {
        Some(d) => {
            cfg.online_rendering = false;
            let set = TemplateSet::load(d).map_err(|e| bad(format!("{}: {e}", d.display())))?;
            // Crops must match the pre-rendered template size.
            if let Some(t) = set.templates().first() {
                cfg.crop_size = t.width();
            }
            Some(set)
        }
        None if !cfg.online_rendering => return Err(bad("offline rendering needs --templates")),
        None => None,
    };
    let source = Source::load(&a.source)?;
    let gt = source.gt();
    if a.frame >= gt.len() {
        return Err(bad(format!("frame {} out of range 0..{}", a.frame, gt.len())));
    }
    let camera = source.camera();
    let hypotheses: Vec<(Pose, Option<BBox2>)> = inits.iter().map(|r| (r.pose, None)).collect();
    let results = match &source {
        Source::Scene(s) => refine_all(&s.model, oracle_m2f(s), cfg, templates.as_ref(), &hypotheses, &camera, a.frame),
        Source::Recording(r) => refine_all(&r.model, r.m2f.clone(), cfg, templates.as_ref(), &hypotheses, &camera, a.frame),
    };

    let mut outcomes = Vec::new();
    let mut outcome_index = Vec::new();
    let mut first_failure = None;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(o) => {
                outcomes.push(o.clone());
                outcome_index.push(i);
            }
            Err(e @ (RefineError::InvalidConfig(_) | RefineError::TemplateSizeMismatch { .. })) => return Err(bad(e)),
            Err(e) => {
                first_failure.get_or_insert_with(|| format!("hypothesis {i}: {e}"));
            }
        }
    }
    if outcomes.is_empty() {
        return Err(failed(first_failure.unwrap_or_else(|| "no hypotheses".into())));
    }
    let selected = outcome_index[select_best(&outcomes).map_err(failed)?];

    let frame_gt = gt[a.frame];
    let mut rows = Vec::with_capacity(inits.len());
    let mut log = String::from("hypothesis\titeration\tquality\tinliers\tcorrespondences\trot_deg_err\ttrans_mm_err\n");
    for (i, (init, r)) in inits.iter().zip(&results).enumerate() {
        let (pose, score) = match r {
            Ok(o) => {
                for (k, it) in o.per_iteration.iter().enumerate() {
                    let (re, te) = pose_errors(&it.pose, &frame_gt);
                    let _ = writeln!(log, "{i}\t{k}\t{}\t{}\t{}\t{re}\t{te}", it.quality, it.inlier_count, it.correspondence_count);
                }
                (o.pose, o.quality)
            }
            Err(e) => {
                let _ = writeln!(log, "{i}\tfailed\t{e}");
                (init.pose, 0.0)
            }
        };
        rows.push(PoseRow {
            im_id: a.frame as u32,
            score,
            pose,
            time: -1.0,
            ..*init
        });
    }
    let _ = writeln!(log, "selected\t{selected}");

    write_output(&a.out, &pose_csv_string(&rows))?;
    if let Some(l) = &a.log {
        write_output(l, &log)?;
    }
    let (re, te) = pose_errors(&rows[selected].pose, &frame_gt);
    Ok(format!(
        "hypotheses\t{}\nfailed\t{}\nselected\t{selected}\nquality\t{}\nrot_deg_err\t{re}\ntrans_mm_err\t{te}\n",
        rows.len(),
        rows.len() - outcomes.len(),
        rows[selected].score
    ))
}

fn tracking_error(e: TrackingError) -> CliError {
    match e {
        TrackingError::InvalidConfig(_) | TrackingError::EmptySequence => bad(e),
        other => failed(other),
    }
}

struct TrackRun {
    decisions: Vec<FrameDecision>,
    report: SequenceReport,
    terminal_loss_at: Option<usize>,
}

/// Tracks `0..gt.len()`; with `reset`, restarts from ground truth after
/// every failed frame and keeps the restarted decisions.
#[allow(clippy::too_many_arguments)]
fn track_all<M: FlowProvider, F: FrameFlowProvider>(
    model: &ObjectModel,
    m2f: M,
    f2f: F,
    camera: CameraIntrinsics,
    cfg: TrackerConfig,
    initial: &Pose,
    gt: &[Pose],
    reset: bool,
) -> Result<TrackRun, CliError> {
    let n = gt.len();
    let tracker = Tracker::new(model, m2f, f2f, camera, cfg).map_err(tracking_error)?;
    let first = tracker.track_sequence(initial, n).map_err(tracking_error)?;
    let mut decisions = first.decisions;
    let mut terminal_loss_at = first.terminal_loss_at;
    let estimates: Vec<Pose> = decisions.iter().map(|d| d.pose).collect();
    let mut failure = None;
    let report = run_reset_protocol(&estimates, gt, model, &camera, |k, g, rest| {
        if !reset || failure.is_some() {
            return;
        }
        match tracker.track_range(g, k, n) {
            Ok(r) => {
                for (slot, d) in rest.iter_mut().zip(&r.decisions) {
                    *slot = d.pose;
                }
                decisions.truncate(k);
                decisions.extend(r.decisions);
                terminal_loss_at = r.terminal_loss_at;
            }
            Err(e) => failure = Some(e),
        }
    })
    .map_err(failed)?;
    if let Some(e) = failure {
        return Err(tracking_error(e));
    }
    Ok(TrackRun {
        decisions,
        report,
        terminal_loss_at,
    })
}

pub fn cmd_track(a: &TrackArgs, seed: Option<u64>) -> Result<String, CliError> {
    check_output(&a.out)?;
    check_output(&a.log)?;
    let init = match &a.init {
        Some(p) => Some(read_rows(p)?.first().ok_or_else(|| bad(format!("{}: no poses", p.display())))?.pose),
        None => None,
    };
    let mut cfg = match &a.config {
        Some(p) => parse_tracker_config(&read_text(p)?).map_err(|e| bad(format!("{}: {e}", p.display())))?,
        None => TrackerConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let source = Source::load(&a.source)?;
    let mut gt = source.gt();
    let n = a.frames.unwrap_or(gt.len());
    if n == 0 || n > gt.len() {
        return Err(bad(format!("frames must lie in 1..={}", gt.len())));
    }
    gt.truncate(n);
    let initial = init.unwrap_or(gt[0]);
    let camera = source.camera();
    let run = match &source {
        Source::Scene(s) => track_all(source.model(), oracle_m2f(s), oracle_f2f(s), camera, cfg, &initial, &gt, a.reset)?,
        Source::Recording(r) => track_all(source.model(), r.m2f.clone(), r.f2f.clone(), camera, cfg, &initial, &gt, a.reset)?,
    };

    let mut log = String::from("frame\tm2f_triggered\tinlier_ratio\tquality\trot_deg_err\ttrans_mm_err\n");
    let mut rows = Vec::with_capacity(n);
    for d in &run.decisions {
        let (re, te) = pose_errors(&d.pose, &gt[d.frame_index]);
        let _ = writeln!(
            log,
            "{}\t{}\t{}\t{}\t{re}\t{te}",
            d.frame_index,
            u8::from(d.used_model_registration),
            d.inlier_ratio_bc,
            d.quality
        );
        rows.push(PoseRow::new(d.frame_index as u32, d.quality, d.pose));
    }
    write_output(&a.out, &pose_csv_string(&rows))?;
    write_output(&a.log, &log)?;

    let registrations = run.decisions.iter().skip(1).filter(|d| d.used_model_registration).count();
    let lost = run.decisions.iter().filter(|d| d.lost).count();
    let r = &run.report;
    let mut s = format!("frames\t{n}\nregistrations\t{registrations}\nlost\t{lost}\n");
    let _ = writeln!(s, "auc_add\t{}\nauc_adds\t{}\ncm_deg_rate\t{}", r.auc_add, r.auc_adds, r.cm_deg_rate);
    let _ = writeln!(s, "{}\t{}", if a.reset { "resets" } else { "failed_frames" }, r.resets);
    if let Some(f) = run.terminal_loss_at {
        let _ = writeln!(s, "terminal_loss_at\t{f}");
    }
    Ok(s)
}

pub fn cmd_simulate(a: &SimulateArgs, seed: Option<u64>) -> Result<String, CliError> {
    check_output(&a.out)?;
    let mut spec = SceneSpec::parse(&read_text(&a.scene)?).map_err(|e| bad(format!("{}: {e}", a.scene.display())))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if !(a.template_rot_deg >= 0.0 && a.template_trans_mm >= 0.0) {
        return Err(bad("template offsets must be >= 0"));
    }
    let seq = generate_sequence(&spec).map_err(bad)?;
    let opts = ExportOptions {
        template_rot_deg: a.template_rot_deg,
        template_trans_mm: a.template_trans_mm,
        seed: spec.seed,
    };
    export_sequence(&seq, &a.out, &opts).map_err(|e| bad(format!("{}: {e}", a.out.display())))?;
    let rows: Vec<PoseRow> = seq.gt_poses().iter().enumerate().map(|(k, p)| PoseRow::new(k as u32, 1.0, *p)).collect();
    write_output(&a.out.join(GT_FILE), &pose_csv_string(&rows))?;
    Ok(format!("frames\t{}\nmodel_points\t{}\n", rows.len(), seq.model.points().len()))
}

fn parse_camera(text: &str) -> Result<CameraIntrinsics, CliError> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| bad("camera expects six numbers"))?;
    if v.len() != 6 || v[4].fract() != 0.0 || v[5].fract() != 0.0 || v[4] < 1.0 || v[5] < 1.0 {
        return Err(bad("camera expects `fx fy cx cy width height`"));
    }
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as u32, v[5] as u32).map_err(bad)
}

/// Per-frame error lines followed by a summary block. VSD needs sensor
/// depth and is reported as unavailable.
pub fn format_report(frames: &[u32], report: &SequenceReport) -> String {
    let mut s = String::from("frame\tadd_mm\tadds_mm\tmssd_mm\tmspd_px\trot_deg\ttrans_mm\n");
    for (f, e) in frames.iter().zip(&report.per_frame) {
        let _ = writeln!(s, "{f}\t{}\t{}\t{}\t{}\t{}\t{}", e.add_mm, e.adds_mm, e.mssd_mm, e.mspd_px, e.rot_deg, e.trans_mm);
    }
    let _ = writeln!(s, "\nframes\t{}", report.per_frame.len());
    let _ = writeln!(s, "auc_add\t{}\nauc_adds\t{}", report.auc_add, report.auc_adds);
    let _ = writeln!(s, "cm_deg_rate\t{}\nresets\t{}\nvsd\tunavailable", report.cm_deg_rate, report.resets);
    s
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String, CliError> {
    if let Some(o) = &a.out {
        check_output(o)?;
    }
    let est = read_rows(&a.est)?;
    let gt_rows = read_rows(&a.gt)?;
    let model = load_model(&a.model)?;
    let camera = match &a.camera {
        Some(c) => parse_camera(c)?,
        None => default_source_camera(),
    };
    if est.is_empty() {
        return Err(bad(format!("{}: no poses", a.est.display())));
    }
    let key = |r: &PoseRow| (r.scene_id, r.im_id, r.obj_id);
    let mut keys: Vec<_> = est.iter().map(key).collect();
    keys.sort_unstable();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        return Err(bad(format!("{}: repeated scene/image/object id", a.est.display())));
    }
    let mut gt = Vec::with_capacity(est.len());
    for r in &est {
        let g = gt_rows
            .iter()
            .find(|g| key(g) == key(r))
            .ok_or_else(|| bad(format!("no ground truth for scene {} image {} object {}", r.scene_id, r.im_id, r.obj_id)))?;
        gt.push(g.pose);
    }
    let poses: Vec<Pose> = est.iter().map(|r| r.pose).collect();
    let report = run_reset_protocol(&poses, &gt, &model, &camera, |_, _, _| {}).map_err(bad)?;
    let frames: Vec<u32> = est.iter().map(|r| r.im_id).collect();
    let text = format_report(&frames, &report);
    if let Some(o) = &a.out {
        write_output(o, &text)?;
    }
    Ok(text)
}
