//! `gliding` command-line front end.
//!
//! Every subcommand accepts `--config FILE` (see [`config`]); explicit flags
//! win over the file, which wins over built-in defaults. Outputs are staged
//! and written together with a `<out>.manifest` recording the resolved
//! configuration and git blob hashes of the inputs. On failure nothing is
//! left behind and a single line is printed to stderr:
//!
//! ```text
//! error: kind=<kind> msg="<message>"
//! ```

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::dataio::{
    emit_det_concat, emit_det_text, emit_gt_concat, emit_gt_line, emit_gt_text, emit_reps_csv, parse_reps_csv,
    read_dets, read_gts, read_text, DetRecord, GtRecord, Layout, PerImage, RepRow,
};
use crate::error::{Error, Result};
use crate::eval::{f_measure, lamr, mean_average_precision, ApMode};
use crate::losses::LossWeights;
use crate::nms::{oriented_nms_per_class, ScoredPoly, DEFAULT_NMS_IOU};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::representation::{decode, encode, select, SelectionPolicy, DEFAULT_T_R};
use crate::synth::{
    gen_dataset, robustness_sweep, symmetric_sweep, vertex_order_discontinuity, PerturbKind, SceneSpec, SweepConfig,
};
use crate::trainer::{build_samples, loss_trace_csv, sgd_fit, Featurizer, HeadModel, InferConfig, ProposalConfig, TrainConfig};

use self::config::parse_config;
use self::manifest::{manifest_path, Artifacts, Manifest};

#[derive(Debug, Parser)]
#[command(name = "gliding", version, about = "Gliding-vertex oriented object detection toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Encode ground-truth quadrilaterals as (x, y, w, h, α1..α4, r) rows
    Encode(EncodeArgs),
    /// Decode gliding-vertex rows back to quadrilaterals
    Decode(DecodeArgs),
    /// Per-class oriented non-maximum suppression of detections
    Nms(NmsArgs),
    /// Benchmark detections against ground truth
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Generate synthetic oriented-object annotations
    Synth(SynthArgs),
    /// Mean IoU under angle noise versus matched offset noise
    Robustness(RobustnessArgs),
    /// Regression-target jumps of vertex ordering versus gliding ratios
    Confusion(ConfusionArgs),
    /// Train the detection head on synthetic proposals
    TrainDemo(TrainDemoArgs),
    /// Synthesize, train, detect and evaluate in one reproducible run
    Pipeline(PipelineArgs),
}

#[derive(Debug, Subcommand)]
enum EvalCmd {
    /// Oriented mean average precision
    Map(MapArgs),
    /// One-to-one precision, recall and F-measure
    Fmeasure(FmeasureArgs),
    /// Miss rate versus false positives per image, log-average miss rate
    Lamr(LamrArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LayoutArg {
    /// Directory of <image_id>.txt files
    PerImage,
    /// Single file, image id in the first column
    Concatenated,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Layout {
        match l {
            LayoutArg::PerImage => Layout::PerImage,
            LayoutArg::Concatenated => Layout::Concatenated,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ApModeArg {
    Voc07,
    AllPoints,
}

impl From<ApModeArg> for ApMode {
    fn from(m: ApModeArg) -> ApMode {
        match m {
            ApModeArg::Voc07 => ApMode::Voc07,
            ApModeArg::AllPoints => ApMode::AllPoints,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Rbox,
    Vertex,
    Gliding,
}

impl From<KindArg> for PerturbKind {
    fn from(k: KindArg) -> PerturbKind {
        match k {
            KindArg::Rbox => PerturbKind::RBox,
            KindArg::Vertex => PerturbKind::Vertex,
            KindArg::Gliding => PerturbKind::Gliding,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// key = value file; flags given on the command line take precedence
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Ground truth: directory of per-image files, or one file
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LayoutArg::PerImage)]
    layout: LayoutArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// CSV written by `encode`
    #[arg(long = "in", value_name = "FILE")]
    input: Option<PathBuf>,
    /// Output quadrilaterals, concatenated ground-truth layout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Apply obliquity selection: horizontal box when r > t_r (the paper setting is 0.8).
    /// Without it every row decodes to its oriented quadrilateral
    #[arg(long, value_name = "T_R")]
    t_r: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct NmsArgs {
    /// Detections: directory of per-image files, or one file
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    /// Output; a directory for the per-image layout, a file otherwise
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Suppression IoU
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    iou: f64,
    #[arg(long, value_enum, default_value_t = LayoutArg::PerImage)]
    layout: LayoutArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalIo {
    /// Detections: directory of per-image files, or one file
    #[arg(long, value_name = "PATH")]
    dets: Option<PathBuf>,
    /// Ground truth: directory of per-image files, or one file
    #[arg(long, value_name = "PATH")]
    gts: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LayoutArg::PerImage)]
    layout: LayoutArg,
    /// Plain-text report
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Optional CSV companion of the report
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MapArgs {
    #[command(flatten)]
    io: EvalIo,
    /// Matching IoU threshold
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, value_enum, default_value_t = ApModeArg::Voc07)]
    ap_mode: ApModeArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct FmeasureArgs {
    #[command(flatten)]
    io: EvalIo,
    /// Matching IoU threshold
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Detections scoring below this are dropped before matching
    #[arg(long, default_value_t = 0.6)]
    score_thresh: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct LamrArgs {
    #[command(flatten)]
    io: EvalIo,
    /// Matching IoU threshold
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SceneArgs {
    #[arg(long, default_value_t = SceneSpec::default().width)]
    width: f64,
    #[arg(long, default_value_t = SceneSpec::default().height)]
    height: f64,
    #[arg(long, default_value_t = SceneSpec::default().count.0)]
    min_count: usize,
    #[arg(long, default_value_t = SceneSpec::default().count.1)]
    max_count: usize,
    /// Long side over short side
    #[arg(long, default_value_t = SceneSpec::default().aspect.0)]
    min_aspect: f64,
    #[arg(long, default_value_t = SceneSpec::default().aspect.1)]
    max_aspect: f64,
    /// Square root of object area, pixels
    #[arg(long, default_value_t = SceneSpec::default().scale.0)]
    min_scale: f64,
    #[arg(long, default_value_t = SceneSpec::default().scale.1)]
    max_scale: f64,
    /// Orientation range, degrees
    #[arg(long, default_value_t = -90.0, allow_negative_numbers = true)]
    min_angle: f64,
    #[arg(long, default_value_t = 90.0, allow_negative_numbers = true)]
    max_angle: f64,
    /// Fraction of objects placed exactly axis-aligned
    #[arg(long, default_value_t = SceneSpec::default().horizontal_fraction)]
    horizontal_fraction: f64,
    /// Maximum pairwise IoU within a scene
    #[arg(long, default_value_t = SceneSpec::default().overlap_cap)]
    overlap_cap: f64,
    #[arg(long, value_delimiter = ',', default_values_t = SceneSpec::default().classes)]
    classes: Vec<String>,
    #[arg(long, default_value_t = SceneSpec::default().difficult_fraction)]
    difficult_fraction: f64,
}

impl SceneArgs {
    fn spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            count: (self.min_count, self.max_count),
            aspect: (self.min_aspect, self.max_aspect),
            scale: (self.min_scale, self.max_scale),
            angle: (self.min_angle.to_radians(), self.max_angle.to_radians()),
            horizontal_fraction: self.horizontal_fraction,
            overlap_cap: self.overlap_cap,
            classes: self.classes.clone(),
            difficult_fraction: self.difficult_fraction,
            seed,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output; a directory for the per-image layout, a file otherwise
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LayoutArg::PerImage)]
    layout: LayoutArg,
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct RobustnessArgs {
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = SweepConfig::default().aspects)]
    aspects: Vec<f64>,
    /// Angle errors in degrees; offset kinds use the matched mean vertex displacement
    #[arg(long, value_delimiter = ',', default_values_t = SweepConfig::default().angles_deg)]
    angles: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [KindArg::Rbox, KindArg::Gliding, KindArg::Vertex])]
    kinds: Vec<KindArg>,
    #[arg(long, default_value_t = SweepConfig::default().trials)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ConfusionArgs {
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Rectangle long side over short side
    #[arg(long, default_value_t = 4.0)]
    aspect: f64,
    /// Sweep half-width, degrees
    #[arg(long, default_value_t = 10.0)]
    range: f64,
    /// Sweep step, degrees
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    weight_decay: f64,
    /// Steps at which the learning rate is divided by 10
    #[arg(long, value_delimiter = ',', default_values_t = TrainConfig::default().decay_steps)]
    decay_steps: Vec<usize>,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    hidden: usize,
    /// Vertex observation noise, fraction of object scale
    #[arg(long, default_value_t = TrainConfig::default().feature_noise)]
    feature_noise: f64,
    /// Weight of the horizontal-box loss
    #[arg(long, default_value_t = LossWeights::default().lambda1)]
    lambda1: f64,
    /// Weight of the gliding-offset loss
    #[arg(long, default_value_t = LossWeights::default().lambda2)]
    lambda2: f64,
    /// Weight of the obliquity loss
    #[arg(long, default_value_t = LossWeights::default().lambda3)]
    lambda3: f64,
    /// Proposals at or above this IoU with a ground truth are positives
    #[arg(long, default_value_t = ProposalConfig::default().pos_iou)]
    pos_iou: f64,
    /// Background proposals per positive
    #[arg(long, default_value_t = ProposalConfig::default().neg_ratio)]
    neg_ratio: f64,
    #[arg(long, default_value_t = ProposalConfig::default().per_object)]
    proposals_per_object: usize,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let weights = LossWeights::new(self.lambda1, self.lambda2, self.lambda3, d.weights.beta)
            .map_err(|e| Error::config(e.to_string()))?;
        let cfg = TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            steps: self.steps,
            decay_steps: self.decay_steps.clone(),
            batch_size: self.batch_size,
            seed,
            weights,
            hidden: self.hidden,
            feature_noise: self.feature_noise,
            proposals: ProposalConfig {
                per_object: self.proposals_per_object,
                neg_ratio: self.neg_ratio,
                pos_iou: self.pos_iou,
                ..d.proposals
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainDemoArgs {
    /// Output directory: model.json, loss.csv, summary.txt
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Training ground truth; synthesized from --seed when omitted
    #[arg(long, value_name = "PATH")]
    gts: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LayoutArg::PerImage)]
    layout: LayoutArg,
    /// Synthetic training images when --gts is not given
    #[arg(long, default_value_t = PipelineConfig::default().train_images)]
    images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "pipeline-out")]
    out: PathBuf,
    #[arg(long, default_value_t = PipelineConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = PipelineConfig::default().train_images)]
    train_images: usize,
    #[arg(long, default_value_t = PipelineConfig::default().test_images)]
    test_images: usize,
    /// Obliquity threshold: horizontal box when predicted r > t_r
    #[arg(long, default_value_t = DEFAULT_T_R)]
    t_r: f64,
    /// Suppression IoU
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    nms_iou: f64,
    /// Class probabilities below this produce no detection
    #[arg(long, default_value_t = InferConfig::default().score_thresh)]
    score_thresh: f64,
    /// α noise for the selection study
    #[arg(long, default_value_t = PipelineConfig::default().alpha_noise)]
    alpha_noise: f64,
    #[arg(long, value_enum, default_value_t = ApModeArg::Voc07)]
    ap_mode: ApModeArg,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    common: Common,
}

enum Failure {
    Display(String),
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn clap_failure(e: clap::Error) -> Failure {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            Failure::Display(e.render().to_string())
        }
        _ => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            Failure::Usage(first.trim_start_matches("error: ").to_string())
        }
    }
}

/// The parsed command line plus where each resolved value came from.
struct Parsed {
    cli: Cli,
    path: Vec<String>,
    config: Vec<(String, String, &'static str)>,
}

fn leaf<'a>(m: &'a clap::ArgMatches, cmd: &'a clap::Command) -> (Vec<String>, &'a clap::ArgMatches, &'a clap::Command) {
    let mut path = Vec::new();
    let (mut m, mut c) = (m, cmd);
    while let Some((name, sub)) = m.subcommand() {
        path.push(name.to_string());
        c = c.find_subcommand(name).expect("matched subcommand exists");
        m = sub;
    }
    (path, m, c)
}

fn parse(argv: &[OsString]) -> std::result::Result<Parsed, Failure> {
    let cmd = Cli::command();
    let first = cmd.clone().try_get_matches_from(argv).map_err(clap_failure)?;
    let (path, lm, lc) = leaf(&first, &cmd);
    let mut from_file = BTreeSet::new();
    let matches = match lm.get_one::<PathBuf>("config") {
        None => first.clone(),
        Some(cfg_path) => {
            let kv = parse_config(&read_text(cfg_path)?)?;
            let mut extended = argv.to_vec();
            for (key, value) in kv {
                let id = key.replace('-', "_");
                let known = lc
                    .get_arguments()
                    .any(|a| a.get_id().as_str() == id && a.get_long().is_some());
                if !known {
                    return Err(Error::config(format!("unknown config key `{key}` for `{}`", path.join(" "))).into());
                }
                if lm.value_source(&id) == Some(ValueSource::CommandLine) {
                    continue;
                }
                extended.push(format!("--{key}").into());
                extended.push(value.into());
                from_file.insert(id);
            }
            cmd.clone()
                .try_get_matches_from(&extended)
                .map_err(|e| Failure::Run(Error::config(format!("config file: {}", first_line(&e.render().to_string())))))?
        }
    };
    let (_, lm, lc) = leaf(&matches, &cmd);
    let mut config = Vec::new();
    for a in lc.get_arguments() {
        let id = a.get_id().as_str();
        if matches!(id, "help" | "version" | "config") {
            continue;
        }
        let Some(raw) = lm.get_raw(id) else { continue };
        let value = raw.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(",");
        let source = if from_file.contains(id) {
            "file"
        } else {
            match lm.value_source(id) {
                Some(ValueSource::DefaultValue) => "default",
                Some(ValueSource::EnvVariable) => "env",
                _ => "cli",
            }
        };
        config.push((a.get_long().unwrap_or(id).to_string(), value, source));
    }
    let cli = Cli::from_arg_matches(&matches).map_err(clap_failure)?;
    Ok(Parsed { cli, path, config })
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("").trim_start_matches("error: ").to_string()
}

/// Runs the command line and returns the process exit status:
/// 0 on success, 1 on a runtime failure, 2 on invalid usage or configuration.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match parse(&argv).and_then(|p| dispatch(p).map_err(Failure::Run)) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(Failure::Display(text)) => {
            print!("{text}");
            0
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: kind=usage msg={msg:?}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: kind={} msg={:?}", e.kind(), e.to_string());
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::config(format!("missing required option --{flag}")))
}

fn check_unit(name: &str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { (0.0..=1.0).contains(&v) } else { v > 0.0 && v <= 1.0 };
    if ok {
        Ok(())
    } else {
        let lo = if allow_zero { "[0" } else { "(0" };
        Err(Error::config(format!("--{name} = {v} outside {lo}, 1]")))
    }
}

/// Output of one subcommand before it is written.
struct Run {
    manifest: Manifest,
    artifacts: Artifacts,
    /// The path the manifest sits next to.
    out: PathBuf,
    summary: String,
}

impl Run {
    fn new(p: &Parsed, out: &Path) -> Self {
        Run {
            manifest: Manifest {
                command: p.path.join(" "),
                config: p.config.clone(),
                inputs: Vec::new(),
            },
            artifacts: Artifacts::default(),
            out: out.to_path_buf(),
            summary: String::new(),
        }
    }

    fn commit(mut self) -> Result<String> {
        let text = self.manifest.render(&self.artifacts);
        self.artifacts.add(manifest_path(&self.out), text);
        self.artifacts.commit()?;
        Ok(self.summary)
    }
}

fn stage_per_image<T>(
    run: &mut Run,
    out: &Path,
    layout: Layout,
    data: &PerImage<T>,
    per_file: fn(&[T]) -> String,
    concat: fn(&PerImage<T>) -> String,
) {
    match layout {
        Layout::Concatenated => run.artifacts.add(out, concat(data)),
        Layout::PerImage => {
            for (id, recs) in data {
                run.artifacts.add(out.join(format!("{id}.txt")), per_file(recs));
            }
        }
    }
}

fn dispatch(p: Parsed) -> Result<String> {
    match &p.cli.cmd {
        Cmd::Encode(a) => cmd_encode(&p, a),
        Cmd::Decode(a) => cmd_decode(&p, a),
        Cmd::Nms(a) => cmd_nms(&p, a),
        Cmd::Eval(EvalCmd::Map(a)) => cmd_map(&p, a),
        Cmd::Eval(EvalCmd::Fmeasure(a)) => cmd_fmeasure(&p, a),
        Cmd::Eval(EvalCmd::Lamr(a)) => cmd_lamr(&p, a),
        Cmd::Synth(a) => cmd_synth(&p, a),
        Cmd::Robustness(a) => cmd_robustness(&p, a),
        Cmd::Confusion(a) => cmd_confusion(&p, a),
        Cmd::TrainDemo(a) => cmd_train_demo(&p, a),
        Cmd::Pipeline(a) => cmd_pipeline(&p, a),
    }
}

fn cmd_encode(p: &Parsed, a: &EncodeArgs) -> Result<String> {
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    let gts = read_gts(input, a.layout.into())?;
    let mut rows = Vec::new();
    for (id, recs) in &gts {
        for r in recs {
            rows.push(RepRow {
                image_id: id.clone(),
                class: r.class.clone(),
                rep: encode(&r.quad)?,
            });
        }
    }
    let mut run = Run::new(p, out);
    run.manifest.add_input("gts", input)?;
    run.artifacts.add(out, emit_reps_csv(&rows));
    run.summary = format!("encoded {} objects\n", rows.len());
    run.commit()
}

fn cmd_decode(p: &Parsed, a: &DecodeArgs) -> Result<String> {
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    let policy = a.t_r.map(SelectionPolicy::new).transpose().map_err(|e| Error::config(e.to_string()))?;
    let rows = parse_reps_csv(&read_text(input)?)?;
    let mut text = String::new();
    for row in &rows {
        let quad = match &policy {
            Some(pol) => select(&row.rep, pol),
            None => decode(&row.rep),
        };
        let rec = GtRecord {
            quad,
            class: row.class.clone(),
            difficult: false,
        };
        let _ = writeln!(text, "{} {}", row.image_id, emit_gt_line(&rec));
    }
    let mut run = Run::new(p, out);
    run.manifest.add_input("reps", input)?;
    run.artifacts.add(out, text);
    run.summary = format!("decoded {} rows\n", rows.len());
    run.commit()
}

fn cmd_nms(p: &Parsed, a: &NmsArgs) -> Result<String> {
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    check_unit("iou", a.iou, true)?;
    let layout: Layout = a.layout.into();
    let dets = read_dets(input, layout)?;
    let mut kept = PerImage::new();
    let (mut before, mut after) = (0, 0);
    for (id, recs) in &dets {
        let names: Vec<&str> = recs.iter().map(|r| r.class.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
        let polys: Vec<ScoredPoly> = recs
            .iter()
            .map(|r| ScoredPoly {
                poly: r.quad,
                score: r.score,
                class: names.binary_search(&r.class.as_str()).expect("class listed"),
            })
            .collect();
        let k: Vec<DetRecord> = oriented_nms_per_class(&polys, a.iou)
            .into_iter()
            .map(|d| DetRecord {
                class: names[d.class].to_string(),
                score: d.score,
                quad: d.poly,
            })
            .collect();
        before += recs.len();
        after += k.len();
        kept.insert(id.clone(), k);
    }
    let mut run = Run::new(p, out);
    run.manifest.add_input("dets", input)?;
    stage_per_image(&mut run, out, layout, &kept, emit_det_text, emit_det_concat);
    run.summary = format!("kept {after} of {before} detections\n");
    run.commit()
}

fn eval_inputs(run: &mut Run, io: &EvalIo) -> Result<(PerImage<DetRecord>, PerImage<GtRecord>)> {
    let dets_path = required(&io.dets, "dets")?;
    let gts_path = required(&io.gts, "gts")?;
    let layout: Layout = io.layout.into();
    let dets = read_dets(dets_path, layout)?;
    let gts = read_gts(gts_path, layout)?;
    run.manifest.add_input("dets", dets_path)?;
    run.manifest.add_input("gts", gts_path)?;
    Ok((dets, gts))
}

fn cmd_map(p: &Parsed, a: &MapArgs) -> Result<String> {
    let out = required(&a.io.out, "out")?;
    check_unit("iou", a.iou, false)?;
    let mut run = Run::new(p, out);
    let (dets, gts) = eval_inputs(&mut run, &a.io)?;
    let report = mean_average_precision(&dets, &gts, a.iou, a.ap_mode.into());
    run.artifacts.add(out, report.to_text());
    if let Some(csv) = &a.io.csv {
        run.artifacts.add(csv, report.to_csv());
    }
    run.summary = format!("mAP@{}: {:.6}\n", a.iou, report.map);
    run.commit()
}

fn cmd_fmeasure(p: &Parsed, a: &FmeasureArgs) -> Result<String> {
    let out = required(&a.io.out, "out")?;
    check_unit("iou", a.iou, false)?;
    check_unit("score-thresh", a.score_thresh, true)?;
    let mut run = Run::new(p, out);
    let (dets, gts) = eval_inputs(&mut run, &a.io)?;
    let dets: PerImage<DetRecord> = dets
        .into_iter()
        .map(|(id, v)| (id, v.into_iter().filter(|d| d.score >= a.score_thresh).collect()))
        .collect();
    let f = f_measure(&dets, &gts, a.iou);
    run.artifacts.add(out, f.to_text(a.iou));
    if let Some(csv) = &a.io.csv {
        run.artifacts.add(csv, f.to_csv());
    }
    run.summary = format!("P {:.6} R {:.6} F {:.6}\n", f.precision, f.recall, f.f);
    run.commit()
}

fn cmd_lamr(p: &Parsed, a: &LamrArgs) -> Result<String> {
    let out = required(&a.io.out, "out")?;
    check_unit("iou", a.iou, false)?;
    let mut run = Run::new(p, out);
    let (dets, gts) = eval_inputs(&mut run, &a.io)?;
    let r = lamr(&dets, &gts, a.iou);
    run.artifacts.add(out, r.to_text());
    if let Some(csv) = &a.io.csv {
        run.artifacts.add(csv, r.to_csv());
    }
    run.summary = format!("LAMR: {:.6}\n", r.lamr);
    run.commit()
}

fn cmd_synth(p: &Parsed, a: &SynthArgs) -> Result<String> {
    let out = required(&a.out, "out")?;
    if a.images == 0 {
        return Err(Error::config("--images must be >= 1"));
    }
    let data = gen_dataset(&a.scene.spec(a.seed), a.images)?;
    let mut run = Run::new(p, out);
    stage_per_image(&mut run, out, a.layout.into(), &data, emit_gt_text, emit_gt_concat);
    let n: usize = data.values().map(Vec::len).sum();
    run.summary = format!("generated {n} objects in {} images\n", data.len());
    run.commit()
}

fn cmd_robustness(p: &Parsed, a: &RobustnessArgs) -> Result<String> {
    let out = required(&a.out, "out")?;
    let cfg = SweepConfig {
        aspects: a.aspects.clone(),
        angles_deg: a.angles.clone(),
        kinds: a.kinds.iter().map(|&k| k.into()).collect(),
        trials: a.trials,
        seed: a.seed,
    };
    let table = robustness_sweep(&cfg)?;
    let mut text = String::from(
        "# mean IoU between ground truth and its perturbed copy: a representation-sensitivity proxy, not detection accuracy\n\
         # epsilon: angle error in degrees; vertex and gliding noise matched to the same mean vertex displacement\n",
    );
    text.push_str(&table.to_csv());
    let mut run = Run::new(p, out);
    run.artifacts.add(out, text);
    run.summary = format!("{} cells, {} trials each\n", table.cells.len(), a.trials);
    run.commit()
}

fn cmd_confusion(p: &Parsed, a: &ConfusionArgs) -> Result<String> {
    let out = required(&a.out, "out")?;
    if !(a.step > 0.0 && a.range > 0.0 && a.step.is_finite() && a.range.is_finite()) {
        return Err(Error::config("--range and --step must be positive"));
    }
    let n = (a.range / a.step).round() as usize;
    let report = vertex_order_discontinuity(a.aspect, &symmetric_sweep(n, a.step))?;
    let mut run = Run::new(p, out);
    run.artifacts.add(out, report.to_csv());
    let (vrow, vmax) = report.vertex_max().expect("non-empty sweep");
    let mut s = format!(
        "vertex-order max jump {vmax:.6} between {:.4} and {:.4} deg\n",
        vrow.theta_deg, vrow.next_deg
    );
    if let Some((grow, gmax)) = report.gliding_max() {
        let _ = writeln!(
            s,
            "gliding max jump {gmax:.6} between {:.4} and {:.4} deg (steps touching axis alignment excluded)",
            grow.theta_deg, grow.next_deg
        );
    }
    if let Some(ax) = report.gliding_axis_max() {
        let _ = writeln!(s, "gliding jump at axis alignment {ax:.6}");
    }
    run.summary = s;
    run.commit()
}

fn cmd_train_demo(p: &Parsed, a: &TrainDemoArgs) -> Result<String> {
    let out = required(&a.out, "out")?;
    let cfg = a.train.config(a.seed)?;
    let spec = a.scene.spec(a.seed);
    let mut run = Run::new(p, out);
    let (gts, classes) = match &a.gts {
        Some(path) => {
            let gts = read_gts(path, a.layout.into())?;
            run.manifest.add_input("gts", path)?;
            let classes: Vec<String> = gts
                .values()
                .flatten()
                .map(|g| g.class.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if classes.is_empty() {
                return Err(Error::invalid("training ground truth is empty"));
            }
            (gts, classes)
        }
        None => {
            if a.images == 0 {
                return Err(Error::config("--images must be >= 1"));
            }
            (gen_dataset(&spec, a.images)?, spec.classes.clone())
        }
    };
    let fz = Featurizer {
        n_classes: classes.len(),
        noise: cfg.feature_noise,
        width: spec.width,
        height: spec.height,
    };
    let samples = build_samples(&gts, &classes, &fz, &cfg.proposals, a.seed)?;
    let model = HeadModel::new(fz.dim(), cfg.hidden, classes.len(), a.seed)?;
    let fit = sgd_fit(&model, &samples, &cfg)?;
    run.artifacts.add(out.join("model.json"), fit.model.to_json(&classes));
    run.artifacts.add(out.join("loss.csv"), loss_trace_csv(&fit.trace));
    let summary = format!(
        "samples: {}\nsteps: {}\ninitial_loss: {:.6}\nfinal_loss: {:.6}\n",
        samples.len(),
        cfg.steps,
        fit.initial_loss,
        fit.final_loss
    );
    run.artifacts.add(out.join("summary.txt"), summary.clone());
    run.summary = summary;
    run.commit()
}

fn cmd_pipeline(p: &Parsed, a: &PipelineArgs) -> Result<String> {
    check_unit("nms-iou", a.nms_iou, true)?;
    check_unit("score-thresh", a.score_thresh, true)?;
    if !(a.alpha_noise >= 0.0 && a.alpha_noise.is_finite()) {
        return Err(Error::config("--alpha-noise must be >= 0"));
    }
    let cfg = PipelineConfig {
        seed: a.seed,
        scene: a.scene.spec(a.seed),
        train_images: a.train_images,
        test_images: a.test_images,
        train: a.train.config(a.seed)?,
        infer: InferConfig {
            policy: SelectionPolicy::new(a.t_r).map_err(|e| Error::config(e.to_string()))?,
            nms_iou: a.nms_iou,
            score_thresh: a.score_thresh,
            ..InferConfig::default()
        },
        ap_mode: a.ap_mode.into(),
        alpha_noise: a.alpha_noise,
    };
    cfg.scene.validate()?;
    let r = run_pipeline(&cfg)?;
    let out = &a.out;
    let mut run = Run::new(p, out);
    run.artifacts.add(out.join("train_gt.txt"), emit_gt_concat(&r.train_gts));
    run.artifacts.add(out.join("test_gt.txt"), emit_gt_concat(&r.test_gts));
    run.artifacts.add(out.join("model.json"), r.fit.model.to_json(&r.class_names));
    run.artifacts.add(out.join("loss.csv"), r.loss_csv());
    run.artifacts.add(out.join("detections.txt"), emit_det_concat(&r.dets));
    run.artifacts.add(out.join("map50.csv"), r.map50.to_csv());
    let metrics = r.metrics_text();
    run.artifacts.add(out.join("metrics.txt"), metrics.clone());
    run.summary = metrics;
    run.commit()
}

/// Metrics of a finished pipeline directory, as `key: value` pairs.
pub fn read_metrics(path: &Path) -> Result<BTreeMap<String, String>> {
    Ok(read_text(path)?
        .lines()
        .take_while(|l| !l.is_empty())
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}
