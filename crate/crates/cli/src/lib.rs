//! The `facebench` command line. [`run`] holds everything except process
//! setup so that tests can drive it in-process with their own launcher.

use std::ffi::OsString;
use std::fmt::Display;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use facebench_core::formats::{
    parse_csv_annotations, parse_csv_detections, parse_fddb_annotations, parse_fddb_detections, write_annotations,
    write_detections,
};
use facebench_core::pipeline::{
    evaluate, ingest_frames, plot_roc, render_overlays, roc_csv, run_adapter, write_atomic, AdapterConfig, AdapterError,
    CacheMode, EvaluationConfig, ExtractorConfig, IngestError, ManifestEntry, ProcessLauncher, RunManifest, VideoGrouping,
};
use facebench_core::metrics::MetricsError;
use facebench_core::{roc_curve, AnnotationCorpus, DetectionCorpus, DetectionFormat, FormatError, MatchingMode};

/// Exit status for malformed input, bad flags or invalid configuration.
pub const EXIT_INVALID: i32 = 1;
/// Exit status for failures while running: adapters, extractors, I/O.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Display) -> CliError {
    CliError::Invalid(msg.to_string())
}

fn runtime(msg: impl Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "facebench", version, about = "Run face detectors over frames and score them against annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a detector adapter over a manifest and write detection CSV
    Detect(DetectArgs),
    /// Score detections against ground truth at one or more IOU thresholds
    Evaluate(EvaluateArgs),
    /// Plot discrete-score ROC curves (IOU 0.5) for one or more detectors
    Roc(RocArgs),
    /// Draw ground truth (red) and detections (green) over every frame as SVG
    Overlay(OverlayArgs),
    /// Convert between FDDB and CSV box files
    Convert(ConvertArgs),
    /// Extract video frames with an external tool and write a manifest
    Ingest(IngestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GtFormat {
    Csv,
    FddbAnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetFormat {
    Csv,
    FddbDet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FileFormat {
    Csv,
    FddbAnn,
    FddbDet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Strict,
    BestOverlap,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Adapter config file (key=value lines: name, command, workdir, timeout_seconds, env.NAME)
    #[arg(long, value_name = "FILE")]
    adapter: PathBuf,
    /// Manifest of `frame_id<TAB>image_path` lines
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory image paths are relative to [default: the manifest's directory]
    #[arg(long, value_name = "DIR")]
    root: Option<PathBuf>,
    /// Where to write the detection CSV
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Detection cache directory
    #[arg(long, value_name = "DIR", conflicts_with = "no_cache")]
    cache: Option<PathBuf>,
    /// Run the adapter even if a cached result exists, and do not store one
    #[arg(long)]
    no_cache: bool,
}

#[derive(Debug, Args)]
struct GroundTruthArgs {
    /// Ground-truth file
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Ground-truth file format
    #[arg(long, value_enum, default_value = "csv")]
    gt_format: GtFormat,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    gt: GroundTruthArgs,
    /// Detection file
    #[arg(long, value_name = "FILE")]
    det: PathBuf,
    /// Detection file format
    #[arg(long, value_enum, default_value = "csv")]
    det_format: DetFormat,
    /// Comma-separated IOU thresholds, strictly increasing, each in (0, 1]
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.75")]
    iou: Vec<f64>,
    /// Drop detections scoring below this before matching
    #[arg(long, value_name = "SCORE")]
    score_threshold: Option<f64>,
    /// strict: every detection counts; best-overlap: one detection per frame
    #[arg(long, value_enum, default_value = "strict")]
    mode: Mode,
    /// Add per-video rows, taking the video id from the frame id up to its first `/`
    #[arg(long)]
    group_by_prefix: bool,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output prefix; writes PREFIX.txt and PREFIX.csv
    #[arg(long, value_name = "PREFIX")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RocArgs {
    #[command(flatten)]
    gt: GroundTruthArgs,
    /// Detection file; repeat for several detectors
    #[arg(long, value_name = "FILE", required = true)]
    det: Vec<PathBuf>,
    /// Curve label for each --det, in order [default: file stem]
    #[arg(long, value_name = "NAME")]
    label: Vec<String>,
    /// Format of every detection file
    #[arg(long, value_enum, default_value = "csv")]
    det_format: DetFormat,
    /// Where to write the SVG plot
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write the curve points as CSV
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OverlayArgs {
    /// Manifest of `frame_id<TAB>image_path` lines
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory image paths are relative to [default: the manifest's directory]
    #[arg(long, value_name = "DIR")]
    root: Option<PathBuf>,
    #[command(flatten)]
    gt: GroundTruthArgs,
    /// Detection file
    #[arg(long, value_name = "FILE")]
    det: PathBuf,
    /// Detection file format
    #[arg(long, value_enum, default_value = "csv")]
    det_format: DetFormat,
    /// Directory for the SVG files
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// Input file
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Input format; csv is read as detections when the header has a score column
    #[arg(long, value_enum)]
    from: FileFormat,
    /// Output format
    #[arg(long, value_enum)]
    to: FileFormat,
    /// Output file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Video file
    #[arg(long, value_name = "FILE")]
    video: PathBuf,
    /// Extractor command with {input}, {outdir}, {pattern} and, with --fps, {fps}
    #[arg(long, value_name = "COMMAND")]
    extractor: String,
    /// Directory that receives the frames
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Frame rate passed to the extractor as {fps}
    #[arg(long)]
    fps: Option<f64>,
    /// Use frames already in --out-dir instead of running the extractor
    #[arg(long)]
    reuse: bool,
    /// Kill the extractor after this many seconds
    #[arg(long, value_name = "SECONDS")]
    timeout_seconds: Option<f64>,
    /// Manifest path [default: OUT_DIR/manifest.tsv]
    #[arg(long, value_name = "FILE")]
    manifest_out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status. Normal output goes to `out`, warnings and errors
/// to `err`.
pub fn run<I, T>(args: I, launcher: &dyn ProcessLauncher, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_INVALID
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match cli.command {
        Command::Detect(a) => cmd_detect(a, launcher, out, err),
        Command::Evaluate(a) => cmd_evaluate(a, out, err),
        Command::Roc(a) => cmd_roc(a, out),
        Command::Overlay(a) => cmd_overlay(a, out),
        Command::Convert(a) => cmd_convert(a, out),
        Command::Ingest(a) => cmd_ingest(a, launcher, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn located(path: &Path, e: FormatError) -> CliError {
    invalid(format!("{}:{}: {e}", path.display(), e.line()))
}

fn load_ground_truth(a: &GroundTruthArgs) -> Result<AnnotationCorpus> {
    let bytes = read_input(&a.gt)?;
    let parsed = match a.gt_format {
        GtFormat::Csv => parse_csv_annotations(BufReader::new(&bytes[..])),
        GtFormat::FddbAnn => parse_fddb_annotations(BufReader::new(&bytes[..])),
    };
    Ok(parsed.map_err(|e| located(&a.gt, e))?.with_source_path(a.gt.to_string_lossy()))
}

fn load_detections(path: &Path, format: DetFormat) -> Result<DetectionCorpus> {
    let bytes = read_input(path)?;
    let parsed = match format {
        DetFormat::Csv => parse_csv_detections(BufReader::new(&bytes[..])),
        DetFormat::FddbDet => parse_fddb_detections(BufReader::new(&bytes[..])),
    };
    Ok(parsed.map_err(|e| located(path, e))?.with_source_path(path.to_string_lossy()))
}

fn load_manifest(path: &Path, root: Option<&Path>) -> Result<RunManifest> {
    let loaded = match root {
        None => RunManifest::load(path),
        Some(root) => {
            let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read manifest {}: {e}", path.display())))?;
            RunManifest::parse(&text, root)
        }
    };
    loaded.map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_detect(a: DetectArgs, launcher: &dyn ProcessLauncher, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = AdapterConfig::load(&a.adapter).map_err(|e| invalid(format!("{}: {e}", a.adapter.display())))?;
    let manifest = load_manifest(&a.manifest, a.root.as_deref())?;
    let cache = match (&a.cache, a.no_cache) {
        (Some(dir), false) => CacheMode::ReadWrite(dir.clone()),
        _ => CacheMode::Disabled,
    };
    let run = run_adapter(&config, &manifest, &cache, launcher).map_err(|e| match e {
        AdapterError::InvalidConfig(_) | AdapterError::EmptyManifest => invalid(e),
        other => runtime(other),
    })?;
    if !run.diagnostics.trim().is_empty() {
        let _ = writeln!(err, "adapter `{}` diagnostics:\n{}", config.name, run.diagnostics.trim_end());
    }
    if !run.missing_frames.is_empty() {
        let ids: Vec<&str> = run.missing_frames.iter().map(|f| f.as_str()).collect();
        let _ = writeln!(err, "warning: adapter reported nothing for {} frame(s), scored as no detections: {}", ids.len(), ids.join(", "));
    }
    if !run.unexpected_frames.is_empty() {
        let ids: Vec<&str> = run.unexpected_frames.iter().map(|f| f.as_str()).collect();
        let _ = writeln!(err, "warning: dropped {} frame(s) not in the manifest: {}", ids.len(), ids.join(", "));
    }
    write_output(&a.out, write_detections(&run.detections, DetectionFormat::Csv).as_bytes())?;
    let _ = writeln!(
        out,
        "{}: {} frames, {} detections{}",
        config.name,
        run.detections.len(),
        run.detections.detection_count(),
        if run.from_cache { " (cached)" } else { "" }
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = EvaluationConfig {
        iou_thresholds: a.iou,
        score_threshold: a.score_threshold,
        matching_mode: match a.mode {
            Mode::Strict => MatchingMode::Strict,
            Mode::BestOverlap => MatchingMode::BestOverlap,
        },
        grouping: if a.group_by_prefix { VideoGrouping::FramePrefix } else { VideoGrouping::Single },
        workers: a.workers,
    };
    cfg.validate().map_err(invalid)?;
    let gts = load_ground_truth(&a.gt)?;
    let dets = load_detections(&a.det, a.det_format)?;
    let report = evaluate(&gts, &dets, &cfg).map_err(invalid)?;

    let mut txt = a.out.clone().into_os_string();
    txt.push(".txt");
    let mut csv = a.out.into_os_string();
    csv.push(".csv");
    write_output(Path::new(&txt), report.to_table().as_bytes())?;
    write_output(Path::new(&csv), report.to_csv().as_bytes())?;

    let d = &report.diagnostics;
    if d.unannotated_detections > 0 {
        let _ = writeln!(
            err,
            "note: {} detection(s) in {} unannotated frame(s) were not scored",
            d.unannotated_detections,
            d.unannotated_frames.len()
        );
    }
    for t in &report.thresholds {
        let p = &t.pooled;
        let _ = writeln!(
            out,
            "iou {}: precision {:.4} recall {:.4} (tp {}, fp {}, fn {})",
            t.iou_threshold, p.precision, p.recall, p.tp, p.fp, p.fn_
        );
    }
    Ok(())
}

fn cmd_roc(a: RocArgs, out: &mut dyn Write) -> Result<()> {
    if !a.label.is_empty() && a.label.len() != a.det.len() {
        return Err(invalid(format!("{} --label value(s) for {} --det file(s)", a.label.len(), a.det.len())));
    }
    let gts = load_ground_truth(&a.gt)?;
    let mut curves = Vec::with_capacity(a.det.len());
    for (i, path) in a.det.iter().enumerate() {
        let label = a
            .label
            .get(i)
            .cloned()
            .unwrap_or_else(|| path.file_stem().map_or_else(|| path.to_string_lossy().into_owned(), |s| s.to_string_lossy().into_owned()));
        let dets = load_detections(path, a.det_format)?;
        let curve = roc_curve(&dets, &gts).map_err(|e| match e {
            MetricsError::EmptyGroundTruth => invalid(format!("{}: {e}", a.gt.gt.display())),
            other => runtime(other),
        })?;
        curves.push((label, curve));
    }
    plot_roc(&curves, &a.out).map_err(runtime)?;
    if let Some(path) = &a.csv {
        write_output(path, roc_csv(&curves).as_bytes())?;
    }
    for (label, curve) in &curves {
        match curve.points.last() {
            Some(p) => {
                let _ = writeln!(
                    out,
                    "{label}: {} thresholds, final tpr {:.4} at {} false positives",
                    curve.points.len(),
                    p.true_positive_rate,
                    p.false_positives
                );
            }
            None => {
                let _ = writeln!(out, "{label}: no detections in annotated frames");
            }
        }
    }
    Ok(())
}

fn cmd_overlay(a: OverlayArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = load_manifest(&a.manifest, a.root.as_deref())?;
    let gts = load_ground_truth(&a.gt)?;
    let dets = load_detections(&a.det, a.det_format)?;
    let n = render_overlays(&manifest, &gts, &dets, &a.out_dir, a.workers).map_err(runtime)?;
    let _ = writeln!(out, "wrote {n} overlays to {}", a.out_dir.display());
    Ok(())
}

fn csv_has_score(bytes: &[u8]) -> bool {
    let text = String::from_utf8_lossy(bytes);
    text.lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|header| header.split(',').map(str::trim).any(|f| f == "score"))
}

fn cmd_convert(a: ConvertArgs, out: &mut dyn Write) -> Result<()> {
    let unsupported = || invalid(format!("unsupported conversion: {} -> {}", name(a.from), name(a.to)));
    if a.to == FileFormat::FddbAnn {
        return Err(unsupported());
    }
    let bytes = read_input(&a.input)?;
    let (text, frames, boxes, lossy) = match (a.from, a.to) {
        (FileFormat::FddbAnn, FileFormat::Csv) => {
            let c = parse_fddb_annotations(BufReader::new(&bytes[..])).map_err(|e| located(&a.input, e))?;
            (write_annotations(&c), c.len(), c.ground_truth_count(), true)
        }
        (FileFormat::FddbAnn, _) => return Err(unsupported()),
        (FileFormat::Csv, to) if !csv_has_score(&bytes) => {
            if to != FileFormat::Csv {
                return Err(unsupported());
            }
            let c = parse_csv_annotations(BufReader::new(&bytes[..])).map_err(|e| located(&a.input, e))?;
            (write_annotations(&c), c.len(), c.ground_truth_count(), false)
        }
        (from, to) => {
            let c = load_detections(&a.input, if from == FileFormat::Csv { DetFormat::Csv } else { DetFormat::FddbDet })?;
            let fmt = if to == FileFormat::Csv { DetectionFormat::Csv } else { DetectionFormat::Fddb };
            (write_detections(&c, fmt), c.len(), c.detection_count(), false)
        }
    };
    write_output(&a.out, text.as_bytes())?;
    let _ = writeln!(
        out,
        "{} -> {}: {frames} frames, {boxes} boxes{}",
        name(a.from),
        name(a.to),
        if lossy { " (lossy: ellipses replaced by their bounding boxes)" } else { "" }
    );
    Ok(())
}

fn name(f: FileFormat) -> &'static str {
    match f {
        FileFormat::Csv => "csv",
        FileFormat::FddbAnn => "fddb-ann",
        FileFormat::FddbDet => "fddb-det",
    }
}

fn cmd_ingest(a: IngestArgs, launcher: &dyn ProcessLauncher, out: &mut dyn Write) -> Result<()> {
    let mut extractor = ExtractorConfig::new(a.extractor);
    if let Some(s) = a.timeout_seconds {
        if !(s.is_finite() && s > 0.0) {
            return Err(invalid(format!("--timeout-seconds must be positive, got {s}")));
        }
        extractor.timeout = Some(Duration::from_secs_f64(s));
    }
    let manifest = ingest_frames(&a.video, &extractor, &a.out_dir, a.fps, a.reuse, launcher).map_err(|e| match e {
        IngestError::VideoNotFound(_) | IngestError::InvalidCommand(_) => invalid(e),
        other => runtime(other),
    })?;
    let manifest_path = a.manifest_out.unwrap_or_else(|| a.out_dir.join("manifest.tsv"));
    let rebased = rebase(&manifest, &a.out_dir, &manifest_path)?;
    write_output(&manifest_path, rebased.to_text().as_bytes())?;
    let _ = writeln!(out, "{} frames, manifest {}", rebased.len(), manifest_path.display());
    Ok(())
}

/// Rewrites image paths so they resolve against the directory the manifest
/// file will live in.
fn rebase(manifest: &RunManifest, frames_dir: &Path, manifest_path: &Path) -> Result<RunManifest> {
    let abs = |p: &Path| -> Result<PathBuf> {
        std::path::absolute(p).map_err(|e| runtime(format!("cannot resolve {}: {e}", p.display())))
    };
    let target = abs(manifest_path.parent().unwrap_or(Path::new("")))?;
    let prefix = pathdiff::diff_paths(abs(frames_dir)?, &target).unwrap_or_default();
    let entries = manifest
        .entries()
        .iter()
        .map(|e| {
            let p = prefix.join(&e.image_path);
            ManifestEntry { frame_id: e.frame_id.clone(), image_path: p.to_string_lossy().into_owned() }
        })
        .collect();
    RunManifest::new(entries, target).map_err(runtime)
}
