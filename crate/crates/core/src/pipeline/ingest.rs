use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use super::manifest::{ManifestEntry, RunManifest};
use super::process::{Invocation, ProcessLauncher, Termination};
use crate::formats::FrameId;

/// File-name pattern handed to the extractor as `{pattern}`.
pub const FRAME_PATTERN: &str = "frame_%06d.png";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("video file {} does not exist", .0.display())]
    VideoNotFound(PathBuf),
    #[error("invalid extractor command: {0}")]
    InvalidCommand(String),
    #[error("frame extractor {reason}{}", if .diagnostics.trim().is_empty() { String::new() } else { format!("; diagnostics:\n{}", .diagnostics.trim_end()) })]
    ExtractorFailed { code: Option<i32>, reason: String, diagnostics: String },
    #[error("no frames matching frame_NNNNNN.* in {}", .0.display())]
    NoFramesProduced(PathBuf),
    #[error("frame index {index} appears twice in {}", .dir.display())]
    DuplicateFrameIndex { dir: PathBuf, index: u64 },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// External frame extractor, e.g.
/// `ffmpeg -loglevel error -i {input} -vf fps={fps} {outdir}/{pattern}`.
///
/// `{input}`, `{outdir}` and `{pattern}` are required; `{fps}` is
/// substituted when a frame rate is requested and must then be present.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorConfig {
    pub command_template: String,
    pub timeout: Option<Duration>,
}

impl ExtractorConfig {
    pub fn new(command_template: impl Into<String>) -> Self {
        Self { command_template: command_template.into(), timeout: None }
    }

    fn invocation(&self, input: &Path, outdir: &Path, fps: Option<f64>) -> Result<Invocation, IngestError> {
        for p in ["{input}", "{outdir}", "{pattern}"] {
            if !self.command_template.contains(p) {
                return Err(IngestError::InvalidCommand(format!("missing placeholder {p}")));
            }
        }
        let has_fps = self.command_template.contains("{fps}");
        let fps_text = match (fps, has_fps) {
            (Some(f), true) if f.is_finite() && f > 0.0 => format!("{f}"),
            (Some(f), true) => return Err(IngestError::InvalidCommand(format!("fps must be positive, got {f}"))),
            (Some(_), false) => return Err(IngestError::InvalidCommand("fps requested but command has no {fps} placeholder".into())),
            (None, true) => return Err(IngestError::InvalidCommand("command uses {fps} but no fps was given".into())),
            (None, false) => String::new(),
        };
        let words = shlex::split(&self.command_template)
            .filter(|w| !w.is_empty())
            .ok_or_else(|| IngestError::InvalidCommand("empty command or unbalanced quotes".into()))?;
        let mut words = words.into_iter().map(|w| {
            w.replace("{input}", &input.to_string_lossy())
                .replace("{outdir}", &outdir.to_string_lossy())
                .replace("{pattern}", FRAME_PATTERN)
                .replace("{fps}", &fps_text)
        });
        let program = words.next().unwrap_or_default();
        Ok(Invocation { program, args: words.collect(), working_dir: None, env: vec![], timeout: self.timeout })
    }
}

/// Parses `frame_<digits>.<ext>`, requiring at least six digits.
fn frame_index(name: &str) -> Option<u64> {
    let rest = name.strip_prefix("frame_")?;
    let (digits, ext) = rest.split_once('.')?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if ext.is_empty() || !ext.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return None;
    }
    digits.parse().ok()
}

/// Builds a manifest from the extracted frames already in `dir`, in numeric
/// order. Frame ids are the zero-padded indices.
pub fn scan_frames(dir: &Path) -> Result<RunManifest, IngestError> {
    let io_err = |source| IngestError::Io { path: dir.to_owned(), source };
    let mut found: Vec<(u64, String)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let Some(name) = entry.file_name().to_str().map(str::to_owned) else { continue };
        if let Some(idx) = frame_index(&name) {
            if entry.file_type().map_err(io_err)?.is_file() {
                found.push((idx, name));
            }
        }
    }
    found.sort();
    if let Some(w) = found.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(IngestError::DuplicateFrameIndex { dir: dir.to_owned(), index: w[0].0 });
    }
    let entries = found
        .into_iter()
        .map(|(idx, name)| ManifestEntry {
            frame_id: FrameId::new(format!("{idx:06}")).expect("digits form a valid frame id"),
            image_path: name,
        })
        .collect();
    Ok(RunManifest::new(entries, dir).expect("indices are unique and names relative"))
}

/// Extracts frames from a video with an external tool and returns the
/// resulting manifest. With `reuse`, an already populated `output_dir` is
/// scanned without running the extractor.
pub fn ingest_frames(
    video_path: &Path,
    extractor: &ExtractorConfig,
    output_dir: &Path,
    fps: Option<f64>,
    reuse: bool,
    launcher: &dyn ProcessLauncher,
) -> Result<RunManifest, IngestError> {
    if !video_path.is_file() {
        return Err(IngestError::VideoNotFound(video_path.to_owned()));
    }
    let invocation = extractor.invocation(video_path, output_dir, fps)?;
    std::fs::create_dir_all(output_dir).map_err(|source| IngestError::Io { path: output_dir.to_owned(), source })?;

    if reuse {
        let existing = scan_frames(output_dir)?;
        if !existing.is_empty() {
            return Ok(existing);
        }
    }

    let report = launcher.launch(&invocation).map_err(|e| IngestError::ExtractorFailed {
        code: None,
        reason: format!("could not launch {}: {e}", invocation.program),
        diagnostics: String::new(),
    })?;
    let failure = match report.termination {
        Termination::Exited(0) => None,
        Termination::Exited(c) => Some((Some(c), format!("exited with status {c}"))),
        Termination::Signaled => Some((None, "killed by a signal".to_string())),
        Termination::TimedOut => Some((None, "timed out".to_string())),
    };
    if let Some((code, reason)) = failure {
        return Err(IngestError::ExtractorFailed { code, reason, diagnostics: report.stderr });
    }
    let manifest = scan_frames(output_dir)?;
    if manifest.is_empty() {
        return Err(IngestError::NoFramesProduced(output_dir.to_owned()));
    }
    Ok(manifest)
}
