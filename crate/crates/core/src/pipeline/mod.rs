//! End-to-end orchestration: manifests, external detector adapters, the
//! detection cache, evaluation reports and SVG rendering.

mod adapter;
mod evaluate;
mod imageinfo;
mod ingest;
mod manifest;
mod process;
mod render;

pub use adapter::{run_adapter, AdapterConfig, AdapterError, AdapterRun, CacheMode, ConfigError, FailureKind};
pub use evaluate::{evaluate, EvalDiagnostics, EvaluationConfig, EvaluationError, EvaluationReport, ThresholdResult, VideoGrouping};
pub use imageinfo::image_dimensions;
pub use ingest::{ingest_frames, scan_frames, ExtractorConfig, IngestError, FRAME_PATTERN};
pub use manifest::{ManifestEntry, ManifestError, RunManifest};
pub use process::{Invocation, ProcessLauncher, ProcessReport, SystemLauncher, Termination};
pub use render::{overlay_file_names, overlay_svg, plot_roc, render_overlays, roc_csv, roc_svg, RenderError};

use std::io::{self, Write};
use std::path::Path;

/// Writes `bytes` to `path` through a sibling temporary file and a rename,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
