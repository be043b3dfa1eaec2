//! Stand-in detector for tests and dry runs: answers an adapter request by
//! replaying a recorded detection CSV, restricted to the manifest's frames.

use std::collections::HashMap;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use facebench_core::formats::{parse_csv_detections, write_detections};
use facebench_core::pipeline::{write_atomic, RunManifest};
use facebench_core::{Corpus, DetectionFormat};

#[derive(Parser)]
#[command(name = "facebench-replay", version, about = "Replay recorded detections through the adapter protocol")]
struct Args {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Recorded detections (canonical CSV)
    #[arg(long, value_name = "FILE")]
    source: PathBuf,
}

fn replay(args: &Args) -> Result<usize, String> {
    let manifest = RunManifest::load(&args.manifest).map_err(|e| e.to_string())?;
    let file = std::fs::File::open(&args.source).map_err(|e| format!("{}: {e}", args.source.display()))?;
    let recorded = parse_csv_detections(BufReader::new(file)).map_err(|e| format!("{}:{}: {e}", args.source.display(), e.line()))?;
    let mut by_id: HashMap<_, _> = recorded.into_frames().into_iter().map(|f| (f.frame_id.clone(), f)).collect();
    let frames: Vec<_> = manifest.entries().iter().filter_map(|e| by_id.remove(&e.frame_id)).collect();
    let n = frames.len();
    let corpus = Corpus::new(frames, "").map_err(|e| e.to_string())?;
    write_atomic(&args.output, write_detections(&corpus, DetectionFormat::Csv).as_bytes())
        .map_err(|e| format!("{}: {e}", args.output.display()))?;
    Ok(n)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match replay(&args) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("facebench-replay: {e}");
            ExitCode::FAILURE
        }
    }
}
