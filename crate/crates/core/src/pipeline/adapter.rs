use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use super::manifest::RunManifest;
use super::process::{Invocation, ProcessLauncher, Termination};
use super::write_atomic;
use crate::formats::{parse_csv_detections, write_detections, Corpus, DetectionCorpus, DetectionFormat, FormatError, FrameDetections, FrameId};

const MANIFEST_PLACEHOLDER: &str = "{manifest}";
const OUTPUT_PLACEHOLDER: &str = "{output}";
const ROOT_PLACEHOLDER: &str = "{root}";
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{reason}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub reason: String,
}

impl ConfigError {
    fn new(reason: impl Into<String>) -> Self {
        Self { line: None, reason: reason.into() }
    }

    fn at(line: usize, reason: impl Into<String>) -> Self {
        Self { line: Some(line), reason: reason.into() }
    }
}

/// How to launch one external detector.
///
/// `command_template` is split shell-style into a program and arguments
/// (no shell is involved); `{manifest}` and `{output}` must each appear
/// exactly once and are replaced by file paths, `{root}` optionally by the
/// corpus root.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterConfig {
    pub name: String,
    pub command_template: String,
    pub working_dir: Option<PathBuf>,
    pub timeout: Duration,
    pub env: Vec<(String, String)>,
}

impl AdapterConfig {
    pub fn new(name: impl Into<String>, command_template: impl Into<String>) -> Result<Self, ConfigError> {
        let cfg = Self {
            name: name.into(),
            command_template: command_template.into(),
            working_dir: None,
            timeout: DEFAULT_TIMEOUT,
            env: Vec::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let name_ok = !self.name.is_empty()
            && !self.name.starts_with('.')
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !name_ok {
            return Err(ConfigError::new(format!(
                "adapter name `{}` must be non-empty, use only [A-Za-z0-9._-] and not start with `.`",
                self.name
            )));
        }
        for placeholder in [MANIFEST_PLACEHOLDER, OUTPUT_PLACEHOLDER] {
            let n = self.command_template.matches(placeholder).count();
            if n != 1 {
                return Err(ConfigError::new(format!(
                    "command must contain {placeholder} exactly once (found {n})"
                )));
            }
        }
        match shlex::split(&self.command_template) {
            Some(words) if !words.is_empty() => {}
            Some(_) => return Err(ConfigError::new("command is empty")),
            None => return Err(ConfigError::new("command has unbalanced quotes")),
        }
        if self.timeout.is_zero() {
            return Err(ConfigError::new("timeout must be positive"));
        }
        Ok(())
    }

    /// Parses `key=value` lines: `name`, `command`, `workdir`,
    /// `timeout_seconds` and any number of `env.KEY`. Blank lines and lines
    /// starting with `#` are skipped. A relative `workdir` resolves against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut name = None;
        let mut command = None;
        let mut working_dir = None;
        let mut timeout = DEFAULT_TIMEOUT;
        let mut env = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::at(line, format!("duplicate key `{key}`")));
            }
            match key {
                "name" => name = Some(value.to_string()),
                "command" => command = Some(value.to_string()),
                "workdir" => working_dir = Some(base_dir.join(value)),
                "timeout_seconds" => {
                    let secs: f64 = value
                        .parse()
                        .ok()
                        .filter(|s: &f64| s.is_finite() && *s > 0.0)
                        .ok_or_else(|| ConfigError::at(line, format!("timeout_seconds `{value}` is not a positive number")))?;
                    timeout = Duration::try_from_secs_f64(secs)
                        .map_err(|_| ConfigError::at(line, format!("timeout_seconds `{value}` out of range")))?;
                }
                k if k.starts_with("env.") && k.len() > 4 => env.push((k[4..].to_string(), value.to_string())),
                other => return Err(ConfigError::at(line, format!("unknown key `{other}`"))),
            }
        }
        let cfg = Self {
            name: name.ok_or_else(|| ConfigError::new("missing `name`"))?,
            command_template: command.ok_or_else(|| ConfigError::new("missing `command`"))?,
            working_dir,
            timeout,
            env,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read adapter config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Resolves the template for concrete paths.
    pub fn invocation(&self, manifest: &Path, output: &Path, root: &Path) -> Invocation {
        let subst = |word: String| {
            word.replace(MANIFEST_PLACEHOLDER, &manifest.to_string_lossy())
                .replace(OUTPUT_PLACEHOLDER, &output.to_string_lossy())
                .replace(ROOT_PLACEHOLDER, &root.to_string_lossy())
        };
        let mut words = shlex::split(&self.command_template).unwrap_or_default().into_iter().map(subst);
        let program = words.next().unwrap_or_default();
        let mut env = self.env.clone();
        env.push(("FACEBENCH_CORPUS_ROOT".into(), root.to_string_lossy().into_owned()));
        Invocation {
            program,
            args: words.collect(),
            working_dir: self.working_dir.clone(),
            env,
            timeout: Some(self.timeout),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureKind {
    Exit(i32),
    Signal,
    Timeout(Duration),
    Launch(String),
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureKind::Exit(code) => write!(f, "exited with status {code}"),
            FailureKind::Signal => write!(f, "killed by a signal"),
            FailureKind::Timeout(t) => write!(f, "timed out after {:.3}s", t.as_secs_f64()),
            FailureKind::Launch(e) => write!(f, "could not be launched: {e}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("invalid adapter config: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("adapter `{name}` {kind}{}", diagnostics_suffix(.diagnostics))]
    AdapterFailed { name: String, kind: FailureKind, diagnostics: String },
    #[error("adapter `{name}` did not write its output file {}", .path.display())]
    OutputMissing { name: String, path: PathBuf },
    #[error("adapter `{name}` wrote malformed output: {source}")]
    AdapterOutputMalformed {
        name: String,
        #[source]
        source: FormatError,
    },
    #[error("detection cache {}: {source}", .path.display())]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scratch directory: {0}")]
    Scratch(#[source] std::io::Error),
}

fn diagnostics_suffix(d: &str) -> String {
    if d.trim().is_empty() {
        String::new()
    } else {
        format!("; diagnostics:\n{}", d.trim_end())
    }
}

/// Cache behaviour for [`run_adapter`]. The cache file for a run lives at
/// `<dir>/<adapter name>/<manifest digest>.csv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheMode {
    Disabled,
    /// Serve hits, store misses.
    ReadWrite(PathBuf),
    /// Always launch the adapter, then overwrite the entry.
    Refresh(PathBuf),
}

impl CacheMode {
    fn entry(&self, adapter: &str, digest: &str) -> Option<PathBuf> {
        match self {
            CacheMode::Disabled => None,
            CacheMode::ReadWrite(dir) | CacheMode::Refresh(dir) => Some(dir.join(adapter).join(format!("{digest}.csv"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterRun {
    /// One frame per manifest entry, in manifest order.
    pub detections: DetectionCorpus,
    /// Manifest frames the adapter did not report; scored as zero detections.
    pub missing_frames: Vec<FrameId>,
    /// Frames the adapter reported that are not in the manifest; dropped.
    pub unexpected_frames: Vec<FrameId>,
    pub from_cache: bool,
    /// Captured error stream of the adapter (empty on a cache hit).
    pub diagnostics: String,
    pub cache_path: Option<PathBuf>,
}

/// Reorders adapter output to manifest order, filling gaps with empty frames.
fn normalize(raw: DetectionCorpus, manifest: &RunManifest) -> (DetectionCorpus, Vec<FrameId>, Vec<FrameId>) {
    let wanted: HashSet<&FrameId> = manifest.entries().iter().map(|e| &e.frame_id).collect();
    let mut unexpected = Vec::new();
    let mut by_id: HashMap<FrameId, FrameDetections> = HashMap::new();
    for frame in raw.into_frames() {
        if wanted.contains(&frame.frame_id) {
            by_id.insert(frame.frame_id.clone(), frame);
        } else {
            unexpected.push(frame.frame_id);
        }
    }
    let mut missing = Vec::new();
    let frames = manifest
        .entries()
        .iter()
        .map(|e| {
            by_id.remove(&e.frame_id).unwrap_or_else(|| {
                missing.push(e.frame_id.clone());
                FrameDetections { frame_id: e.frame_id.clone(), detections: Vec::new() }
            })
        })
        .collect();
    let corpus = Corpus::new(frames, "").expect("manifest frame ids are unique");
    (corpus, missing, unexpected)
}

/// Runs an adapter over a manifest, or serves its earlier result from the
/// cache.
///
/// The adapter receives a manifest file and must write canonical detection
/// CSV to the output path. Cache entries hold the normalized corpus and are
/// published atomically, so a crashed adapter never leaves a partial entry.
pub fn run_adapter(
    config: &AdapterConfig,
    manifest: &RunManifest,
    cache: &CacheMode,
    launcher: &dyn ProcessLauncher,
) -> Result<AdapterRun, AdapterError> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(AdapterError::EmptyManifest);
    }
    let cache_path = cache.entry(&config.name, &manifest.digest());

    if let (CacheMode::ReadWrite(_), Some(path)) = (cache, &cache_path) {
        if path.is_file() {
            let file = std::fs::File::open(path).map_err(|source| AdapterError::Cache { path: path.clone(), source })?;
            if let Ok(corpus) = parse_csv_detections(std::io::BufReader::new(file)) {
                let (detections, missing_frames, unexpected_frames) = normalize(corpus, manifest);
                return Ok(AdapterRun {
                    detections: detections.with_source_path(path.to_string_lossy()),
                    missing_frames,
                    unexpected_frames,
                    from_cache: true,
                    diagnostics: String::new(),
                    cache_path,
                });
            }
            // An unreadable entry is treated as a miss and overwritten below.
        }
    }

    let scratch = tempfile::Builder::new().prefix("facebench-").tempdir().map_err(AdapterError::Scratch)?;
    let manifest_path = scratch.path().join("manifest.tsv");
    let output_path = scratch.path().join("detections.csv");
    std::fs::write(&manifest_path, manifest.to_text()).map_err(AdapterError::Scratch)?;

    let invocation = config.invocation(&manifest_path, &output_path, manifest.corpus_root());
    let report = launcher.launch(&invocation).map_err(|e| AdapterError::AdapterFailed {
        name: config.name.clone(),
        kind: FailureKind::Launch(format!("{}: {e}", invocation.program)),
        diagnostics: String::new(),
    })?;
    let kind = match report.termination {
        Termination::Exited(0) => None,
        Termination::Exited(code) => Some(FailureKind::Exit(code)),
        Termination::Signaled => Some(FailureKind::Signal),
        Termination::TimedOut => Some(FailureKind::Timeout(config.timeout)),
    };
    if let Some(kind) = kind {
        return Err(AdapterError::AdapterFailed { name: config.name.clone(), kind, diagnostics: report.stderr });
    }

    let file = std::fs::File::open(&output_path)
        .map_err(|_| AdapterError::OutputMissing { name: config.name.clone(), path: output_path.clone() })?;
    let raw = parse_csv_detections(std::io::BufReader::new(file))
        .map_err(|source| AdapterError::AdapterOutputMalformed { name: config.name.clone(), source })?;
    let (detections, missing_frames, unexpected_frames) = normalize(raw, manifest);

    if let Some(path) = &cache_path {
        let text = write_detections(&detections, DetectionFormat::Csv);
        write_atomic(path, text.as_bytes()).map_err(|source| AdapterError::Cache { path: path.clone(), source })?;
    }
    Ok(AdapterRun {
        detections: detections.with_source_path(config.name.clone()),
        missing_frames,
        unexpected_frames,
        from_cache: false,
        diagnostics: report.stderr,
        cache_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::FrameId;
    use crate::pipeline::manifest::ManifestEntry;
    use crate::pipeline::process::ProcessReport;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Writes a fixed CSV to the `{output}` argument and counts launches.
    struct Scripted {
        csv: String,
        termination: Termination,
        launches: AtomicUsize,
    }

    impl Scripted {
        fn ok(csv: &str) -> Self {
            Self { csv: csv.into(), termination: Termination::Exited(0), launches: AtomicUsize::new(0) }
        }
    }

    impl ProcessLauncher for Scripted {
        fn launch(&self, inv: &Invocation) -> std::io::Result<ProcessReport> {
            self.launches.fetch_add(1, Ordering::SeqCst);
            let out = inv.args.iter().find(|a| a.ends_with("detections.csv")).unwrap();
            std::fs::write(out, &self.csv)?;
            Ok(ProcessReport { termination: self.termination, stdout: String::new(), stderr: "model loaded\n".into() })
        }
    }

    fn manifest(ids: &[&str]) -> RunManifest {
        let entries = ids
            .iter()
            .map(|id| ManifestEntry { frame_id: FrameId::new(*id).unwrap(), image_path: format!("{id}.png") })
            .collect();
        RunManifest::new(entries, "/corpus").unwrap()
    }

    fn config() -> AdapterConfig {
        AdapterConfig::new("mock", "detector --in {manifest} --out {output}").unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(AdapterConfig::new("mock", "det {manifest}").is_err());
        assert!(AdapterConfig::new("mock", "det {manifest} {output} {output}").is_err());
        assert!(AdapterConfig::new("../evil", "det {manifest} {output}").is_err());
        assert!(AdapterConfig::new("mock", "det '{manifest} {output}").is_err());
    }

    #[test]
    fn config_file_parsing() {
        let text = "# detector\nname = dlib\ncommand = python3 run.py --manifest {manifest} --output '{output}'\n\
                    workdir = adapters\ntimeout_seconds = 2.5\nenv.CUDA_VISIBLE_DEVICES = 0\n";
        let cfg = AdapterConfig::parse(text, Path::new("/etc/fb")).unwrap();
        assert_eq!(cfg.name, "dlib");
        assert_eq!(cfg.working_dir, Some(PathBuf::from("/etc/fb/adapters")));
        assert_eq!(cfg.timeout, Duration::from_millis(2500));
        assert_eq!(cfg.env, vec![("CUDA_VISIBLE_DEVICES".to_string(), "0".to_string())]);

        let inv = cfg.invocation(Path::new("/tmp/m.tsv"), Path::new("/tmp/o file.csv"), Path::new("/data"));
        assert_eq!(inv.program, "python3");
        assert_eq!(inv.args, ["run.py", "--manifest", "/tmp/m.tsv", "--output", "/tmp/o file.csv"]);

        let err = AdapterConfig::parse("name=a\ncolor=red\n", Path::new("")).unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(AdapterConfig::parse("name=a\n", Path::new("")).is_err());
        assert!(AdapterConfig::parse("name=a\ncommand=x {manifest} {output}\ntimeout_seconds=0\n", Path::new("")).is_err());
    }

    #[test]
    fn normalizes_to_manifest_order() {
        let launcher = Scripted::ok("frame_id,x,y,w,h,score\nc,1,1,2,2,0.5\na,0,0,1,1,0.9\nzzz,0,0,1,1,0.1\n");
        let run = run_adapter(&config(), &manifest(&["a", "b", "c"]), &CacheMode::Disabled, &launcher).unwrap();
        let ids: Vec<_> = run.detections.frames().iter().map(|f| f.frame_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(run.missing_frames, vec![FrameId::new("b").unwrap()]);
        assert_eq!(run.unexpected_frames, vec![FrameId::new("zzz").unwrap()]);
        assert_eq!(run.diagnostics, "model loaded\n");
        assert!(!run.from_cache);
    }

    #[test]
    fn warm_cache_skips_launch() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CacheMode::ReadWrite(dir.path().to_owned());
        let launcher = Scripted::ok("frame_id,x,y,w,h,score\na,0,0,1,1,0.9\n");
        let m = manifest(&["a"]);
        let cold = run_adapter(&config(), &m, &cache, &launcher).unwrap();
        let warm = run_adapter(&config(), &m, &cache, &launcher).unwrap();
        assert_eq!(launcher.launches.load(Ordering::SeqCst), 1);
        assert!(warm.from_cache);
        assert_eq!(
            write_detections(&cold.detections, DetectionFormat::Csv),
            write_detections(&warm.detections, DetectionFormat::Csv)
        );
        let entry = dir.path().join("mock").join(format!("{}.csv", m.digest()));
        assert_eq!(cold.cache_path.as_deref(), Some(entry.as_path()));

        run_adapter(&config(), &m, &CacheMode::Refresh(dir.path().to_owned()), &launcher).unwrap();
        assert_eq!(launcher.launches.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn failures_do_not_touch_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CacheMode::ReadWrite(dir.path().to_owned());
        let mut launcher = Scripted::ok("frame_id,x,y,w,h,score\na,0,0,1,1,0.9\n");
        launcher.termination = Termination::Exited(4);
        let err = run_adapter(&config(), &manifest(&["a"]), &cache, &launcher).unwrap_err();
        match err {
            AdapterError::AdapterFailed { kind, diagnostics, .. } => {
                assert_eq!(kind, FailureKind::Exit(4));
                assert_eq!(diagnostics, "model loaded\n");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(!dir.path().join("mock").exists());

        let launcher = Scripted::ok("frame_id,x,y,w,h,score\na,0,0,0,1,0.9\n");
        let err = run_adapter(&config(), &manifest(&["a"]), &cache, &launcher).unwrap_err();
        assert!(matches!(err, AdapterError::AdapterOutputMalformed { ref name, .. } if name == "mock"));
        assert!(!dir.path().join("mock").exists());
    }

    #[test]
    fn empty_manifest_rejected() {
        let launcher = Scripted::ok("");
        let empty = RunManifest::new(vec![], "").unwrap();
        assert!(matches!(run_adapter(&config(), &empty, &CacheMode::Disabled, &launcher), Err(AdapterError::EmptyManifest)));
    }
}
