use std::collections::HashSet;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::formats::FrameId;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("manifest line {line}: duplicate frame `{frame_id}`")]
    DuplicateFrame { line: usize, frame_id: String },
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub frame_id: FrameId,
    /// Path of the frame image relative to the corpus root.
    pub image_path: String,
}

/// Ordered `(frame_id, image_path)` list handed to detector adapters.
///
/// On disk: UTF-8, one `frame_id<TAB>image_path` line per frame, LF endings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<ManifestEntry>,
    corpus_root: PathBuf,
}

fn check_image_path(path: &str) -> Result<(), String> {
    if path.is_empty() {
        return Err("empty image path".into());
    }
    if path.chars().any(char::is_control) {
        return Err(format!("control character in image path `{}`", path.escape_debug()));
    }
    if Path::new(path).is_absolute() {
        return Err(format!("image path `{path}` must be relative to the corpus root"));
    }
    Ok(())
}

impl RunManifest {
    pub fn new(entries: Vec<ManifestEntry>, corpus_root: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            check_image_path(&e.image_path).map_err(|reason| ManifestError::Malformed { line: i + 1, reason })?;
            if !seen.insert(&e.frame_id) {
                return Err(ManifestError::DuplicateFrame { line: i + 1, frame_id: e.frame_id.to_string() });
            }
        }
        Ok(Self { entries, corpus_root: corpus_root.into() })
    }

    pub fn parse(text: &str, corpus_root: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let (id, path) = raw.split_once('\t').ok_or_else(|| ManifestError::Malformed {
                line,
                reason: "expected `frame_id<TAB>image_path`".into(),
            })?;
            let frame_id = FrameId::new(id).map_err(|e| ManifestError::Malformed { line, reason: e.0 })?;
            let image_path = path.trim_end().to_string();
            check_image_path(&image_path).map_err(|reason| ManifestError::Malformed { line, reason })?;
            entries.push(ManifestEntry { frame_id, image_path });
        }
        Self::new(entries, corpus_root)
    }

    /// Reads a manifest file; image paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_owned(), source })?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn corpus_root(&self) -> &Path {
        &self.corpus_root
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.corpus_root.join(&entry.image_path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e.frame_id.as_str());
            out.push('\t');
            out.push_str(&e.image_path);
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the serialized manifest; the detection cache key.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
