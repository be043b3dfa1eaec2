//! Corpus file formats.
//!
//! * FDDB ellipse annotations: blocks of `name`, `count`, then `count` lines
//!   of `major_radius minor_radius angle center_x center_y 1`.
//! * FDDB rectangle detections: same block layout with
//!   `left top width height score` lines.
//! * Canonical CSV: `frame_id,x,y,w,h` for annotations and
//!   `frame_id,x,y,w,h,score` for detections. A row whose numeric fields are
//!   all empty marks a frame that is present but has no boxes.
//!
//! Every parse error carries the 1-based line number where it was detected.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::geometry::{ellipse_to_bbox, BoundingBox, Detection, EllipseRegion};

pub const CSV_ANNOTATION_HEADER: [&str; 5] = ["frame_id", "x", "y", "w", "h"];
pub const CSV_DETECTION_HEADER: [&str; 6] = ["frame_id", "x", "y", "w", "h", "score"];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: malformed block: {reason}")]
    MalformedBlock { line: usize, reason: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: bad header: expected `{expected}`, found `{found}`")]
    BadHeader { line: usize, expected: String, found: String },
    #[error("line {line}: invalid geometry: {reason}")]
    InvalidGeometry { line: usize, reason: String },
    #[error("line {line}: invalid frame id: {reason}")]
    InvalidFrameId { line: usize, reason: String },
    #[error("line {line}: duplicate frame `{frame_id}`")]
    DuplicateFrame { line: usize, frame_id: String },
    #[error("line {line}: input is not valid UTF-8")]
    Encoding { line: usize },
    #[error("line {line}: read failed: {source}")]
    Io {
        line: usize,
        #[source]
        source: io::Error,
    },
}

impl FormatError {
    pub fn line(&self) -> usize {
        match self {
            FormatError::MalformedBlock { line, .. }
            | FormatError::MalformedRow { line, .. }
            | FormatError::BadHeader { line, .. }
            | FormatError::InvalidGeometry { line, .. }
            | FormatError::InvalidFrameId { line, .. }
            | FormatError::DuplicateFrame { line, .. }
            | FormatError::Encoding { line }
            | FormatError::Io { line, .. } => *line,
        }
    }
}

/// Opaque frame key: an image path or a video frame index.
///
/// Non-empty, no control characters, no leading or trailing whitespace, so
/// that it survives every line-oriented format unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId(String);

impl FrameId {
    pub fn new(id: impl Into<String>) -> Result<Self, InvalidFrameId> {
        let id = id.into();
        if id.is_empty() {
            return Err(InvalidFrameId("empty frame id".into()));
        }
        if id.chars().any(char::is_control) {
            return Err(InvalidFrameId(format!("control character in `{}`", id.escape_debug())));
        }
        if id.trim() != id {
            return Err(InvalidFrameId(format!("surrounding whitespace in `{id}`")));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct InvalidFrameId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("duplicate frame `{0}`")]
pub struct DuplicateFrame(pub FrameId);

pub trait Frame {
    fn frame_id(&self) -> &FrameId;
}

/// Ground-truth boxes for one frame. An empty list means the frame was
/// annotated and contains no face.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub frame_id: FrameId,
    pub ground_truth: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_id: FrameId,
    pub detections: Vec<Detection>,
}

impl Frame for FrameAnnotation {
    fn frame_id(&self) -> &FrameId {
        &self.frame_id
    }
}

impl Frame for FrameDetections {
    fn frame_id(&self) -> &FrameId {
        &self.frame_id
    }
}

/// Ordered frames with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<F> {
    frames: Vec<F>,
    source_path: String,
}

pub type AnnotationCorpus = Corpus<FrameAnnotation>;
pub type DetectionCorpus = Corpus<FrameDetections>;

impl<F: Frame> Corpus<F> {
    pub fn new(frames: Vec<F>, source_path: impl Into<String>) -> Result<Self, DuplicateFrame> {
        let mut seen = std::collections::HashSet::with_capacity(frames.len());
        for f in &frames {
            if !seen.insert(f.frame_id()) {
                return Err(DuplicateFrame(f.frame_id().clone()));
            }
        }
        Ok(Self { frames, source_path: source_path.into() })
    }

    pub fn empty(source_path: impl Into<String>) -> Self {
        Self { frames: Vec::new(), source_path: source_path.into() }
    }

    pub fn frames(&self) -> &[F] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<F> {
        self.frames
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn with_source_path(mut self, source_path: impl Into<String>) -> Self {
        self.source_path = source_path.into();
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Index from frame id to position in [`Corpus::frames`].
    pub fn index(&self) -> HashMap<&FrameId, usize> {
        self.frames.iter().enumerate().map(|(i, f)| (f.frame_id(), i)).collect()
    }
}

impl DetectionCorpus {
    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }
}

impl AnnotationCorpus {
    pub fn ground_truth_count(&self) -> usize {
        self.frames.iter().map(|f| f.ground_truth.len()).sum()
    }
}

/// Parses a real in integer, decimal or scientific notation. Non-finite
/// spellings (`inf`, `nan`) are rejected.
fn parse_real(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

struct Lines<R> {
    reader: R,
    line: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R) -> Self {
        Self { reader, line: 0, buf: Vec::new() }
    }

    /// Next line without its terminator, or `None` at end of input.
    fn next_line(&mut self) -> Result<Option<String>, FormatError> {
        self.buf.clear();
        let n = self
            .reader
            .read_until(b'\n', &mut self.buf)
            .map_err(|source| FormatError::Io { line: self.line + 1, source })?;
        if n == 0 {
            return Ok(None);
        }
        self.line += 1;
        if self.buf.last() == Some(&b'\n') {
            self.buf.pop();
        }
        if self.buf.last() == Some(&b'\r') {
            self.buf.pop();
        }
        match std::str::from_utf8(&self.buf) {
            Ok(s) => Ok(Some(s.to_owned())),
            Err(_) => Err(FormatError::Encoding { line: self.line }),
        }
    }
}

/// Parses FDDB blocks, handing each box line's whitespace-split fields to
/// `parse_item`.
fn parse_fddb_blocks<R, T, P>(reader: R, mut parse_item: P) -> Result<Vec<(FrameId, Vec<T>, usize)>, FormatError>
where
    R: BufRead,
    P: FnMut(&[&str], usize) -> Result<T, FormatError>,
{
    let mut lines = Lines::new(reader);
    let mut blocks = Vec::new();
    let mut seen: HashMap<FrameId, usize> = HashMap::new();
    loop {
        let name = match lines.next_line()? {
            None => break,
            Some(l) if l.trim().is_empty() => continue,
            Some(l) => l,
        };
        let name_line = lines.line;
        let frame_id = FrameId::new(name.trim())
            .map_err(|e| FormatError::InvalidFrameId { line: name_line, reason: e.0 })?;
        if seen.contains_key(&frame_id) {
            return Err(FormatError::DuplicateFrame { line: name_line, frame_id: frame_id.0 });
        }
        let count_text = lines.next_line()?.ok_or_else(|| FormatError::MalformedBlock {
            line: lines.line + 1,
            reason: format!("missing face count for `{frame_id}`"),
        })?;
        let count: usize = count_text.trim().parse().map_err(|_| FormatError::MalformedBlock {
            line: lines.line,
            reason: format!("face count `{}` is not a nonnegative integer", count_text.trim()),
        })?;
        let mut items = Vec::new();
        for k in 0..count {
            let text = lines.next_line()?.ok_or_else(|| FormatError::MalformedBlock {
                line: lines.line + 1,
                reason: format!("`{frame_id}` declares {count} faces but only {k} lines follow"),
            })?;
            let fields: Vec<&str> = text.split_whitespace().collect();
            items.push(parse_item(&fields, lines.line)?);
        }
        seen.insert(frame_id.clone(), name_line);
        blocks.push((frame_id, items, name_line));
    }
    Ok(blocks)
}

fn numeric_fields<const N: usize>(fields: &[&str], line: usize) -> Result<[f64; N], FormatError> {
    let mut out = [0.0; N];
    for (slot, field) in out.iter_mut().zip(fields) {
        *slot = parse_real(field).ok_or_else(|| FormatError::MalformedBlock {
            line,
            reason: format!("non-numeric field `{field}`"),
        })?;
    }
    Ok(out)
}

/// Parses FDDB ellipse annotations, converting every ellipse to its
/// bounding rectangle.
pub fn parse_fddb_annotations<R: BufRead>(reader: R) -> Result<AnnotationCorpus, FormatError> {
    let blocks = parse_fddb_blocks(reader, |fields, line| {
        if fields.len() != 5 && fields.len() != 6 {
            return Err(FormatError::MalformedBlock {
                line,
                reason: format!("ellipse line has {} fields, expected 6", fields.len()),
            });
        }
        let [a, b, theta, cx, cy, ..] = numeric_fields::<6>(fields, line)?;
        let ellipse = EllipseRegion::new(cx, cy, a, b, theta)
            .map_err(|e| FormatError::InvalidGeometry { line, reason: e.to_string() })?;
        Ok(ellipse_to_bbox(&ellipse))
    })?;
    let frames = blocks
        .into_iter()
        .map(|(frame_id, ground_truth, _)| FrameAnnotation { frame_id, ground_truth })
        .collect();
    Ok(Corpus { frames, source_path: String::new() })
}

/// Parses FDDB rectangle detections (`left top width height score`).
pub fn parse_fddb_detections<R: BufRead>(reader: R) -> Result<DetectionCorpus, FormatError> {
    let blocks = parse_fddb_blocks(reader, |fields, line| {
        if fields.len() != 5 {
            return Err(FormatError::MalformedBlock {
                line,
                reason: format!("detection line has {} fields, expected 5", fields.len()),
            });
        }
        let [x, y, w, h, score] = numeric_fields::<5>(fields, line)?;
        let bbox = BoundingBox::new(x, y, w, h)
            .map_err(|e| FormatError::InvalidGeometry { line, reason: e.to_string() })?;
        Detection::new(bbox, score).map_err(|e| FormatError::InvalidGeometry { line, reason: e.to_string() })
    })?;
    let frames = blocks
        .into_iter()
        .map(|(frame_id, detections, _)| FrameDetections { frame_id, detections })
        .collect();
    Ok(Corpus { frames, source_path: String::new() })
}

/// Splits one CSV record. Quoted fields may contain commas and doubled
/// quotes; records never span lines because frame ids exclude line breaks.
fn split_csv_line(text: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut chars = text.chars().peekable();
    loop {
        let mut field = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') if chars.peek() == Some(&'"') => {
                        chars.next();
                        field.push('"');
                    }
                    Some('"') => break,
                    Some(c) => field.push(c),
                    None => return Err("unterminated quoted field".into()),
                }
            }
            match chars.next() {
                None => {
                    fields.push(field);
                    return Ok(fields);
                }
                Some(',') => fields.push(field),
                Some(c) => return Err(format!("unexpected `{c}` after quoted field")),
            }
        } else {
            loop {
                match chars.next() {
                    None => {
                        fields.push(field);
                        return Ok(fields);
                    }
                    Some(',') => break,
                    Some('"') => return Err("stray quote in unquoted field".into()),
                    Some(c) => field.push(c),
                }
            }
            fields.push(field);
        }
    }
}

/// Shared CSV reader: validates the header, groups rows by frame id in
/// first-appearance order and hands non-empty rows to `parse_item`.
fn parse_csv_grouped<R, T, P>(reader: R, header: &[&str], mut parse_item: P) -> Result<Vec<(FrameId, Vec<T>)>, FormatError>
where
    R: BufRead,
    P: FnMut(&[f64], usize) -> Result<T, FormatError>,
{
    let mut lines = Lines::new(reader);
    let mut groups: Vec<(FrameId, Vec<T>)> = Vec::new();
    let mut slot: HashMap<FrameId, usize> = HashMap::new();
    let mut header_seen = false;
    while let Some(text) = lines.next_line()? {
        let line = lines.line;
        if text.trim().is_empty() {
            continue;
        }
        let record = split_csv_line(&text).map_err(|reason| FormatError::MalformedRow { line, reason })?;
        if !header_seen {
            header_seen = true;
            let found: Vec<&str> = record.iter().map(|f| f.trim()).collect();
            if found != header {
                return Err(FormatError::BadHeader {
                    line,
                    expected: header.join(","),
                    found: found.join(","),
                });
            }
            continue;
        }
        if record.len() != header.len() {
            return Err(FormatError::MalformedRow {
                line,
                reason: format!("{} fields, expected {}", record.len(), header.len()),
            });
        }
        let frame_id = FrameId::new(record[0].trim())
            .map_err(|e| FormatError::InvalidFrameId { line, reason: e.0 })?;
        let idx = *slot.entry(frame_id.clone()).or_insert_with(|| {
            groups.push((frame_id, Vec::new()));
            groups.len() - 1
        });
        let rest: Vec<&str> = record.iter().skip(1).map(|f| f.trim()).collect();
        if rest.iter().all(|f| f.is_empty()) {
            continue;
        }
        let mut values = Vec::with_capacity(rest.len());
        for field in &rest {
            values.push(parse_real(field).ok_or_else(|| FormatError::MalformedRow {
                line,
                reason: format!("non-numeric field `{field}`"),
            })?);
        }
        let item = parse_item(&values, line)?;
        groups[idx].1.push(item);
    }
    Ok(groups)
}

fn csv_box(values: &[f64], line: usize) -> Result<BoundingBox, FormatError> {
    BoundingBox::new(values[0], values[1], values[2], values[3])
        .map_err(|e| FormatError::InvalidGeometry { line, reason: e.to_string() })
}

/// Parses canonical annotation CSV (`frame_id,x,y,w,h`). Empty input is an
/// empty corpus.
pub fn parse_csv_annotations<R: BufRead>(reader: R) -> Result<AnnotationCorpus, FormatError> {
    let groups = parse_csv_grouped(reader, &CSV_ANNOTATION_HEADER, csv_box)?;
    let frames = groups
        .into_iter()
        .map(|(frame_id, ground_truth)| FrameAnnotation { frame_id, ground_truth })
        .collect();
    Ok(Corpus { frames, source_path: String::new() })
}

/// Parses canonical detection CSV (`frame_id,x,y,w,h,score`).
pub fn parse_csv_detections<R: BufRead>(reader: R) -> Result<DetectionCorpus, FormatError> {
    let groups = parse_csv_grouped(reader, &CSV_DETECTION_HEADER, |values, line| {
        Detection::new(csv_box(values, line)?, values[4])
            .map_err(|e| FormatError::InvalidGeometry { line, reason: e.to_string() })
    })?;
    let frames = groups
        .into_iter()
        .map(|(frame_id, detections)| FrameDetections { frame_id, detections })
        .collect();
    Ok(Corpus { frames, source_path: String::new() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionFormat {
    Fddb,
    Csv,
}

/// Shortest decimal that round-trips; Rust's `Display` for `f64` never
/// emits an exponent.
fn real(v: f64) -> String {
    format!("{v}")
}

/// Quotes a CSV field when it contains a comma or a quote.
fn csv_field(text: &str) -> std::borrow::Cow<'_, str> {
    if text.contains([',', '"']) {
        format!("\"{}\"", text.replace('"', "\"\"")).into()
    } else {
        text.into()
    }
}

pub fn write_detections_to<W: Write>(mut out: W, corpus: &DetectionCorpus, format: DetectionFormat) -> io::Result<()> {
    match format {
        DetectionFormat::Fddb => {
            for frame in corpus.frames() {
                writeln!(out, "{}", frame.frame_id)?;
                writeln!(out, "{}", frame.detections.len())?;
                for d in &frame.detections {
                    let b = d.bbox;
                    writeln!(out, "{} {} {} {} {}", real(b.x()), real(b.y()), real(b.w()), real(b.h()), real(d.score()))?;
                }
            }
            Ok(())
        }
        DetectionFormat::Csv => {
            writeln!(out, "{}", CSV_DETECTION_HEADER.join(","))?;
            for frame in corpus.frames() {
                let id = csv_field(frame.frame_id.as_str());
                if frame.detections.is_empty() {
                    writeln!(out, "{id},,,,,")?;
                }
                for d in &frame.detections {
                    let b = d.bbox;
                    writeln!(out, "{id},{},{},{},{},{}", real(b.x()), real(b.y()), real(b.w()), real(b.h()), real(d.score()))?;
                }
            }
            Ok(())
        }
    }
}

/// Canonical text form of a detection corpus.
pub fn write_detections(corpus: &DetectionCorpus, format: DetectionFormat) -> String {
    let mut buf = Vec::new();
    write_detections_to(&mut buf, corpus, format).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("writers emit UTF-8")
}

pub fn write_annotations_to<W: Write>(mut out: W, corpus: &AnnotationCorpus) -> io::Result<()> {
    writeln!(out, "{}", CSV_ANNOTATION_HEADER.join(","))?;
    for frame in corpus.frames() {
        let id = csv_field(frame.frame_id.as_str());
        if frame.ground_truth.is_empty() {
            writeln!(out, "{id},,,,")?;
        }
        for b in &frame.ground_truth {
            writeln!(out, "{id},{},{},{},{}", real(b.x()), real(b.y()), real(b.w()), real(b.h()))?;
        }
    }
    Ok(())
}

/// Canonical annotation CSV.
pub fn write_annotations(corpus: &AnnotationCorpus) -> String {
    let mut buf = Vec::new();
    write_annotations_to(&mut buf, corpus).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("writers emit UTF-8")
}
