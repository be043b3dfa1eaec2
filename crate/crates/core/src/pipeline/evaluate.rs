use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::formats::{AnnotationCorpus, DetectionCorpus, FrameId};
use crate::matching::{match_corpus, MatchError, MatchOptions, MatchingMode};
use crate::metrics::{per_video_report, Counts, MetricsError, PrResult};

/// Label of the pooled row in every report.
pub const POOLED_ID: &str = "all";

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Matching(#[from] MatchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How frames are split into videos for per-video rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VideoGrouping {
    /// Only the pooled row.
    #[default]
    Single,
    /// Video id is the frame id up to its first `/`.
    FramePrefix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub iou_thresholds: Vec<f64>,
    pub score_threshold: Option<f64>,
    pub matching_mode: MatchingMode,
    pub grouping: VideoGrouping,
    pub workers: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.5, 0.75],
            score_threshold: None,
            matching_mode: MatchingMode::Strict,
            grouping: VideoGrouping::Single,
            workers: 1,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvaluationError::InvalidConfig("at least one IOU threshold is required".into()));
        }
        for t in &self.iou_thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(EvaluationError::InvalidConfig(format!("IOU threshold {t} outside (0, 1]")));
            }
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvaluationError::InvalidConfig("IOU thresholds must be strictly increasing".into()));
        }
        if let Some(s) = self.score_threshold {
            if !s.is_finite() {
                return Err(EvaluationError::InvalidConfig(format!("score threshold {s} is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub iou_threshold: f64,
    /// Per-video rows in first-appearance order; empty for
    /// [`VideoGrouping::Single`].
    pub videos: Vec<(String, PrResult)>,
    pub pooled: PrResult,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalDiagnostics {
    pub annotated_frames: usize,
    pub ground_truth_boxes: usize,
    pub detection_frames: usize,
    pub detections: usize,
    /// Annotated frames with no entry in the detection corpus.
    pub frames_without_detections: usize,
    /// Detection frames absent from the annotations; not scored.
    pub unannotated_frames: Vec<FrameId>,
    pub unannotated_detections: usize,
    /// Detections excluded by the score threshold or best-overlap mode, at
    /// the first IOU threshold.
    pub ignored_detections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub config: EvaluationConfig,
    pub ground_truth_source: String,
    pub detection_source: String,
    pub thresholds: Vec<ThresholdResult>,
    pub diagnostics: EvalDiagnostics,
}

fn video_of(frame_id: &FrameId) -> &str {
    frame_id.as_str().split_once('/').map_or("", |(v, _)| v)
}

fn file_label(source: &str) -> String {
    Path::new(source)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| source.to_string())
}

/// Matches and scores the detections at every configured IOU threshold.
pub fn evaluate(gts: &AnnotationCorpus, dets: &DetectionCorpus, cfg: &EvaluationConfig) -> Result<EvaluationReport, EvaluationError> {
    cfg.validate()?;
    let mut thresholds = Vec::with_capacity(cfg.iou_thresholds.len());
    let mut diagnostics = EvalDiagnostics {
        annotated_frames: gts.len(),
        ground_truth_boxes: gts.ground_truth_count(),
        detection_frames: dets.len(),
        detections: dets.detection_count(),
        ..Default::default()
    };

    for (k, &t) in cfg.iou_thresholds.iter().enumerate() {
        let opts = MatchOptions { iou_threshold: t, score_threshold: cfg.score_threshold, mode: cfg.matching_mode, workers: cfg.workers };
        let matched = match_corpus(dets, gts, &opts)?;
        if k == 0 {
            diagnostics.frames_without_detections = matched.diagnostics.frames_without_detections;
            diagnostics.unannotated_detections = matched.diagnostics.unannotated_detections;
            diagnostics.unannotated_frames = matched.diagnostics.unannotated_frames.clone();
            diagnostics.ignored_detections = matched.outcomes.iter().map(|o| o.outcome.ignored.len()).sum();
        }

        let (videos, pooled) = match cfg.grouping {
            VideoGrouping::Single => {
                let counts: Counts = matched.outcomes.iter().map(|o| Counts::of(&o.outcome)).sum();
                (Vec::new(), PrResult::from_counts(t, counts))
            }
            VideoGrouping::FramePrefix if matched.outcomes.is_empty() => (Vec::new(), PrResult::from_counts(t, Counts::default())),
            VideoGrouping::FramePrefix => {
                let mut groups: Vec<(String, Vec<_>)> = Vec::new();
                for o in &matched.outcomes {
                    let video = video_of(&o.frame_id);
                    match groups.iter_mut().find(|(v, _)| v == video) {
                        Some((_, list)) => list.push(o.outcome.clone()),
                        None => groups.push((video.to_string(), vec![o.outcome.clone()])),
                    }
                }
                let report = per_video_report(&groups)?;
                (report.videos, report.pooled)
            }
        };
        thresholds.push(ThresholdResult { iou_threshold: t, videos, pooled });
    }

    Ok(EvaluationReport {
        config: cfg.clone(),
        ground_truth_source: gts.source_path().to_string(),
        detection_source: dets.source_path().to_string(),
        thresholds,
        diagnostics,
    })
}

impl EvaluationReport {
    /// Row labels in output order: each video, then the pooled row.
    fn rows(&self) -> Vec<String> {
        let mut rows: Vec<String> = self
            .thresholds
            .first()
            .map(|t| t.videos.iter().map(|(v, _)| if v.is_empty() { "-".to_string() } else { v.clone() }).collect())
            .unwrap_or_default();
        rows.push(POOLED_ID.to_string());
        rows
    }

    fn results_for_row(&self, row: usize) -> Vec<&PrResult> {
        self.thresholds
            .iter()
            .map(|t| t.videos.get(row).map(|(_, pr)| pr).unwrap_or(&t.pooled))
            .collect()
    }

    /// Machine-readable rows `video_id,iou_threshold,tp,fp,fn,precision,recall`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,iou_threshold,tp,fp,fn,precision,recall\n");
        for (i, label) in self.rows().iter().enumerate() {
            for pr in self.results_for_row(i) {
                let _ = writeln!(
                    out,
                    "{label},{},{},{},{},{},{}",
                    pr.iou_threshold, pr.tp, pr.fp, pr.fn_, pr.precision, pr.recall
                );
            }
        }
        out
    }

    /// Human-readable report: a recall/precision table per video and
    /// threshold, the raw counts, the configuration and diagnostics.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let cfg = &self.config;
        let _ = writeln!(out, "ground truth:    {}", file_label(&self.ground_truth_source));
        let _ = writeln!(out, "detections:      {}", file_label(&self.detection_source));
        let thresholds: Vec<String> = cfg.iou_thresholds.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "iou thresholds:  {}", thresholds.join(", "));
        let _ = writeln!(
            out,
            "score threshold: {}",
            cfg.score_threshold.map_or_else(|| "none".to_string(), |s| s.to_string())
        );
        let mode = match cfg.matching_mode {
            MatchingMode::Strict => "strict",
            MatchingMode::BestOverlap => "best-overlap",
        };
        let _ = writeln!(out, "matching mode:   {mode}");
        out.push('\n');

        let rows = self.rows();
        let width = rows.iter().map(String::len).max().unwrap_or(0).max(5);
        let _ = write!(out, "{:<width$}", "video");
        for t in &thresholds {
            let _ = write!(out, "  {:>8}  {:>8}", format!("R@{t}"), format!("P@{t}"));
        }
        out.push('\n');
        for (i, label) in rows.iter().enumerate() {
            let _ = write!(out, "{label:<width$}");
            for pr in self.results_for_row(i) {
                let _ = write!(out, "  {:>8.4}  {:>8.4}", pr.recall, pr.precision);
            }
            out.push('\n');
        }
        out.push('\n');

        let _ = writeln!(out, "{:<width$}  {:>6}  {:>8}  {:>8}  {:>8}", "video", "iou", "tp", "fp", "fn");
        for (i, label) in rows.iter().enumerate() {
            for pr in self.results_for_row(i) {
                let _ = writeln!(
                    out,
                    "{label:<width$}  {:>6}  {:>8}  {:>8}  {:>8}",
                    pr.iou_threshold.to_string(),
                    pr.tp,
                    pr.fp,
                    pr.fn_
                );
            }
        }
        out.push('\n');

        let d = &self.diagnostics;
        let _ = writeln!(out, "annotated frames:           {}", d.annotated_frames);
        let _ = writeln!(out, "ground-truth boxes:         {}", d.ground_truth_boxes);
        let _ = writeln!(out, "detection frames:           {}", d.detection_frames);
        let _ = writeln!(out, "detections:                 {}", d.detections);
        let _ = writeln!(out, "frames without detections:  {}", d.frames_without_detections);
        let _ = writeln!(out, "ignored detections:         {}", d.ignored_detections);
        let _ = writeln!(
            out,
            "unannotated frames:         {} ({} detections, not scored)",
            d.unannotated_frames.len(),
            d.unannotated_detections
        );
        for f in &d.unannotated_frames {
            let _ = writeln!(out, "  {f}");
        }
        out
    }
}
