//! Detector-agnostic face detection benchmarking.
//!
//! Detections from any detector are compared against annotated boxes by
//! IOU, aggregated into precision/recall tables per IOU threshold and into
//! FDDB-style discrete ROC curves. External detectors plug in through a
//! batch protocol: a manifest file in, a detection CSV out.

pub mod formats;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod pipeline;

pub use formats::{AnnotationCorpus, Corpus, DetectionCorpus, DetectionFormat, FormatError, FrameAnnotation, FrameDetections, FrameId};
pub use geometry::{clip_to_frame, ellipse_to_bbox, iou, nms, BoundingBox, Detection, EllipseRegion, GeometryError};
pub use matching::{match_corpus, match_frame, match_frame_with, MatchOptions, MatchOutcome, MatchingMode};
pub use metrics::{per_video_report, precision_recall, roc_curve, PrResult, RocCurve, RocPoint};
