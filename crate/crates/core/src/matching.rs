//! Per-frame assignment of detections to ground truth.

use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::formats::{AnnotationCorpus, DetectionCorpus, FrameId};
use crate::geometry::{iou, score_order, BoundingBox, Detection};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("IOU threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("score threshold must be finite, got {0}")]
    InvalidScoreThreshold(f64),
    #[error("worker pool: {0}")]
    WorkerPool(String),
}

/// How unmatched detections in an annotated frame are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchingMode {
    /// Every detection is scored; unmatched ones are false positives.
    #[default]
    Strict,
    /// Only the detection with the highest IOU against any ground-truth box
    /// is scored; the rest are ignored. Used for sensitivity analysis when
    /// only one face per frame is annotated.
    BestOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub detection: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

/// Result of matching one frame.
///
/// Every detection index appears exactly once across `pairs`,
/// `false_positives` and `ignored`; every ground-truth index exactly once
/// across `pairs` and `false_negatives`. `ignored` holds detections excluded
/// from scoring (below the score threshold, or not selected in
/// best-overlap mode) and is empty in the default configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub pairs: Vec<MatchPair>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub ignored: Vec<usize>,
    pub threshold: f64,
}

impl MatchOutcome {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_count(&self) -> usize {
        self.false_negatives.len()
    }
}

fn check_threshold(t: f64) -> Result<(), MatchError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(MatchError::InvalidThreshold(t))
    }
}

/// Greedy matching over the detections listed in `candidates`, which must
/// already be in processing order.
fn greedy(dets: &[Detection], candidates: &[usize], gts: &[BoundingBox], threshold: f64) -> (Vec<MatchPair>, Vec<usize>, Vec<usize>) {
    let mut claimed = vec![false; gts.len()];
    let mut pairs = Vec::new();
    let mut false_positives = Vec::new();
    for &d in candidates {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, gt);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) if v >= threshold => {
                claimed[g] = true;
                pairs.push(MatchPair { detection: d, ground_truth: g, iou: v });
            }
            _ => false_positives.push(d),
        }
    }
    let false_negatives = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    (pairs, false_positives, false_negatives)
}

/// Greedy score-descending assignment.
///
/// Detections are visited by descending score (ties in input order); each
/// claims the still-unclaimed ground-truth box with the highest IOU (ties to
/// the lower index) if that IOU reaches `iou_threshold`, otherwise it is a
/// false positive.
pub fn match_frame(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> Result<MatchOutcome, MatchError> {
    match_frame_with(dets, gts, iou_threshold, None, MatchingMode::Strict)
}

pub fn match_frame_with(
    dets: &[Detection],
    gts: &[BoundingBox],
    iou_threshold: f64,
    score_threshold: Option<f64>,
    mode: MatchingMode,
) -> Result<MatchOutcome, MatchError> {
    check_threshold(iou_threshold)?;
    if let Some(s) = score_threshold {
        if !s.is_finite() {
            return Err(MatchError::InvalidScoreThreshold(s));
        }
    }
    let mut ignored = Vec::new();
    let mut candidates: Vec<usize> = score_order(dets)
        .into_iter()
        .filter(|&i| match score_threshold {
            Some(s) if dets[i].score() < s => {
                ignored.push(i);
                false
            }
            _ => true,
        })
        .collect();

    if mode == MatchingMode::BestOverlap && candidates.len() > 1 {
        // Highest IOU against any ground truth; ties keep score order.
        let best_iou = |d: usize| gts.iter().map(|g| iou(&dets[d].bbox, g)).fold(0.0, f64::max);
        let mut chosen = candidates[0];
        let mut chosen_iou = best_iou(chosen);
        for &d in &candidates[1..] {
            let v = best_iou(d);
            if v > chosen_iou {
                chosen = d;
                chosen_iou = v;
            }
        }
        ignored.extend(candidates.iter().copied().filter(|&d| d != chosen));
        candidates = vec![chosen];
    }
    ignored.sort_unstable();

    let (pairs, false_positives, false_negatives) = greedy(dets, &candidates, gts, iou_threshold);
    Ok(MatchOutcome { pairs, false_positives, false_negatives, ignored, threshold: iou_threshold })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub frame_id: FrameId,
    pub outcome: MatchOutcome,
}

/// Detection frames that have no annotation entry and were left out of
/// scoring.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchDiagnostics {
    pub unannotated_frames: Vec<FrameId>,
    pub unannotated_detections: usize,
    pub frames_without_detections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusMatch {
    /// One entry per annotated frame, in annotation-corpus order.
    pub outcomes: Vec<FrameOutcome>,
    pub diagnostics: MatchDiagnostics,
}

impl CorpusMatch {
    pub fn match_outcomes(&self) -> Vec<MatchOutcome> {
        self.outcomes.iter().map(|f| f.outcome.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    pub iou_threshold: f64,
    pub score_threshold: Option<f64>,
    pub mode: MatchingMode,
    /// Worker threads; `0` uses the global pool, `1` runs inline.
    pub workers: usize,
}

impl MatchOptions {
    pub fn at(iou_threshold: f64) -> Self {
        Self { iou_threshold, score_threshold: None, mode: MatchingMode::Strict, workers: 1 }
    }
}

/// Runs `f` on a pool of `workers` threads (`0` = rayon's global pool).
pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, MatchError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| MatchError::WorkerPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Matches every annotated frame. Annotated frames without a detection entry
/// are matched against zero detections; detection frames without an
/// annotation entry are skipped and reported in the diagnostics.
pub fn match_corpus(dets: &DetectionCorpus, gts: &AnnotationCorpus, opts: &MatchOptions) -> Result<CorpusMatch, MatchError> {
    check_threshold(opts.iou_threshold)?;
    let det_index = dets.index();
    let empty: &[Detection] = &[];

    let run = || {
        gts.frames()
            .par_iter()
            .map(|ann| {
                let frame_dets = det_index
                    .get(&ann.frame_id)
                    .map_or(empty, |&i| dets.frames()[i].detections.as_slice());
                match_frame_with(frame_dets, &ann.ground_truth, opts.iou_threshold, opts.score_threshold, opts.mode)
                    .map(|outcome| FrameOutcome { frame_id: ann.frame_id.clone(), outcome })
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let outcomes = with_workers(opts.workers, run)??;

    let annotated: HashSet<&FrameId> = gts.frames().iter().map(|f| &f.frame_id).collect();
    let mut diagnostics = MatchDiagnostics::default();
    for frame in dets.frames() {
        if !annotated.contains(&frame.frame_id) {
            diagnostics.unannotated_frames.push(frame.frame_id.clone());
            diagnostics.unannotated_detections += frame.detections.len();
        }
    }
    diagnostics.frames_without_detections = gts.frames().iter().filter(|f| !det_index.contains_key(&f.frame_id)).count();
    Ok(CorpusMatch { outcomes, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(b: BoundingBox, s: f64) -> Detection {
        Detection::new(b, s).unwrap()
    }

    #[test]
    fn exact_match() {
        let g = bb(0.0, 0.0, 2.0, 2.0);
        let m = match_frame(&[det(g, 0.9)], &[g], 0.5).unwrap();
        assert_eq!(m.pairs, vec![MatchPair { detection: 0, ground_truth: 0, iou: 1.0 }]);
        assert!(m.false_positives.is_empty() && m.false_negatives.is_empty());
    }

    #[test]
    fn disjoint() {
        let m = match_frame(&[det(bb(10.0, 10.0, 1.0, 1.0), 0.9)], &[bb(0.0, 0.0, 1.0, 1.0)], 0.5).unwrap();
        assert_eq!((m.tp(), m.fp(), m.fn_count()), (0, 1, 1));
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let g = bb(0.0, 0.0, 2.0, 2.0);
        let m = match_frame(&[det(g, 0.8), det(g, 0.9)], &[g], 0.5).unwrap();
        assert_eq!(m.pairs[0].detection, 1);
        assert_eq!(m.false_positives, vec![0]);
    }

    #[test]
    fn equal_scores_resolve_by_input_order() {
        let g = bb(0.0, 0.0, 2.0, 2.0);
        let near = det(bb(0.1, 0.0, 2.0, 2.0), 0.5);
        let exact = det(g, 0.5);
        let m = match_frame(&[near, exact], &[g], 0.5).unwrap();
        assert_eq!(m.pairs[0].detection, 0);
        let m = match_frame(&[exact, near], &[g], 0.5).unwrap();
        assert_eq!(m.pairs[0].detection, 0);
        assert_eq!(m.pairs[0].iou, 1.0);
    }

    #[test]
    fn claims_highest_iou_ground_truth() {
        let gts = [bb(0.0, 0.0, 2.0, 2.0), bb(0.5, 0.0, 2.0, 2.0)];
        let m = match_frame(&[det(bb(0.5, 0.0, 2.0, 2.0), 1.0)], &gts, 0.5).unwrap();
        assert_eq!(m.pairs[0].ground_truth, 1);
        assert_eq!(m.false_negatives, vec![0]);
    }

    #[test]
    fn rejects_bad_threshold() {
        assert!(match_frame(&[], &[], 0.0).is_err());
        assert!(match_frame(&[], &[], 1.5).is_err());
        assert!(match_frame(&[], &[], f64::NAN).is_err());
        assert!(match_frame(&[], &[], 1.0).is_ok());
    }

    #[test]
    fn score_threshold_ignores_low_scores() {
        let g = bb(0.0, 0.0, 2.0, 2.0);
        let m = match_frame_with(&[det(g, 0.2), det(bb(9.0, 9.0, 1.0, 1.0), 0.1)], &[g], 0.5, Some(0.2), MatchingMode::Strict).unwrap();
        assert_eq!(m.tp(), 1);
        assert_eq!(m.ignored, vec![1]);
        assert!(m.false_positives.is_empty());
    }

    #[test]
    fn best_overlap_scores_one_detection() {
        let g = bb(0.0, 0.0, 2.0, 2.0);
        let dets = [det(bb(5.0, 5.0, 2.0, 2.0), 0.99), det(g, 0.5), det(bb(0.2, 0.0, 2.0, 2.0), 0.7)];
        let m = match_frame_with(&dets, &[g], 0.5, None, MatchingMode::BestOverlap).unwrap();
        assert_eq!(m.pairs[0].detection, 1);
        assert!(m.false_positives.is_empty());
        assert_eq!(m.ignored, vec![0, 2]);

        // no ground truth: the top-scored detection is the lone false positive
        let m = match_frame_with(&dets, &[], 0.5, None, MatchingMode::BestOverlap).unwrap();
        assert_eq!(m.false_positives, vec![0]);
        assert_eq!(m.ignored, vec![1, 2]);
    }
}
