//! Precision/recall aggregation and the discrete-score ROC sweep.

use std::collections::HashMap;

use thiserror::Error;

use crate::formats::{AnnotationCorpus, DetectionCorpus};
use crate::matching::{match_frame, MatchOutcome};

/// IOU at which the ROC sweep counts a detection as a true positive.
pub const ROC_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("outcomes mix IOU thresholds {0} and {1}")]
    MixedThreshold(f64, f64),
    #[error("no outcomes to aggregate")]
    NoOutcomes,
    #[error("ground-truth corpus contains no boxes")]
    EmptyGroundTruth,
}

/// Raw TP/FP/FN tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn of(outcome: &MatchOutcome) -> Self {
        Self { tp: outcome.tp(), fp: outcome.fp(), fn_: outcome.fn_count() }
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrResult {
    pub iou_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

impl PrResult {
    /// Precision is 1 when nothing was detected, recall is 1 when there was
    /// nothing to find.
    pub fn from_counts(iou_threshold: f64, c: Counts) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Self {
            iou_threshold,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
        }
    }

    pub fn counts(&self) -> Counts {
        Counts { tp: self.tp, fp: self.fp, fn_: self.fn_ }
    }
}

fn common_threshold(outcomes: &[MatchOutcome]) -> Result<f64, MetricsError> {
    let first = outcomes.first().ok_or(MetricsError::NoOutcomes)?.threshold;
    match outcomes.iter().find(|o| o.threshold != first) {
        Some(o) => Err(MetricsError::MixedThreshold(first, o.threshold)),
        None => Ok(first),
    }
}

pub fn precision_recall(outcomes: &[MatchOutcome]) -> Result<PrResult, MetricsError> {
    let t = common_threshold(outcomes)?;
    Ok(PrResult::from_counts(t, outcomes.iter().map(Counts::of).sum()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub score_threshold: f64,
    pub false_positives: usize,
    pub true_positive_rate: f64,
}

/// Points ordered by strictly decreasing score threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub iou_threshold: f64,
}

/// FDDB discrete-score ROC.
///
/// The threshold sweeps the distinct scores of detections in annotated
/// frames, highest first; at each threshold the detections scoring at least
/// that much are matched at IOU 0.5. Greedy matching visits detections in
/// score order, so lowering the threshold only appends work: each frame is
/// re-matched only at the thresholds equal to one of its own scores.
pub fn roc_curve(dets: &DetectionCorpus, gts: &AnnotationCorpus) -> Result<RocCurve, MetricsError> {
    let total_gt = gts.ground_truth_count();
    if total_gt == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let det_index = dets.index();

    // (score, annotated frame position) for every scored detection.
    let mut events: Vec<(f64, usize)> = Vec::new();
    for (pos, ann) in gts.frames().iter().enumerate() {
        if let Some(&i) = det_index.get(&ann.frame_id) {
            events.extend(dets.frames()[i].detections.iter().map(|d| (d.score(), pos)));
        }
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    events.dedup();

    let mut per_frame: HashMap<usize, Counts> = HashMap::new();
    let mut totals = Counts::default();
    let mut points = Vec::new();
    let mut k = 0;
    while k < events.len() {
        let score = events[k].0;
        while k < events.len() && events[k].0 == score {
            let pos = events[k].1;
            let ann = &gts.frames()[pos];
            let frame_dets = &dets.frames()[det_index[&ann.frame_id]].detections;
            let kept: Vec<_> = frame_dets.iter().copied().filter(|d| d.score() >= score).collect();
            let outcome = match_frame(&kept, &ann.ground_truth, ROC_IOU_THRESHOLD).expect("0.5 is a valid IOU threshold");
            let fresh = Counts::of(&outcome);
            let old = per_frame.insert(pos, fresh).unwrap_or(Counts { tp: 0, fp: 0, fn_: ann.ground_truth.len() });
            totals = Counts {
                tp: totals.tp + fresh.tp - old.tp,
                fp: totals.fp + fresh.fp - old.fp,
                fn_: 0,
            };
            k += 1;
        }
        points.push(RocPoint {
            score_threshold: score,
            false_positives: totals.fp,
            true_positive_rate: totals.tp as f64 / total_gt as f64,
        });
    }
    Ok(RocCurve { points, iou_threshold: ROC_IOU_THRESHOLD })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoReport {
    pub videos: Vec<(String, PrResult)>,
    pub pooled: PrResult,
}

/// One result per video plus a pooled row summing every video's counts.
pub fn per_video_report(groups: &[(String, Vec<MatchOutcome>)]) -> Result<VideoReport, MetricsError> {
    let mut videos = Vec::with_capacity(groups.len());
    let mut threshold: Option<f64> = None;
    let mut pooled = Counts::default();
    for (video_id, outcomes) in groups {
        let pr = precision_recall(outcomes)?;
        match threshold {
            Some(t) if t != pr.iou_threshold => return Err(MetricsError::MixedThreshold(t, pr.iou_threshold)),
            _ => threshold = Some(pr.iou_threshold),
        }
        pooled = pooled + pr.counts();
        videos.push((video_id.clone(), pr));
    }
    let t = threshold.ok_or(MetricsError::NoOutcomes)?;
    Ok(VideoReport { videos, pooled: PrResult::from_counts(t, pooled) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{parse_csv_annotations, parse_csv_detections};

    fn outcome(tp: usize, fp: usize, fn_: usize, t: f64) -> MatchOutcome {
        use crate::matching::MatchPair;
        MatchOutcome {
            pairs: (0..tp).map(|i| MatchPair { detection: i, ground_truth: i, iou: 1.0 }).collect(),
            false_positives: (tp..tp + fp).collect(),
            false_negatives: (tp..tp + fn_).collect(),
            ignored: vec![],
            threshold: t,
        }
    }

    #[test]
    fn arithmetic_examples() {
        let pr = precision_recall(&[outcome(98, 2, 2, 0.5)]).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.98, 0.98));
        let pr = precision_recall(&[outcome(0, 0, 5, 0.5)]).unwrap();
        assert_eq!((pr.precision, pr.recall), (1.0, 0.0));
        let pr = precision_recall(&[outcome(0, 3, 0, 0.5)]).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.0, 1.0));
    }

    #[test]
    fn mixed_threshold_rejected() {
        let err = precision_recall(&[outcome(1, 0, 0, 0.5), outcome(1, 0, 0, 0.75)]).unwrap_err();
        assert_eq!(err, MetricsError::MixedThreshold(0.5, 0.75));
        assert_eq!(precision_recall(&[]).unwrap_err(), MetricsError::NoOutcomes);
    }

    #[test]
    fn video_report_pools_counts() {
        let groups = vec![
            ("a".to_string(), vec![outcome(3, 1, 0, 0.5)]),
            ("b".to_string(), vec![outcome(1, 0, 2, 0.5), outcome(0, 1, 0, 0.5)]),
        ];
        let r = per_video_report(&groups).unwrap();
        assert_eq!(r.videos[0].1.counts(), Counts { tp: 3, fp: 1, fn_: 0 });
        assert_eq!(r.videos[1].1.counts(), Counts { tp: 1, fp: 1, fn_: 2 });
        assert_eq!(r.pooled.counts(), Counts { tp: 4, fp: 2, fn_: 2 });

        let single = per_video_report(&groups[..1]).unwrap();
        assert_eq!(single.pooled, single.videos[0].1);

        let mixed = vec![groups[0].clone(), ("c".into(), vec![outcome(1, 0, 0, 0.75)])];
        assert!(matches!(per_video_report(&mixed), Err(MetricsError::MixedThreshold(..))));
    }

    #[test]
    fn roc_examples() {
        let gts = parse_csv_annotations("frame_id,x,y,w,h\nf,0,0,10,10\n".as_bytes()).unwrap();
        let one = parse_csv_detections("frame_id,x,y,w,h,score\nf,0,0,10,10,0.9\n".as_bytes()).unwrap();
        let curve = roc_curve(&one, &gts).unwrap();
        assert_eq!(curve.points, vec![RocPoint { score_threshold: 0.9, false_positives: 0, true_positive_rate: 1.0 }]);

        let two = parse_csv_detections("frame_id,x,y,w,h,score\nf,50,50,10,10,0.5\nf,0,0,10,10,0.9\n".as_bytes()).unwrap();
        let curve = roc_curve(&two, &gts).unwrap();
        assert_eq!(
            curve.points,
            vec![
                RocPoint { score_threshold: 0.9, false_positives: 0, true_positive_rate: 1.0 },
                RocPoint { score_threshold: 0.5, false_positives: 1, true_positive_rate: 1.0 },
            ]
        );
    }

    #[test]
    fn roc_requires_ground_truth() {
        let gts = parse_csv_annotations("frame_id,x,y,w,h\nf,,,,\n".as_bytes()).unwrap();
        let dets = parse_csv_detections("frame_id,x,y,w,h,score\nf,0,0,1,1,1\n".as_bytes()).unwrap();
        assert_eq!(roc_curve(&dets, &gts).unwrap_err(), MetricsError::EmptyGroundTruth);
    }

    #[test]
    fn roc_ignores_unannotated_frames() {
        let gts = parse_csv_annotations("frame_id,x,y,w,h\nf,0,0,10,10\n".as_bytes()).unwrap();
        let dets = parse_csv_detections("frame_id,x,y,w,h,score\nf,0,0,10,10,0.9\nother,0,0,10,10,0.7\n".as_bytes()).unwrap();
        assert_eq!(roc_curve(&dets, &gts).unwrap().points.len(), 1);
    }
}
