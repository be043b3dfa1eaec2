//! Independent reference implementations used by the property and
//! acceptance suites. Nothing here calls the code paths it checks.

#![allow(dead_code)]

use std::path::PathBuf;

use facebench_core::formats::{AnnotationCorpus, DetectionCorpus};
use facebench_core::{match_frame, BoundingBox, Detection, EllipseRegion, RocPoint};
use rand::rngs::StdRng;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

pub fn random_box(rng: &mut StdRng) -> BoundingBox {
    bb(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(10.0..100.0), rng.gen_range(10.0..100.0))
}

/// IOU by counting cell centers of an `n`×`n` grid laid over the joint
/// bounding region of both boxes.
pub fn raster_iou(a: &BoundingBox, b: &BoundingBox, n: usize) -> f64 {
    let x0 = a.x().min(b.x());
    let y0 = a.y().min(b.y());
    let x1 = a.right().max(b.right());
    let y1 = a.bottom().max(b.bottom());
    let (cw, ch) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let inside = |r: &BoundingBox, px: f64, py: f64| px >= r.x() && px < r.right() && py >= r.y() && py < r.bottom();
    let (mut in_a, mut in_b, mut both) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let px = x0 + (i as f64 + 0.5) * cw;
        for j in 0..n {
            let py = y0 + (j as f64 + 0.5) * ch;
            let (ia, ib) = (inside(a, px, py), inside(b, px, py));
            in_a += ia as usize;
            in_b += ib as usize;
            both += (ia && ib) as usize;
        }
    }
    let union = in_a + in_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Extremes `(min_x, min_y, max_x, max_y)` of grid cell centers that fall
/// inside the ellipse, sampling an `n`×`n` grid over `[cx-a, cx+a]²`.
pub fn raster_ellipse_extent(e: &EllipseRegion, n: usize) -> (f64, f64, f64, f64) {
    let (cx, cy) = e.center();
    let (a, b, t) = (e.semi_major(), e.semi_minor(), e.theta());
    let (st, ct) = t.sin_cos();
    let cell = 2.0 * a / n as f64;
    let mut ext = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let px = cx - a + (i as f64 + 0.5) * cell;
        for j in 0..n {
            let py = cy - a + (j as f64 + 0.5) * cell;
            let (dx, dy) = (px - cx, py - cy);
            // rotate into the ellipse frame
            let u = dx * ct + dy * st;
            let v = -dx * st + dy * ct;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                ext = (ext.0.min(px), ext.1.min(py), ext.2.max(px), ext.3.max(py));
            }
        }
    }
    ext
}

/// Maximum number of one-to-one (detection, ground truth) pairs with IOU at
/// least `t`, by exhaustive search.
pub fn brute_force_max_pairs(dets: &[Detection], gts: &[BoundingBox], t: f64) -> usize {
    fn go(d: usize, dets: &[Detection], gts: &[BoundingBox], used: &mut Vec<bool>, t: f64) -> usize {
        if d == dets.len() {
            return 0;
        }
        let mut best = go(d + 1, dets, gts, used, t);
        for g in 0..gts.len() {
            if !used[g] && overlap(&dets[d].bbox, &gts[g]) >= t {
                used[g] = true;
                best = best.max(1 + go(d + 1, dets, gts, used, t));
                used[g] = false;
            }
        }
        best
    }
    go(0, dets, gts, &mut vec![false; gts.len()], t)
}

/// Plain IOU written out independently of the library.
pub fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x() + a.w()).min(b.x() + b.w()) - a.x().max(b.x());
    let ih = (a.y() + a.h()).min(b.y() + b.h()) - a.y().max(b.y());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.w() * a.h() + b.w() * b.h() - inter)
}

/// ROC by re-matching the whole corpus at every distinct score.
pub fn naive_roc(dets: &DetectionCorpus, gts: &AnnotationCorpus) -> Vec<RocPoint> {
    let index = dets.index();
    let frames: Vec<(&[BoundingBox], &[Detection])> = gts
        .frames()
        .iter()
        .map(|a| {
            let d = index.get(&a.frame_id).map_or(&[][..], |&i| &dets.frames()[i].detections[..]);
            (&a.ground_truth[..], d)
        })
        .collect();
    let mut scores: Vec<f64> = frames.iter().flat_map(|(_, d)| d.iter().map(|x| x.score())).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let total: usize = frames.iter().map(|(g, _)| g.len()).sum();
    scores
        .into_iter()
        .map(|s| {
            let (mut tp, mut fp) = (0, 0);
            for (g, d) in &frames {
                let kept: Vec<Detection> = d.iter().copied().filter(|x| x.score() >= s).collect();
                let m = match_frame(&kept, g, 0.5).unwrap();
                tp += m.pairs.len();
                fp += m.false_positives.len();
            }
            RocPoint { score_threshold: s, false_positives: fp, true_positive_rate: tp as f64 / total as f64 }
        })
        .collect()
}
