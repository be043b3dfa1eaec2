//! Continuous-coordinate box and ellipse geometry.
//!
//! All coordinates are real pixels with the origin at the top-left corner,
//! x growing rightward and y growing downward. A box covers
//! `[x, x + w] × [y, y + h]` and its area is `w · h`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("box width and height must be positive (got w={w}, h={h})")]
    EmptyBox { w: f64, h: f64 },
    #[error("box extent overflows (x={x}, y={y}, w={w}, h={h})")]
    Overflow { x: f64, y: f64, w: f64, h: f64 },
    #[error("ellipse semi-axes must satisfy a >= b > 0 (got a={a}, b={b})")]
    BadAxes { a: f64, b: f64 },
    #[error("detection score must be finite (got {0})")]
    NonFiniteScore(f64),
}

/// Axis-aligned rectangle `(x, y, w, h)` with `w > 0`, `h > 0`.
///
/// Fields are private so that every value in circulation satisfies the
/// invariants checked by [`BoundingBox::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite("bounding box"));
        }
        if !(w > 0.0 && h > 0.0) {
            return Err(GeometryError::EmptyBox { w, h });
        }
        // Right/bottom edges and the area must stay representable, otherwise
        // IOU degenerates into inf/inf.
        if !((x + w).is_finite() && (y + h).is_finite() && (w * h).is_finite()) {
            return Err(GeometryError::Overflow { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from its corners `(x1, y1)` top-left and `(x2, y2)` bottom-right.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Area of the overlap with `other`; zero when the interiors are disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = overlap_len(self.x, self.w, other.x, other.w);
        let ih = overlap_len(self.y, self.h, other.y, other.h);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Whether the closed point `(px, py)` lies in the box, with slack `tol`.
    pub fn contains_point(&self, px: f64, py: f64, tol: f64) -> bool {
        px >= self.x - tol && px <= self.right() + tol && py >= self.y - tol && py <= self.bottom() + tol
    }

    /// Returns `s·box + (tx, ty)`, or an error if the result is degenerate.
    pub fn scaled(&self, s: f64, tx: f64, ty: f64) -> Result<Self, GeometryError> {
        Self::new(self.x * s + tx, self.y * s + ty, self.w * s, self.h * s)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

/// FDDB-style rotated ellipse. `theta` is the angle of the major axis in
/// radians, counterclockwise from the x-axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseRegion {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl EllipseRegion {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Result<Self, GeometryError> {
        if ![cx, cy, a, b, theta].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("ellipse"));
        }
        if !(a >= b && b > 0.0) {
            return Err(GeometryError::BadAxes { a, b });
        }
        Ok(Self { cx, cy, a, b, theta })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn semi_major(&self) -> f64 {
        self.a
    }

    pub fn semi_minor(&self) -> f64 {
        self.b
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Point on the boundary at parameter `t` (radians).
    pub fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (st, ct) = self.theta.sin_cos();
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        (self.cx + u * ct - v * st, self.cy + u * st + v * ct)
    }

    /// Half-extents `(half_width, half_height)` of the tightest axis-aligned box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (st, ct) = self.theta.sin_cos();
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        ((a2 * ct * ct + b2 * st * st).sqrt(), (a2 * st * st + b2 * ct * ct).sqrt())
    }
}

/// A scored box produced by a detector. Higher scores are more confident;
/// the scale is arbitrary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64) -> Result<Self, GeometryError> {
        if !score.is_finite() {
            return Err(GeometryError::NonFiniteScore(score));
        }
        Ok(Self { bbox, score })
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Length of `[s0, s0+l0) ∩ [s1, s1+l1)`. A nested interval contributes its
/// own length exactly, so a box always overlaps itself by its full area.
fn overlap_len(s0: f64, l0: f64, s1: f64, l1: f64) -> f64 {
    let (e0, e1) = (s0 + l0, s1 + l1);
    match (s0 >= s1 && e0 <= e1, s1 >= s0 && e1 <= e0) {
        (true, _) => l0,
        (_, true) => l1,
        _ => e0.min(e1) - s0.max(s1),
    }
}

/// Tightest axis-aligned box containing the rotated ellipse.
pub fn ellipse_to_bbox(e: &EllipseRegion) -> BoundingBox {
    let (hw, hh) = e.half_extents();
    let (cx, cy) = e.center();
    // b > 0 implies both half-extents are positive.
    BoundingBox::new(cx - hw, cy - hh, 2.0 * hw, 2.0 * hh)
        .expect("ellipse invariants guarantee a non-degenerate box")
}

/// Order of detection indices by descending score; equal scores keep input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));
    order
}

/// Greedy non-maximum suppression.
///
/// Keeps the highest-scoring remaining detection and drops every remaining
/// detection whose IOU with it is `>= iou_threshold`. Output is in
/// descending score order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let order = score_order(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i]);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Intersects `bbox` with the frame `[0, frame_w] × [0, frame_h]`.
/// Returns `None` when nothing of positive area remains.
pub fn clip_to_frame(bbox: &BoundingBox, frame_w: f64, frame_h: f64) -> Option<BoundingBox> {
    let x1 = bbox.x.max(0.0);
    let y1 = bbox.y.max(0.0);
    let x2 = bbox.right().min(frame_w);
    let y2 = bbox.bottom().min(frame_h);
    BoundingBox::from_corners(x1, y1, x2, y2).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(x: f64, y: f64, w: f64, h: f64, s: f64) -> Detection {
        Detection::new(bb(x, y, w, h), s).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(matches!(BoundingBox::new(0.0, 0.0, 0.0, 1.0), Err(GeometryError::EmptyBox { .. })));
        assert!(matches!(BoundingBox::new(0.0, 0.0, 1.0, -1.0), Err(GeometryError::EmptyBox { .. })));
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert!(matches!(BoundingBox::new(0.0, 0.0, 1e200, 1e200), Err(GeometryError::Overflow { .. })));
        assert!(Detection::new(bb(0.0, 0.0, 1.0, 1.0), f64::NAN).is_err());
    }

    #[test]
    fn rejects_bad_ellipses() {
        assert!(EllipseRegion::new(0.0, 0.0, 1.0, 2.0, 0.0).is_err());
        assert!(EllipseRegion::new(0.0, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(EllipseRegion::new(0.0, 0.0, 1.0, 1.0, f64::NAN).is_err());
        assert!(EllipseRegion::new(0.0, 0.0, 1.0, 1.0, 0.3).is_ok());
    }

    #[test]
    fn iou_worked_examples() {
        assert_eq!(iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(0.0, 0.0, 2.0, 2.0)), 1.0);
        assert_eq!(iou(&bb(0.0, 0.0, 1.0, 1.0), &bb(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(1.0, 0.0, 2.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
        // touching edges share no interior
        assert_eq!(iou(&bb(0.0, 0.0, 1.0, 1.0), &bb(1.0, 0.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn ellipse_worked_examples() {
        let e = EllipseRegion::new(0.0, 0.0, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(ellipse_to_bbox(&e), bb(-2.0, -1.0, 4.0, 2.0));

        let e = EllipseRegion::new(0.0, 0.0, 2.0, 1.0, PI / 2.0).unwrap();
        let b = ellipse_to_bbox(&e);
        assert!((b.x() + 1.0).abs() < 1e-12 && (b.y() + 2.0).abs() < 1e-12);
        assert!((b.w() - 2.0).abs() < 1e-12 && (b.h() - 4.0).abs() < 1e-12);

        let e = EllipseRegion::new(0.0, 0.0, 2.0, 1.0, PI / 4.0).unwrap();
        let b = ellipse_to_bbox(&e);
        let r = 2.5f64.sqrt();
        assert!((b.x() + r).abs() < 1e-12 && (b.y() + r).abs() < 1e-12);
        assert!((b.w() - 2.0 * r).abs() < 1e-12 && (b.h() - 2.0 * r).abs() < 1e-12);
        assert!((b.w() - 3.1623).abs() < 1e-4);
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.3).is_empty());

        let disjoint = [det(0.0, 0.0, 1.0, 1.0, 0.2), det(5.0, 5.0, 1.0, 1.0, 0.9)];
        let kept = nms(&disjoint, 0.3);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score(), 0.9);

        let same = [det(0.0, 0.0, 2.0, 2.0, 0.8), det(0.0, 0.0, 2.0, 2.0, 0.9)];
        let kept = nms(&same, 0.3);
        assert_eq!(kept, vec![same[1]]);
    }

    #[test]
    fn nms_ties_break_by_input_order() {
        let a = det(0.0, 0.0, 2.0, 2.0, 0.5);
        let b = det(0.1, 0.0, 2.0, 2.0, 0.5);
        assert_eq!(nms(&[a, b], 0.5), vec![a]);
        assert_eq!(nms(&[b, a], 0.5), vec![b]);
    }

    #[test]
    fn nms_threshold_zero_keeps_only_disjoint() {
        // IOU 0 >= 0 suppresses everything else, even disjoint boxes.
        let dets = [det(0.0, 0.0, 1.0, 1.0, 0.9), det(5.0, 5.0, 1.0, 1.0, 0.1)];
        assert_eq!(nms(&dets, 0.0).len(), 1);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_to_frame(&bb(-1.0, -1.0, 3.0, 3.0), 10.0, 10.0), Some(bb(0.0, 0.0, 2.0, 2.0)));
        assert_eq!(clip_to_frame(&bb(2.0, 2.0, 3.0, 3.0), 10.0, 10.0), Some(bb(2.0, 2.0, 3.0, 3.0)));
        assert_eq!(clip_to_frame(&bb(20.0, 20.0, 5.0, 5.0), 10.0, 10.0), None);
        // edge-touching leaves a zero-width sliver
        assert_eq!(clip_to_frame(&bb(10.0, 2.0, 3.0, 3.0), 10.0, 10.0), None);
    }
}
