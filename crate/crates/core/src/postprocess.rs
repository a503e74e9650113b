//! Decoding raw head outputs into rotated boxes, and rotated NMS.

use crate::angle::{decode_angle, encode_angle, AngleDistribution, AngleTarget};
use crate::assign::AnchorPointGrid;
use crate::error::{Error, Result};
use crate::geometry::{canonicalize, skew_iou, Point, RotatedBox};

/// Head outputs for every anchor point of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    /// `scores[point][class]` in `[0, 1]`.
    pub scores: Vec<Vec<f64>>,
    /// `(dx, dy, dw, dh)` in stride units.
    pub box_deltas: Vec<[f64; 4]>,
    pub angles: Vec<AngleDistribution>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub rbox: RotatedBox,
    pub score: f64,
    pub class_id: usize,
}

/// How `(dw, dh)` map to box extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SizeDecoding {
    /// `w = exp(dw) * stride`
    #[default]
    Exp,
    /// `w = dw * stride`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub size: SizeDecoding,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.1,
            size: SizeDecoding::Exp,
        }
    }
}

fn decode_extent(delta: f64, stride: f64, mode: SizeDecoding) -> f64 {
    match mode {
        SizeDecoding::Exp => delta.exp() * stride,
        SizeDecoding::Linear => delta * stride,
    }
}

/// Emits one detection per `(point, class)` whose score exceeds the threshold.
pub fn decode(pred: &RawPrediction, grid: &AnchorPointGrid, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    let n = grid.len();
    if pred.scores.len() != n || pred.box_deltas.len() != n || pred.angles.len() != n {
        return Err(Error::Shape(format!(
            "prediction arrays ({}, {}, {}) do not match {n} anchor points",
            pred.scores.len(),
            pred.box_deltas.len(),
            pred.angles.len()
        )));
    }
    let mut out = Vec::new();
    for (i, p) in grid.points().iter().enumerate() {
        let scores = &pred.scores[i];
        if !scores.iter().any(|&s| s > cfg.score_threshold) {
            continue;
        }
        let stride = grid.stride_of(i);
        let [dx, dy, dw, dh] = pred.box_deltas[i];
        let w = decode_extent(dw, stride, cfg.size);
        let h = decode_extent(dh, stride, cfg.size);
        let raw = RotatedBox {
            cx: p.x + dx * stride,
            cy: p.y + dy * stride,
            w,
            h,
            theta: decode_angle(&pred.angles[i]),
        };
        if raw.validate().is_err() {
            continue;
        }
        let rbox = canonicalize(&raw)?;
        for (class_id, &score) in scores.iter().enumerate() {
            if score > cfg.score_threshold {
                out.push(Detection { rbox, score, class_id });
            }
        }
    }
    Ok(out)
}

/// Inverse of [`decode`] for one anchor point: regression deltas and the
/// angle target of a canonical box.
pub fn encode_box(
    gt: &RotatedBox,
    point: Point,
    stride: f64,
    mode: SizeDecoding,
) -> Result<([f64; 4], AngleTarget)> {
    let b = canonicalize(gt)?;
    let extent = |v: f64| match mode {
        SizeDecoding::Exp => (v / stride).ln(),
        SizeDecoding::Linear => v / stride,
    };
    let deltas = [
        (b.cx - point.x) / stride,
        (b.cy - point.y) / stride,
        extent(b.w),
        extent(b.h),
    ];
    Ok((deltas, encode_angle(b.theta)?))
}

/// Cheap reject: boxes whose circumscribed circles are apart cannot overlap.
fn may_overlap(a: &RotatedBox, b: &RotatedBox) -> bool {
    let ra = a.w.hypot(a.h) / 2.0;
    let rb = b.w.hypot(b.h) / 2.0;
    a.center().distance(b.center()) < ra + rb
}

fn nms_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    if may_overlap(a, b) {
        skew_iou(a, b)
    } else {
        0.0
    }
}

/// Order in which greedy NMS visits detections: score descending, input index ascending.
pub fn nms_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy rotated NMS. Returns the kept detections in visiting order.
pub fn rotated_nms(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Result<Vec<Detection>> {
    Ok(rotated_nms_indices(dets, iou_threshold, class_aware)?
        .into_iter()
        .map(|i| dets[i])
        .collect())
}

/// Same as [`rotated_nms`] but returns input indices.
pub fn rotated_nms_indices(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Result<Vec<usize>> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::Validation(format!(
            "NMS IoU threshold must be in (0, 1), got {iou_threshold}"
        )));
    }
    let mut kept: Vec<usize> = Vec::new();
    for i in nms_order(dets) {
        let d = &dets[i];
        let suppressed = kept.iter().any(|&k| {
            let other = &dets[k];
            (!class_aware || other.class_id == d.class_id) && nms_iou(&other.rbox, &d.rbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angle::NUM_BINS;
    use crate::assign::build_anchor_points;
    use approx::assert_abs_diff_eq;

    fn det(cx: f64, cy: f64, score: f64, class_id: usize) -> Detection {
        Detection {
            rbox: RotatedBox::new(cx, cy, 10., 4., 0.3).unwrap(),
            score,
            class_id,
        }
    }

    #[test]
    fn zero_offsets_decode_to_stride_square() {
        let grid = build_anchor_points(40, 40, &[8]).unwrap();
        let idx = grid.points().iter().position(|p| *p == Point::new(20., 20.)).unwrap();
        let n = grid.len();
        let mut scores = vec![vec![0.0]; n];
        scores[idx] = vec![0.9];
        let pred = RawPrediction {
            scores,
            box_deltas: vec![[0.0; 4]; n],
            angles: vec![AngleDistribution::one_hot(0).unwrap(); n],
        };
        let dets = decode(&pred, &grid, &DecodeConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].rbox, RotatedBox::new(20., 20., 8., 8., 0.).unwrap());
        assert_eq!(dets[0].class_id, 0);

        let strict = DecodeConfig { score_threshold: 0.95, ..DecodeConfig::default() };
        assert!(decode(&pred, &grid, &strict).unwrap().is_empty());
    }

    #[test]
    fn decode_shape_mismatch() {
        let grid = build_anchor_points(16, 16, &[8]).unwrap();
        let pred = RawPrediction {
            scores: vec![vec![0.5]; 3],
            box_deltas: vec![[0.0; 4]; 4],
            angles: vec![AngleDistribution::uniform(); 4],
        };
        assert!(matches!(decode(&pred, &grid, &DecodeConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_mode_skips_non_positive_extent() {
        let grid = build_anchor_points(8, 8, &[8]).unwrap();
        let pred = RawPrediction {
            scores: vec![vec![0.5]],
            box_deltas: vec![[0.0, 0.0, -1.0, 1.0]],
            angles: vec![AngleDistribution::uniform()],
        };
        let cfg = DecodeConfig { size: SizeDecoding::Linear, ..DecodeConfig::default() };
        assert!(decode(&pred, &grid, &cfg).unwrap().is_empty());
    }

    #[test]
    fn encode_then_decode() {
        let grid = build_anchor_points(64, 64, &[16]).unwrap();
        let gt = RotatedBox::new(30.5, 27.25, 21.0, 9.0, 0.61).unwrap();
        for mode in [SizeDecoding::Exp, SizeDecoding::Linear] {
            let (deltas, target) = encode_box(&gt, grid.points()[5], 16.0, mode).unwrap();
            let mut scores = vec![vec![0.0, 0.0]; grid.len()];
            scores[5] = vec![0.0, 0.8];
            let pred = RawPrediction {
                scores,
                box_deltas: vec![deltas; grid.len()],
                angles: vec![AngleDistribution::from_target(&target); grid.len()],
            };
            let cfg = DecodeConfig { score_threshold: 0.1, size: mode };
            let dets = decode(&pred, &grid, &cfg).unwrap();
            assert_eq!(dets.len(), 1);
            assert_eq!(dets[0].class_id, 1);
            let b = dets[0].rbox;
            for (x, y) in [(b.cx, gt.cx), (b.cy, gt.cy), (b.w, gt.w), (b.h, gt.h), (b.theta, gt.theta)] {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
        assert_eq!(NUM_BINS, 91);
    }

    #[test]
    fn nms_examples() {
        let a = det(0., 0., 0.9, 0);
        let b = det(0., 0., 0.8, 0);
        assert_eq!(rotated_nms(&[b, a], 0.5, true).unwrap(), vec![a]);

        let far = [det(0., 0., 0.5, 0), det(100., 0., 0.6, 0), det(0., 100., 0.7, 0)];
        let kept = rotated_nms(&far, 0.5, true).unwrap();
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].score, 0.7);

        // overlapping boxes of different classes survive only when class-aware
        let c = det(0., 0., 0.8, 1);
        assert_eq!(rotated_nms(&[a, c], 0.5, true).unwrap().len(), 2);
        assert_eq!(rotated_nms(&[a, c], 0.5, false).unwrap().len(), 1);
    }

    #[test]
    fn nms_tie_break_by_index() {
        let a = det(0., 0., 0.5, 0);
        let mut b = det(0., 0., 0.5, 0);
        b.rbox.w = 10.5;
        assert_eq!(rotated_nms_indices(&[a, b], 0.5, true).unwrap(), vec![0]);
        assert_eq!(rotated_nms_indices(&[b, a], 0.5, true).unwrap(), vec![0]);
    }

    #[test]
    fn nms_threshold_validation() {
        assert!(rotated_nms(&[], 0.0, true).is_err());
        assert!(rotated_nms(&[], 1.0, true).is_err());
        assert!(rotated_nms(&[], 0.3, true).unwrap().is_empty());
    }
}
