//! Positive/negative sample assignment over multi-level anchor points.
//!
//! Two assigners are provided: the dynamic rotated task-aligned assigner, which
//! ranks in-box anchor points by `t = s^alpha * mu^beta`, and a static
//! FCOSR-style assigner used as a baseline.

use crate::error::{Error, Result};
use crate::geometry::{point_in_rbox, skew_iou, Point, RotatedBox};

/// One pyramid level of anchor points.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLevel {
    pub stride: f64,
    pub cols: usize,
    pub rows: usize,
    /// Index of this level's first point in the flattened grid.
    pub offset: usize,
}

impl AnchorLevel {
    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anchor-point centres of all levels, flattened level by level in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPointGrid {
    levels: Vec<AnchorLevel>,
    points: Vec<Point>,
    level_of: Vec<usize>,
}

impl AnchorPointGrid {
    pub fn levels(&self) -> &[AnchorLevel] {
        &self.levels
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn level_of(&self, point: usize) -> usize {
        self.level_of[point]
    }

    pub fn stride_of(&self, point: usize) -> f64 {
        self.levels[self.level_of[point]].stride
    }
}

/// Grid of `ceil(size / stride)` points per axis, offset by half a stride.
pub fn build_anchor_points(width: usize, height: usize, strides: &[usize]) -> Result<AnchorPointGrid> {
    if strides.is_empty() || strides.contains(&0) {
        return Err(Error::Validation("strides must be non-empty and positive".into()));
    }
    let mut levels = Vec::with_capacity(strides.len());
    let mut points = Vec::new();
    let mut level_of = Vec::new();
    for (l, &stride) in strides.iter().enumerate() {
        let cols = width.div_ceil(stride);
        let rows = height.div_ceil(stride);
        let s = stride as f64;
        levels.push(AnchorLevel {
            stride: s,
            cols,
            rows,
            offset: points.len(),
        });
        for r in 0..rows {
            for c in 0..cols {
                points.push(Point::new((c as f64 + 0.5) * s, (r as f64 + 0.5) * s));
                level_of.push(l);
            }
        }
    }
    Ok(AnchorPointGrid {
        levels,
        points,
        level_of,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentInput {
    pub gt_boxes: Vec<RotatedBox>,
    pub gt_labels: Vec<usize>,
    /// `pred_scores[point][class]` in `[0, 1]`.
    pub pred_scores: Vec<Vec<f64>>,
    pub pred_boxes: Vec<RotatedBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// Assigned ground-truth index per point; `None` marks a negative.
    pub assigned_gt: Vec<Option<usize>>,
    pub alignment_metric: Vec<f64>,
    pub soft_cls_target: Vec<f64>,
}

impl AssignmentResult {
    pub fn all_negative(n: usize) -> Self {
        Self {
            assigned_gt: vec![None; n],
            alignment_metric: vec![0.0; n],
            soft_cls_target: vec![0.0; n],
        }
    }

    pub fn num_positives(&self) -> usize {
        self.assigned_gt.iter().filter(|g| g.is_some()).count()
    }

    pub fn positives_of(&self, gt: usize) -> Vec<usize> {
        self.assigned_gt
            .iter()
            .enumerate()
            .filter_map(|(i, g)| (*g == Some(gt)).then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TalConfig {
    pub alpha: f64,
    pub beta: f64,
    pub topk: usize,
}

impl Default for TalConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 6.0,
            topk: 13,
        }
    }
}

impl TalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Validation(format!(
                "alpha and beta must be positive, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if self.topk == 0 {
            return Err(Error::Validation("topk must be >= 1".into()));
        }
        Ok(())
    }
}

/// Task alignment metric `s^alpha * mu^beta`.
#[inline]
pub fn alignment_metric(score: f64, iou: f64, alpha: f64, beta: f64) -> f64 {
    score.powf(alpha) * iou.powf(beta)
}

fn validate_input(input: &AssignmentInput, grid: &AnchorPointGrid) -> Result<()> {
    let n = grid.len();
    if n == 0 {
        return Err(Error::Validation("anchor grid is empty".into()));
    }
    if input.pred_scores.len() != n || input.pred_boxes.len() != n {
        return Err(Error::Shape(format!(
            "predictions cover {} scores / {} boxes for {n} anchor points",
            input.pred_scores.len(),
            input.pred_boxes.len()
        )));
    }
    if input.gt_boxes.len() != input.gt_labels.len() {
        return Err(Error::Shape("gt_boxes and gt_labels differ in length".into()));
    }
    for b in &input.gt_boxes {
        b.validate()?;
    }
    for (i, scores) in input.pred_scores.iter().enumerate() {
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Validation(format!("score outside [0, 1] at point {i}")));
        }
        if let Some(&l) = input.gt_labels.iter().find(|&&l| l >= scores.len()) {
            return Err(Error::Validation(format!(
                "gt label {l} has no score column at point {i}"
            )));
        }
    }
    Ok(())
}

/// Rotated task-aligned assignment.
///
/// Candidates for a ground truth are the anchor points inside its rotated box.
/// The `topk` candidates with the largest metric are selected (ties go to the
/// lower point index). A point selected by several ground truths keeps the one
/// its predicted box overlaps most (ties go to the lower gt index). Soft
/// classification targets rescale each gt's metrics so the largest equals the
/// largest IoU among its positives.
pub fn rotated_tal_assign(
    input: &AssignmentInput,
    grid: &AnchorPointGrid,
    cfg: &TalConfig,
) -> Result<AssignmentResult> {
    cfg.validate()?;
    validate_input(input, grid)?;
    let n = grid.len();
    if input.gt_boxes.is_empty() {
        return Ok(AssignmentResult::all_negative(n));
    }

    // best claim per point: (gt, iou, metric)
    let mut claim: Vec<Option<(usize, f64, f64)>> = vec![None; n];
    for (g, (gt, &label)) in input.gt_boxes.iter().zip(&input.gt_labels).enumerate() {
        let mut cands: Vec<(usize, f64, f64)> = grid
            .points()
            .iter()
            .enumerate()
            .filter(|(_, p)| point_in_rbox(**p, gt))
            .map(|(i, _)| {
                let iou = skew_iou(&input.pred_boxes[i], gt);
                let t = alignment_metric(input.pred_scores[i][label], iou, cfg.alpha, cfg.beta);
                (i, iou, t)
            })
            .collect();
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        for &(i, iou, t) in cands.iter().take(cfg.topk) {
            match claim[i] {
                Some((_, held, _)) if held >= iou => {}
                _ => claim[i] = Some((g, iou, t)),
            }
        }
    }

    let num_gt = input.gt_boxes.len();
    let mut max_metric = vec![0.0f64; num_gt];
    let mut max_iou = vec![0.0f64; num_gt];
    for &(g, iou, t) in claim.iter().flatten() {
        max_metric[g] = max_metric[g].max(t);
        max_iou[g] = max_iou[g].max(iou);
    }

    let mut result = AssignmentResult::all_negative(n);
    for (i, c) in claim.iter().enumerate() {
        if let Some((g, _, t)) = *c {
            result.assigned_gt[i] = Some(g);
            result.alignment_metric[i] = t;
            result.soft_cls_target[i] = if max_metric[g] > 0.0 {
                (t / max_metric[g] * max_iou[g]).min(1.0)
            } else {
                0.0
            };
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcosrConfig {
    /// Half-open `[lo, hi)` ranges of `sqrt(w * h)`, one per pyramid level.
    pub scale_ranges: Vec<(f64, f64)>,
    /// Sampling ellipse semi-axes as a fraction of the inscribed ellipse's.
    pub shrink: f64,
}

impl Default for FcosrConfig {
    fn default() -> Self {
        Self {
            scale_ranges: vec![(0.0, 64.0), (64.0, 128.0), (128.0, f64::INFINITY)],
            shrink: 0.5,
        }
    }
}

fn in_sampling_ellipse(p: Point, b: &RotatedBox, shrink: f64) -> bool {
    let (s, c) = b.theta.sin_cos();
    let d = p - b.center();
    let u = (c * d.x + s * d.y) / (shrink * b.w / 2.0);
    let v = (-s * d.x + c * d.y) / (shrink * b.h / 2.0);
    u * u + v * v <= 1.0
}

/// Static FCOSR-style assignment.
///
/// A point is positive for a ground truth when it lies in the gt's shrunken
/// inscribed ellipse and the gt's scale `sqrt(w * h)` falls in the point's
/// level range. Smaller ground truths claim contested points first. A gt left
/// without positives falls back to its nearest unclaimed interior point.
pub fn fcosr_assign(
    gt_boxes: &[RotatedBox],
    grid: &AnchorPointGrid,
    cfg: &FcosrConfig,
) -> Result<AssignmentResult> {
    if cfg.scale_ranges.len() != grid.levels().len() {
        return Err(Error::Shape(format!(
            "{} scale ranges for {} pyramid levels",
            cfg.scale_ranges.len(),
            grid.levels().len()
        )));
    }
    if !(cfg.shrink > 0.0 && cfg.shrink <= 1.0) {
        return Err(Error::Validation(format!("shrink must be in (0, 1], got {}", cfg.shrink)));
    }
    for b in gt_boxes {
        b.validate()?;
    }
    let n = grid.len();
    let mut order: Vec<usize> = (0..gt_boxes.len()).collect();
    order.sort_by(|&a, &b| gt_boxes[a].area().total_cmp(&gt_boxes[b].area()).then(a.cmp(&b)));

    let mut assigned: Vec<Option<usize>> = vec![None; n];
    for &g in &order {
        let gt = &gt_boxes[g];
        let scale = gt.area().sqrt();
        for (l, level) in grid.levels().iter().enumerate() {
            let (lo, hi) = cfg.scale_ranges[l];
            if !(scale >= lo && scale < hi) {
                continue;
            }
            for i in level.offset..level.offset + level.len() {
                if assigned[i].is_none() && in_sampling_ellipse(grid.points()[i], gt, cfg.shrink) {
                    assigned[i] = Some(g);
                }
            }
        }
    }

    for &g in &order {
        if assigned.contains(&Some(g)) {
            continue;
        }
        let gt = &gt_boxes[g];
        let nearest = grid
            .points()
            .iter()
            .enumerate()
            .filter(|(i, p)| assigned[*i].is_none() && point_in_rbox(**p, gt))
            .min_by(|(ia, a), (ib, b)| {
                a.distance(gt.center())
                    .total_cmp(&b.distance(gt.center()))
                    .then(ia.cmp(ib))
            })
            .map(|(i, _)| i);
        if let Some(i) = nearest {
            assigned[i] = Some(g);
        }
    }

    let mut result = AssignmentResult::all_negative(n);
    for (i, a) in assigned.into_iter().enumerate() {
        if a.is_some() {
            result.assigned_gt[i] = a;
            result.alignment_metric[i] = 1.0;
            result.soft_cls_target[i] = 1.0;
        }
    }
    Ok(result)
}
