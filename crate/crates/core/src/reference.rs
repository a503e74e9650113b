//! Slow, independent reference implementations used to verify the fast paths.
//!
//! Nothing here is meant for production use. Each routine deliberately takes a
//! different route from the code it checks: sampling instead of clipping,
//! rank counting instead of sorting, forward suppression instead of
//! kept-list scans, and patch gathering instead of sliding taps.

use ndarray::{Array1, Array4};
use rand::Rng;

use crate::assign::{alignment_metric, AnchorPointGrid, AssignmentInput, AssignmentResult, TalConfig};
use crate::geometry::{point_in_rbox, rbox_to_quad, skew_iou, Point, Quad, RotatedBox};
use crate::postprocess::Detection;
use crate::rep::{BatchNormStats, RepBranchWeights};

/// Half-plane membership test for a counter-clockwise quad.
struct HalfPlanes {
    origins: [Point; 4],
    edges: [Point; 4],
}

impl HalfPlanes {
    fn new(q: &Quad) -> Self {
        let v = q.vertices;
        Self {
            origins: v,
            edges: [v[1] - v[0], v[2] - v[1], v[3] - v[2], v[0] - v[3]],
        }
    }

    #[inline]
    fn contains(&self, p: Point) -> bool {
        (0..4).all(|i| self.edges[i].cross(p - self.origins[i]) >= 0.0)
    }
}

/// IoU estimated from `samples` uniform points over the union's bounding box.
pub fn monte_carlo_iou<R: Rng>(a: &RotatedBox, b: &RotatedBox, samples: usize, rng: &mut R) -> f64 {
    let qa = rbox_to_quad(a);
    let qb = rbox_to_quad(b);
    let all = qa.vertices.iter().chain(qb.vertices.iter());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in all {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let (ha, hb) = (HalfPlanes::new(&qa), HalfPlanes::new(&qb));
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let p = Point::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1));
        let (ia, ib) = (ha.contains(p), hb.contains(p));
        inter += usize::from(ia && ib);
        union += usize::from(ia || ib);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn box_params(b: &RotatedBox) -> [f64; 5] {
    [b.cx, b.cy, b.w, b.h, b.theta]
}

fn box_from_params(p: &[f64]) -> RotatedBox {
    RotatedBox {
        cx: p[0],
        cy: p[1],
        w: p[2],
        h: p[3],
        theta: p[4],
    }
}

/// Central differences of `f` over the five box parameters.
pub fn central_difference<F: Fn(&RotatedBox) -> f64>(f: F, b: &RotatedBox, step: f64) -> [f64; 5] {
    let g = central_difference_vec(|p| f(&box_from_params(p)), &box_params(b), step);
    [g[0], g[1], g[2], g[3], g[4]]
}

/// Central differences over an arbitrary parameter vector.
pub fn central_difference_vec<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Denominator floor for [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Greedy NMS by forward suppression over a full IoU matrix.
pub fn brute_force_nms(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Vec<usize> {
    let n = dets.len();
    // position of each detection in the visiting order, by counting predecessors
    let rank: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| dets[j].score > dets[i].score || (dets[j].score == dets[i].score && j < i))
                .count()
        })
        .collect();
    let mut by_rank = vec![0; n];
    for (i, &r) in rank.iter().enumerate() {
        by_rank[r] = i;
    }
    let mut suppressed = vec![false; n];
    let mut kept = Vec::new();
    for r in 0..n {
        let i = by_rank[r];
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for &j in &by_rank[r + 1..] {
            let same = !class_aware || dets[i].class_id == dets[j].class_id;
            if same && skew_iou(&dets[i].rbox, &dets[j].rbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Task-aligned assignment by exhaustive rank counting.
///
/// A candidate is selected for a ground truth iff fewer than `topk` other
/// candidates beat it on (metric desc, index asc).
pub fn brute_force_tal(input: &AssignmentInput, grid: &AnchorPointGrid, cfg: &TalConfig) -> AssignmentResult {
    let n = grid.len();
    let g_count = input.gt_boxes.len();
    let mut inside = vec![vec![false; n]; g_count];
    let mut iou = vec![vec![0.0; n]; g_count];
    let mut metric = vec![vec![0.0; n]; g_count];
    for g in 0..g_count {
        for i in 0..n {
            inside[g][i] = point_in_rbox(grid.points()[i], &input.gt_boxes[g]);
            iou[g][i] = skew_iou(&input.pred_boxes[i], &input.gt_boxes[g]);
            let s = input.pred_scores[i][input.gt_labels[g]];
            metric[g][i] = alignment_metric(s, iou[g][i], cfg.alpha, cfg.beta);
        }
    }
    let mut selected = vec![vec![false; n]; g_count];
    for g in 0..g_count {
        for i in 0..n {
            if !inside[g][i] {
                continue;
            }
            let beaten_by = (0..n)
                .filter(|&j| inside[g][j])
                .filter(|&j| metric[g][j] > metric[g][i] || (metric[g][j] == metric[g][i] && j < i))
                .count();
            selected[g][i] = beaten_by < cfg.topk;
        }
    }
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        for g in 0..g_count {
            if selected[g][i] && owner[i].is_none_or(|o| iou[g][i] > iou[o][i]) {
                owner[i] = Some(g);
            }
        }
    }
    let mut result = AssignmentResult::all_negative(n);
    for g in 0..g_count {
        let members: Vec<usize> = (0..n).filter(|&i| owner[i] == Some(g)).collect();
        let max_t = members.iter().map(|&i| metric[g][i]).fold(0.0, f64::max);
        let max_iou = members.iter().map(|&i| iou[g][i]).fold(0.0, f64::max);
        for &i in &members {
            result.assigned_gt[i] = Some(g);
            result.alignment_metric[i] = metric[g][i];
            result.soft_cls_target[i] = if max_t > 0.0 {
                (metric[g][i] / max_t * max_iou).min(1.0)
            } else {
                0.0
            };
        }
    }
    result
}

/// 3x3 / pad 1 convolution as a gathered-patch dot product per output pixel.
pub fn conv2d_im2col(kernel: &Array4<f64>, bias: &Array1<f64>, x: &Array4<f64>) -> Array4<f64> {
    let (co, ci, _, _) = kernel.dim();
    let (n, _, h, w) = x.dim();
    let flat: Vec<Vec<f64>> = (0..co)
        .map(|o| {
            let mut v = Vec::with_capacity(ci * 9);
            for i in 0..ci {
                for ky in 0..3 {
                    for kx in 0..3 {
                        v.push(kernel[[o, i, ky, kx]]);
                    }
                }
            }
            v
        })
        .collect();
    let mut out = Array4::zeros((n, co, h, w));
    let mut patch = vec![0.0; ci * 9];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for i in 0..ci {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = y as isize + ky as isize - 1;
                            let ix = xx as isize + kx as isize - 1;
                            let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                            patch[i * 9 + ky * 3 + kx] = if inside { x[[b, i, iy as usize, ix as usize]] } else { 0.0 };
                        }
                    }
                }
                for o in 0..co {
                    let dot: f64 = flat[o].iter().zip(&patch).map(|(k, p)| k * p).sum();
                    out[[b, o, y, xx]] = dot + bias[o];
                }
            }
        }
    }
    out
}

fn bn_fold_dense(bn: Option<&BatchNormStats>, kernel: &Array4<f64>, bias: &Array1<f64>) -> (Array4<f64>, Array1<f64>) {
    let Some(bn) = bn else {
        return (kernel.clone(), bias.clone());
    };
    let mut k = kernel.clone();
    let mut b = bias.clone();
    for o in 0..k.dim().0 {
        let std = (bn.var[o] + bn.eps).sqrt();
        let t = bn.gamma[o] / std;
        for v in k.slice_mut(ndarray::s![o, .., .., ..]).iter_mut() {
            *v *= t;
        }
        b[o] = bn.beta[o] + (bias[o] - bn.mean[o]) * t;
    }
    (k, b)
}

/// Ungated RepVGG fusion (`y = f(x) + g(x) + x`), gates ignored.
pub fn plain_repvgg_fuse(w: &RepBranchWeights) -> (Array4<f64>, Array1<f64>) {
    let (co, ci, _, _) = w.k3.dim();
    let (k3, b3) = bn_fold_dense(w.bn3.as_ref(), &w.k3, &w.b3);
    let mut k1_padded = Array4::zeros((co, ci, 3, 3));
    for o in 0..co {
        for i in 0..ci {
            k1_padded[[o, i, 1, 1]] = w.k1[[o, i, 0, 0]];
        }
    }
    let (k1, b1) = bn_fold_dense(w.bn1.as_ref(), &k1_padded, &w.b1);
    let mut kernel = &k3 + &k1;
    let mut bias = &b3 + &b1;
    if w.alpha2.is_some() {
        let mut kid = Array4::zeros((co, ci, 3, 3));
        for c in 0..co {
            kid[[c, c, 1, 1]] = 1.0;
        }
        let (kid, bid) = bn_fold_dense(w.bn_id.as_ref(), &kid, &Array1::zeros(co));
        kernel = kernel + kid;
        bias = bias + bid;
    }
    (kernel, bias)
}

/// Smallest enclosing-rectangle area found by sweeping the orientation in
/// `step` radian increments over a quarter turn.
pub fn min_rect_area_sweep(points: &[Point], step: f64) -> f64 {
    let mut best = f64::MAX;
    let mut t = 0.0;
    while t < std::f64::consts::FRAC_PI_2 {
        let (s, c) = t.sin_cos();
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in points {
            let u = c * p.x + s * p.y;
            let v = -s * p.x + c * p.y;
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        best = best.min((umax - umin) * (vmax - vmin));
        t += step;
    }
    best
}

/// Random valid box with centre in `[0, extent)^2` and sides in `[min_side, max_side)`.
pub fn random_box<R: Rng>(rng: &mut R, extent: f64, min_side: f64, max_side: f64) -> RotatedBox {
    RotatedBox {
        cx: rng.gen_range(0.0..extent),
        cy: rng.gen_range(0.0..extent),
        w: rng.gen_range(min_side..max_side),
        h: rng.gen_range(min_side..max_side),
        theta: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    }
}

/// A box near `b`: shifted by up to `shift` of its size, rescaled and turned a little.
pub fn perturb_box<R: Rng>(rng: &mut R, b: &RotatedBox, shift: f64) -> RotatedBox {
    let size = b.w.max(b.h);
    RotatedBox {
        cx: b.cx + rng.gen_range(-shift..shift) * size,
        cy: b.cy + rng.gen_range(-shift..shift) * size,
        w: b.w * rng.gen_range(0.6..1.6),
        h: b.h * rng.gen_range(0.6..1.6),
        theta: b.theta + rng.gen_range(-0.6..0.6),
    }
}
