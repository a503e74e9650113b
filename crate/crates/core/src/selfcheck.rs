//! Built-in verification suite: every fast path against its reference oracle.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};
use std::fmt;
use std::time::Instant;

use ndarray::{Array1, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::angle::{decode_angle, dfl_loss, encode_angle, AngleDistribution, NUM_BINS};
use crate::assign::{build_anchor_points, rotated_tal_assign, AssignmentInput, TalConfig};
use crate::dota::{evaluate_map, plan_tiles, DotaAnnotation, EvalConfig, EvalDetection, TileSpec, Vocabulary};
use crate::gaussian::{kld_loss, probiou_loss, LossValueAndGrad};
use crate::geometry::{skew_iou, Quad, RotatedBox};
use crate::postprocess::{rotated_nms_indices, Detection};
use crate::reference::{
    brute_force_nms, brute_force_tal, central_difference, conv2d_im2col, monte_carlo_iou, perturb_box,
    plain_repvgg_fuse, random_box, relative_error,
};
use crate::rep::{branch_forward, conv2d_direct, fuse, BatchNormStats, RepBranchWeights};

/// Deliberate defects for exercising the harness itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates the analytic ProbIoU gradient before it is compared.
    ProbiouGradSign,
}

#[derive(Debug, Clone, Copy)]
pub struct SelfCheckOptions {
    pub seed: u64,
    pub fault: Fault,
    pub mc_samples: usize,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            fault: Fault::None,
            mc_samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<22} max_err={:.3e} tol={:.1e} ({:.2}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

fn outcome(name: &'static str, max_error: f64, tolerance: f64, extra_ok: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: extra_ok && max_error <= tolerance,
        max_error,
        tolerance,
        detail,
        seconds: 0.0,
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

type Check = fn(&SelfCheckOptions) -> CheckOutcome;

const CHECKS: [Check; 10] = [
    skew_iou_monte_carlo,
    loss_gradients,
    boundary_continuity,
    square_degeneracy,
    angle_codec,
    rep_fusion,
    tal_assignment,
    nms_oracle,
    tiling_protocol,
    evaluator_fixtures,
];

/// Runs every check in a fixed order.
pub fn run_all(opts: &SelfCheckOptions) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|check| {
            let start = Instant::now();
            let mut o = check(opts);
            o.seconds = start.elapsed().as_secs_f64();
            o
        })
        .collect()
}

pub fn skew_iou_monte_carlo(opts: &SelfCheckOptions) -> CheckOutcome {
    let mut rng = rng_for(opts.seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_box(&mut rng, 100.0, 5.0, 50.0);
        let b = perturb_box(&mut rng, &a, 0.5);
        let exact = skew_iou(&a, &b);
        let est = monte_carlo_iou(&a, &b, opts.mc_samples, &mut rng);
        worst = worst.max((exact - est).abs());
    }
    let sq = RotatedBox { cx: 0.0, cy: 0.0, w: 1.0, h: 1.0, theta: 0.0 };
    let rot = RotatedBox { theta: FRAC_PI_4, ..sq };
    let octagon_err = (skew_iou(&sq, &rot) - 1.0 / SQRT_2).abs();
    outcome(
        "skew_iou_monte_carlo",
        worst,
        5e-3,
        octagon_err <= 1e-9,
        format!("100 pairs x {} samples; octagon err {octagon_err:.1e}", opts.mc_samples),
    )
}

fn gradient_pairs(seed: u64, count: usize) -> Vec<(RotatedBox, RotatedBox)> {
    let mut rng = rng_for(seed, 2);
    (0..count)
        .map(|_| {
            let gt = random_box(&mut rng, 100.0, 4.0, 60.0);
            (perturb_box(&mut rng, &gt, 0.4), gt)
        })
        .collect()
}

fn max_grad_error(
    pairs: &[(RotatedBox, RotatedBox)],
    loss: impl Fn(&RotatedBox, &RotatedBox) -> LossValueAndGrad,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (pred, gt) in pairs {
        let analytic = loss(pred, gt).grad;
        let numeric = central_difference(|p| loss(p, gt).value, pred, 1e-5);
        for k in 0..5 {
            worst = worst.max(relative_error(analytic[k], numeric[k]));
        }
    }
    worst
}

pub fn loss_gradients(opts: &SelfCheckOptions) -> CheckOutcome {
    let pairs = gradient_pairs(opts.seed, 200);
    let sign = if opts.fault == Fault::ProbiouGradSign { -1.0 } else { 1.0 };
    let probiou = max_grad_error(&pairs, |p, g| {
        let mut r = probiou_loss(p, g).expect("valid boxes");
        r.grad = r.grad.map(|v| sign * v);
        r
    });
    let kld = max_grad_error(&pairs, |p, g| kld_loss(p, g).expect("valid boxes"));
    outcome(
        "loss_gradients",
        probiou.max(kld),
        1e-4,
        true,
        format!("200 pairs, h=1e-5; probiou {probiou:.1e}, kld {kld:.1e}"),
    )
}

pub fn boundary_continuity(opts: &SelfCheckOptions) -> CheckOutcome {
    let mut rng = rng_for(opts.seed, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let gt = random_box(&mut rng, 100.0, 4.0, 60.0);
        let pred = perturb_box(&mut rng, &gt, 0.4);
        let a = probiou_loss(&pred, &gt).expect("valid").value;
        let b = probiou_loss(&pred, &gt.edge_exchanged()).expect("valid").value;
        worst = worst.max((a - b).abs());
    }
    outcome("boundary_continuity", worst, 1e-9, true, "100 pairs vs edge-exchanged gt".into())
}

pub fn square_degeneracy(opts: &SelfCheckOptions) -> CheckOutcome {
    let mut rng = rng_for(opts.seed, 4);
    let mut worst: f64 = 0.0;
    let mut dfl_spread: f64 = 0.0;
    for _ in 0..50 {
        let side = rng.gen_range(4.0..60.0);
        let pred = RotatedBox {
            cx: rng.gen_range(0.0..10.0),
            cy: rng.gen_range(0.0..10.0),
            w: side * rng.gen_range(0.8..1.2),
            h: side * rng.gen_range(0.8..1.2),
            theta: rng.gen_range(0.0..FRAC_PI_2),
        };
        let logits: Vec<f64> = (0..NUM_BINS).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = RotatedBox { cx: 5.0, cy: 5.0, w: side, h: side, theta: 0.0 };
        let ref_loss = probiou_loss(&pred, &base).expect("valid").value;
        let ref_dfl = dfl_loss(&logits, &encode_angle(0.0).expect("in range")).expect("valid").value;
        for k in 1..10 {
            let theta = k as f64 * 0.15;
            let gt = RotatedBox { theta, ..base };
            worst = worst.max((probiou_loss(&pred, &gt).expect("valid").value - ref_loss).abs());
            let d = dfl_loss(&logits, &encode_angle(theta).expect("in range")).expect("valid").value;
            dfl_spread = dfl_spread.max((d - ref_dfl).abs());
        }
    }
    outcome(
        "square_degeneracy",
        worst,
        1e-9,
        dfl_spread > 1e-3,
        format!("probiou invariant to square gt angle; dfl spread {dfl_spread:.3}"),
    )
}

pub fn angle_codec(opts: &SelfCheckOptions) -> CheckOutcome {
    let mut rng = rng_for(opts.seed, 5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let theta = rng.gen_range(0.0..=FRAC_PI_2);
        let t = encode_angle(theta).expect("in range");
        worst = worst.max((decode_angle(&AngleDistribution::from_target(&t)) - theta).abs());
    }
    let uniform_err = (decode_angle(&AngleDistribution::uniform()) - FRAC_PI_4).abs();
    outcome(
        "angle_codec",
        worst.max(uniform_err),
        1e-12,
        true,
        format!("1000 round trips; uniform -> pi/4 err {uniform_err:.1e}"),
    )
}

fn random_bn(rng: &mut ChaCha8Rng, c: usize) -> BatchNormStats {
    BatchNormStats {
        mean: Array1::from_shape_fn(c, |_| rng.gen_range(-1.0..1.0)),
        var: Array1::from_shape_fn(c, |_| rng.gen_range(0.1..2.0)),
        gamma: Array1::from_shape_fn(c, |_| rng.gen_range(0.5..1.5)),
        beta: Array1::from_shape_fn(c, |_| rng.gen_range(-0.5..0.5)),
        eps: 1e-5,
    }
}

/// Random gated block with `c` channels, identity shortcut, optional batch norms.
pub fn random_rep_block(rng: &mut ChaCha8Rng, c: usize, with_bn: bool) -> RepBranchWeights {
    let mut w = RepBranchWeights::new(
        Array4::from_shape_fn((c, c, 3, 3), |_| rng.gen_range(-1.0..1.0)),
        Array1::from_shape_fn(c, |_| rng.gen_range(-1.0..1.0)),
        Array4::from_shape_fn((c, c, 1, 1), |_| rng.gen_range(-1.0..1.0)),
        Array1::from_shape_fn(c, |_| rng.gen_range(-1.0..1.0)),
    )
    .with_identity();
    w.alpha1 = rng.gen_range(-1.5..1.5);
    w.alpha2 = Some(rng.gen_range(-1.5..1.5));
    if with_bn {
        w.bn3 = Some(random_bn(rng, c));
        w.bn1 = Some(random_bn(rng, c));
        w.bn_id = Some(random_bn(rng, c));
    }
    w
}

fn max_abs_diff(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

pub fn rep_fusion(opts: &SelfCheckOptions) -> CheckOutcome {
    let mut rng = rng_for(opts.seed, 6);
    let mut worst: f64 = 0.0;
    let mut plain_worst: f64 = 0.0;
    let mut conv_worst: f64 = 0.0;
    for i in 0..100 {
        let c = [1, 4, 8][i % 3];
        let with_bn = i % 2 == 0;
        let mut w = random_rep_block(&mut rng, c, with_bn);
        let x = Array4::from_shape_fn((1, c, 6, 6), |_| rng.gen_range(-1.0..1.0));
        let fused = fuse(&w).expect("valid block");
        let direct = conv2d_direct(&fused.kernel, &fused.bias, &x).expect("shapes match");
        worst = worst.max(max_abs_diff(&branch_forward(&w, &x).expect("valid"), &direct));
        conv_worst = conv_worst.max(max_abs_diff(&direct, &conv2d_im2col(&fused.kernel, &fused.bias, &x)));

        w.alpha1 = 1.0;
        w.alpha2 = Some(1.0);
        let (pk, pb) = plain_repvgg_fuse(&w);
        let gated = fuse(&w).expect("valid block");
        plain_worst = plain_worst.max(max_abs_diff(&gated.kernel, &pk));
        plain_worst = plain_worst.max(gated.bias.iter().zip(pb.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
    }
    outcome(
        "rep_fusion",
        worst.max(plain_worst),
        1e-5,
        conv_worst <= 1e-12,
        format!("100 blocks; gates=1 vs plain fusion {plain_worst:.1e}; conv routes {conv_worst:.1e}"),
    )
}

/// Random small assignment fixture on an 8x8 grid (stride 8) with `num_gt` ground truths.
pub fn random_tal_fixture(rng: &mut ChaCha8Rng, num_gt: usize) -> (AssignmentInput, crate::assign::AnchorPointGrid) {
    let grid = build_anchor_points(64, 64, &[8]).expect("valid strides");
    let n = grid.len();
    let gt_boxes: Vec<RotatedBox> = (0..num_gt).map(|_| random_box(rng, 64.0, 8.0, 40.0)).collect();
    let gt_labels: Vec<usize> = (0..num_gt).map(|_| rng.gen_range(0..3)).collect();
    // coarse score levels and repeated boxes produce metric ties
    let pred_scores: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| f64::from(rng.gen_range(0..5u8)) / 4.0).collect())
        .collect();
    let pred_boxes: Vec<RotatedBox> = (0..n)
        .map(|_| {
            if num_gt > 0 && rng.gen_bool(0.8) {
                let g = &gt_boxes[rng.gen_range(0..num_gt)];
                if rng.gen_bool(0.2) {
                    *g
                } else {
                    perturb_box(rng, g, 0.3)
                }
            } else {
                random_box(rng, 64.0, 4.0, 40.0)
            }
        })
        .collect();
    (
        AssignmentInput {
            gt_boxes,
            gt_labels,
            pred_scores,
            pred_boxes,
        },
        grid,
    )
}

pub fn tal_assignment(opts: &SelfCheckOptions) -> CheckOutcome {
    let mut rng = rng_for(opts.seed, 7);
    let mut mismatches = 0usize;
    let mut worst: f64 = 0.0;
    let mut cases = 0usize;
    for _draw in 0..20 {
        for num_gt in 0..=3 {
            let (input, grid) = random_tal_fixture(&mut rng, num_gt);
            let cfg = TalConfig {
                topk: rng.gen_range(1..=13),
                ..TalConfig::default()
            };
            let fast = rotated_tal_assign(&input, &grid, &cfg).expect("valid fixture");
            let slow = brute_force_tal(&input, &grid, &cfg);
            cases += 1;
            if fast.assigned_gt != slow.assigned_gt {
                mismatches += 1;
            }
            for (a, b) in fast
                .alignment_metric
                .iter()
                .zip(&slow.alignment_metric)
                .chain(fast.soft_cls_target.iter().zip(&slow.soft_cls_target))
            {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let spot = (crate::assign::alignment_metric(0.9, 0.5, 1.0, 6.0) - 0.9 * 0.5f64.powi(6)).abs();
    outcome(
        "tal_assignment",
        worst.max(spot),
        1e-12,
        mismatches == 0,
        format!("{cases} fixtures, {mismatches} label mismatches"),
    )
}

/// Random detection scene: `n` boxes over a 200 px square with tied scores mixed in.
pub fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| Detection {
            rbox: random_box(rng, 200.0, 10.0, 60.0),
            score: if rng.gen_bool(0.3) {
                f64::from(rng.gen_range(1..5u8)) / 5.0
            } else {
                rng.gen_range(0.0..1.0)
            },
            class_id: rng.gen_range(0..3),
        })
        .collect()
}

pub fn nms_oracle(opts: &SelfCheckOptions) -> CheckOutcome {
    let mut rng = rng_for(opts.seed, 8);
    let mut mismatches = 0usize;
    let mut not_idempotent = 0usize;
    for scene in 0..50 {
        let dets = random_scene(&mut rng, 50);
        let thr = rng.gen_range(0.05..0.8);
        let class_aware = scene % 2 == 0;
        let fast = rotated_nms_indices(&dets, thr, class_aware).expect("valid threshold");
        if fast != brute_force_nms(&dets, thr, class_aware) {
            mismatches += 1;
        }
        let kept: Vec<Detection> = fast.iter().map(|&i| dets[i]).collect();
        let again = rotated_nms_indices(&kept, thr, class_aware).expect("valid threshold");
        if again.len() != kept.len() {
            not_idempotent += 1;
        }
    }
    outcome(
        "nms_oracle",
        (mismatches + not_idempotent) as f64,
        0.0,
        true,
        format!("50 scenes x 50 boxes; {mismatches} keep-set mismatches, {not_idempotent} non-idempotent"),
    )
}

pub fn tiling_protocol(_opts: &SelfCheckOptions) -> CheckOutcome {
    let mut errors = Vec::new();
    let ss = plan_tiles(4000, 4000, &TileSpec::dota_ss()).expect("valid spec");
    let want = [0usize, 768, 1536, 2304, 2976];
    let expected: Vec<(usize, usize)> = want.iter().flat_map(|&y| want.iter().map(move |&x| (x, y))).collect();
    let got: Vec<(usize, usize)> = ss.iter().map(|t| (t.x0, t.y0)).collect();
    if got != expected {
        errors.push(format!("dota-ss offsets {got:?}"));
    }
    let ms_spec = TileSpec::dota_ms();
    let ms = plan_tiles(4000, 4000, &ms_spec).expect("valid spec");
    let mut scales: Vec<f64> = ms.iter().map(|t| t.scale).collect();
    scales.dedup();
    if scales != [0.5, 1.0, 1.5] || ms_spec.stride() != 524 {
        errors.push(format!("dota-ms scale groups {scales:?}, stride {}", ms_spec.stride()));
    }
    outcome("tiling_protocol", errors.len() as f64, 0.0, true, errors.join("; "))
}

fn img<T>(v: Vec<T>) -> BTreeMap<String, Vec<T>> {
    BTreeMap::from([("img".to_string(), v)])
}

fn square(x: f64, y: f64, s: f64) -> Quad {
    Quad::from_coords([x, y, x + s, y, x + s, y + s, x, y + s]).expect("valid square")
}

pub fn evaluator_fixtures(_opts: &SelfCheckOptions) -> CheckOutcome {
    let vocab = Vocabulary::dota_v1();
    let cfg = EvalConfig::default();
    let anno = |q, difficulty| DotaAnnotation {
        quad: q,
        category: "ship".into(),
        difficulty,
    };
    let det = |q, score| EvalDetection {
        category: "ship".into(),
        score,
        quad: q,
    };

    let gts = img(vec![anno(square(0., 0., 10.), 0), anno(square(100., 0., 10.), 0)]);
    let three = img(vec![
        det(square(0., 0., 10.), 0.9),
        det(square(50., 50., 10.), 0.8),
        det(square(100., 0., 10.), 0.7),
    ]);
    let ap = evaluate_map(&gts, &three, &vocab, &cfg).expect("valid").ap("ship").unwrap_or(f64::NAN);
    let hand_err = (ap - 5.0 / 6.0).abs();

    let perfect = img(vec![det(square(0., 0., 10.), 0.9), det(square(100., 0., 10.), 0.8)]);
    let map_err = (evaluate_map(&gts, &perfect, &vocab, &cfg).expect("valid").map - 1.0).abs();

    let with_difficult = img(vec![anno(square(0., 0., 10.), 0), anno(square(100., 0., 10.), 1)]);
    let r = evaluate_map(&with_difficult, &perfect, &vocab, &cfg).expect("valid");
    let ship = r.classes.iter().find(|c| c.name == "ship").expect("ship column");
    let difficult_ok = ship.num_gt == 1 && ship.precision == [1.0] && ship.ap == Some(1.0);

    outcome(
        "evaluator_fixtures",
        hand_err.max(map_err),
        1e-6,
        difficult_ok,
        format!("3-det AP {ap:.6}; difficult fixture {}", if difficult_ok { "ok" } else { "wrong" }),
    )
}
