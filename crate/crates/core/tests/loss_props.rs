use std::f64::consts::PI;

use proptest::prelude::*;
use rotdet_core::gaussian::{
    kld_loss, kld_loss_with, probiou_loss, rbox_to_gaussian, KlDirection, KldConfig,
};
use rotdet_core::geometry::RotatedBox;
use rotdet_core::reference::{central_difference, relative_error};

fn rbox() -> impl Strategy<Value = RotatedBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 2.0..60.0f64, 2.0..60.0f64, -PI..PI)
        .prop_map(|(cx, cy, w, h, theta)| RotatedBox { cx, cy, w, h, theta })
}

fn pair() -> impl Strategy<Value = (RotatedBox, RotatedBox)> {
    (rbox(), -0.4..0.4f64, -0.4..0.4f64, 0.7..1.4f64, 0.7..1.4f64, -0.5..0.5f64).prop_map(
        |(g, dx, dy, sw, sh, dt)| {
            let p = RotatedBox {
                cx: g.cx + dx * g.w,
                cy: g.cy + dy * g.h,
                w: g.w * sw,
                h: g.h * sh,
                theta: g.theta + dt,
            };
            (p, g)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn probiou_gradient_matches_finite_differences((p, g) in pair()) {
        let analytic = probiou_loss(&p, &g).unwrap().grad;
        let numeric = central_difference(|b| probiou_loss(b, &g).unwrap().value, &p, 1e-5);
        for k in 0..5 {
            prop_assert!(relative_error(analytic[k], numeric[k]) <= 1e-4, "k={k} {analytic:?} {numeric:?}");
        }
    }

    #[test]
    fn kld_gradients_match_finite_differences((p, g) in pair(), reverse in any::<bool>()) {
        let cfg = KldConfig {
            direction: if reverse { KlDirection::GtToPred } else { KlDirection::PredToGt },
            ..KldConfig::default()
        };
        let analytic = kld_loss_with(&p, &g, &cfg).unwrap().grad;
        let numeric = central_difference(|b| kld_loss_with(b, &g, &cfg).unwrap().value, &p, 1e-5);
        for k in 0..5 {
            prop_assert!(relative_error(analytic[k], numeric[k]) <= 1e-4, "k={k} {analytic:?} {numeric:?}");
        }
    }

    #[test]
    fn probiou_is_symmetric_and_bounded((p, g) in pair()) {
        let a = probiou_loss(&p, &g).unwrap().value;
        let b = probiou_loss(&g, &p).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(probiou_loss(&g, &g).unwrap().value.abs() <= 1e-12);
        let k = kld_loss(&p, &g).unwrap().value;
        prop_assert!((0.0..1.0).contains(&k));
    }

    #[test]
    fn probiou_grows_along_a_translation_ray(g in rbox(), dir in -PI..PI) {
        let mut last = -1.0;
        for step in 0..20 {
            let t = step as f64 * 2.0;
            let p = RotatedBox { cx: g.cx + t * dir.cos(), cy: g.cy + t * dir.sin(), ..g };
            let v = probiou_loss(&p, &g).unwrap().value;
            prop_assert!(v >= last - 1e-12);
            last = v;
        }
    }

    #[test]
    fn covariance_determinant_is_area_squared(b in rbox()) {
        let det = rbox_to_gaussian(&b).cov.det();
        let want = b.w * b.w * b.h * b.h / 144.0;
        prop_assert!((det - want).abs() <= 1e-9 * want.max(1.0));
    }
}
