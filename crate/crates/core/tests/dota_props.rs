use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotdet_core::dota::{
    clip_annotations_to_tile, evaluate_map, merge_tile_detections, plan_tiles, DotaAnnotation, EvalConfig,
    EvalDetection, Tile, TileSpec, Vocabulary, DEFAULT_KEEP_FRAC,
};
use rotdet_core::geometry::{skew_iou, Quad, RotatedBox};
use rotdet_core::postprocess::Detection;
use rotdet_core::Error;

fn square(x: f64, y: f64, s: f64) -> Quad {
    Quad::from_coords([x, y, x + s, y, x + s, y + s, x, y + s]).unwrap()
}

fn anno(q: Quad, category: &str, difficulty: u8) -> DotaAnnotation {
    DotaAnnotation { quad: q, category: category.into(), difficulty }
}

fn det(q: Quad, category: &str, score: f64) -> EvalDetection {
    EvalDetection { category: category.into(), score, quad: q }
}

fn covered(tiles: &[Tile], scale: f64, extent: usize) -> bool {
    // interval union along one axis covers [0, extent)
    let mut xs: Vec<(usize, usize)> =
        tiles.iter().filter(|t| t.scale == scale).map(|t| (t.x0, t.x0 + t.patch_size)).collect();
    xs.sort_unstable();
    let mut reach = 0;
    for (a, b) in xs {
        if a > reach {
            return false;
        }
        reach = reach.max(b);
    }
    reach >= extent
}

proptest! {
    #[test]
    fn tiles_cover_the_scaled_image(w in 1usize..6000, h in 1usize..6000, ms in any::<bool>()) {
        let spec = if ms { TileSpec::dota_ms() } else { TileSpec::dota_ss() };
        let tiles = plan_tiles(w, h, &spec).unwrap();
        for &s in &spec.scales {
            let sw = ((w as f64 * s).round() as usize).max(1);
            let sh = ((h as f64 * s).round() as usize).max(1);
            prop_assert!(covered(&tiles, s, sw));
            let transposed: Vec<Tile> = tiles.iter().map(|t| Tile { x0: t.y0, y0: t.x0, ..*t }).collect();
            prop_assert!(covered(&transposed, s, sh));
            for t in tiles.iter().filter(|t| t.scale == s) {
                prop_assert!(sw <= spec.patch_size || t.x0 + t.patch_size <= sw);
                prop_assert!(sh <= spec.patch_size || t.y0 + t.patch_size <= sh);
            }
        }
    }
}

#[test]
fn protocol_tile_counts() {
    let ss = plan_tiles(4000, 4000, &TileSpec::dota_ss()).unwrap();
    assert_eq!(ss.len(), 25);
    assert_eq!(plan_tiles(1024, 1024, &TileSpec::dota_ss()).unwrap().len(), 1);
    let ms = plan_tiles(4000, 4000, &TileSpec::dota_ms()).unwrap();
    assert_eq!(TileSpec::dota_ms().stride(), 524);
    for s in [0.5, 1.0, 1.5] {
        assert!(ms.iter().any(|t| t.scale == s));
    }
}

#[test]
fn clipping_keeps_inside_and_drops_mostly_outside() {
    let tile = Tile { scale: 1.0, x0: 100, y0: 100, patch_size: 100 };
    let annos = vec![
        anno(square(120., 120., 10.), "ship", 0),
        anno(square(195., 120., 10.), "ship", 0),
        anno(square(192., 150., 10.), "plane", 1),
        anno(square(400., 400., 10.), "ship", 0),
    ];
    let out = clip_annotations_to_tile(&annos, &tile, DEFAULT_KEEP_FRAC);
    assert_eq!(out.len(), 3);
    assert_eq!(out[0].quad, square(20., 20., 10.));
    assert!((out[1].quad.area() - 50.0).abs() < 1e-9);
    assert!((out[2].quad.area() - 80.0).abs() < 1e-9);
    assert_eq!(out[2].difficulty, 1);
    assert!(clip_annotations_to_tile(&annos[1..2], &tile, 0.6).is_empty());
}

#[test]
fn merging_tiles_restores_image_coordinates_and_deduplicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let spec = TileSpec { patch_size: 200, overlap: 100, scales: vec![1.0, 0.5] };
    let tiles = plan_tiles(600, 600, &spec).unwrap();
    let truth: Vec<RotatedBox> = (0..8)
        .map(|i| RotatedBox {
            cx: 60.0 + 60.0 * i as f64,
            cy: rng.gen_range(50.0..550.0),
            w: rng.gen_range(20.0..40.0),
            h: rng.gen_range(10.0..20.0),
            theta: rng.gen_range(0.0..1.5),
        })
        .collect();
    let per_tile: Vec<(Tile, Vec<Detection>)> = tiles
        .iter()
        .map(|t| {
            let (x0, y0, p) = (t.x0 as f64, t.y0 as f64, t.patch_size as f64);
            let dets = truth
                .iter()
                .enumerate()
                .filter_map(|(i, b)| {
                    let (cx, cy) = (b.cx * t.scale - x0, b.cy * t.scale - y0);
                    let inside = (0.0..p).contains(&cx) && (0.0..p).contains(&cy);
                    inside.then_some(Detection {
                        rbox: RotatedBox {
                            cx,
                            cy,
                            w: b.w * t.scale,
                            h: b.h * t.scale,
                            theta: b.theta,
                        },
                        score: 0.5 + 0.05 * i as f64,
                        class_id: i % 2,
                    })
                })
                .collect();
            (*t, dets)
        })
        .collect();
    let merged = merge_tile_detections(&per_tile, 0.5).unwrap();
    assert_eq!(merged.len(), truth.len());
    for b in &truth {
        assert!(merged.iter().any(|d| skew_iou(&d.rbox, b) > 1.0 - 1e-9));
    }
}

fn one<T>(v: Vec<T>) -> BTreeMap<String, Vec<T>> {
    BTreeMap::from([("img".to_string(), v)])
}

#[test]
fn three_detection_fixture_gives_five_sixths() {
    let vocab = Vocabulary::dota_v1();
    let gts = one(vec![anno(square(0., 0., 10.), "ship", 0), anno(square(100., 0., 10.), "ship", 0)]);
    let dets = one(vec![
        det(square(0., 0., 10.), "ship", 0.9),
        det(square(50., 50., 10.), "ship", 0.8),
        det(square(100., 0., 10.), "ship", 0.7),
    ]);
    let r = evaluate_map(&gts, &dets, &vocab, &EvalConfig::default()).unwrap();
    assert!((r.ap("ship").unwrap() - 5.0 / 6.0).abs() <= 1e-6);
    assert!((r.map - 5.0 / 6.0).abs() <= 1e-6);
    assert_eq!(r.ap("plane"), None);
    assert!(r.to_key_values().contains("ship=0.833333"));
}

#[test]
fn evaluation_is_invariant_to_detection_order_and_image_order() {
    let vocab = Vocabulary::dota_v1();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut gts = BTreeMap::new();
    let mut dets = BTreeMap::new();
    for img in 0..4 {
        let g: Vec<DotaAnnotation> = (0..5)
            .map(|k| {
                let cat = ["ship", "plane"][k % 2];
                anno(square(k as f64 * 30.0, img as f64 * 5.0, 20.0), cat, u8::from(k == 4))
            })
            .collect();
        let d: Vec<EvalDetection> = (0..8)
            .map(|_| {
                let cat = ["ship", "plane"][rng.gen_range(0..2)];
                let x = rng.gen_range(0.0..150.0);
                det(square(x, img as f64 * 5.0, 20.0), cat, f64::from(rng.gen_range(1..6u8)) / 6.0)
            })
            .collect();
        gts.insert(format!("img{img}"), g);
        dets.insert(format!("img{img}"), d);
    }
    let base = evaluate_map(&gts, &dets, &vocab, &EvalConfig::default()).unwrap();
    for _ in 0..10 {
        let mut shuffled = dets.clone();
        for v in shuffled.values_mut() {
            v.shuffle(&mut rng);
        }
        let again = evaluate_map(&gts, &shuffled, &vocab, &EvalConfig::default()).unwrap();
        assert_eq!(base.map, again.map);
    }
}

#[test]
fn adding_a_true_positive_never_lowers_ap() {
    let vocab = Vocabulary::dota_v1();
    let gts = one(vec![
        anno(square(0., 0., 10.), "ship", 0),
        anno(square(50., 0., 10.), "ship", 0),
        anno(square(100., 0., 10.), "ship", 0),
    ]);
    let mut d = vec![det(square(0., 0., 10.), "ship", 0.6), det(square(200., 0., 10.), "ship", 0.9)];
    let before = evaluate_map(&gts, &one(d.clone()), &vocab, &EvalConfig::default()).unwrap().map;
    d.push(det(square(50., 0., 10.), "ship", 0.95));
    let after = evaluate_map(&gts, &one(d), &vocab, &EvalConfig::default()).unwrap().map;
    assert!(after > before);
}

#[test]
fn difficult_gts_are_ignored() {
    let vocab = Vocabulary::dota_v1();
    let gts = one(vec![anno(square(0., 0., 10.), "ship", 0), anno(square(100., 0., 10.), "ship", 1)]);
    let dets = one(vec![det(square(0., 0., 10.), "ship", 0.9), det(square(100., 0., 10.), "ship", 0.95)]);
    let r = evaluate_map(&gts, &dets, &vocab, &EvalConfig::default()).unwrap();
    let ship = r.classes.iter().find(|c| c.name == "ship").unwrap();
    assert_eq!(ship.num_gt, 1);
    assert_eq!(ship.precision, vec![1.0]);
    assert_eq!(ship.ap, Some(1.0));
}

#[test]
fn unknown_categories_are_a_contract_error() {
    let vocab = Vocabulary::dota_v1();
    let gts = one(vec![anno(square(0., 0., 10.), "submarine", 0)]);
    let err = evaluate_map(&gts, &one(vec![]), &vocab, &EvalConfig::default()).unwrap_err();
    assert!(matches!(err, Error::UnknownCategory(_)));
}
