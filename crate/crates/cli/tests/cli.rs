use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::GrayImage;
use tempfile::TempDir;

fn rotdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rotdet")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct TileFixture {
    dir: TempDir,
}

impl TileFixture {
    fn new(images: &[(&str, u32, u32)], annotations: &[(&str, &str)]) -> Self {
        let dir = TempDir::new().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::create_dir_all(dir.path().join("labels")).unwrap();
        for &(name, w, h) in images {
            GrayImage::new(w, h).save(dir.path().join("images").join(format!("{name}.png"))).unwrap();
        }
        for &(name, text) in annotations {
            fs::write(dir.path().join("labels").join(format!("{name}.txt")), text).unwrap();
        }
        Self { dir }
    }

    fn path(&self, sub: &str) -> PathBuf {
        self.dir.path().join(sub)
    }

    fn run(&self, extra: &[&str]) -> Output {
        let (images, labels, out) = (self.path("images"), self.path("labels"), self.path("out"));
        let mut args = vec!["tile", "--images", p(&images), "--annotations", p(&labels), "--out", p(&out)];
        args.extend_from_slice(extra);
        rotdet(&args)
    }
}

#[test]
fn tile_large_image_into_25_patches() {
    let fx = TileFixture::new(&[("P0000", 4000, 4000)], &[("P0000", "imagesource:test\n10 10 50 10 50 30 10 30 ship 0\n")]);
    let out = fx.run(&["--preset", "dota-ss"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("P0000: 4000x4000 -> 25 tiles"));
    let manifest = fs::read_to_string(fx.path("out/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 26);
    assert!(manifest.contains("P0000\t1\t2976\t2976\t1024"));
    let label = fs::read_to_string(fx.path("out/labelTxt/P0000__1__0___0.txt")).unwrap();
    assert_eq!(label.trim(), "10 10 50 10 50 30 10 30 ship 0");
    assert_eq!(fs::read_dir(fx.path("out/labelTxt")).unwrap().count(), 25);
}

#[test]
fn tile_patch_sized_image_once_with_crops() {
    let fx = TileFixture::new(&[("small", 1024, 1024)], &[("small", "")]);
    let out = fx.run(&["--crops"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("small: 1024x1024 -> 1 tiles"));
    let crop = image::open(fx.path("out/images/small__1__0___0.png")).unwrap();
    assert_eq!((crop.width(), crop.height()), (1024, 1024));
}

#[test]
fn tile_multi_scale_preset_writes_three_scale_groups() {
    let fx = TileFixture::new(&[("m", 1200, 800)], &[("m", "")]);
    let out = fx.run(&["--preset", "dota-ms"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = fs::read_to_string(fx.path("out/manifest.tsv")).unwrap();
    for s in ["\t0.5\t", "\t1\t", "\t1.5\t"] {
        assert!(manifest.contains(s), "{manifest}");
    }
}

#[test]
fn tile_missing_annotation_exits_2_naming_the_path() {
    let fx = TileFixture::new(&[("lonely", 64, 64)], &[]);
    let out = fx.run(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lonely.txt"), "{}", stderr(&out));
}

struct EvalFixture {
    dir: TempDir,
}

const GT: &str = "0 0 10 0 10 10 0 10 ship 0\n100 0 110 0 110 10 100 10 ship 0\n";

impl EvalFixture {
    fn new(gt: &[(&str, &str)], det: &[(&str, &str)]) -> Self {
        let dir = TempDir::new().unwrap();
        fs::create_dir_all(dir.path().join("gt")).unwrap();
        fs::create_dir_all(dir.path().join("det")).unwrap();
        for (name, text) in gt {
            fs::write(dir.path().join("gt").join(format!("{name}.txt")), text).unwrap();
        }
        for (name, text) in det {
            fs::write(dir.path().join("det").join(format!("Task1_{name}.txt")), text).unwrap();
        }
        Self { dir }
    }

    fn run(&self, extra: &[&str]) -> (Output, String) {
        let (gt, det, report) = (self.dir.path().join("gt"), self.dir.path().join("det"), self.dir.path().join("report.txt"));
        let mut args = vec!["eval", "--gt", p(&gt), "--det", p(&det), "--report", p(&report)];
        args.extend_from_slice(extra);
        let out = rotdet(&args);
        (out, fs::read_to_string(report).unwrap_or_default())
    }
}

#[test]
fn eval_perfect_detections_score_one() {
    let fx = EvalFixture::new(
        &[("img", GT)],
        &[("ship", "img 0.9 0 0 10 0 10 10 0 10\nimg 0.8 100 0 110 0 110 10 100 10\n")],
    );
    let (out, report) = fx.run(&[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(report, "ship=1.000000\nmAP=1.000000\n");
    let table = stdout(&out);
    assert!(table.lines().next().unwrap().split_whitespace().eq(
        ["PL", "BD", "BR", "GTF", "SV", "LV", "SH", "TC", "BC", "ST", "SBF", "RA", "HA", "SP", "HC", "mAP"]
    ));
}

#[test]
fn eval_empty_detections_score_zero() {
    let fx = EvalFixture::new(&[("img", GT)], &[]);
    let (out, report) = fx.run(&[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(report.ends_with("mAP=0.000000\n"), "{report}");
}

#[test]
fn eval_three_detection_fixture() {
    let fx = EvalFixture::new(
        &[("img", GT)],
        &[("ship", "img 0.9 0 0 10 0 10 10 0 10\nimg 0.8 50 50 60 50 60 60 50 60\nimg 0.7 100 0 110 0 110 10 100 10\n")],
    );
    let table = fx.dir.path().join("table.txt");
    let (out, report) = fx.run(&["--table", p(&table)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(report.contains("ship=0.833333"), "{report}");
    assert!(fs::read_to_string(table).unwrap().contains("83.33"));
}

#[test]
fn eval_vocabulary_mismatch_exits_3() {
    let fx = EvalFixture::new(&[("img", GT)], &[("submarine", "img 0.9 0 0 10 0 10 10 0 10\n")]);
    let (out, _) = fx.run(&[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("submarine"));

    let fx = EvalFixture::new(&[("img", "0 0 10 0 10 10 0 10 zeppelin 0\n")], &[]);
    assert_eq!(fx.run(&[]).0.status.code(), Some(3));

    let fx = EvalFixture::new(&[("img", GT)], &[]);
    assert!(fx.run(&["--classes", "ship,plane"]).0.status.success());
}

#[test]
fn eval_missing_directory_exits_2() {
    let out = rotdet(&["eval", "--gt", "/nonexistent/gt", "--det", "/nonexistent/det"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/gt"));
}

#[test]
fn nms_suppresses_overlapping_detections() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    fs::create_dir_all(&input).unwrap();
    fs::write(
        input.join("Task1_ship.txt"),
        "a 0.9 0 0 10 0 10 10 0 10\na 0.8 1 0 11 0 11 10 1 10\na 0.7 50 50 60 50 60 60 50 60\nb 0.5 1 0 11 0 11 10 1 10\n",
    )
    .unwrap();
    let output = dir.path().join("out");
    let out = rotdet(&["nms", "--input", p(&input), "--output", p(&output), "--iou", "0.5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("ship: 4 -> 3"));
    let text = fs::read_to_string(output.join("Task1_ship.txt")).unwrap();
    let first: Vec<&str> = text.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(first, ["a", "a", "b"]);
    assert!(text.starts_with("a 0.9000 "));
}

#[test]
fn config_file_is_validated_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, "[nms]\niou_threshold = 0.3\n").unwrap();
    let out = rotdet(&["--config", p(&good), "bench", "--kernel", "nms", "--n", "200"]);
    assert!(stdout(&out).contains("iou=0.3 "), "{}", stdout(&out));
    let out = rotdet(&["--config", p(&good), "bench", "--kernel", "nms", "--n", "200", "--iou", "0.6"]);
    assert!(stdout(&out).contains("iou=0.6 "));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[nms]\niou = 0.3\n").unwrap();
    assert_eq!(rotdet(&["--config", p(&bad), "selfcheck"]).status.code(), Some(3));
    assert_eq!(rotdet(&["--config", "/nonexistent.toml", "selfcheck"]).status.code(), Some(2));
}

#[test]
fn bench_is_deterministic_for_a_seed() {
    let first_line = |seed: &str| {
        let out = rotdet(&["--seed", seed, "bench", "--kernel", "skew-iou", "--n", "2000"]);
        assert!(out.status.success());
        stdout(&out).lines().next().unwrap().to_string()
    };
    assert_eq!(first_line("7"), first_line("7"));
    assert_ne!(first_line("7"), first_line("8"));
    let out = rotdet(&["bench", "--kernel", "nms", "--n", "1000", "--verify"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("verify nms vs brute force"));
    let out = rotdet(&["bench", "--kernel", "probiou", "--n", "500", "--verify"]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn selfcheck_fault_injection_exits_1() {
    let out = rotdet(&["selfcheck", "--inject-fault", "probiou-grad-sign", "--mc-samples", "200000"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("[FAIL] loss_gradients"), "{text}");
    assert!(text.contains("max_err="));
}
