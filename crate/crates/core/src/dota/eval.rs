use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::format::DotaAnnotation;
use super::Vocabulary;
use crate::error::{Error, Result};
use crate::geometry::{polygon_iou, ConvexPolygon, Quad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApInterpolation {
    /// Area under the monotone precision envelope at every recall change.
    #[default]
    AllPoints,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: ApInterpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            interpolation: ApInterpolation::AllPoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalDetection {
    pub category: String,
    pub score: f64,
    pub quad: Quad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub name: String,
    pub abbrev: String,
    /// `None` when the class has no (non-difficult) ground truth.
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub num_det: usize,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassResult>,
    pub map: f64,
}

impl EvalReport {
    pub fn ap(&self, name: &str) -> Option<f64> {
        self.classes.iter().find(|c| c.name == name).and_then(|c| c.ap)
    }

    /// Two-row table: short class names, then APs in percent; `-` marks classes without ground truth.
    pub fn to_table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for c in &self.classes {
            let cell = c.ap.map_or_else(|| "-".to_string(), |ap| format!("{:.2}", ap * 100.0));
            let width = c.abbrev.len().max(cell.len()).max(5);
            write!(head, "{:>width$} ", c.abbrev).unwrap();
            write!(row, "{cell:>width$} ").unwrap();
        }
        write!(head, "{:>6}", "mAP").unwrap();
        write!(row, "{:>6.2}", self.map * 100.0).unwrap();
        format!("{head}\n{row}\n")
    }

    /// `class=AP` per class with ground truth, then `mAP=value`.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            if let Some(ap) = c.ap {
                writeln!(out, "{}={ap:.6}", c.name).unwrap();
            }
        }
        writeln!(out, "mAP={:.6}", self.map).unwrap();
        out
    }
}

/// Area under the precision/recall curve. `recall` must be non-decreasing.
pub fn average_precision(recall: &[f64], precision: &[f64], mode: ApInterpolation) -> f64 {
    match mode {
        ApInterpolation::AllPoints => {
            let mut mrec = Vec::with_capacity(recall.len() + 2);
            let mut mpre = Vec::with_capacity(recall.len() + 2);
            mrec.push(0.0);
            mpre.push(0.0);
            mrec.extend_from_slice(recall);
            mpre.extend_from_slice(precision);
            mrec.push(1.0);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len())
                .filter(|&i| mrec[i] != mrec[i - 1])
                .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
                .sum()
        }
        ApInterpolation::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let t = k as f64 / 10.0;
                    recall
                        .iter()
                        .zip(precision)
                        .filter(|(r, _)| **r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

struct Candidate<'a> {
    image: &'a str,
    score: f64,
    quad: &'a Quad,
}

fn coords_cmp(a: &Quad, b: &Quad) -> std::cmp::Ordering {
    a.coords()
        .iter()
        .zip(b.coords().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// VOC-style rotated mAP.
///
/// Per class, detections are visited by descending score (ties broken by
/// image id, then coordinates, so input order does not matter). Each is
/// matched to the unmatched non-difficult ground truth of its image with the
/// highest IoU at or above the threshold. A detection that matches nothing
/// but overlaps a difficult ground truth is ignored; otherwise it is a false
/// positive. Difficult ground truths are excluded from the recall
/// denominator. mAP averages over classes with at least one counted ground truth.
pub fn evaluate_map(
    gts: &BTreeMap<String, Vec<DotaAnnotation>>,
    dets: &BTreeMap<String, Vec<EvalDetection>>,
    vocab: &Vocabulary,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        return Err(Error::Validation(format!(
            "IoU threshold must be in (0, 1], got {}",
            cfg.iou_threshold
        )));
    }
    for image in dets.keys() {
        if !gts.contains_key(image) {
            return Err(Error::Validation(format!("detections reference unknown image `{image}`")));
        }
    }
    for a in gts.values().flatten() {
        if vocab.index_of(&a.category).is_none() {
            return Err(Error::UnknownCategory(a.category.clone()));
        }
    }
    for d in dets.values().flatten() {
        if vocab.index_of(&d.category).is_none() {
            return Err(Error::UnknownCategory(d.category.clone()));
        }
    }

    let mut classes = Vec::with_capacity(vocab.len());
    for (cid, name) in vocab.names().iter().enumerate() {
        // per image: (polygon, difficult)
        let class_gts: BTreeMap<&str, Vec<(ConvexPolygon, bool)>> = gts
            .iter()
            .map(|(img, annos)| {
                let v = annos
                    .iter()
                    .filter(|a| &a.category == name)
                    .map(|a| (a.quad.to_polygon(), a.difficulty != 0))
                    .collect();
                (img.as_str(), v)
            })
            .collect();
        let num_gt = class_gts.values().flatten().filter(|(_, difficult)| !difficult).count();

        let mut cands: Vec<Candidate> = dets
            .iter()
            .flat_map(|(img, ds)| {
                ds.iter().filter(|d| &d.category == name).map(move |d| Candidate {
                    image: img.as_str(),
                    score: d.score,
                    quad: &d.quad,
                })
            })
            .collect();
        cands.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.image.cmp(b.image))
                .then_with(|| coords_cmp(a.quad, b.quad))
        });

        let mut matched: BTreeMap<&str, Vec<bool>> =
            class_gts.iter().map(|(img, v)| (*img, vec![false; v.len()])).collect();
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut precision = Vec::new();
        let mut recall = Vec::new();
        for c in &cands {
            let poly = c.quad.to_polygon();
            let image_gts = &class_gts[c.image];
            let used = matched.get_mut(c.image).expect("every image has a match table");
            let mut best: Option<(usize, f64)> = None;
            let mut hits_difficult = false;
            for (g, (gp, difficult)) in image_gts.iter().enumerate() {
                let iou = polygon_iou(&poly, gp);
                if iou < cfg.iou_threshold {
                    continue;
                }
                if *difficult {
                    hits_difficult = true;
                } else if !used[g] && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    tp += 1;
                }
                None if hits_difficult => continue,
                None => fp += 1,
            }
            precision.push(tp as f64 / (tp + fp) as f64);
            recall.push(if num_gt > 0 { tp as f64 / num_gt as f64 } else { 0.0 });
        }

        let ap = (num_gt > 0).then(|| average_precision(&recall, &precision, cfg.interpolation));
        classes.push(ClassResult {
            name: name.clone(),
            abbrev: vocab.abbrev(cid).unwrap_or(name).to_string(),
            ap,
            num_gt,
            num_det: cands.len(),
            precision,
            recall,
        });
    }

    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    Ok(EvalReport { classes, map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square(x: f64, y: f64, s: f64) -> Quad {
        Quad::from_coords([x, y, x + s, y, x + s, y + s, x, y + s]).unwrap()
    }

    fn gt(q: Quad, cat: &str, difficulty: u8) -> DotaAnnotation {
        DotaAnnotation {
            quad: q,
            category: cat.into(),
            difficulty,
        }
    }

    fn det(q: Quad, cat: &str, score: f64) -> EvalDetection {
        EvalDetection {
            category: cat.into(),
            score,
            quad: q,
        }
    }

    fn one_image<T>(v: Vec<T>) -> BTreeMap<String, Vec<T>> {
        BTreeMap::from([("img".to_string(), v)])
    }

    #[test]
    fn single_match_and_miss() {
        let vocab = Vocabulary::dota_v1();
        let gts = one_image(vec![gt(square(0., 0., 10.), "plane", 0)]);
        let hit = one_image(vec![det(square(0., 0., 10.), "plane", 0.9)]);
        let r = evaluate_map(&gts, &hit, &vocab, &EvalConfig::default()).unwrap();
        assert_eq!(r.ap("plane"), Some(1.0));
        assert_eq!(r.map, 1.0);
        assert_eq!(r.ap("ship"), None);

        let miss = one_image(vec![det(square(50., 50., 10.), "plane", 0.9)]);
        let r = evaluate_map(&gts, &miss, &vocab, &EvalConfig::default()).unwrap();
        assert_eq!(r.ap("plane"), Some(0.0));
    }

    #[test]
    fn hand_enumerated_curve() {
        let vocab = Vocabulary::dota_v1();
        let gts = one_image(vec![gt(square(0., 0., 10.), "ship", 0), gt(square(100., 0., 10.), "ship", 0)]);
        let dets = one_image(vec![
            det(square(0., 0., 10.), "ship", 0.9),
            det(square(50., 50., 10.), "ship", 0.8),
            det(square(100., 0., 10.), "ship", 0.7),
        ]);
        let r = evaluate_map(&gts, &dets, &vocab, &EvalConfig::default()).unwrap();
        let c = r.classes.iter().find(|c| c.name == "ship").unwrap();
        assert_eq!(c.recall, vec![0.5, 0.5, 1.0]);
        assert_abs_diff_eq!(c.precision[2], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.ap.unwrap(), 0.5 + 0.5 * 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.ap.unwrap(), 0.8333, epsilon = 1e-4);
    }

    #[test]
    fn difficult_ground_truth_is_neutral() {
        let vocab = Vocabulary::dota_v1();
        let gts = one_image(vec![gt(square(0., 0., 10.), "ship", 0), gt(square(100., 0., 10.), "ship", 1)]);
        let dets = one_image(vec![
            det(square(100., 0., 10.), "ship", 0.95),
            det(square(0., 0., 10.), "ship", 0.9),
        ]);
        let r = evaluate_map(&gts, &dets, &vocab, &EvalConfig::default()).unwrap();
        let c = r.classes.iter().find(|c| c.name == "ship").unwrap();
        assert_eq!(c.num_gt, 1);
        assert_eq!(c.precision, vec![1.0]);
        assert_eq!(c.ap, Some(1.0));
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let vocab = Vocabulary::dota_v1();
        let gts = one_image(vec![gt(square(0., 0., 10.), "ship", 0)]);
        let dets = one_image(vec![det(square(0., 0., 10.), "ship", 0.9), det(square(0., 0., 10.), "ship", 0.8)]);
        let r = evaluate_map(&gts, &dets, &vocab, &EvalConfig::default()).unwrap();
        let c = r.classes.iter().find(|c| c.name == "ship").unwrap();
        assert_eq!(c.precision, vec![1.0, 0.5]);
        assert_eq!(c.ap, Some(1.0));
    }

    #[test]
    fn vocabulary_mismatch_rejected() {
        let vocab = Vocabulary::dota_v1();
        let gts = one_image(vec![gt(square(0., 0., 10.), "ship", 0)]);
        let dets = one_image(vec![det(square(0., 0., 10.), "boat", 0.9)]);
        assert_eq!(
            evaluate_map(&gts, &dets, &vocab, &EvalConfig::default()),
            Err(Error::UnknownCategory("boat".into()))
        );
        let stray = BTreeMap::from([("other".to_string(), vec![det(square(0., 0., 10.), "ship", 0.9)])]);
        assert!(evaluate_map(&gts, &stray, &vocab, &EvalConfig::default()).is_err());
    }

    #[test]
    fn empty_detections_give_zero() {
        let vocab = Vocabulary::dota_v1();
        let gts = one_image(vec![gt(square(0., 0., 10.), "ship", 0)]);
        let r = evaluate_map(&gts, &BTreeMap::new(), &vocab, &EvalConfig::default()).unwrap();
        assert_eq!(r.map, 0.0);
    }

    #[test]
    fn eleven_point_interpolation() {
        let ap = average_precision(&[0.5, 0.5, 1.0], &[1.0, 0.5, 2.0 / 3.0], ApInterpolation::ElevenPoint);
        assert_abs_diff_eq!(ap, (6.0 * 1.0 + 5.0 * 2.0 / 3.0) / 11.0, epsilon = 1e-12);
        assert_eq!(average_precision(&[], &[], ApInterpolation::AllPoints), 0.0);
    }

    #[test]
    fn report_formats() {
        let vocab = Vocabulary::from_names(["a", "b"]);
        let gts = one_image(vec![gt(square(0., 0., 10.), "a", 0)]);
        let dets = one_image(vec![det(square(0., 0., 10.), "a", 0.9)]);
        let r = evaluate_map(&gts, &dets, &vocab, &EvalConfig::default()).unwrap();
        assert_eq!(r.to_key_values(), "a=1.000000\nmAP=1.000000\n");
        let table = r.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), vec!["a", "b", "mAP"]);
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), vec!["100.00", "-", "100.00"]);
    }
}
