use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rotdet_core::dota::{evaluate_map, parse_dota, EvalConfig, EvalDetection, Vocabulary};

use super::read_task1_dir;
use crate::failure::{list_files, read_to_string, stem, write, Failure};
use crate::Context;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of ground-truth DOTA label files, one `<image id>.txt` per image.
    #[arg(long)]
    gt: PathBuf,

    /// Directory of task-1 detection files, one `Task1_<class>.txt` per class.
    #[arg(long)]
    det: PathBuf,

    /// SkewIoU needed for a match.
    #[arg(long)]
    iou: Option<f64>,

    /// Key-value report (`class=AP` lines, then `mAP=value`).
    #[arg(long)]
    report: Option<PathBuf>,

    /// Plain-text AP table.
    #[arg(long)]
    table: Option<PathBuf>,

    /// Comma-separated category names replacing the DOTA 1.0 vocabulary.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
}

pub fn run(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let vocab = match &args.classes {
        Some(names) => Vocabulary::from_names(names.iter().map(|s| s.trim().to_string())),
        None => Vocabulary::dota_v1(),
    };
    let cfg = EvalConfig {
        iou_threshold: args.iou.or(ctx.config.eval.iou_threshold).unwrap_or(0.5),
        ..EvalConfig::default()
    };

    let mut gts = BTreeMap::new();
    for path in list_files(&args.gt)? {
        if path.extension().is_none_or(|e| e != "txt") {
            continue;
        }
        let parsed = parse_dota(&read_to_string(&path)?);
        if let Some(e) = parsed.errors.first() {
            return Err(Failure::contract(format!("{}: {e}", path.display())));
        }
        gts.insert(stem(&path), parsed.records);
    }

    let mut dets: BTreeMap<String, Vec<EvalDetection>> = BTreeMap::new();
    for (category, records) in read_task1_dir(&args.det)? {
        if vocab.index_of(&category).is_none() {
            return Err(Failure::contract(format!("detection file for unknown category `{category}`")));
        }
        for r in records {
            dets.entry(r.image_id).or_default().push(EvalDetection {
                category: category.clone(),
                score: r.score,
                quad: r.quad,
            });
        }
    }

    let report = evaluate_map(&gts, &dets, &vocab, &cfg).map_err(|e| Failure::contract(e.to_string()))?;
    let table = report.to_table();
    print!("{table}");
    if let Some(path) = &args.table {
        write(path, &table)?;
    }
    if let Some(path) = &args.report {
        write(path, &report.to_key_values())?;
    }
    Ok(())
}
