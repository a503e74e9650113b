use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rotdet_core::dota::{format_task1_line, quad_to_rbox};
use rotdet_core::geometry::rbox_to_quad;
use rotdet_core::postprocess::{rotated_nms, Detection};

use super::read_task1_dir;
use crate::failure::{create_dir_all, write, Failure};
use crate::Context;

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// Directory of task-1 detection files.
    #[arg(long)]
    input: PathBuf,

    /// Directory for the suppressed files (same names).
    #[arg(long)]
    output: PathBuf,

    /// IoU above which the lower-scored box is suppressed.
    #[arg(long)]
    iou: Option<f64>,
}

pub fn run(ctx: &Context, args: &NmsArgs) -> Result<()> {
    let thr = ctx.config.nms_iou(args.iou)?;
    let score_min = ctx.config.nms.score_threshold.unwrap_or(0.0);
    create_dir_all(&args.output)?;
    for (category, records) in read_task1_dir(&args.input)? {
        let mut per_image: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        let total = records.len();
        for r in records.into_iter().filter(|r| r.score >= score_min) {
            let rbox = quad_to_rbox(&r.quad).map_err(|e| Failure::contract(format!("{category}: {e}")))?;
            per_image.entry(r.image_id).or_default().push(Detection {
                rbox,
                score: r.score,
                class_id: 0,
            });
        }
        let mut out = String::new();
        let mut kept_total = 0;
        for (image, dets) in &per_image {
            let kept = rotated_nms(dets, thr, false).map_err(|e| Failure::contract(e.to_string()))?;
            kept_total += kept.len();
            for d in kept {
                out.push_str(&format_task1_line(image, d.score, &rbox_to_quad(&d.rbox)));
                out.push('\n');
            }
        }
        write(&args.output.join(format!("Task1_{category}.txt")), &out)?;
        println!("{category}: {total} -> {kept_total}");
    }
    Ok(())
}
