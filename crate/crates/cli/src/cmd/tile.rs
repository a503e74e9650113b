use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};
use rotdet_core::dota::{
    clip_annotations_to_tile, format_annotations, format_manifest, parse_dota, plan_tiles, tile_name,
    DotaAnnotation, ManifestEntry, Tile, TileSpec, DEFAULT_KEEP_FRAC,
};

use crate::failure::{create_dir_all, list_files, read_to_string, stem, write, Failure};
use crate::Context;

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Directory of source images.
    #[arg(long)]
    images: PathBuf,

    /// Directory of DOTA label files, one `<image stem>.txt` per image.
    #[arg(long)]
    annotations: PathBuf,

    /// Output directory for the manifest, `labelTxt/` and `images/`.
    #[arg(long)]
    out: PathBuf,

    /// Minimum fraction of an object's area that must fall inside a tile.
    #[arg(long)]
    keep_frac: Option<f64>,

    /// Also write cropped image patches (PNG, zero-padded at the border).
    #[arg(long)]
    crops: bool,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn read_annotations(path: &Path) -> Result<Vec<DotaAnnotation>> {
    let parsed = parse_dota(&read_to_string(path)?);
    if let Some(e) = parsed.errors.first() {
        return Err(Failure::contract(format!("{}: {e}", path.display())));
    }
    Ok(parsed.records)
}

fn write_crops(path: &Path, tiles: &[Tile], out: &Path, image: &str) -> Result<()> {
    let src = image::open(path).map_err(|e| Failure::io(path, e))?;
    let mut scaled: Option<(f64, DynamicImage)> = None;
    for t in tiles {
        if scaled.as_ref().is_none_or(|(s, _)| *s != t.scale) {
            let img = if t.scale == 1.0 {
                src.clone()
            } else {
                let w = ((f64::from(src.width()) * t.scale).round() as u32).max(1);
                let h = ((f64::from(src.height()) * t.scale).round() as u32).max(1);
                src.resize_exact(w, h, FilterType::Triangle)
            };
            scaled = Some((t.scale, img));
        }
        let (_, img) = scaled.as_ref().expect("set above");
        let p = t.patch_size as u32;
        let (x0, y0) = (t.x0 as u32, t.y0 as u32);
        let patch = img.crop_imm(x0, y0, p.min(img.width() - x0), p.min(img.height() - y0)).to_rgb8();
        let mut canvas = RgbImage::new(p, p);
        imageops::replace(&mut canvas, &patch, 0, 0);
        let dest = out.join(format!("{}.png", tile_name(image, t)));
        canvas.save(&dest).map_err(|e| Failure::io(&dest, e))?;
    }
    Ok(())
}

pub fn run(ctx: &Context, args: &TileArgs) -> Result<()> {
    let spec: TileSpec = ctx.config.tile_spec(ctx.preset.as_deref())?;
    let keep_frac = args.keep_frac.or(ctx.config.tile.keep_frac).unwrap_or(DEFAULT_KEEP_FRAC);
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(Failure::contract(format!("keep fraction must be in (0, 1], got {keep_frac}")));
    }
    let images: Vec<PathBuf> = list_files(&args.images)?.into_iter().filter(|p| is_image(p)).collect();

    let label_dir = args.out.join("labelTxt");
    let crop_dir = args.out.join("images");
    create_dir_all(&label_dir)?;
    if args.crops {
        create_dir_all(&crop_dir)?;
    }

    let mut manifest = Vec::new();
    for path in &images {
        let name = stem(path);
        let anno_path = args.annotations.join(format!("{name}.txt"));
        let annos = read_annotations(&anno_path)?;
        let (w, h) = image::image_dimensions(path).map_err(|e| Failure::io(path, e))?;
        let tiles = plan_tiles(w as usize, h as usize, &spec).map_err(|e| Failure::contract(e.to_string()))?;
        for t in &tiles {
            let clipped = clip_annotations_to_tile(&annos, t, keep_frac);
            write(&label_dir.join(format!("{}.txt", tile_name(&name, t))), &format_annotations(&clipped))?;
            manifest.push(ManifestEntry {
                image: name.clone(),
                tile: *t,
            });
        }
        if args.crops {
            write_crops(path, &tiles, &crop_dir, &name)?;
        }
        println!("{name}: {w}x{h} -> {} tiles", tiles.len());
    }
    write(&args.out.join("manifest.tsv"), &format_manifest(&manifest))?;
    println!("total: {} images, {} tiles", images.len(), manifest.len());
    Ok(())
}
