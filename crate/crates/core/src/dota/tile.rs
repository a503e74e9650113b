use super::format::DotaAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{clip_convex, min_area_rect, rbox_to_quad, ConvexPolygon, Point, Quad, RotatedBox};
use crate::postprocess::{rotated_nms, Detection};

/// Annotations keep their place in a tile when at least this fraction of their area lies inside.
pub const DEFAULT_KEEP_FRAC: f64 = 0.5;

/// How an image is cut into square patches at one or more scales.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSpec {
    pub patch_size: usize,
    pub overlap: usize,
    pub scales: Vec<f64>,
}

impl TileSpec {
    /// Single scale, 1024 px patches overlapping by 256 px.
    pub fn dota_ss() -> Self {
        Self {
            patch_size: 1024,
            overlap: 256,
            scales: vec![1.0],
        }
    }

    /// Scales 0.5 / 1.0 / 1.5, 1024 px patches overlapping by 500 px.
    pub fn dota_ms() -> Self {
        Self {
            patch_size: 1024,
            overlap: 500,
            scales: vec![0.5, 1.0, 1.5],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dota-ss" => Ok(Self::dota_ss()),
            "dota-ms" => Ok(Self::dota_ms()),
            other => Err(Error::Validation(format!(
                "unknown tile preset `{other}` (expected dota-ss or dota-ms)"
            ))),
        }
    }

    pub fn stride(&self) -> usize {
        self.patch_size - self.overlap
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.overlap >= self.patch_size {
            return Err(Error::Validation(format!(
                "need 0 <= overlap < patch_size, got overlap {} patch {}",
                self.overlap, self.patch_size
            )));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Validation("scales must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// A patch of the image rescaled by `scale`, with its top-left corner at `(x0, y0)`
/// in scaled-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    pub scale: f64,
    pub x0: usize,
    pub y0: usize,
    pub patch_size: usize,
}

impl Tile {
    pub fn rect(&self) -> ConvexPolygon {
        let (x0, y0) = (self.x0 as f64, self.y0 as f64);
        let p = self.patch_size as f64;
        ConvexPolygon::rect(x0, y0, x0 + p, y0 + p)
    }
}

/// DOTA-devkit style patch name, e.g. `P0000__1__768___0`.
pub fn tile_name(image: &str, tile: &Tile) -> String {
    format!("{image}__{}__{}___{}", tile.scale, tile.x0, tile.y0)
}

/// Offsets `0, stride, 2 stride, ...` with the last one pulled back so the
/// patch ends exactly at the image edge.
fn axis_offsets(size: usize, patch: usize, stride: usize) -> Vec<usize> {
    if size <= patch {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut x = 0;
    loop {
        if x + patch >= size {
            out.push(size - patch);
            break;
        }
        out.push(x);
        x += stride;
    }
    out
}

fn scaled_extent(size: usize, scale: f64) -> usize {
    ((size as f64 * scale).round() as usize).max(1)
}

/// Tile layout for every scale, row-major within a scale. Offsets are
/// computed on the rescaled image. Images smaller than a patch get a single
/// tile at the origin (padded downstream).
pub fn plan_tiles(image_w: usize, image_h: usize, spec: &TileSpec) -> Result<Vec<Tile>> {
    spec.validate()?;
    if image_w == 0 || image_h == 0 {
        return Err(Error::Validation("image has zero extent".into()));
    }
    let mut tiles = Vec::new();
    for &scale in &spec.scales {
        let xs = axis_offsets(scaled_extent(image_w, scale), spec.patch_size, spec.stride());
        let ys = axis_offsets(scaled_extent(image_h, scale), spec.patch_size, spec.stride());
        for &y0 in &ys {
            for &x0 in &xs {
                tiles.push(Tile {
                    scale,
                    x0,
                    y0,
                    patch_size: spec.patch_size,
                });
            }
        }
    }
    Ok(tiles)
}

/// Moves annotations into tile coordinates.
///
/// An annotation is kept when the fraction of its (scaled) area inside the
/// tile is at least `keep_frac`. Fully contained annotations keep their quad;
/// partially contained ones are replaced by the minimum-area rectangle of the
/// clipped region.
pub fn clip_annotations_to_tile(annos: &[DotaAnnotation], tile: &Tile, keep_frac: f64) -> Vec<DotaAnnotation> {
    let window = tile.rect();
    let shift = Point::new(tile.x0 as f64, tile.y0 as f64);
    let mut out = Vec::new();
    for a in annos {
        let scaled = a.quad.map(|p| p * tile.scale);
        let area = scaled.area();
        let Some(inter) = clip_convex(&scaled.to_polygon(), &window) else {
            continue;
        };
        let frac = inter.area() / area;
        if frac < keep_frac {
            continue;
        }
        let quad = if frac >= 1.0 - 1e-9 {
            scaled
        } else {
            match min_area_rect(inter.vertices()) {
                Ok(r) => rbox_to_quad(&r),
                Err(_) => continue,
            }
        };
        out.push(DotaAnnotation {
            quad: translate(&quad, shift),
            category: a.category.clone(),
            difficulty: a.difficulty,
        });
    }
    out
}

fn translate(q: &Quad, shift: Point) -> Quad {
    q.map(|p| p - shift)
}

fn to_image_frame(b: &RotatedBox, tile: &Tile) -> RotatedBox {
    let inv = 1.0 / tile.scale;
    RotatedBox {
        cx: (b.cx + tile.x0 as f64) * inv,
        cy: (b.cy + tile.y0 as f64) * inv,
        w: b.w * inv,
        h: b.h * inv,
        theta: b.theta,
    }
}

/// Maps per-tile detections back to original image coordinates and runs
/// class-aware rotated NMS over the union.
pub fn merge_tile_detections(per_tile: &[(Tile, Vec<Detection>)], iou_threshold: f64) -> Result<Vec<Detection>> {
    let merged: Vec<Detection> = per_tile
        .iter()
        .flat_map(|(tile, dets)| {
            dets.iter().map(move |d| Detection {
                rbox: to_image_frame(&d.rbox, tile),
                ..*d
            })
        })
        .collect();
    rotated_nms(&merged, iou_threshold, true)
}
