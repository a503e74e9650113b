use std::fmt::Write as _;

use super::tile::Tile;
use crate::error::{Error, Result};
use crate::geometry::{min_area_rect, Quad, RotatedBox};

/// One labelled object: `x1 y1 x2 y2 x3 y3 x4 y4 category difficulty`.
#[derive(Debug, Clone, PartialEq)]
pub struct DotaAnnotation {
    pub quad: Quad,
    pub category: String,
    pub difficulty: u8,
}

/// Parsed records plus the per-line errors that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome<T> {
    pub records: Vec<T>,
    pub errors: Vec<Error>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_coords(tokens: &[&str], line: usize) -> Result<[f64; 8]> {
    let mut c = [0.0; 8];
    for (slot, tok) in c.iter_mut().zip(tokens) {
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("coordinate `{tok}` is not a number")))?;
    }
    Ok(c)
}

/// Parses DOTA annotation text. Lines whose first token is not numeric
/// (`imagesource:...`, `gsd:...`) and blank lines are skipped; malformed
/// lines are collected as errors with 1-based line numbers.
pub fn parse_dota(text: &str) -> ParseOutcome<DotaAnnotation> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.first() {
            None => continue,
            Some(first) if first.parse::<f64>().is_err() => continue,
            _ => {}
        }
        let parsed = (|| {
            if tokens.len() != 10 {
                return Err(parse_err(line, format!("expected 10 tokens, found {}", tokens.len())));
            }
            let coords = parse_coords(&tokens[..8], line)?;
            let difficulty = match tokens[9] {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(line, format!("difficulty `{other}` is not 0 or 1"))),
            };
            let quad = Quad::from_coords(coords).map_err(|e| parse_err(line, e.to_string()))?;
            Ok(DotaAnnotation {
                quad,
                category: tokens[8].to_string(),
                difficulty,
            })
        })();
        match parsed {
            Ok(a) => records.push(a),
            Err(e) => errors.push(e),
        }
    }
    ParseOutcome { records, errors }
}

/// Writes annotations in the DOTA label format (shortest round-trip floats).
pub fn format_annotations(annos: &[DotaAnnotation]) -> String {
    let mut out = String::new();
    for a in annos {
        for c in a.quad.coords() {
            write!(out, "{c} ").unwrap();
        }
        writeln!(out, "{} {}", a.category, a.difficulty).unwrap();
    }
    out
}

/// Minimum-area rotated rectangle enclosing the quad, canonicalized.
pub fn quad_to_rbox(q: &Quad) -> Result<RotatedBox> {
    min_area_rect(&q.vertices)
}

/// One line of a task-1 submission file (the class is implied by the file).
#[derive(Debug, Clone, PartialEq)]
pub struct Task1Record {
    pub image_id: String,
    pub score: f64,
    pub quad: Quad,
}

/// `image_id score x1 y1 ... y4`, scores to 4 decimals and coordinates to 2.
pub fn format_task1_line(image_id: &str, score: f64, quad: &Quad) -> String {
    let mut s = format!("{image_id} {score:.4}");
    for c in quad.coords() {
        write!(s, " {c:.2}").unwrap();
    }
    s
}

pub fn parse_task1(text: &str) -> ParseOutcome<Task1Record> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let parsed = (|| {
            if tokens.len() != 10 {
                return Err(parse_err(line, format!("expected 10 tokens, found {}", tokens.len())));
            }
            let score = tokens[1]
                .parse::<f64>()
                .ok()
                .filter(|s| (0.0..=1.0).contains(s))
                .ok_or_else(|| parse_err(line, format!("score `{}` is not in [0, 1]", tokens[1])))?;
            let coords = parse_coords(&tokens[2..], line)?;
            let quad = Quad::from_coords(coords).map_err(|e| parse_err(line, e.to_string()))?;
            Ok(Task1Record {
                image_id: tokens[0].to_string(),
                score,
                quad,
            })
        })();
        match parsed {
            Ok(r) => records.push(r),
            Err(e) => errors.push(e),
        }
    }
    ParseOutcome { records, errors }
}

/// One row of the tile manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: String,
    pub tile: Tile,
}

const MANIFEST_HEADER: &str = "image\tscale\tx0\ty0\tpatch_size";

/// Tab-separated manifest with a header row.
pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.image, e.tile.scale, e.tile.x0, e.tile.y0, e.tile.patch_size
        )
        .unwrap();
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(parse_err(1, "missing manifest header")),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 5 {
            return Err(parse_err(line, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(line, format!("`{s}` is not an integer")));
        let scale = f[1]
            .parse::<f64>()
            .ok()
            .filter(|s| *s > 0.0 && s.is_finite())
            .ok_or_else(|| parse_err(line, format!("`{}` is not a positive scale", f[1])))?;
        out.push(ManifestEntry {
            image: f[0].to_string(),
            tile: Tile {
                scale,
                x0: num(f[2])?,
                y0: num(f[3])?,
                patch_size: num(f[4])?,
            },
        });
    }
    Ok(out)
}
