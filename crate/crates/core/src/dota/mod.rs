//! DOTA annotation and submission formats, image tiling, and rotated mAP.

mod eval;
mod format;
mod tile;

pub use eval::{
    average_precision, evaluate_map, ApInterpolation, ClassResult, EvalConfig, EvalDetection, EvalReport,
};
pub use format::{
    format_annotations, format_manifest, format_task1_line, parse_dota, parse_manifest, parse_task1,
    quad_to_rbox, DotaAnnotation, ManifestEntry, ParseOutcome, Task1Record,
};
pub use tile::{
    clip_annotations_to_tile, merge_tile_detections, plan_tiles, tile_name, Tile, TileSpec, DEFAULT_KEEP_FRAC,
};

/// Ordered category vocabulary with the short column names used in result tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    abbrevs: Vec<String>,
}

const DOTA_V1: [(&str, &str); 15] = [
    ("plane", "PL"),
    ("baseball-diamond", "BD"),
    ("bridge", "BR"),
    ("ground-track-field", "GTF"),
    ("small-vehicle", "SV"),
    ("large-vehicle", "LV"),
    ("ship", "SH"),
    ("tennis-court", "TC"),
    ("basketball-court", "BC"),
    ("storage-tank", "ST"),
    ("soccer-ball-field", "SBF"),
    ("roundabout", "RA"),
    ("harbor", "HA"),
    ("swimming-pool", "SP"),
    ("helicopter", "HC"),
];

impl Vocabulary {
    /// The 15 DOTA 1.0 categories in their conventional column order.
    pub fn dota_v1() -> Self {
        Self {
            names: DOTA_V1.iter().map(|(n, _)| n.to_string()).collect(),
            abbrevs: DOTA_V1.iter().map(|(_, a)| a.to_string()).collect(),
        }
    }

    /// Custom vocabulary; names double as abbreviations.
    pub fn from_names<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        Self {
            abbrevs: names.clone(),
            names,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn abbrev(&self, id: usize) -> Option<&str> {
        self.abbrevs.get(id).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::dota_v1()
    }
}
