use std::path::Path;

use anyhow::Result;
use rotdet_core::assign::TalConfig;
use rotdet_core::dota::TileSpec;
use rotdet_core::gaussian::KldConfig;
use serde::Deserialize;

use crate::failure::{read_to_string, Failure};

/// Run configuration. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub assign: AssignSection,
    #[serde(default)]
    pub nms: NmsSection,
    #[serde(default)]
    pub tile: TileSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub tau: Option<f64>,
    pub probiou_weight: Option<f64>,
    pub dfl_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub topk: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmsSection {
    pub iou_threshold: Option<f64>,
    pub score_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileSection {
    pub preset: Option<String>,
    pub patch_size: Option<usize>,
    pub overlap: Option<usize>,
    pub scales: Option<Vec<f64>>,
    pub keep_frac: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub iou_threshold: Option<f64>,
}

pub const DEFAULT_NMS_IOU: f64 = 0.1;

fn unit_open(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0 && x < 1.0) => Err(Failure::contract(format!("{name} must be in (0, 1), got {x}"))),
        _ => Ok(()),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| Failure::contract(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let contract = |e: rotdet_core::Error| Failure::contract(e.to_string());
        if let Some(tau) = self.loss.tau {
            KldConfig { tau, ..KldConfig::default() }.validate().map_err(contract)?;
        }
        for (name, w) in [("loss.probiou_weight", self.loss.probiou_weight), ("loss.dfl_weight", self.loss.dfl_weight)] {
            if let Some(w) = w {
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Failure::contract(format!("{name} must be a non-negative number, got {w}")));
                }
            }
        }
        self.tal().validate().map_err(contract)?;
        unit_open("nms.iou_threshold", self.nms.iou_threshold)?;
        if let Some(s) = self.nms.score_threshold {
            if !(0.0..1.0).contains(&s) {
                return Err(Failure::contract(format!("nms.score_threshold must be in [0, 1), got {s}")));
            }
        }
        unit_open("tile.keep_frac", self.tile.keep_frac)?;
        if let Some(t) = self.eval.iou_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Failure::contract(format!("eval.iou_threshold must be in (0, 1], got {t}")));
            }
        }
        self.tile_spec(None)?;
        Ok(())
    }

    pub fn tal(&self) -> TalConfig {
        let d = TalConfig::default();
        TalConfig {
            alpha: self.assign.alpha.unwrap_or(d.alpha),
            beta: self.assign.beta.unwrap_or(d.beta),
            topk: self.assign.topk.unwrap_or(d.topk),
        }
    }

    /// Tile layout: the flag preset wins over the configured preset, and
    /// explicit fields override whichever preset applies.
    pub fn tile_spec(&self, preset_flag: Option<&str>) -> Result<TileSpec> {
        let preset = preset_flag.or(self.tile.preset.as_deref()).unwrap_or("dota-ss");
        let mut spec = TileSpec::preset(preset).map_err(|e| Failure::contract(e.to_string()))?;
        if let Some(p) = self.tile.patch_size {
            spec.patch_size = p;
        }
        if let Some(o) = self.tile.overlap {
            spec.overlap = o;
        }
        if let Some(s) = &self.tile.scales {
            spec.scales = s.clone();
        }
        spec.validate().map_err(|e| Failure::contract(e.to_string()))?;
        Ok(spec)
    }

    pub fn nms_iou(&self, flag: Option<f64>) -> Result<f64> {
        let v = flag.or(self.nms.iou_threshold).unwrap_or(DEFAULT_NMS_IOU);
        unit_open("NMS IoU threshold", Some(v))?;
        Ok(v)
    }
}
