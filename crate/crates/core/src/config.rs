//! TOML job configuration.
//!
//! Every key is optional; omitted keys take the documented defaults. Unknown
//! keys and sections are rejected. A minimal file:
//!
//! ```toml
//! [job]
//! target = "portrait.png"
//! ```
//!
//! Sections and their keys (defaults in parentheses):
//!
//! - `[job]`: `target`, `saliency`, `steps` (300), `seed` (0),
//!   `target_opacity` (1.0), `background` ("#ffffff"), `ink` ("#000000"),
//!   `size` ([w, h], target size), `terms` (per application),
//!   `checkpoint_every` (0)
//! - `[spline]`: `degree` (5), `samples_per_segment` (8), `multiplicity` (1)
//! - `[smoothing]`: `order` (3), `mode` ("exact" | "pspline")
//! - `[weights]`: `smooth`, `box`, `repulsion`, `coverage`, `overlap`,
//!   `alignment`, `balance`, `external` (all 1.0)
//! - `[optimizer]`: `lr_positions` (1.0), `lr_widths` (0.1), `lr_colors`
//!   (0.02), `lr_logits` (0.02), `lr_min_ratio` (0.0), `beta1`, `beta2`,
//!   `epsilon`, `width_min` (0.0), `width_max` (6.0), `train_colors`
//! - `[raster]`: `band` (1.0), `sharpness` (12.0), `mse_levels` (4)
//! - `[palette]`: `colors` ("#rrggbb,..."), `k` (6), `tau_start` (1.0),
//!   `tau_end` (0.05), `gumbel_scale` (0.15)
//! - `[seeding]`: `keypoints` (48), `strokes` (1), `iterations` (30),
//!   `width` (1.0), `areas` (64)
//! - `[repulsion]`: `alpha` (1), `beta` (2), `window` (2), `epsilon` (1e-6),
//!   `length_weighted` (true)
//! - `[box]`: `penalty` ("relu" | "softplus"), `margin` (0.0 px)

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{BoxPenalty, LossWeights, RepulsionParams, Term};
use crate::palette::{parse_hex, Palette, DEFAULT_GUMBEL_SCALE};
use crate::smoothing::GramMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { line: Option<usize>, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobSection {
    pub target: Option<PathBuf>,
    pub saliency: Option<PathBuf>,
    pub steps: usize,
    pub seed: u64,
    pub target_opacity: f64,
    pub background: String,
    pub ink: String,
    pub size: Option<[usize; 2]>,
    pub terms: Option<Vec<Term>>,
    pub checkpoint_every: usize,
}

impl Default for JobSection {
    fn default() -> Self {
        Self {
            target: None,
            saliency: None,
            steps: 300,
            seed: 0,
            target_opacity: 1.0,
            background: "#ffffff".into(),
            ink: "#000000".into(),
            size: None,
            terms: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplineSection {
    pub degree: usize,
    pub samples_per_segment: usize,
    pub multiplicity: usize,
}

impl Default for SplineSection {
    fn default() -> Self {
        Self {
            degree: 5,
            samples_per_segment: 8,
            multiplicity: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    pub order: usize,
    pub mode: GramMode,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self {
            order: 3,
            mode: GramMode::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub lr_positions: f64,
    pub lr_widths: f64,
    pub lr_colors: f64,
    pub lr_logits: f64,
    pub lr_min_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub width_min: f64,
    pub width_max: f64,
    /// Per-application default when absent.
    pub train_colors: Option<bool>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            lr_positions: 1.0,
            lr_widths: 0.1,
            lr_colors: 0.02,
            lr_logits: 0.02,
            lr_min_ratio: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            width_min: 0.0,
            width_max: 6.0,
            train_colors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterSection {
    pub band: f64,
    pub sharpness: f64,
    pub mse_levels: usize,
}

impl Default for RasterSection {
    fn default() -> Self {
        Self {
            band: 1.0,
            sharpness: 12.0,
            mse_levels: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaletteSection {
    pub colors: Option<String>,
    pub k: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub gumbel_scale: f64,
}

impl Default for PaletteSection {
    fn default() -> Self {
        Self {
            colors: None,
            k: 6,
            tau_start: 1.0,
            tau_end: 0.05,
            gumbel_scale: DEFAULT_GUMBEL_SCALE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedingSection {
    pub keypoints: usize,
    pub strokes: usize,
    pub iterations: usize,
    pub width: f64,
    pub areas: usize,
}

impl Default for SeedingSection {
    fn default() -> Self {
        Self {
            keypoints: 48,
            strokes: 1,
            iterations: 30,
            width: 1.0,
            areas: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxSection {
    pub penalty: BoxPenalty,
    /// Grows the canvas rectangle by this many pixels on every side.
    pub margin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobConfig {
    pub job: JobSection,
    pub spline: SplineSection,
    pub smoothing: SmoothingSection,
    pub weights: LossWeights,
    pub optimizer: OptimizerSection,
    pub raster: RasterSection,
    pub palette: PaletteSection,
    pub seeding: SeedingSection,
    pub repulsion: RepulsionParams,
    #[serde(rename = "box")]
    pub bbox: BoxSection,
}

/// 1-based line of `key` inside `[section]`, if the text mentions it.
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        let Some((k, _)) = t.split_once('=') else { continue };
        let k = k.trim();
        if (current == section && k == key) || (current.is_empty() && k == format!("{section}.{key}")) {
            return Some(i + 1);
        }
    }
    None
}

impl JobConfig {
    pub fn from_toml(src: &str) -> Result<JobConfig, ConfigError> {
        let cfg: JobConfig = toml::from_str(src).map_err(|e| ConfigError::Parse(parse_message(src, &e)))?;
        cfg.validate_with_source(Some(src))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, src: Option<&str>) -> Result<(), ConfigError> {
        let fail = |section: &str, key: &str, message: String| {
            Err(ConfigError::Invalid {
                line: src.and_then(|s| locate(s, section, key)),
                message,
            })
        };
        let p = self.spline.degree;
        if !(1..=9).contains(&p) {
            return fail("spline", "degree", format!("degree must be in 1..=9, got {p}"));
        }
        if self.spline.samples_per_segment == 0 {
            return fail("spline", "samples_per_segment", "samples_per_segment must be at least 1".into());
        }
        if self.spline.multiplicity == 0 {
            return fail("spline", "multiplicity", "multiplicity must be at least 1".into());
        }
        let d = self.smoothing.order;
        if d == 0 || d > p {
            // locate the smoothing order first, then the degree
            let line = src.and_then(|s| locate(s, "smoothing", "order").or_else(|| locate(s, "spline", "degree")));
            return Err(ConfigError::Invalid {
                line,
                message: format!("smoothing order {d} needs 1 <= d <= degree ({p}), i.e. d < k"),
            });
        }
        for t in Term::ALL {
            let v = self.weights.get(t);
            if !(v >= 0.0 && v.is_finite()) {
                return fail("weights", t.name(), format!("weight `{t}` must be a non-negative number, got {v}"));
            }
        }
        if self.job.steps == 0 {
            return fail("job", "steps", "steps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.job.target_opacity) {
            return fail("job", "target_opacity", format!("target_opacity {} outside [0, 1]", self.job.target_opacity));
        }
        for (key, v) in [("background", &self.job.background), ("ink", &self.job.ink)] {
            if let Err(e) = parse_hex(v) {
                return fail("job", key, e.to_string());
            }
        }
        if let Some([w, h]) = self.job.size {
            if w == 0 || h == 0 {
                return fail("job", "size", format!("size {w}x{h} is empty"));
            }
        }
        let o = &self.optimizer;
        for (key, v) in [
            ("lr_positions", o.lr_positions),
            ("lr_widths", o.lr_widths),
            ("lr_colors", o.lr_colors),
            ("lr_logits", o.lr_logits),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail("optimizer", key, format!("{key} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&o.lr_min_ratio) {
            return fail("optimizer", "lr_min_ratio", format!("lr_min_ratio {} outside [0, 1]", o.lr_min_ratio));
        }
        if !(o.width_min >= 0.0) {
            return fail("optimizer", "width_min", format!("width_min must be >= 0, got {}", o.width_min));
        }
        if !(o.width_min <= o.width_max) {
            return fail(
                "optimizer",
                "width_max",
                format!("width_min {} exceeds width_max {}", o.width_min, o.width_max),
            );
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return fail("optimizer", "beta1", "Adam needs 0 <= beta < 1 and epsilon > 0".into());
        }
        if !(self.raster.band > 0.0 && self.raster.sharpness > 0.0) {
            return fail("raster", "band", "band and sharpness must be positive".into());
        }
        if self.raster.mse_levels == 0 {
            return fail("raster", "mse_levels", "mse_levels must be at least 1".into());
        }
        let pl = &self.palette;
        if let Some(c) = &pl.colors {
            if let Err(e) = Palette::from_hex_list(c) {
                return fail("palette", "colors", e.to_string());
            }
        }
        if pl.k < 2 {
            return fail("palette", "k", format!("k must be at least 2, got {}", pl.k));
        }
        if !(pl.tau_end > 0.0 && pl.tau_start >= pl.tau_end) {
            return fail("palette", "tau_end", "need tau_start >= tau_end > 0".into());
        }
        if !(pl.gumbel_scale >= 0.0) {
            return fail("palette", "gumbel_scale", "gumbel_scale must be >= 0".into());
        }
        let s = &self.seeding;
        if s.keypoints < 2 {
            return fail("seeding", "keypoints", "need at least 2 key-points".into());
        }
        if s.strokes == 0 || s.strokes * 2 > s.keypoints {
            return fail(
                "seeding",
                "strokes",
                format!("{} strokes need between 1 and keypoints/2 strokes", s.strokes),
            );
        }
        if !(s.width >= 0.0) {
            return fail("seeding", "width", "initial width must be >= 0".into());
        }
        if s.areas == 0 {
            return fail("seeding", "areas", "need at least 1 area".into());
        }
        if !(self.bbox.margin.is_finite()) {
            return fail("box", "margin", "margin must be finite".into());
        }
        Ok(())
    }
}

fn parse_message(src: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = src[..span.start.min(src.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}

/// Reads and validates a job file. Relative image paths are resolved against
/// the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<JobConfig, ConfigError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = JobConfig::from_toml(&src).map_err(|e| match e {
        ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.job.target, &mut cfg.job.saliency].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = JobConfig::from_toml("[job]\ntarget = \"a.png\"\n").unwrap();
        let mut expect = JobConfig::default();
        expect.job.target = Some("a.png".into());
        assert_eq!(cfg, expect);
        assert_eq!(cfg.job.steps, 300);
        assert_eq!(cfg.spline.degree, 5);
        assert_eq!(cfg.smoothing.order, 3);
        assert_eq!(cfg.weights, LossWeights::uniform(1.0));
        assert_eq!(cfg.optimizer.lr_positions, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let err = JobConfig::from_toml("[job]\nsteps = 10\n\n[spline]\ndegre = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 5"), "{msg}");
        assert!(msg.contains("degre"), "{msg}");
        assert!(JobConfig::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn smoothing_order_must_stay_below_order() {
        let err = JobConfig::from_toml("[spline]\ndegree = 2\n\n[smoothing]\norder = 3\n").unwrap_err();
        match err {
            ConfigError::Invalid { line, message } => {
                assert_eq!(line, Some(5));
                assert!(message.contains("d < k"));
            }
            other => panic!("{other:?}"),
        }
        assert!(JobConfig::from_toml("[spline]\ndegree = 3\n[smoothing]\norder = 3\n").is_ok());
    }

    #[test]
    fn validation_errors_point_at_the_key() {
        let src = "[weights]\nsmooth = 2.0\nrepulsion = -1\n";
        match JobConfig::from_toml(src).unwrap_err() {
            ConfigError::Invalid { line, .. } => assert_eq!(line, Some(3)),
            other => panic!("{other:?}"),
        }
        let src = "[optimizer]\nwidth_min = 3.0\nwidth_max = 1.0\n";
        assert!(matches!(JobConfig::from_toml(src), Err(ConfigError::Invalid { line: Some(3), .. })));
        assert!(JobConfig::from_toml("[optimizer]\nlr_widths = 0\n").is_err());
        assert!(JobConfig::from_toml("[job]\nbackground = \"#zzzzzz\"\n").is_err());
        assert!(JobConfig::from_toml("[palette]\ncolors = \"#000000\"\n").is_err());
        assert!(JobConfig::from_toml("[weights]\nbox = 0.5\nbalance = 3\n").is_ok());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = JobConfig::default();
        cfg.smoothing.mode = GramMode::Pspline;
        cfg.job.terms = Some(vec![Term::Coverage, Term::Smooth]);
        cfg.weights.bbox = 0.25;
        let back = JobConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("job.toml");
        std::fs::write(&p, "[job]\ntarget = \"t.png\"\nsaliency = \"/abs/s.png\"\n").unwrap();
        let cfg = load_config(&p).unwrap();
        assert_eq!(cfg.job.target.unwrap(), dir.path().join("t.png"));
        assert_eq!(cfg.job.saliency.unwrap(), PathBuf::from("/abs/s.png"));
        assert!(matches!(load_config(dir.path().join("missing.toml")), Err(ConfigError::Io { .. })));
    }
}
