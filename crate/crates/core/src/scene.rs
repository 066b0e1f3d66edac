//! Scene model: an ordered list of key-point paths with colors, plus the
//! fixed linear maps that turn key-points into rasterizer samples.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bezier::{chain_sampling_map, chain_tangent_map, BezierChain, BezierError, ConversionPipeline};
use crate::palette::{hard_assign, Palette};
use crate::raster::{render, Canvas, DrawKind, Drawable, RasterConfig, RasterError};
use crate::sparse::PointMap;
use crate::spline::{build_spline, KeyPointPath, Point, SplineCurve, SplineError};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("item {index}: {source}")]
    Spline { index: usize, source: SplineError },
    #[error("item {index}: {source}")]
    Bezier { index: usize, source: BezierError },
    #[error("item {index}: color has {got} channels, background has {expected}")]
    Channels { index: usize, expected: usize, got: usize },
    #[error("item {index}: {got} logits for a palette of {expected} colors")]
    Logits { index: usize, expected: usize, got: usize },
    #[error("item {index}: palette colors need a 3-channel background")]
    PaletteChannels { index: usize },
    #[error("item {index}: logits given but the scene has no palette")]
    NoPalette { index: usize },
    #[error("background must have 1, 3 or 4 channels, got {0}")]
    Background(usize),
    #[error("canvas size {0}x{1} is empty")]
    EmptyCanvas(usize, usize),
    #[error("item {index}: fills must be closed")]
    OpenFill { index: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("scene JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn default_opacity() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneItem {
    pub path: KeyPointPath,
    pub kind: DrawKind,
    pub color: Vec<f64>,
    #[serde(default = "default_opacity")]
    pub opacity: f64,
    /// Palette logits; when present the hard palette color replaces `color`
    /// on export and in [`Scene::render`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

impl SceneItem {
    pub fn stroke(path: KeyPointPath, color: Vec<f64>) -> Self {
        Self {
            path,
            kind: DrawKind::Stroke,
            color,
            opacity: 1.0,
            logits: None,
        }
    }

    pub fn fill(path: KeyPointPath, color: Vec<f64>) -> Self {
        Self {
            path,
            kind: DrawKind::Fill,
            color,
            opacity: 1.0,
            logits: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub background: Vec<f64>,
    #[serde(default)]
    pub items: Vec<SceneItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<Palette>,
}

impl Scene {
    pub fn new(width: usize, height: usize, background: Vec<f64>) -> Self {
        Self {
            width,
            height,
            background,
            items: Vec::new(),
            palette: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.background.len()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::EmptyCanvas(self.width, self.height));
        }
        let c = self.channels();
        if ![1, 3, 4].contains(&c) {
            return Err(SceneError::Background(c));
        }
        for (index, item) in self.items.iter().enumerate() {
            item.path.validate().map_err(|source| SceneError::Spline { index, source })?;
            if item.kind == DrawKind::Fill && !item.path.closed {
                return Err(SceneError::OpenFill { index });
            }
            if item.color.len() != c {
                return Err(SceneError::Channels {
                    index,
                    expected: c,
                    got: item.color.len(),
                });
            }
            if let Some(l) = &item.logits {
                let palette = self.palette.as_ref().ok_or(SceneError::NoPalette { index })?;
                if l.len() != palette.len() {
                    return Err(SceneError::Logits {
                        index,
                        expected: palette.len(),
                        got: l.len(),
                    });
                }
                if c != 3 {
                    return Err(SceneError::PaletteChannels { index });
                }
            }
        }
        Ok(())
    }

    /// Color an item is drawn with outside optimization: the argmax palette
    /// entry for quantized items, the stored color otherwise.
    pub fn display_color(&self, index: usize) -> Vec<f64> {
        let item = &self.items[index];
        match (&item.logits, &self.palette) {
            (Some(l), Some(p)) => hard_assign(l, p).to_vec(),
            _ => item.color.clone(),
        }
    }

    pub fn spline(&self, index: usize) -> Result<SplineCurve, SceneError> {
        build_spline(&self.items[index].path).map_err(|source| SceneError::Spline { index, source })
    }

    pub fn chain(&self, index: usize) -> Result<BezierChain, SceneError> {
        let spline = self.spline(index)?;
        ConversionPipeline::for_spline(&spline)
            .and_then(|p| p.to_cubic(spline.control_points()))
            .map_err(|source| SceneError::Bezier { index, source })
    }

    /// Rasterizer input with display colors, `per_segment` samples per cubic.
    pub fn drawables(&self, per_segment: usize) -> Result<Vec<Drawable>, SceneError> {
        self.validate()?;
        (0..self.items.len())
            .map(|i| {
                let maps = PathMaps::new(&self.items[i].path, per_segment).map_err(|e| e.at(i))?;
                let samples = maps.samples(&self.items[i].path.keypoints);
                Ok(make_drawable(&self.items[i], samples, self.display_color(i)))
            })
            .collect()
    }

    pub fn render(&self, cfg: &RasterConfig, per_segment: usize) -> Result<Canvas, SceneError> {
        let d = self.drawables(per_segment)?;
        Ok(render(&d, self.width, self.height, &self.background, cfg)?.0)
    }

    /// Copy with every quantized item's color replaced by its palette color.
    pub fn quantized(&self) -> Scene {
        let mut out = self.clone();
        for i in 0..out.items.len() {
            out.items[i].color = self.display_color(i);
        }
        out
    }

    /// Every key-point of every item, in item order.
    pub fn keypoint_count(&self) -> usize {
        self.items.iter().map(|i| i.path.keypoints.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.items.iter().all(|it| {
            it.path.keypoints.iter().flatten().all(|v| v.is_finite())
                && it.color.iter().all(|v| v.is_finite())
                && it.logits.iter().flatten().all(|v| v.is_finite())
        })
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        let s: Scene = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scene::from_json(&text)
    }
}

pub(crate) fn make_drawable(item: &SceneItem, samples: Vec<Point>, color: Vec<f64>) -> Drawable {
    let points = samples.iter().map(|s| [s[0], s[1]]).collect();
    let radii = samples.iter().map(|s| s[2]).collect();
    Drawable {
        points,
        radii,
        kind: item.kind,
        closed: item.path.closed,
        color,
        opacity: item.opacity,
    }
}

/// Error from building the maps of one path, before the item index is known.
#[derive(Debug)]
pub enum PathMapError {
    Spline(SplineError),
    Bezier(BezierError),
}

impl PathMapError {
    pub(crate) fn at(self, index: usize) -> SceneError {
        match self {
            PathMapError::Spline(source) => SceneError::Spline { index, source },
            PathMapError::Bezier(source) => SceneError::Bezier { index, source },
        }
    }
}

/// The fixed linear chain of one path topology:
/// key-points `K` → control points `C = E K` → cubic chain `B = M C` →
/// samples `Y = Q B` and tangents `T' = T B`.
#[derive(Clone, Debug)]
pub struct PathMaps {
    pub expansion: PointMap,
    pub pipeline: ConversionPipeline,
    /// `Q M`: control points to samples.
    pub sample: PointMap,
    /// `T M`: control points to sample tangents.
    pub tangent: PointMap,
    pub degree: usize,
    pub closed: bool,
}

impl PathMaps {
    pub fn new(path: &KeyPointPath, per_segment: usize) -> Result<Self, PathMapError> {
        let expansion = path.expansion_map().map_err(PathMapError::Spline)?;
        let pipeline =
            ConversionPipeline::new(path.degree, expansion.rows(), path.closed).map_err(PathMapError::Bezier)?;
        let segs = pipeline.segments();
        let per = per_segment.max(1);
        let sample = chain_sampling_map(segs, per, path.closed).compose(&pipeline.map);
        let tangent = chain_tangent_map(segs, per, path.closed).compose(&pipeline.map);
        Ok(Self {
            expansion,
            pipeline,
            sample,
            tangent,
            degree: path.degree,
            closed: path.closed,
        })
    }

    pub fn control(&self, keypoints: &[Point]) -> Vec<Point> {
        self.expansion.apply(keypoints)
    }

    pub fn samples(&self, keypoints: &[Point]) -> Vec<Point> {
        self.sample.apply(&self.control(keypoints))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize, r: f64, c: [f64; 2], w: f64) -> KeyPointPath {
        let kp = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                [c[0] + r * a.cos(), c[1] + r * a.sin(), w]
            })
            .collect();
        KeyPointPath::new(kp, true, 3)
    }

    fn sample_scene() -> Scene {
        let mut s = Scene::new(40, 30, vec![1.0, 1.0, 1.0]);
        s.items.push(SceneItem::fill(circle(6, 8.0, [20.0, 15.0], 0.0), vec![0.2, 0.4, 0.6]));
        let line = KeyPointPath::new(vec![[3.0, 3.0, 1.0], [20.0, 25.0, 2.0], [37.0, 4.0, 1.0]], false, 5);
        s.items.push(SceneItem::stroke(line, vec![0.0, 0.0, 0.0]));
        s
    }

    #[test]
    fn json_round_trip() {
        let mut s = sample_scene();
        s.palette = Some(Palette::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap());
        s.items[0].logits = Some(vec![0.1, 2.0]);
        let back = Scene::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.display_color(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(back.quantized().items[0].color, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_items() {
        let s = sample_scene();
        let json = s.to_json().unwrap().replacen("\"width\"", "\"bogus\": 1, \"width\"", 1);
        assert!(Scene::from_json(&json).is_err());

        let mut bad = sample_scene();
        bad.items[1].color = vec![0.0];
        assert!(matches!(bad.validate(), Err(SceneError::Channels { index: 1, .. })));
        let mut bad = sample_scene();
        bad.items[0].logits = Some(vec![0.0, 1.0]);
        assert!(matches!(bad.validate(), Err(SceneError::NoPalette { index: 0 })));
        let mut bad = sample_scene();
        bad.items[0].path.closed = false;
        assert!(matches!(bad.validate(), Err(SceneError::OpenFill { index: 0 })));
    }

    #[test]
    fn path_maps_reproduce_the_chain() {
        let s = sample_scene();
        for (i, item) in s.items.iter().enumerate() {
            let maps = PathMaps::new(&item.path, 4).unwrap();
            let chain = s.chain(i).unwrap();
            let samples = maps.samples(&item.path.keypoints);
            let segs = chain.segment_count();
            assert_eq!(samples.len(), 4 * segs + usize::from(!item.path.closed));
            for (j, y) in samples.iter().enumerate().take(4 * segs) {
                let b = chain.eval(j / 4, (j % 4) as f64 / 4.0);
                for d in 0..3 {
                    assert!((b[d] - y[d]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn render_draws_something() {
        let s = sample_scene();
        let img = s.render(&RasterConfig::default(), 8).unwrap();
        assert_eq!((img.width, img.height, img.channels), (40, 30, 3));
        assert_eq!(img.pixel(0, 29), &[1.0, 1.0, 1.0]);
        let mid = s.spline(1).unwrap().eval(2.5).unwrap();
        assert!(img.pixel(mid[0] as usize, mid[1] as usize).iter().all(|v| *v < 0.1));

        let mut fill_only = s.clone();
        fill_only.items.pop();
        let img = fill_only.render(&RasterConfig::default(), 8).unwrap();
        let center = img.pixel(20, 15);
        assert!((center[2] - 0.6).abs() < 1e-6, "{center:?}");
    }
}
