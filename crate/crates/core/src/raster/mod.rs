//! Differentiable soft rasterizer for variable-width strokes and filled areas.
//!
//! Drawables are composited back to front with "over" blending onto a solid
//! background. Pixel `(x, y)` samples the point `(x + 0.5, y + 0.5)`. The
//! forward pass records, for every pixel, which drawables reach it and with
//! what coverage; the backward pass replays that list per pixel to apply the
//! chain rule through compositing and coverage.
//!
//! Work is split into horizontal bands of 16 pixel rows. Each band writes its
//! own pixels and its own gradient buffers, and band results are combined in
//! band order, so output is bit-identical for any thread count.

mod canvas;
mod coverage;
mod pyramid;

pub use canvas::{BitDepth, Canvas};
pub use pyramid::{downsample_blur, downsample_blur_adjoint};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use coverage::{bin_elements, coverage, coverage_backward, element_count, Scratch};

const TILE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("canvas must have positive size, got {width}x{height}")]
    EmptyCanvas { width: usize, height: usize },
    #[error("unsupported channel count {0} (expected 1, 3 or 4)")]
    Channels(usize),
    #[error("buffer of {got} values does not match shape {expected:?} (H, W, C)")]
    ShapeMismatch { expected: (usize, usize, usize), got: usize },
    #[error("drawable {index}: color has {got} channels, canvas has {expected}")]
    ColorChannels { index: usize, expected: usize, got: usize },
    #[error("drawable {index}: {points} points but {radii} radii")]
    RadiusCount { index: usize, points: usize, radii: usize },
    #[error("drawable {index}: needs at least {needed} points, got {got}")]
    TooFewPoints { index: usize, needed: usize, got: usize },
    #[error("drawable {index}: non-finite geometry or color")]
    NonFinite { index: usize },
    #[error("drawable {index}: opacity {opacity} outside [0, 1]")]
    Opacity { index: usize, opacity: f64 },
    #[error("backward pass requested before any forward pass")]
    NoForwardPass,
    #[error("{levels} pyramid levels impossible for a {width}x{height} canvas")]
    PyramidLevels { levels: usize, width: usize, height: usize },
    #[error("image codec: {0}")]
    Image(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<image::ImageError> for RasterError {
    fn from(e: image::ImageError) -> Self {
        RasterError::Image(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawKind {
    Stroke,
    Fill,
}

/// A sampled path ready for rasterization.
#[derive(Clone, Debug, PartialEq)]
pub struct Drawable {
    /// Centerline samples (strokes) or outline samples (fills), in pixels.
    pub points: Vec<[f64; 2]>,
    /// Per-sample radius; negative values render as zero. Ignored for fills.
    pub radii: Vec<f64>,
    pub kind: DrawKind,
    /// Closed strokes join the last sample back to the first. Fills are
    /// always closed.
    pub closed: bool,
    pub color: Vec<f64>,
    pub opacity: f64,
}

impl Drawable {
    pub fn stroke(points: Vec<[f64; 2]>, radii: Vec<f64>, color: Vec<f64>) -> Self {
        Self {
            points,
            radii,
            kind: DrawKind::Stroke,
            closed: false,
            color,
            opacity: 1.0,
        }
    }

    pub fn fill(points: Vec<[f64; 2]>, color: Vec<f64>) -> Self {
        let radii = vec![0.0; points.len()];
        Self {
            points,
            radii,
            kind: DrawKind::Fill,
            closed: true,
            color,
            opacity: 1.0,
        }
    }

    fn validate(&self, index: usize, channels: usize) -> Result<(), RasterError> {
        let needed = if self.kind == DrawKind::Fill { 3 } else { 2 };
        if self.points.len() < needed {
            return Err(RasterError::TooFewPoints {
                index,
                needed,
                got: self.points.len(),
            });
        }
        if self.radii.len() != self.points.len() {
            return Err(RasterError::RadiusCount {
                index,
                points: self.points.len(),
                radii: self.radii.len(),
            });
        }
        if self.color.len() != channels {
            return Err(RasterError::ColorChannels {
                index,
                expected: channels,
                got: self.color.len(),
            });
        }
        let finite = self.points.iter().all(|p| p[0].is_finite() && p[1].is_finite())
            && self.radii.iter().all(|r| r.is_finite())
            && self.color.iter().all(|c| c.is_finite());
        if !finite {
            return Err(RasterError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(RasterError::Opacity {
                index,
                opacity: self.opacity,
            });
        }
        Ok(())
    }

    /// Bounding box of everything that can influence a pixel.
    fn reach(&self, cfg: &RasterConfig) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &self.points {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        let pad = match self.kind {
            DrawKind::Fill => 0.5 * cfg.band,
            DrawKind::Stroke => {
                let r = self.radii.iter().fold(0.0f64, |m, &r| m.max(r));
                let n = element_count(self).max(1) as f64;
                r + 0.5 * cfg.band + (n.ln() + coverage::CULL) / cfg.sharpness
            }
        };
        [b[0] - pad, b[1] - pad, b[2] + pad, b[3] + pad]
    }
}

/// Gradient of a scalar loss with respect to one drawable.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawableGrad {
    pub points: Vec<[f64; 2]>,
    pub radii: Vec<f64>,
    pub color: Vec<f64>,
    pub opacity: f64,
}

impl DrawableGrad {
    fn zeros(d: &Drawable) -> Self {
        Self {
            points: vec![[0.0; 2]; d.points.len()],
            radii: vec![0.0; d.radii.len()],
            color: vec![0.0; d.color.len()],
            opacity: 0.0,
        }
    }

    fn add(&mut self, o: &DrawableGrad) {
        for (a, b) in self.points.iter_mut().zip(&o.points) {
            a[0] += b[0];
            a[1] += b[1];
        }
        for (a, b) in self.radii.iter_mut().zip(&o.radii) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&o.color) {
            *a += b;
        }
        self.opacity += o.opacity;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterConfig {
    /// Anti-aliasing band width in pixels.
    pub band: f64,
    /// Soft-min sharpness `β` in 1/px for the stroke distance field.
    pub sharpness: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            band: 1.0,
            sharpness: 12.0,
        }
    }
}

struct TileEntry {
    drawable: u32,
    near: Vec<u32>,
    wind: Vec<u32>,
}

/// Forward-pass record needed by [`render_backward`].
pub struct RenderTape {
    cfg: RasterConfig,
    width: usize,
    height: usize,
    background: Vec<f64>,
    drawables: Vec<Drawable>,
    tiles: Vec<Vec<TileEntry>>,
    tiles_x: usize,
    /// CSR over pixels: `(drawable, raw coverage)` in compositing order.
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl RenderTape {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn drawables(&self) -> &[Drawable] {
        &self.drawables
    }
}

fn build_tiles(drawables: &[Drawable], width: usize, height: usize, cfg: &RasterConfig) -> (Vec<Vec<TileEntry>>, usize) {
    let tx = width.div_ceil(TILE);
    let ty = height.div_ceil(TILE);
    let tiles = (0..tx * ty)
        .into_par_iter()
        .map(|t| {
            let (cx, cy) = (t % tx, t / tx);
            let x0 = (cx * TILE) as f64 + 0.5;
            let y0 = (cy * TILE) as f64 + 0.5;
            let x1 = ((cx * TILE + TILE).min(width) - 1) as f64 + 0.5;
            let y1 = ((cy * TILE + TILE).min(height) - 1) as f64 + 0.5;
            let rect = [x0, y0, x1, y1];
            drawables
                .iter()
                .enumerate()
                .filter_map(|(i, d)| {
                    let r = d.reach(cfg);
                    if r[2] < x0 || r[0] > x1 || r[3] < y0 || r[1] > y1 {
                        return None;
                    }
                    let (near, wind) = bin_elements(d, rect, cfg);
                    let relevant = match d.kind {
                        DrawKind::Stroke => !near.is_empty(),
                        DrawKind::Fill => !near.is_empty() || !wind.is_empty(),
                    };
                    relevant.then_some(TileEntry {
                        drawable: i as u32,
                        near,
                        wind,
                    })
                })
                .collect()
        })
        .collect();
    (tiles, tx)
}

/// Renders drawables (first is bottom-most) over a solid background.
pub fn render(
    drawables: &[Drawable],
    width: usize,
    height: usize,
    background: &[f64],
    cfg: &RasterConfig,
) -> Result<(Canvas, RenderTape), RasterError> {
    let mut canvas = Canvas::filled(width, height, background)?;
    let channels = canvas.channels;
    if background.iter().any(|v| !v.is_finite()) {
        return Err(RasterError::NonFinite { index: usize::MAX });
    }
    for (i, d) in drawables.iter().enumerate() {
        d.validate(i, channels)?;
    }
    let (tiles, tiles_x) = build_tiles(drawables, width, height, cfg);

    let bands: Vec<(Vec<f64>, Vec<usize>, Vec<(u32, f64)>)> = (0..height.div_ceil(TILE))
        .into_par_iter()
        .map(|band| {
            let rows = band * TILE..((band + 1) * TILE).min(height);
            let mut pixels = Vec::with_capacity(rows.len() * width * channels);
            let mut counts = Vec::with_capacity(rows.len() * width);
            let mut entries = Vec::new();
            let mut scratch = Scratch::default();
            for y in rows {
                for x in 0..width {
                    let q = [x as f64 + 0.5, y as f64 + 0.5];
                    let mut px = background.to_vec();
                    let before = entries.len();
                    for e in &tiles[band * tiles_x + x / TILE] {
                        let d = &drawables[e.drawable as usize];
                        if let Some(cov) = coverage(q, d, &e.near, &e.wind, cfg, &mut scratch) {
                            let a = d.opacity * cov;
                            for (p, c) in px.iter_mut().zip(&d.color) {
                                *p = a * c + (1.0 - a) * *p;
                            }
                            entries.push((e.drawable, cov));
                        }
                    }
                    counts.push(entries.len() - before);
                    pixels.extend_from_slice(&px);
                }
            }
            (pixels, counts, entries)
        })
        .collect();

    let mut offsets = Vec::with_capacity(width * height + 1);
    offsets.push(0);
    let mut entries = Vec::new();
    let mut pos = 0;
    for (pixels, counts, band_entries) in bands {
        canvas.data[pos..pos + pixels.len()].copy_from_slice(&pixels);
        pos += pixels.len();
        for c in counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        entries.extend(band_entries);
    }

    let tape = RenderTape {
        cfg: *cfg,
        width,
        height,
        background: background.to_vec(),
        drawables: drawables.to_vec(),
        tiles,
        tiles_x,
        offsets,
        entries,
    };
    Ok((canvas, tape))
}

/// Gradients with respect to every drawable's samples, radii, color and
/// opacity, given the gradient of a scalar loss with respect to the canvas.
pub fn render_backward(tape: &RenderTape, grad: &Canvas) -> Result<Vec<DrawableGrad>, RasterError> {
    let channels = tape.background.len();
    if grad.width != tape.width || grad.height != tape.height || grad.channels != channels {
        return Err(RasterError::ShapeMismatch {
            expected: (tape.height, tape.width, channels),
            got: grad.data.len(),
        });
    }
    let width = tape.width;
    let drawables = &tape.drawables;
    let band_grads: Vec<Vec<Option<DrawableGrad>>> = (0..tape.height.div_ceil(TILE))
        .into_par_iter()
        .map(|band| {
            let mut local: Vec<Option<DrawableGrad>> = vec![None; drawables.len()];
            let mut scratch = Scratch::default();
            let mut under: Vec<Vec<f64>> = Vec::new();
            for y in band * TILE..((band + 1) * TILE).min(tape.height) {
                for x in 0..width {
                    let pix = y * width + x;
                    let list = &tape.entries[tape.offsets[pix]..tape.offsets[pix + 1]];
                    if list.is_empty() {
                        continue;
                    }
                    let g0 = grad.pixel(x, y);
                    if g0.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    // color beneath each entry
                    under.clear();
                    let mut cur = tape.background.clone();
                    for &(di, cov) in list {
                        under.push(cur.clone());
                        let d = &drawables[di as usize];
                        let a = d.opacity * cov;
                        for (p, c) in cur.iter_mut().zip(&d.color) {
                            *p = a * c + (1.0 - a) * *p;
                        }
                    }
                    let mut g = g0.to_vec();
                    let tile = &tape.tiles[(y / TILE) * tape.tiles_x + x / TILE];
                    for (j, &(di, cov)) in list.iter().enumerate().rev() {
                        let d = &drawables[di as usize];
                        let a = d.opacity * cov;
                        let slot = local[di as usize].get_or_insert_with(|| DrawableGrad::zeros(d));
                        let mut g_alpha = 0.0;
                        for k in 0..channels {
                            slot.color[k] += a * g[k];
                            g_alpha += g[k] * (d.color[k] - under[j][k]);
                            g[k] *= 1.0 - a;
                        }
                        slot.opacity += g_alpha * cov;
                        let upstream = g_alpha * d.opacity;
                        if upstream != 0.0 {
                            let e = tile.iter().find(|e| e.drawable == di).expect("tape entry has a tile entry");
                            let q = [x as f64 + 0.5, y as f64 + 0.5];
                            coverage_backward(q, d, &e.near, &e.wind, &tape.cfg, &mut scratch, upstream, slot);
                        }
                    }
                }
            }
            local
        })
        .collect();

    let mut out: Vec<DrawableGrad> = drawables.iter().map(DrawableGrad::zeros).collect();
    for band in band_grads {
        for (acc, g) in out.iter_mut().zip(band) {
            if let Some(g) = g {
                acc.add(&g);
            }
        }
    }
    Ok(out)
}

/// Stateful wrapper that keeps the last forward pass for the backward pass.
#[derive(Default)]
pub struct Rasterizer {
    pub cfg: RasterConfig,
    tape: Option<RenderTape>,
}

impl Rasterizer {
    pub fn new(cfg: RasterConfig) -> Self {
        Self { cfg, tape: None }
    }

    pub fn render(&mut self, drawables: &[Drawable], width: usize, height: usize, background: &[f64]) -> Result<Canvas, RasterError> {
        let (canvas, tape) = render(drawables, width, height, background, &self.cfg)?;
        self.tape = Some(tape);
        Ok(canvas)
    }

    pub fn backward(&self, grad: &Canvas) -> Result<Vec<DrawableGrad>, RasterError> {
        let tape = self.tape.as_ref().ok_or(RasterError::NoForwardPass)?;
        render_backward(tape, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> RasterConfig {
        RasterConfig::default()
    }

    #[test]
    fn empty_scene_is_background() {
        let (c, _) = render(&[], 7, 5, &[0.2, 0.4, 0.6], &cfg()).unwrap();
        for px in c.data.chunks(3) {
            assert_eq!(px, &[0.2, 0.4, 0.6]);
        }
        assert!(matches!(render(&[], 0, 5, &[1.0], &cfg()), Err(RasterError::EmptyCanvas { .. })));
    }

    #[test]
    fn horizontal_stroke_profile() {
        let r = 4.0;
        let s = Drawable::stroke(vec![[4.0, 20.5], [36.0, 20.5]], vec![r, r], vec![1.0]);
        let (c, _) = render(&[s], 40, 40, &[0.0], &cfg()).unwrap();
        let x = 20;
        for y in 0..40 {
            let v = c.pixel(x, y)[0];
            let dist = (y as f64 + 0.5 - 20.5).abs();
            if dist <= r - 0.5 {
                assert!((v - 1.0).abs() < 1e-12, "y={y} v={v}");
            } else if dist >= r + 0.5 {
                assert_eq!(v, 0.0, "y={y}");
            }
        }
    }

    #[test]
    fn disk_fill_area() {
        let pts: Vec<[f64; 2]> = (0..256)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / 256.0;
                [32.0 + 10.0 * a.cos(), 32.0 + 10.0 * a.sin()]
            })
            .collect();
        let (c, _) = render(&[Drawable::fill(pts, vec![1.0])], 64, 64, &[0.0], &cfg()).unwrap();
        let ink: f64 = c.data.iter().sum();
        let area = std::f64::consts::PI * 100.0;
        assert!((ink - area).abs() < 0.02 * area, "{ink} vs {area}");
    }

    #[test]
    fn backward_needs_forward() {
        let r = Rasterizer::default();
        let g = Canvas::new(4, 4, 1).unwrap();
        assert!(matches!(r.backward(&g), Err(RasterError::NoForwardPass)));
    }

    #[test]
    fn zero_width_stroke_vanishes() {
        let s = Drawable::stroke(vec![[2.0, 8.0], [14.0, 8.3]], vec![0.0, 0.0], vec![1.0]);
        let (c, _) = render(&[s], 16, 16, &[0.0], &cfg()).unwrap();
        assert!(c.data.iter().all(|v| *v == 0.0));
    }

    fn scalar_loss(c: &Canvas, w: &[f64]) -> f64 {
        c.data.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pts: Vec<[f64; 2]> = (0..6).map(|i| [5.0 + 4.3 * i as f64, 8.0 + 12.0 * rng.random::<f64>()]).collect();
        let radii: Vec<f64> = (0..6).map(|_| 1.5 + 2.0 * rng.random::<f64>()).collect();
        let mut stroke = Drawable::stroke(pts, radii, vec![0.9, 0.2, 0.4]);
        stroke.opacity = 0.8;
        let fill_pts: Vec<[f64; 2]> = (0..12)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / 12.0;
                [18.0 + 7.0 * a.cos(), 20.0 + 5.0 * a.sin()]
            })
            .collect();
        let mut fill = Drawable::fill(fill_pts, vec![0.1, 0.7, 0.3]);
        fill.opacity = 0.6;
        let scene = vec![fill, stroke];
        let weights: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bg = [1.0, 1.0, 1.0];
        let (c, tape) = render(&scene, 32, 32, &bg, &cfg()).unwrap();
        let gc = Canvas::from_data(32, 32, 3, weights.clone()).unwrap();
        let grads = render_backward(&tape, &gc).unwrap();
        let _ = c;
        let f = |s: &[Drawable]| scalar_loss(&render(s, 32, 32, &bg, &cfg()).unwrap().0, &weights);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut check = |analytic: f64, plus: Vec<Drawable>, minus: Vec<Drawable>| {
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let err = (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
        };
        for di in 0..2 {
            for i in 0..scene[di].points.len() {
                for k in 0..2 {
                    let (mut p, mut m) = (scene.clone(), scene.clone());
                    p[di].points[i][k] += h;
                    m[di].points[i][k] -= h;
                    check(grads[di].points[i][k], p, m);
                }
                if di == 1 {
                    let (mut p, mut m) = (scene.clone(), scene.clone());
                    p[di].radii[i] += h;
                    m[di].radii[i] -= h;
                    check(grads[di].radii[i], p, m);
                }
            }
            for k in 0..3 {
                let (mut p, mut m) = (scene.clone(), scene.clone());
                p[di].color[k] += h;
                m[di].color[k] -= h;
                check(grads[di].color[k], p, m);
            }
            let (mut p, mut m) = (scene.clone(), scene.clone());
            p[di].opacity += h;
            m[di].opacity -= h;
            check(grads[di].opacity, p, m);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn occluded_stroke_has_zero_gradient() {
        let stroke = Drawable::stroke(vec![[10.0, 16.0], [22.0, 16.0]], vec![2.0, 2.0], vec![1.0]);
        let square = Drawable::fill(vec![[2.0, 2.0], [30.0, 2.0], [30.0, 30.0], [2.0, 30.0]], vec![0.0]);
        let (_, tape) = render(&[stroke, square], 32, 32, &[0.5], &cfg()).unwrap();
        let g = render_backward(&tape, &Canvas::filled(32, 32, &[1.0]).unwrap()).unwrap();
        assert!(g[0].radii.iter().all(|v| *v == 0.0));
        assert!(g[0].points.iter().all(|p| *p == [0.0, 0.0]));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let scene: Vec<Drawable> = (0..5)
            .map(|_| {
                let pts = (0..20).map(|_| [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)]).collect();
                Drawable::stroke(pts, vec![2.0; 20], vec![rng.random()])
            })
            .collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let (c, tape) = render(&scene, 64, 64, &[0.0], &cfg()).unwrap();
                let g = render_backward(&tape, &Canvas::filled(64, 64, &[1.0]).unwrap()).unwrap();
                (c, g)
            })
        };
        let (c1, g1) = run(1);
        let (c4, g4) = run(4);
        assert_eq!(c1.data, c4.data);
        assert_eq!(g1, g4);
    }
}
