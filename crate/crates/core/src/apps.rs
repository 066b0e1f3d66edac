//! Ready-made jobs for the three applications: area filling with long
//! strokes, stroke abstraction, and quantized closed-area vectorization.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, JobConfig};
use crate::engine::{AdamConfig, BoxConstraint, LearningRates, OptimJob, PaletteSchedule, Trainable};
use crate::objectives::Term;
use crate::palette::{extract_palette, parse_hex, Palette, PaletteError};
use crate::raster::{Canvas, RasterConfig, RasterError};
use crate::scene::{Scene, SceneItem};
use crate::seeding::{area_seeds, tsp_path, voronoi_stipple, SeedingError};
use crate::spline::KeyPointPath;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Seeding(#[from] SeedingError),
    #[error(transparent)]
    Palette(#[from] PaletteError),
    #[error("{0}")]
    Missing(String),
}

fn rgb(hex: &str) -> Result<Vec<f64>, AppError> {
    Ok(parse_hex(hex)?.to_vec())
}

/// Loads a PNG as RGB, resized to `size` when given.
pub fn load_target(path: &Path, size: Option<[usize; 2]>) -> Result<Canvas, AppError> {
    let img = match size {
        Some([w, h]) => Canvas::load_png_resized(path, w, h)?,
        None => Canvas::load_png(path)?,
    };
    Ok(img.with_channels(3)?)
}

/// Ink density: mean absolute difference from the background color.
pub fn ink_density(target: &Canvas, background: &[f64]) -> Canvas {
    let c = target.channels;
    let data = target
        .data
        .chunks(c)
        .map(|px| px.iter().zip(background).map(|(v, b)| (v - b).abs()).sum::<f64>() / c as f64)
        .collect();
    Canvas::from_data(target.width, target.height, 1, data).expect("shape preserved")
}

/// Stipples the ink density, orders the stipples into one tour and cuts it
/// into `cfg.seeding.strokes` open paths of roughly equal length.
pub fn seed_strokes(target: &Canvas, cfg: &JobConfig, rng: &mut ChaCha8Rng) -> Result<Vec<KeyPointPath>, AppError> {
    let bg = rgb(&cfg.job.background)?;
    let density = ink_density(target, &bg);
    let s = &cfg.seeding;
    let pts = match voronoi_stipple(&density, s.keypoints, s.iterations, rng) {
        Ok(p) => p,
        // blank target: spread key-points uniformly instead
        Err(SeedingError::ZeroMass) => (0..s.keypoints)
            .map(|_| {
                [
                    rng.random::<f64>() * target.width as f64,
                    rng.random::<f64>() * target.height as f64,
                ]
            })
            .collect(),
        Err(e) => return Err(e.into()),
    };
    let order = tsp_path(&pts, true)?;
    let per = order.len() / s.strokes;
    let mut out = Vec::with_capacity(s.strokes);
    for k in 0..s.strokes {
        let hi = if k + 1 == s.strokes { order.len() } else { (k + 1) * per };
        let kp = order[k * per..hi].iter().map(|&i| [pts[i][0], pts[i][1], s.width]).collect();
        let path = KeyPointPath::new(kp, false, cfg.spline.degree).expand_multiplicity(cfg.spline.multiplicity);
        out.push(path);
    }
    Ok(out)
}

/// Copies every config-driven setting onto a job for `scene`.
pub fn configure(cfg: &JobConfig, scene: Scene, target: Option<Canvas>, terms: Vec<Term>) -> OptimJob {
    let o = &cfg.optimizer;
    let mut job = OptimJob::new(scene);
    job.target = target;
    job.target_opacity = cfg.job.target_opacity;
    job.terms = cfg.job.terms.clone().unwrap_or(terms);
    job.weights = cfg.weights;
    job.steps = cfg.job.steps;
    job.seed = cfg.job.seed;
    job.lr = LearningRates {
        positions: o.lr_positions,
        widths: o.lr_widths,
        colors: o.lr_colors,
        logits: o.lr_logits,
        min_ratio: o.lr_min_ratio,
    };
    job.adam = AdamConfig {
        beta1: o.beta1,
        beta2: o.beta2,
        epsilon: o.epsilon,
    };
    job.width_bounds = [o.width_min, o.width_max];
    job.smooth_order = cfg.smoothing.order;
    job.smooth_mode = cfg.smoothing.mode;
    job.per_segment = cfg.spline.samples_per_segment;
    job.mse_levels = cfg.raster.mse_levels;
    job.raster = RasterConfig {
        band: cfg.raster.band,
        sharpness: cfg.raster.sharpness,
    };
    let m = cfg.bbox.margin;
    job.bbox = Some(BoxConstraint {
        min: [-m, -m],
        max: [job.scene.width as f64 + m, job.scene.height as f64 + m],
        penalty: cfg.bbox.penalty,
    });
    job.box_penalty = cfg.bbox.penalty;
    job.repulsion = cfg.repulsion;
    job.palette = PaletteSchedule {
        tau_start: cfg.palette.tau_start,
        tau_end: cfg.palette.tau_end,
        gumbel_scale: cfg.palette.gumbel_scale,
    };
    job.checkpoint_every = cfg.job.checkpoint_every;
    job
}

/// Area filling: ink-colored strokes fit to the target by multiscale MSE.
pub fn fill_job(cfg: &JobConfig, target: Canvas) -> Result<OptimJob, AppError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.job.seed);
    let bg = rgb(&cfg.job.background)?;
    let ink = rgb(&cfg.job.ink)?;
    let mut scene = Scene::new(target.width, target.height, bg);
    for path in seed_strokes(&target, cfg, &mut rng)? {
        scene.items.push(SceneItem::stroke(path, ink.clone()));
    }
    let mut job = configure(cfg, scene, Some(target), vec![Term::Coverage, Term::Smooth, Term::Box]);
    job.trainable = Trainable {
        colors: cfg.optimizer.train_colors.unwrap_or(false),
        ..Trainable::default()
    };
    Ok(job)
}

/// Few-stroke abstraction. With `external` the image term comes from a
/// gradient provider instead of the target; a target, when given, still
/// seeds the strokes.
pub fn abstract_job(cfg: &JobConfig, target: Option<Canvas>, external: bool) -> Result<OptimJob, AppError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.job.seed);
    let bg = rgb(&cfg.job.background)?;
    let ink = rgb(&cfg.job.ink)?;
    let (w, h) = match (&target, cfg.job.size) {
        (Some(t), _) => (t.width, t.height),
        (None, Some([w, h])) => (w, h),
        (None, None) => return Err(AppError::Missing("abstraction needs a target or a canvas size".into())),
    };
    let seed_img = match &target {
        Some(t) => t.clone(),
        None => Canvas::filled(w, h, &bg)?,
    };
    let mut scene = Scene::new(w, h, bg);
    for path in seed_strokes(&seed_img, cfg, &mut rng)? {
        scene.items.push(SceneItem::stroke(path, ink.clone()));
    }
    let image_term = if external { Term::External } else { Term::Coverage };
    let target = if external { None } else { target };
    if !external && target.is_none() {
        return Err(AppError::Missing("abstraction without a provider needs a target".into()));
    }
    let mut job = configure(cfg, scene, target, vec![image_term, Term::Smooth, Term::Box]);
    job.trainable.colors = cfg.optimizer.train_colors.unwrap_or(true);
    Ok(job)
}

/// Even-odd point-in-polygon test.
fn inside(poly: &[[f64; 2]], q: [f64; 2]) -> bool {
    let mut c = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > q[1]) != (b[1] > q[1]) && q[0] < a[0] + (q[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]) {
            c = !c;
        }
    }
    c
}

fn polygon_mean_color(img: &Canvas, poly: &[[f64; 2]]) -> Option<[f64; 3]> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in poly {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let x0 = lo[0].floor().max(0.0) as usize;
    let y0 = lo[1].floor().max(0.0) as usize;
    let x1 = (hi[0].ceil() as usize).min(img.width);
    let y1 = (hi[1].ceil() as usize).min(img.height);
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            if inside(poly, [x as f64 + 0.5, y as f64 + 0.5]) {
                let px = img.pixel(x, y);
                for d in 0..3 {
                    sum[d] += px[d];
                }
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// Logits favouring palette entries close to `color`.
pub fn initial_logits(color: [f64; 3], palette: &Palette) -> Vec<f64> {
    palette
        .colors
        .iter()
        .map(|v| -4.0 * (0..3).map(|d| (color[d] - v[d]).powi(2)).sum::<f64>())
        .collect()
}

/// Closed-area vectorization with palette-quantized colors.
///
/// The palette comes from `cfg.palette.colors` or, failing that, k-means on
/// the target. Areas start as Voronoi cells of the saliency map, least
/// salient first.
pub fn areas_job(cfg: &JobConfig, target: Canvas, saliency: &Canvas) -> Result<OptimJob, AppError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.job.seed);
    let palette = match &cfg.palette.colors {
        Some(list) => Palette::from_hex_list(list)?,
        None => extract_palette(&target, cfg.palette.k, cfg.job.seed)?,
    };
    let sal = if saliency.width != target.width || saliency.height != target.height {
        return Err(AppError::Missing(format!(
            "saliency map is {}x{}, target is {}x{}",
            saliency.width, saliency.height, target.width, target.height
        )));
    } else {
        saliency
    };
    let seeds = area_seeds(sal, cfg.seeding.areas, cfg.spline.degree, cfg.seeding.iterations, &mut rng)?;
    let bg = rgb(&cfg.job.background)?;
    let mut scene = Scene::new(target.width, target.height, bg.clone());
    for s in seeds {
        let mean = polygon_mean_color(&target, &s.polygon).unwrap_or([bg[0], bg[1], bg[2]]);
        let mut item = SceneItem::fill(s.path.expand_multiplicity(cfg.spline.multiplicity), mean.to_vec());
        item.logits = Some(initial_logits(mean, &palette));
        scene.items.push(item);
    }
    scene.palette = Some(palette);
    let job = configure(
        cfg,
        scene,
        Some(target),
        vec![Term::Coverage, Term::Smooth, Term::Repulsion, Term::Balance, Term::Box],
    );
    Ok(job)
}
