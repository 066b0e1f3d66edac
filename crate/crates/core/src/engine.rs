//! The optimization loop.
//!
//! Each step builds samples from key-points through the fixed linear maps of
//! [`PathMaps`], renders, evaluates the enabled loss terms, pulls the image
//! gradient back through the rasterizer and the transposed maps, and applies
//! one Adam update per parameter group. Widths are clamped after every step.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{
    alignment_cost, bbox_loss, combine, multiscale_mse, overlap_cost, repulsion_loss, with_target_opacity, BoxPenalty,
    CurveSamples, ExternalGradientProvider, Gradients, LossWeights, ObjectiveError, PathGrad, RepulsionParams, Term,
    TermValue,
};
use crate::palette::{anneal_temperature, area_rng, balance_reg, soft_assign, PaletteError, SoftAssignment, DEFAULT_GUMBEL_SCALE};
use crate::raster::{Canvas, Drawable, RasterConfig, RasterError, Rasterizer};
use crate::scene::{make_drawable, PathMaps, Scene, SceneError};
use crate::smoothing::{smooth_cost, GramMode, GramOperator, SmoothingError};
use crate::spline::{build_spline, Point};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid job: {0}")]
    Invalid(String),
    #[error("step {step}: {what} is not finite; returning the last finite scene")]
    NonFinite {
        step: usize,
        what: String,
        last_good: Box<Scene>,
    },
    #[error("non-finite gradient entry {index}")]
    NonFiniteGradient { index: usize },
    #[error("parameter/gradient length mismatch: {params} vs {grads}")]
    Shape { params: usize, grads: usize },
    #[error("learning-rate schedule needs 0 <= step <= total, total > 0 and lr_base >= lr_min >= 0 (step {step}, total {total}, base {base}, min {min})")]
    Schedule { step: usize, total: usize, base: f64, min: f64 },
    #[error("checkpoint at step {step}: {message}")]
    Checkpoint { step: usize, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Palette(#[from] PaletteError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error("trace output: {0}")]
    Trace(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t as usize
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), EngineError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(EngineError::Shape {
            params: params.len(),
            grads: grads.len(),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(EngineError::NonFiniteGradient { index });
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t);
    let c2 = 1.0 - cfg.beta2.powi(state.t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// `lr_min + ½(lr_base - lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, lr_base: f64, lr_min: f64) -> Result<f64, EngineError> {
    if total == 0 || step > total || !(lr_min >= 0.0 && lr_base >= lr_min && lr_base.is_finite()) {
        return Err(EngineError::Schedule {
            step,
            total,
            base: lr_base,
            min: lr_min,
        });
    }
    if step == total {
        return Ok(lr_min);
    }
    let c = (std::f64::consts::PI * step as f64 / total as f64).cos();
    Ok(lr_min + 0.5 * (lr_base - lr_min) * (1.0 + c))
}

/// Base learning rates per parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    /// Key-point `x, y` in pixels.
    pub positions: f64,
    pub widths: f64,
    pub colors: f64,
    pub logits: f64,
    /// `lr_min / lr_base` at the end of the cosine schedule.
    pub min_ratio: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            positions: 1.0,
            widths: 0.1,
            colors: 0.02,
            logits: 0.02,
            min_ratio: 0.0,
        }
    }
}

/// Which parameter groups the optimizer may move.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Trainable {
    pub positions: bool,
    pub widths: bool,
    pub colors: bool,
    pub logits: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Self {
            positions: true,
            widths: true,
            colors: true,
            logits: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaletteSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub gumbel_scale: f64,
}

impl Default for PaletteSchedule {
    fn default() -> Self {
        Self {
            tau_start: 1.0,
            tau_end: 0.05,
            gumbel_scale: DEFAULT_GUMBEL_SCALE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxConstraint {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub penalty: BoxPenalty,
}

/// Everything a run needs apart from the external provider.
#[derive(Clone, Debug)]
pub struct OptimJob {
    pub scene: Scene,
    /// Coverage target, same size and channels as the scene.
    pub target: Option<Canvas>,
    /// Fits `opacity·target + (1 - opacity)·background` instead of the target.
    pub target_opacity: f64,
    /// Terms evaluated each step; the rest are never computed.
    pub terms: Vec<Term>,
    pub weights: LossWeights,
    pub steps: usize,
    pub lr: LearningRates,
    pub trainable: Trainable,
    /// `[w_min, w_max]` applied to every key-point radius after each step.
    pub width_bounds: [f64; 2],
    pub seed: u64,
    pub smooth_order: usize,
    pub smooth_mode: GramMode,
    /// Samples per cubic segment fed to the rasterizer.
    pub per_segment: usize,
    pub mse_levels: usize,
    pub raster: RasterConfig,
    /// Defaults to the canvas rectangle.
    pub bbox: Option<BoxConstraint>,
    pub box_penalty: BoxPenalty,
    pub repulsion: RepulsionParams,
    pub palette: PaletteSchedule,
    pub adam: AdamConfig,
    /// Calls the checkpoint hook every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl OptimJob {
    pub fn new(scene: Scene) -> Self {
        Self {
            scene,
            target: None,
            target_opacity: 1.0,
            terms: vec![Term::Coverage, Term::Smooth, Term::Box],
            weights: LossWeights::default(),
            steps: 300,
            lr: LearningRates::default(),
            trainable: Trainable::default(),
            width_bounds: [0.0, 8.0],
            seed: 0,
            smooth_order: 3,
            smooth_mode: GramMode::Exact,
            per_segment: 8,
            mse_levels: 4,
            raster: RasterConfig::default(),
            bbox: None,
            box_penalty: BoxPenalty::Relu,
            repulsion: RepulsionParams::default(),
            palette: PaletteSchedule::default(),
            adam: AdamConfig::default(),
            checkpoint_every: 0,
        }
    }

    fn uses(&self, t: Term) -> bool {
        self.terms.contains(&t)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Invalid(m));
        self.scene.validate()?;
        self.weights.validate()?;
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        let [lo, hi] = self.width_bounds;
        if !(lo >= 0.0 && lo <= hi) {
            return bad(format!("width bounds [{lo}, {hi}] need 0 <= w_min <= w_max"));
        }
        let lr = &self.lr;
        for (name, v) in [
            ("positions", lr.positions),
            ("widths", lr.widths),
            ("colors", lr.colors),
            ("logits", lr.logits),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("learning rate for {name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&lr.min_ratio) {
            return bad(format!("lr min_ratio {} outside [0, 1]", lr.min_ratio));
        }
        if !(0.0..=1.0).contains(&self.target_opacity) {
            return bad(format!("target opacity {} outside [0, 1]", self.target_opacity));
        }
        if self.per_segment == 0 {
            return bad("samples per segment must be at least 1".into());
        }
        for (i, item) in self.scene.items.iter().enumerate() {
            let p = item.path.degree;
            if self.uses(Term::Smooth) && !(1..=p).contains(&self.smooth_order) {
                return bad(format!(
                    "item {i}: smoothing order {} needs 1 <= d <= degree ({p})",
                    self.smooth_order
                ));
            }
        }
        if self.uses(Term::Coverage) {
            match &self.target {
                None => return bad("the coverage term needs a target image".into()),
                Some(t) => {
                    if t.width != self.scene.width || t.height != self.scene.height || t.channels != self.scene.channels() {
                        return bad(format!(
                            "target is {}x{}x{}, scene is {}x{}x{}",
                            t.width,
                            t.height,
                            t.channels,
                            self.scene.width,
                            self.scene.height,
                            self.scene.channels()
                        ));
                    }
                }
            }
        }
        if self.uses(Term::Balance) && self.scene.palette.is_none() {
            return bad("the balance term needs a palette".into());
        }
        let ps = &self.palette;
        if !(ps.tau_end > 0.0 && ps.tau_start >= ps.tau_end && ps.gumbel_scale >= 0.0) {
            return bad(format!(
                "palette schedule needs tau_start >= tau_end > 0 and gumbel_scale >= 0 (got {}, {}, {})",
                ps.tau_start, ps.tau_end, ps.gumbel_scale
            ));
        }
        Ok(())
    }
}

/// One row of the trace: unweighted term values (absent when not evaluated)
/// and the weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub terms: [Option<f64>; 8],
    pub total: f64,
}

impl TraceRow {
    pub fn get(&self, t: Term) -> Option<f64> {
        self.terms[Term::ALL.iter().position(|x| *x == t).unwrap()]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Columns `step, lr, <every term>, total`; floats in shortest round-trip
    /// form so equal runs give equal bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "lr".to_string()];
        header.extend(Term::ALL.iter().map(|t| t.name().to_string()));
        header.push("total".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.lr.to_string()];
            rec.extend(r.terms.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            rec.push(r.total.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn first(&self) -> Option<&TraceRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub scene: Scene,
    /// `steps + 1` rows: one per update plus a final evaluation.
    pub trace: Trace,
}

pub type CheckpointFn<'a> = dyn FnMut(usize, &Scene) -> Result<(), String> + 'a;

#[derive(Default)]
pub struct RunHooks<'a> {
    pub provider: Option<&'a mut dyn ExternalGradientProvider>,
    pub checkpoint: Option<&'a mut CheckpointFn<'a>>,
}

pub fn run(job: &OptimJob) -> Result<RunOutput, EngineError> {
    run_with(job, RunHooks::default())
}

/// Per-item gradient after the full adjoint chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemGrad {
    pub keypoints: Vec<Point>,
    pub color: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Loss and key-point gradients of a scene at one step.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub total: f64,
    pub terms: [Option<f64>; 8],
    pub grads: Vec<ItemGrad>,
}

/// Precomputed per-job state shared by every step.
pub struct Evaluator<'j> {
    job: &'j OptimJob,
    maps: Vec<PathMaps>,
    grams: Vec<Option<GramOperator>>,
    target: Option<Canvas>,
    raster: Rasterizer,
    overlap_raster: Rasterizer,
}

impl<'j> Evaluator<'j> {
    pub fn new(job: &'j OptimJob) -> Result<Self, EngineError> {
        job.validate()?;
        let scene = &job.scene;
        let mut maps = Vec::with_capacity(scene.items.len());
        let mut grams = Vec::with_capacity(scene.items.len());
        for (i, item) in scene.items.iter().enumerate() {
            maps.push(PathMaps::new(&item.path, job.per_segment).map_err(|e| e.at(i))?);
            grams.push(if job.uses(Term::Smooth) {
                let spline = build_spline(&item.path).map_err(|source| SceneError::Spline { index: i, source })?;
                Some(GramOperator::for_spline(&spline, job.smooth_order, job.smooth_mode)?)
            } else {
                None
            });
        }
        let target = match &job.target {
            Some(t) if job.target_opacity < 1.0 => Some(with_target_opacity(t, &scene.background, job.target_opacity)?),
            other => other.clone(),
        };
        Ok(Self {
            job,
            maps,
            grams,
            target,
            raster: Rasterizer::new(job.raster),
            overlap_raster: Rasterizer::new(job.raster),
        })
    }

    /// Loss and gradients of `scene` (same topology as the job's scene) at
    /// `step`, which selects the temperature and the Gumbel noise.
    pub fn evaluate(
        &mut self,
        scene: &Scene,
        step: usize,
        provider: Option<&mut (dyn ExternalGradientProvider + '_)>,
    ) -> Result<Evaluation, EngineError> {
        let job = self.job;
        let n = scene.items.len();
        let scale = scene.width.max(scene.height) as f64;
        let tau = anneal_temperature(step.min(job.steps), job.steps, job.palette.tau_start, job.palette.tau_end)?;

        let mut controls = Vec::with_capacity(n);
        let mut drawables: Vec<Drawable> = Vec::with_capacity(n);
        let mut soft: Vec<Option<SoftAssignment>> = Vec::with_capacity(n);
        for (i, item) in scene.items.iter().enumerate() {
            let c = self.maps[i].control(&item.path.keypoints);
            let y = self.maps[i].sample.apply(&c);
            let (color, sa) = match (&item.logits, &scene.palette) {
                (Some(l), Some(p)) => {
                    let mut rng = area_rng(job.seed, step, i);
                    let sa = soft_assign(l, p, tau, job.palette.gumbel_scale, &mut rng)?;
                    (sa.color.to_vec(), Some(sa))
                }
                _ => (item.color.clone(), None),
            };
            drawables.push(make_drawable(item, y, color));
            controls.push(c);
            soft.push(sa);
        }

        let mut terms: Vec<TermValue> = Vec::new();
        let zeros = |this: &Self| -> Vec<PathGrad> {
            scene
                .items
                .iter()
                .enumerate()
                .map(|(i, it)| PathGrad::zeros(this.maps[i].expansion.rows(), it.path.keypoints.len(), 0, 0))
                .collect()
        };

        let canvas = if job.uses(Term::Coverage) || job.uses(Term::External) {
            Some(self.raster.render(&drawables, scene.width, scene.height, &scene.background)?)
        } else {
            None
        };
        if job.uses(Term::Coverage) {
            let target = self.target.as_ref().expect("validated");
            let (v, g) = multiscale_mse(canvas.as_ref().unwrap(), target, job.mse_levels)?;
            terms.push(TermValue {
                term: Term::Coverage,
                value: v,
                grad: Gradients::image(g),
            });
        }
        if job.uses(Term::External) {
            let provider = provider.ok_or_else(|| EngineError::Invalid("the external term needs a provider".into()))?;
            let out = provider.evaluate(step, canvas.as_ref().unwrap())?;
            terms.push(TermValue {
                term: Term::External,
                value: out.loss.unwrap_or(0.0),
                grad: Gradients::image(out.grad),
            });
        }
        if job.uses(Term::Smooth) {
            let mut paths = zeros(self);
            let mut value = 0.0;
            for i in 0..n {
                let op = self.grams[i].as_ref().expect("built when smoothing is on");
                // unit-box coordinates keep λ_smooth independent of canvas size
                let unit: Vec<Point> = controls[i].iter().map(|c| [c[0] / scale, c[1] / scale, c[2] / scale]).collect();
                let (v, g) = smooth_cost(&unit, op)?;
                value += v;
                for (dst, src) in paths[i].control.iter_mut().zip(&g) {
                    *dst = [src[0] / scale, src[1] / scale, src[2] / scale];
                }
            }
            terms.push(TermValue {
                term: Term::Smooth,
                value,
                grad: Gradients::paths(paths),
            });
        }
        if job.uses(Term::Box) {
            let b = job.bbox.unwrap_or(BoxConstraint {
                min: [0.0, 0.0],
                max: [scene.width as f64, scene.height as f64],
                penalty: job.box_penalty,
            });
            let mut paths = zeros(self);
            let mut value = 0.0;
            for (i, item) in scene.items.iter().enumerate() {
                let xy: Vec<[f64; 2]> = item.path.keypoints.iter().map(|k| [k[0], k[1]]).collect();
                let (v, g) = bbox_loss(&xy, b.min, b.max, b.penalty)?;
                value += v;
                for (dst, src) in paths[i].keypoints.iter_mut().zip(&g) {
                    *dst = [src[0], src[1], 0.0];
                }
            }
            terms.push(TermValue {
                term: Term::Box,
                value,
                grad: Gradients::paths(paths),
            });
        }
        if job.uses(Term::Repulsion) {
            let mut curves = Vec::new();
            let mut owners = Vec::new();
            for i in 0..n {
                let d = &drawables[i];
                if d.points.len() < 3 {
                    continue;
                }
                let tangents = self.maps[i].tangent.apply(&controls[i]).iter().map(|t| [t[0], t[1]]).collect();
                curves.push(CurveSamples {
                    points: d.points.clone(),
                    tangents,
                    spacing: 1.0 / job.per_segment as f64,
                    closed: d.closed,
                });
                owners.push(i);
            }
            let (value, grads) = repulsion_loss(&curves, &job.repulsion)?;
            let mut paths = zeros(self);
            for (g, &i) in grads.iter().zip(&owners) {
                let gp: Vec<Point> = g.points.iter().map(|p| [p[0], p[1], 0.0]).collect();
                let gt: Vec<Point> = g.tangents.iter().map(|p| [p[0], p[1], 0.0]).collect();
                let a = self.maps[i].sample.apply_transpose(&gp);
                let b = self.maps[i].tangent.apply_transpose(&gt);
                for ((dst, x), y) in paths[i].control.iter_mut().zip(&a).zip(&b) {
                    for d in 0..3 {
                        dst[d] = x[d] + y[d];
                    }
                }
            }
            terms.push(TermValue {
                term: Term::Repulsion,
                value,
                grad: Gradients::paths(paths),
            });
        }
        if job.uses(Term::Overlap) {
            let white: Vec<Drawable> = drawables
                .iter()
                .map(|d| Drawable {
                    color: vec![1.0],
                    opacity: 0.5,
                    ..d.clone()
                })
                .collect();
            let img = self.overlap_raster.render(&white, scene.width, scene.height, &[0.0])?;
            let (value, g) = overlap_cost(&img);
            let dg = self.overlap_raster.backward(&g)?;
            let mut paths = zeros(self);
            for (i, d) in dg.iter().enumerate() {
                paths[i].control = self.sample_adjoint(i, d.points.as_slice(), d.radii.as_slice());
            }
            terms.push(TermValue {
                term: Term::Overlap,
                value,
                grad: Gradients::paths(paths),
            });
        }
        if job.uses(Term::Alignment) {
            let centers: Vec<[f64; 2]> = scene
                .items
                .iter()
                .map(|it| {
                    let m = it.path.keypoints.len() as f64;
                    let (x, y) = it.path.keypoints.iter().fold((0.0, 0.0), |a, k| (a.0 + k[0], a.1 + k[1]));
                    [x / m, y / m]
                })
                .collect();
            let (value, g) = alignment_cost(&centers)?;
            let mut paths = zeros(self);
            for (i, it) in scene.items.iter().enumerate() {
                let m = it.path.keypoints.len() as f64;
                paths[i].keypoints.iter_mut().for_each(|k| *k = [g[i][0] / m, g[i][1] / m, 0.0]);
            }
            terms.push(TermValue {
                term: Term::Alignment,
                value,
                grad: Gradients::paths(paths),
            });
        }
        if job.uses(Term::Balance) {
            let owners: Vec<usize> = (0..n).filter(|&i| soft[i].is_some()).collect();
            let assignments: Vec<Vec<f64>> = owners.iter().map(|&i| soft[i].as_ref().unwrap().weights.clone()).collect();
            let (value, g) = balance_reg(&assignments, 1.0);
            let mut paths = zeros(self);
            for (gw, &i) in g.iter().zip(&owners) {
                paths[i].logits = soft[i].as_ref().unwrap().logits_grad(gw);
            }
            terms.push(TermValue {
                term: Term::Balance,
                value,
                grad: Gradients::paths(paths),
            });
        }

        let combined = combine(terms, &job.weights).map_err(|e| match e {
            ObjectiveError::NonFinite { term, .. } => EngineError::NonFinite {
                step,
                what: format!("loss term `{term}`"),
                last_good: Box::new(scene.clone()),
            },
            other => other.into(),
        })?;

        let mut paths = combined.grad.paths;
        paths.resize(n, PathGrad::default());
        let mut out: Vec<ItemGrad> = scene
            .items
            .iter()
            .map(|it| ItemGrad {
                keypoints: vec![[0.0; 3]; it.path.keypoints.len()],
                color: vec![0.0; it.color.len()],
                logits: vec![0.0; it.logits.as_ref().map_or(0, Vec::len)],
            })
            .collect();

        if let Some(img) = &combined.grad.image {
            let dg = self.raster.backward(img)?;
            for (i, d) in dg.iter().enumerate() {
                let gc = self.sample_adjoint(i, &d.points, &d.radii);
                add_points(&mut paths[i].control, &gc);
                match (&soft[i], &scene.palette) {
                    (Some(sa), Some(p)) => {
                        let gcol = [d.color[0], d.color[1], d.color[2]];
                        let gl = sa.logits_grad(&SoftAssignment::weights_grad_from_color(p, &gcol));
                        add_vec(&mut out[i].logits, &gl);
                    }
                    _ => add_vec(&mut out[i].color, &d.color),
                }
            }
        }
        for (i, pg) in paths.iter().enumerate() {
            if !pg.control.is_empty() {
                let gk = self.maps[i].expansion.apply_transpose(&pg.control);
                add_points(&mut out[i].keypoints, &gk);
            }
            add_points(&mut out[i].keypoints, &pg.keypoints);
            add_vec(&mut out[i].color, &pg.color);
            add_vec(&mut out[i].logits, &pg.logits);
        }

        let mut values = [None; 8];
        for (t, v) in &combined.terms {
            values[Term::ALL.iter().position(|x| x == t).unwrap()] = Some(*v);
        }
        Ok(Evaluation {
            total: combined.total,
            terms: values,
            grads: out,
        })
    }

    /// `(Q M)ᵀ` applied to per-sample `(x, y)` and radius gradients.
    fn sample_adjoint(&self, i: usize, points: &[[f64; 2]], radii: &[f64]) -> Vec<Point> {
        let g: Vec<Point> = points.iter().zip(radii).map(|(p, r)| [p[0], p[1], *r]).collect();
        self.maps[i].sample.apply_transpose(&g)
    }
}

fn add_points(acc: &mut Vec<Point>, g: &[Point]) {
    if acc.len() < g.len() {
        acc.resize(g.len(), [0.0; 3]);
    }
    for (a, b) in acc.iter_mut().zip(g) {
        for d in 0..3 {
            a[d] += b[d];
        }
    }
}

fn add_vec(acc: &mut Vec<f64>, g: &[f64]) {
    if acc.len() < g.len() {
        acc.resize(g.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Parameter groups flattened in item order.
struct Groups {
    positions: Vec<f64>,
    widths: Vec<f64>,
    colors: Vec<f64>,
    logits: Vec<f64>,
}

impl Groups {
    fn gather(scene: &Scene) -> Groups {
        let mut g = Groups {
            positions: Vec::new(),
            widths: Vec::new(),
            colors: Vec::new(),
            logits: Vec::new(),
        };
        for it in &scene.items {
            for k in &it.path.keypoints {
                g.positions.extend_from_slice(&[k[0], k[1]]);
                g.widths.push(k[2]);
            }
            match &it.logits {
                Some(l) => g.logits.extend_from_slice(l),
                None => g.colors.extend_from_slice(&it.color),
            }
        }
        g
    }

    fn from_grads(scene: &Scene, grads: &[ItemGrad]) -> Groups {
        let mut g = Groups {
            positions: Vec::new(),
            widths: Vec::new(),
            colors: Vec::new(),
            logits: Vec::new(),
        };
        for (it, gr) in scene.items.iter().zip(grads) {
            for k in &gr.keypoints {
                g.positions.extend_from_slice(&[k[0], k[1]]);
                g.widths.push(k[2]);
            }
            match &it.logits {
                Some(_) => g.logits.extend_from_slice(&gr.logits),
                None => g.colors.extend_from_slice(&gr.color),
            }
        }
        g
    }

    fn scatter(&self, scene: &mut Scene) {
        let (mut p, mut w, mut c, mut l) = (0, 0, 0, 0);
        for it in &mut scene.items {
            for k in &mut it.path.keypoints {
                k[0] = self.positions[p];
                k[1] = self.positions[p + 1];
                k[2] = self.widths[w];
                p += 2;
                w += 1;
            }
            match &mut it.logits {
                Some(lg) => {
                    let m = lg.len();
                    lg.copy_from_slice(&self.logits[l..l + m]);
                    l += m;
                }
                None => {
                    let m = it.color.len();
                    it.color.copy_from_slice(&self.colors[c..c + m]);
                    c += m;
                }
            }
        }
    }
}

/// Runs `job.steps` updates and a final evaluation.
pub fn run_with(job: &OptimJob, mut hooks: RunHooks<'_>) -> Result<RunOutput, EngineError> {
    let mut eval = Evaluator::new(job)?;
    let mut scene = job.scene.clone();
    let init = Groups::gather(&scene);
    let mut states = [
        AdamState::new(init.positions.len()),
        AdamState::new(init.widths.len()),
        AdamState::new(init.colors.len()),
        AdamState::new(init.logits.len()),
    ];
    let mut trace = Trace::default();
    let mut last_good = scene.clone();
    let [w_min, w_max] = job.width_bounds;

    for step in 0..=job.steps {
        if job.checkpoint_every > 0 && (step % job.checkpoint_every == 0 || step == job.steps) {
            if let Some(cb) = hooks.checkpoint.as_mut() {
                cb(step, &scene).map_err(|message| EngineError::Checkpoint { step, message })?;
            }
        }
        let provider = hooks.provider.as_deref_mut();
        let ev = eval.evaluate(&scene, step, provider).map_err(|e| match e {
            EngineError::NonFinite { step, what, .. } => EngineError::NonFinite {
                step,
                what,
                last_good: Box::new(last_good.clone()),
            },
            other => other,
        })?;
        let lr_of = |base: f64| cosine_lr(step, job.steps, base, base * job.lr.min_ratio);
        trace.rows.push(TraceRow {
            step,
            lr: lr_of(job.lr.positions)?,
            terms: ev.terms,
            total: ev.total,
        });
        if !ev.total.is_finite() {
            return Err(EngineError::NonFinite {
                step,
                what: "total loss".into(),
                last_good: Box::new(last_good),
            });
        }
        last_good = scene.clone();
        if step == job.steps {
            break;
        }

        let mut params = Groups::gather(&scene);
        let grads = Groups::from_grads(&scene, &ev.grads);
        let groups = [
            (job.trainable.positions, job.lr.positions, &mut params.positions, &grads.positions),
            (job.trainable.widths, job.lr.widths, &mut params.widths, &grads.widths),
            (job.trainable.colors, job.lr.colors, &mut params.colors, &grads.colors),
            (job.trainable.logits, job.lr.logits, &mut params.logits, &grads.logits),
        ];
        for ((on, base, p, g), state) in groups.into_iter().zip(states.iter_mut()) {
            if !on || p.is_empty() {
                continue;
            }
            adam_step(p, g, state, lr_of(base)?, &job.adam).map_err(|e| match e {
                EngineError::NonFiniteGradient { index } => EngineError::NonFinite {
                    step,
                    what: format!("gradient entry {index}"),
                    last_good: Box::new(last_good.clone()),
                },
                other => other,
            })?;
        }
        for w in &mut params.widths {
            *w = w.clamp(w_min, w_max);
        }
        for c in &mut params.colors {
            *c = c.clamp(0.0, 1.0);
        }
        params.scatter(&mut scene);
        if !scene.is_finite() {
            return Err(EngineError::NonFinite {
                step,
                what: "updated parameters".into(),
                last_good: Box::new(last_good),
            });
        }
    }
    Ok(RunOutput { scene, trace })
}
