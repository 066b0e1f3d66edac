use crate::raster::{downsample_blur, downsample_blur_adjoint, Canvas};

use super::ObjectiveError;

/// `Σ_levels mean((R_l - T_l)²)` over the blur pyramid, and its gradient on
/// the level-0 render. Each level's mean runs over all pixels and channels.
pub fn multiscale_mse(rendered: &Canvas, target: &Canvas, levels: usize) -> Result<(f64, Canvas), ObjectiveError> {
    if !rendered.same_shape(target) {
        return Err(ObjectiveError::Shape(format!(
            "render is {}x{}x{}, target is {}x{}x{}",
            rendered.width, rendered.height, rendered.channels, target.width, target.height, target.channels
        )));
    }
    let pr = downsample_blur(rendered, levels)?;
    let pt = downsample_blur(target, levels)?;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(levels);
    for (r, t) in pr.iter().zip(&pt) {
        let n = r.data.len() as f64;
        let mut g = r.zeros_like();
        let mut sum = 0.0;
        for ((gv, a), b) in g.data.iter_mut().zip(&r.data).zip(&t.data) {
            let e = a - b;
            sum += e * e;
            *gv = 2.0 * e / n;
        }
        value += sum / n;
        grads.push(g);
    }
    let grad = downsample_blur_adjoint(&grads, rendered.width, rendered.height)?;
    Ok((value, grad))
}

/// Target as it would look painted at `opacity` over `background`.
///
/// Fitting a lower-opacity target asks for less ink, so the optimizer ends
/// up with sparser, thinner strokes.
pub fn with_target_opacity(target: &Canvas, background: &[f64], opacity: f64) -> Result<Canvas, ObjectiveError> {
    if background.len() != target.channels {
        return Err(ObjectiveError::Shape(format!(
            "background has {} channels, target has {}",
            background.len(),
            target.channels
        )));
    }
    let mut out = target.clone();
    for px in out.data.chunks_mut(target.channels) {
        for (v, b) in px.iter_mut().zip(background) {
            *v = opacity * *v + (1.0 - opacity) * b;
        }
    }
    Ok(out)
}

/// `Σ max(v - 0.5, 0)` over every value of a (single-channel) render of
/// half-opaque white shapes on black: positive wherever two shapes overlap.
pub fn overlap_cost(rendered: &Canvas) -> (f64, Canvas) {
    let mut g = rendered.zeros_like();
    let mut value = 0.0;
    for (gv, v) in g.data.iter_mut().zip(&rendered.data) {
        if *v > 0.5 {
            value += v - 0.5;
            *gv = 1.0;
        }
    }
    (value, g)
}
