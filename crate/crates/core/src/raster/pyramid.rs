//! Blur-and-decimate image pyramid and its adjoint.
//!
//! Each level applies a separable normalized Gaussian (σ = 1 px, radius 3,
//! clamp-to-edge) at the current resolution and then averages 2×2 blocks.
//! Odd trailing rows or columns are dropped.

use super::{Canvas, RasterError};

const SIGMA: f64 = 1.0;
const RADIUS: usize = 3;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - RADIUS as f64;
        *v = (-0.5 * x * x / (SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Blur along one axis. `along_x` selects the axis; `transpose` applies the
/// adjoint (scatter instead of gather).
fn blur_axis(c: &Canvas, along_x: bool, transpose: bool) -> Canvas {
    let k = kernel();
    let (w, h, ch) = (c.width, c.height, c.channels);
    let mut out = c.zeros_like();
    let len = if along_x { w } else { h };
    for y in 0..h {
        for x in 0..w {
            let pos = if along_x { x } else { y };
            for (ki, kv) in k.iter().enumerate() {
                let q = (pos as isize + ki as isize - RADIUS as isize).clamp(0, len as isize - 1) as usize;
                let (sx, sy) = if along_x { (q, y) } else { (x, q) };
                let (src, dst) = if transpose {
                    ((y * w + x) * ch, (sy * w + sx) * ch)
                } else {
                    ((sy * w + sx) * ch, (y * w + x) * ch)
                };
                for i in 0..ch {
                    out.data[dst + i] += kv * c.data[src + i];
                }
            }
        }
    }
    out
}

fn blur(c: &Canvas) -> Canvas {
    blur_axis(&blur_axis(c, true, false), false, false)
}

fn blur_adjoint(c: &Canvas) -> Canvas {
    blur_axis(&blur_axis(c, false, true), true, true)
}

fn decimate(c: &Canvas) -> Canvas {
    let (w, h, ch) = (c.width / 2, c.height / 2, c.channels);
    let mut data = vec![0.0; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for i in 0..ch {
                let s = c.pixel(2 * x, 2 * y)[i]
                    + c.pixel(2 * x + 1, 2 * y)[i]
                    + c.pixel(2 * x, 2 * y + 1)[i]
                    + c.pixel(2 * x + 1, 2 * y + 1)[i];
                data[(y * w + x) * ch + i] = 0.25 * s;
            }
        }
    }
    Canvas {
        width: w,
        height: h,
        channels: ch,
        data,
    }
}

fn decimate_adjoint(g: &Canvas, width: usize, height: usize) -> Canvas {
    let ch = g.channels;
    let mut out = Canvas {
        width,
        height,
        channels: ch,
        data: vec![0.0; width * height * ch],
    };
    for y in 0..g.height {
        for x in 0..g.width {
            for i in 0..ch {
                let v = 0.25 * g.pixel(x, y)[i];
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    out.pixel_mut(2 * x + dx, 2 * y + dy)[i] += v;
                }
            }
        }
    }
    out
}

/// `levels` canvases; level 0 is the input itself.
pub fn downsample_blur(canvas: &Canvas, levels: usize) -> Result<Vec<Canvas>, RasterError> {
    check_levels(canvas.width, canvas.height, levels)?;
    let mut out = Vec::with_capacity(levels);
    out.push(canvas.clone());
    for _ in 1..levels {
        let next = decimate(&blur(out.last().unwrap()));
        out.push(next);
    }
    Ok(out)
}

/// Adjoint of [`downsample_blur`]: sums the back-propagated per-level
/// gradients into one gradient on the level-0 canvas.
pub fn downsample_blur_adjoint(grads: &[Canvas], width: usize, height: usize) -> Result<Canvas, RasterError> {
    check_levels(width, height, grads.len())?;
    let mut dims = vec![(width, height)];
    for _ in 1..grads.len() {
        let (w, h) = *dims.last().unwrap();
        dims.push((w / 2, h / 2));
    }
    for (g, &(w, h)) in grads.iter().zip(&dims) {
        if g.width != w || g.height != h {
            return Err(RasterError::ShapeMismatch {
                expected: (h, w, g.channels),
                got: g.data.len(),
            });
        }
    }
    let mut acc = grads.last().unwrap().clone();
    for level in (1..grads.len()).rev() {
        let (w, h) = dims[level - 1];
        let up = blur_adjoint(&decimate_adjoint(&acc, w, h));
        acc = grads[level - 1].clone();
        for (a, b) in acc.data.iter_mut().zip(&up.data) {
            *a += b;
        }
    }
    Ok(acc)
}

fn check_levels(width: usize, height: usize, levels: usize) -> Result<(), RasterError> {
    if levels == 0 {
        return Err(RasterError::PyramidLevels { levels, width, height });
    }
    let shrink = 1usize << (levels - 1);
    if width / shrink == 0 || height / shrink == 0 {
        return Err(RasterError::PyramidLevels { levels, width, height });
    }
    Ok(())
}
