//! Per-pixel coverage of strokes and fills, and its gradient.
//!
//! A stroke is a chain of conical capsules. For capsule `i` with closest
//! centerline point at parameter `t`, the signed distance to its surface is
//! `d_i = h_i - r_i` where `h_i` is the distance to the segment and `r_i` the
//! interpolated radius. A log-sum-exp soft minimum over capsules gives `D`,
//! the matching soft-min weights give the local radius `R`, and coverage is
//! `F(-D) - F(-D - 2R)` with `F` a smoothstep ramp one band wide. The second
//! term is the coverage of the stroke's own centerline-offset shadow, so
//! coverage falls to zero as the radius does.

use super::{DrawKind, Drawable, DrawableGrad, RasterConfig};

/// Soft-min terms more than this many `1/β` above the minimum are dropped
/// (their weight is below `e^-30`).
pub(crate) const CULL: f64 = 30.0;

pub(crate) fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// `F(x)` and `F'(x)`.
pub(crate) fn ramp(x: f64, band: f64) -> (f64, f64) {
    let t = x / band + 0.5;
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        (smoothstep(t), 6.0 * t * (1.0 - t) / band)
    }
}

struct SegHit {
    t: f64,
    h: f64,
    /// Unit vector from the closest point towards the pixel (zero if `h = 0`).
    n: [f64; 2],
    /// `∂t/∂a`, `∂t/∂b`; zero when `t` is clamped.
    dt_da: [f64; 2],
    dt_db: [f64; 2],
    u: [f64; 2],
}

fn segment_hit(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> SegHit {
    let u = [b[0] - a[0], b[1] - a[1]];
    let w = [q[0] - a[0], q[1] - a[1]];
    let l2 = u[0] * u[0] + u[1] * u[1];
    let (mut t, mut dt_da, mut dt_db) = (0.0, [0.0; 2], [0.0; 2]);
    if l2 > 1e-18 {
        let raw = (w[0] * u[0] + w[1] * u[1]) / l2;
        if raw > 0.0 && raw < 1.0 {
            t = raw;
            for k in 0..2 {
                dt_da[k] = (-u[k] - w[k] + 2.0 * t * u[k]) / l2;
                dt_db[k] = (w[k] - 2.0 * t * u[k]) / l2;
            }
        } else {
            t = raw.clamp(0.0, 1.0);
        }
    }
    let v = [w[0] - t * u[0], w[1] - t * u[1]];
    let h = v[0].hypot(v[1]);
    let n = if h > 0.0 { [v[0] / h, v[1] / h] } else { [0.0; 2] };
    SegHit { t, h, n, dt_da, dt_db, u }
}

/// `∂h/∂a` and `∂h/∂b` for a segment hit.
fn dist_grad(s: &SegHit) -> ([f64; 2], [f64; 2]) {
    let nu = s.n[0] * s.u[0] + s.n[1] * s.u[1];
    let mut ga = [0.0; 2];
    let mut gb = [0.0; 2];
    for k in 0..2 {
        ga[k] = -(1.0 - s.t) * s.n[k] - nu * s.dt_da[k];
        gb[k] = -s.t * s.n[k] - nu * s.dt_db[k];
    }
    (ga, gb)
}

fn edge_ends(d: &Drawable, i: usize) -> (usize, usize) {
    (i, (i + 1) % d.points.len())
}

/// Number of capsules (strokes) or edges (fills) of a drawable.
pub(crate) fn element_count(d: &Drawable) -> usize {
    let m = d.points.len();
    match d.kind {
        DrawKind::Fill => m,
        DrawKind::Stroke if d.closed => m,
        DrawKind::Stroke => m - 1,
    }
}

fn clamped_radius(raw: f64) -> (f64, f64) {
    if raw >= 0.0 {
        (raw, 1.0)
    } else {
        (0.0, 0.0)
    }
}

pub(crate) struct CapTerm {
    idx: usize,
    hit: SegHit,
    r: f64,
    d: f64,
}

/// Soft-min distance `D`, radius `R`, and the kept capsule terms with their
/// soft-min weights stored in `weights`.
fn stroke_field(
    q: [f64; 2],
    d: &Drawable,
    caps: &[u32],
    cfg: &RasterConfig,
    terms: &mut Vec<CapTerm>,
    weights: &mut Vec<f64>,
) -> Option<(f64, f64)> {
    terms.clear();
    weights.clear();
    let mut dmin = f64::INFINITY;
    for &c in caps {
        let (ia, ib) = edge_ends(d, c as usize);
        let hit = segment_hit(q, d.points[ia], d.points[ib]);
        let ra = clamped_radius(d.radii[ia]).0;
        let rb = clamped_radius(d.radii[ib]).0;
        let r = (1.0 - hit.t) * ra + hit.t * rb;
        let dist = hit.h - r;
        dmin = dmin.min(dist);
        terms.push(CapTerm {
            idx: c as usize,
            hit,
            r,
            d: dist,
        });
    }
    if terms.is_empty() {
        return None;
    }
    let beta = cfg.sharpness;
    let cutoff = dmin + CULL / beta;
    terms.retain(|t| t.d <= cutoff);
    let mut z = 0.0;
    for t in terms.iter() {
        let e = (-beta * (t.d - dmin)).exp();
        weights.push(e);
        z += e;
    }
    let dsoft = dmin - z.ln() / beta;
    if dsoft >= 0.5 * cfg.band {
        return None;
    }
    let mut rsoft = 0.0;
    for (w, t) in weights.iter_mut().zip(terms.iter()) {
        *w /= z;
        rsoft += *w * t.r;
    }
    Some((dsoft, rsoft))
}

/// Scratch buffers reused across pixels.
#[derive(Default)]
pub(crate) struct Scratch {
    terms: Vec<CapTerm>,
    weights: Vec<f64>,
}

/// Raw coverage in `[0, 1]`, or `None` when the pixel is outside the
/// drawable's influence (zero value and zero gradient).
pub(crate) fn coverage(
    q: [f64; 2],
    d: &Drawable,
    near: &[u32],
    wind: &[u32],
    cfg: &RasterConfig,
    scratch: &mut Scratch,
) -> Option<f64> {
    match d.kind {
        DrawKind::Stroke => {
            let (ds, rs) = stroke_field(q, d, near, cfg, &mut scratch.terms, &mut scratch.weights)?;
            let a = ramp(-ds, cfg.band).0 - ramp(-ds - 2.0 * rs, cfg.band).0;
            Some(a.max(0.0))
        }
        DrawKind::Fill => {
            let x = fill_signed(q, d, near, wind).0;
            let a = ramp(x, cfg.band).0;
            (a > 0.0).then_some(a)
        }
    }
}

/// Returns `(-s·h, winding-inside?, nearest edge hit)` where `s = -1` inside.
fn fill_signed(q: [f64; 2], d: &Drawable, near: &[u32], wind: &[u32]) -> (f64, Option<(usize, SegHit)>) {
    let mut winding = 0i32;
    for &e in wind {
        let (ia, ib) = edge_ends(d, e as usize);
        let (a, b) = (d.points[ia], d.points[ib]);
        let up = a[1] <= q[1] && b[1] > q[1];
        let down = b[1] <= q[1] && a[1] > q[1];
        if up || down {
            let x = a[0] + (q[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if x > q[0] {
                winding += if up { 1 } else { -1 };
            }
        }
    }
    let mut best: Option<(usize, SegHit)> = None;
    for &e in near {
        let (ia, ib) = edge_ends(d, e as usize);
        let hit = segment_hit(q, d.points[ia], d.points[ib]);
        if best.as_ref().is_none_or(|(_, b)| hit.h < b.h) {
            best = Some((e as usize, hit));
        }
    }
    let h = best.as_ref().map_or(f64::INFINITY, |(_, b)| b.h);
    let x = if winding != 0 { h } else { -h };
    (x, best)
}

/// Accumulates `upstream · ∂coverage/∂(points, radii)` into `g`.
pub(crate) fn coverage_backward(
    q: [f64; 2],
    d: &Drawable,
    near: &[u32],
    wind: &[u32],
    cfg: &RasterConfig,
    scratch: &mut Scratch,
    upstream: f64,
    g: &mut DrawableGrad,
) {
    match d.kind {
        DrawKind::Stroke => {
            let Some((ds, rs)) = stroke_field(q, d, near, cfg, &mut scratch.terms, &mut scratch.weights) else {
                return;
            };
            let f1 = ramp(-ds, cfg.band).1;
            let f2 = ramp(-ds - 2.0 * rs, cfg.band).1;
            let g_d = upstream * (-f1 + f2);
            let g_r = upstream * 2.0 * f2;
            if g_d == 0.0 && g_r == 0.0 {
                return;
            }
            let beta = cfg.sharpness;
            for (w, t) in scratch.weights.iter().zip(scratch.terms.iter()) {
                // ∂D/∂d_i = w_i, ∂R/∂d_i = -β w_i (r_i - R), ∂R/∂r_i = w_i
                let gdi = g_d * w + g_r * (-beta * w * (t.r - rs));
                let gh = gdi;
                let gr = -gdi + g_r * w;
                let (ia, ib) = edge_ends(d, t.idx);
                let (dha, dhb) = dist_grad(&t.hit);
                let (ra, sa) = clamped_radius(d.radii[ia]);
                let (rb, sb) = clamped_radius(d.radii[ib]);
                for k in 0..2 {
                    g.points[ia][k] += gh * dha[k] + gr * (rb - ra) * t.hit.dt_da[k];
                    g.points[ib][k] += gh * dhb[k] + gr * (rb - ra) * t.hit.dt_db[k];
                }
                g.radii[ia] += gr * (1.0 - t.hit.t) * sa;
                g.radii[ib] += gr * t.hit.t * sb;
            }
        }
        DrawKind::Fill => {
            let (x, best) = fill_signed(q, d, near, wind);
            let fp = ramp(x, cfg.band).1;
            let Some((e, hit)) = best else { return };
            if fp == 0.0 {
                return;
            }
            // x = ±h, + inside
            let sign = if x >= 0.0 { 1.0 } else { -1.0 };
            let gh = upstream * fp * sign;
            let (ia, ib) = edge_ends(d, e);
            let (dha, dhb) = dist_grad(&hit);
            for k in 0..2 {
                g.points[ia][k] += gh * dha[k];
                g.points[ib][k] += gh * dhb[k];
            }
        }
    }
}

/// Conservative distance from the pixel-centre rectangle `[x0,x1]×[y0,y1]`
/// to the axis-aligned box of segment `a b`.
pub(crate) fn rect_gap(rect: [f64; 4], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (lx, hx) = (a[0].min(b[0]), a[0].max(b[0]));
    let (ly, hy) = (a[1].min(b[1]), a[1].max(b[1]));
    let gx = (lx - rect[2]).max(rect[0] - hx).max(0.0);
    let gy = (ly - rect[3]).max(rect[1] - hy).max(0.0);
    gx.hypot(gy)
}

/// Capsule (stroke) or edge (fill) lists for one tile: elements near enough
/// to matter, and for fills the edges that can cross a rightward ray.
pub(crate) fn bin_elements(d: &Drawable, rect: [f64; 4], cfg: &RasterConfig) -> (Vec<u32>, Vec<u32>) {
    let n = element_count(d);
    let mut near = Vec::new();
    let mut wind = Vec::new();
    match d.kind {
        DrawKind::Stroke => {
            let margin = 0.5 * cfg.band + ((n.max(1) as f64).ln() + CULL) / cfg.sharpness;
            for i in 0..n {
                let (ia, ib) = edge_ends(d, i);
                let r = d.radii[ia].max(d.radii[ib]).max(0.0);
                if rect_gap(rect, d.points[ia], d.points[ib]) - r <= margin {
                    near.push(i as u32);
                }
            }
        }
        DrawKind::Fill => {
            for i in 0..n {
                let (ia, ib) = edge_ends(d, i);
                let (a, b) = (d.points[ia], d.points[ib]);
                if rect_gap(rect, a, b) <= 0.5 * cfg.band {
                    near.push(i as u32);
                }
                let (ly, hy) = (a[1].min(b[1]), a[1].max(b[1]));
                if hy >= rect[1] && ly <= rect[3] && a[0].max(b[0]) >= rect[0] {
                    wind.push(i as u32);
                }
            }
        }
    }
    (near, wind)
}
