//! SVG 1.1 export.
//!
//! SVG strokes have a single width, so variable-width strokes are written as
//! filled outline polygons: the sampled centerline offset left and right by
//! the local radius, with round caps. The polygons use the same sample
//! density as rendering. Fills become closed cubic paths. A hidden
//! `centerlines` group keeps the cubic centerlines, and the scene JSON rides
//! along in `<metadata>` so [`import_svg`] can restore it exactly.

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::bezier::BezierChain;
use crate::raster::DrawKind;
use crate::scene::{PathMaps, Scene, SceneError};
use crate::spline::Point;

const METADATA_OPEN: &str = "<metadata id=\"smoothstroke-scene\"><![CDATA[";
const METADATA_CLOSE: &str = "]]></metadata>";
/// Vertices per round cap, end points included.
const CAP_STEPS: usize = 9;

#[derive(Debug, Error)]
pub enum SvgError {
    #[error("no embedded scene metadata")]
    NoMetadata,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" || s.is_empty() {
        "0".into()
    } else {
        s.into()
    }
}

fn hex(color: &[f64]) -> String {
    let rgb = match color.len() {
        1 | 2 => [color[0]; 3],
        _ => [color[0], color[1], color[2]],
    };
    let b = rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    format!("#{:02x}{:02x}{:02x}", b[0], b[1], b[2])
}

fn normalize(v: [f64; 2]) -> Option<[f64; 2]> {
    let l = v[0].hypot(v[1]);
    (l > 1e-9).then(|| [v[0] / l, v[1] / l])
}

/// Unit tangents. Where the curve stops (open curves rest on their end
/// key-points) the direction is the chord to the nearest sample at least
/// half a radius away, so sub-pixel wiggles from degree reduction cannot
/// flip a cap.
fn unit_tangents(samples: &[Point], tangents: &[Point], closed: bool) -> Vec<[f64; 2]> {
    let n = samples.len();
    let toward = |i: usize| -> [f64; 2] {
        let reach = (0.5 * samples[i][2]).max(0.25);
        let far = |j: usize, s: f64| {
            let v = [s * (samples[j][0] - samples[i][0]), s * (samples[j][1] - samples[i][1])];
            if v[0].hypot(v[1]) >= reach {
                normalize(v)
            } else {
                None
            }
        };
        for k in 1..n {
            let ahead = if closed { Some((i + k) % n) } else { (i + k < n).then_some(i + k) };
            let behind = if closed { Some((i + n - k) % n) } else { i.checked_sub(k) };
            if let Some(t) = ahead.and_then(|j| far(j, 1.0)).or_else(|| behind.and_then(|j| far(j, -1.0))) {
                return t;
            }
        }
        [1.0, 0.0]
    };
    (0..n)
        .map(|i| normalize([tangents[i][0], tangents[i][1]]).unwrap_or_else(|| toward(i)))
        .collect()
}

/// Outline rings of a variable-width stroke. Open strokes give one ring with
/// round caps; closed strokes give an outer ring and a reversed inner ring,
/// which the nonzero rule turns into a band.
pub fn stroke_outline(samples: &[Point], tangents: &[Point], closed: bool) -> Vec<Vec<[f64; 2]>> {
    let t = unit_tangents(samples, tangents, closed);
    let side = |i: usize, s: f64| {
        let r = samples[i][2].max(0.0);
        // left normal in y-down image coordinates
        let nrm = [-t[i][1], t[i][0]];
        [samples[i][0] + s * r * nrm[0], samples[i][1] + s * r * nrm[1]]
    };
    let n = samples.len();
    let left: Vec<[f64; 2]> = (0..n).map(|i| side(i, 1.0)).collect();
    let right: Vec<[f64; 2]> = (0..n).map(|i| side(i, -1.0)).collect();
    if closed {
        let mut inner = right;
        inner.reverse();
        return vec![left, inner];
    }
    let cap = |i: usize, dir: f64| -> Vec<[f64; 2]> {
        let r = samples[i][2].max(0.0);
        let nrm = [-t[i][1], t[i][0]];
        // from +normal through dir·tangent to -normal
        (1..CAP_STEPS - 1)
            .map(|j| {
                let a = PI * j as f64 / (CAP_STEPS - 1) as f64;
                let (c, s) = (a.cos(), a.sin());
                [
                    samples[i][0] + r * (c * nrm[0] + dir * s * t[i][0]),
                    samples[i][1] + r * (c * nrm[1] + dir * s * t[i][1]),
                ]
            })
            .collect()
    };
    let mut ring = left;
    ring.extend(cap(n - 1, 1.0));
    ring.extend(right.into_iter().rev());
    let mut start = cap(0, -1.0);
    start.reverse();
    ring.extend(start);
    vec![ring]
}

fn polygon_d(rings: &[Vec<[f64; 2]>]) -> String {
    let mut d = String::new();
    for ring in rings {
        for (i, p) in ring.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{} {} ", num(p[0]), num(p[1]));
        }
        d.push_str("Z ");
    }
    d.trim_end().to_string()
}

fn chain_d(chain: &BezierChain) -> String {
    let pts = chain.points();
    let mut d = format!("M{} {}", num(pts[0][0]), num(pts[0][1]));
    for seg in chain.segments() {
        let _ = write!(
            d,
            " C{} {} {} {} {} {}",
            num(seg[1][0]),
            num(seg[1][1]),
            num(seg[2][0]),
            num(seg[2][1]),
            num(seg[3][0]),
            num(seg[3][1])
        );
    }
    if chain.is_closed() {
        d.push_str(" Z");
    }
    d
}

/// SVG document for `scene`, with strokes sampled `per_segment` times per
/// cubic. Quantized items use their hard palette colors.
pub fn export_svg(scene: &Scene, per_segment: usize) -> Result<String, SvgError> {
    scene.validate()?;
    let (w, h) = (scene.width, scene.height);
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let json = scene.to_json()?;
    let _ = writeln!(out, "{METADATA_OPEN}{json}{METADATA_CLOSE}");
    let bg_alpha = if scene.background.len() == 4 { scene.background[3] } else { 1.0 };
    let _ = writeln!(
        out,
        "<rect id=\"background\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"{}\" fill-opacity=\"{}\"/>",
        hex(&scene.background),
        num(bg_alpha)
    );

    let mut centerlines = String::new();
    let _ = writeln!(out, "<g id=\"drawing\" fill-rule=\"nonzero\" stroke=\"none\">");
    for (i, item) in scene.items.iter().enumerate() {
        let color = hex(&scene.display_color(i));
        let chain = scene.chain(i)?;
        let d = match item.kind {
            DrawKind::Fill => chain_d(&chain),
            DrawKind::Stroke => {
                let maps = PathMaps::new(&item.path, per_segment).map_err(|e| e.at(i))?;
                let c = maps.control(&item.path.keypoints);
                let samples = maps.sample.apply(&c);
                let tangents = maps.tangent.apply(&c);
                let mean_r = samples.iter().map(|s| s[2].max(0.0)).sum::<f64>() / samples.len() as f64;
                let _ = writeln!(
                    centerlines,
                    "<path d=\"{}\" stroke=\"{color}\" stroke-width=\"{}\"/>",
                    chain_d(&chain),
                    num(2.0 * mean_r)
                );
                polygon_d(&stroke_outline(&samples, &tangents, item.path.closed))
            }
        };
        let _ = writeln!(
            out,
            "<path id=\"item{i}\" d=\"{d}\" fill=\"{color}\" fill-opacity=\"{}\"/>",
            num(item.opacity)
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "<g id=\"centerlines\" display=\"none\" fill=\"none\">");
    out.push_str(&centerlines);
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    Ok(out)
}

/// Restores the scene embedded by [`export_svg`].
pub fn import_svg(text: &str) -> Result<Scene, SvgError> {
    let start = text.find(METADATA_OPEN).ok_or(SvgError::NoMetadata)? + METADATA_OPEN.len();
    let len = text[start..].find(METADATA_CLOSE).ok_or(SvgError::NoMetadata)?;
    Ok(Scene::from_json(&text[start..start + len])?)
}
