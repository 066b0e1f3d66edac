//! Initial geometry: weighted Voronoi stippling, TSP ordering of stipples
//! into one long path, and Voronoi cells of a saliency map as closed areas.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::raster::Canvas;
use crate::spline::KeyPointPath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeedingError {
    #[error("density map has no mass")]
    ZeroMass,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("multiplicity must be at least 1")]
    Multiplicity,
}

/// Per-pixel weight: mean over channels, negatives treated as zero.
fn weights(density: &Canvas) -> Vec<f64> {
    density
        .data
        .chunks(density.channels)
        .map(|p| (p.iter().sum::<f64>() / density.channels as f64).max(0.0))
        .collect()
}

fn nearest(q: [f64; 2], seeds: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, s) in seeds.iter().enumerate() {
        let d = (q[0] - s[0]).powi(2) + (q[1] - s[1]).powi(2);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// Nearest-seed label of every pixel centre, row-major.
fn label_pixels(width: usize, height: usize, seeds: &[[f64; 2]]) -> Vec<usize> {
    (0..height)
        .into_par_iter()
        .flat_map_iter(|y| (0..width).map(move |x| nearest([x as f64 + 0.5, y as f64 + 0.5], seeds)))
        .collect()
}

/// Lloyd relaxation of `n` seeds towards the density-weighted centroids of
/// their (pixel-grid) Voronoi cells.
///
/// Seeds start at pixels drawn with probability proportional to density,
/// jittered inside the pixel. Cells without mass keep their seed.
pub fn voronoi_stipple<R: Rng>(density: &Canvas, n: usize, iterations: usize, rng: &mut R) -> Result<Vec<[f64; 2]>, SeedingError> {
    if n == 0 {
        return Err(SeedingError::TooFewPoints { needed: 1, got: 0 });
    }
    let w = weights(density);
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(SeedingError::ZeroMass);
    }
    let (width, height) = (density.width, density.height);
    let mut cdf = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for v in &w {
        acc += v;
        cdf.push(acc);
    }
    let mut seeds: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let idx = cdf.partition_point(|c| *c <= r).min(w.len() - 1);
            let (x, y) = (idx % width, idx / width);
            [x as f64 + rng.random::<f64>(), y as f64 + rng.random::<f64>()]
        })
        .collect();
    for _ in 0..iterations {
        let labels = label_pixels(width, height, &seeds);
        let mut sums = vec![[0.0f64; 3]; n];
        for (i, &l) in labels.iter().enumerate() {
            let m = w[i];
            if m > 0.0 {
                sums[l][0] += m * ((i % width) as f64 + 0.5);
                sums[l][1] += m * ((i / width) as f64 + 0.5);
                sums[l][2] += m;
            }
        }
        let mut moved = 0.0f64;
        for (s, acc) in seeds.iter_mut().zip(&sums) {
            if acc[2] > 0.0 {
                let c = [acc[0] / acc[2], acc[1] / acc[2]];
                moved = moved.max((c[0] - s[0]).abs() + (c[1] - s[1]).abs());
                *s = c;
            }
        }
        if moved < 1e-9 {
            break;
        }
    }
    Ok(seeds)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Length of a visiting order; closed tours include the return edge.
pub fn tour_length(points: &[[f64; 2]], order: &[usize], closed: bool) -> f64 {
    let mut l: f64 = order.windows(2).map(|w| dist(points[w[0]], points[w[1]])).sum();
    if closed && order.len() > 1 {
        l += dist(points[order[order.len() - 1]], points[order[0]]);
    }
    l
}

fn lex_cmp(a: &[f64; 2], b: &[f64; 2]) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Greedy nearest-neighbour order from `start`; `end`, if given, is
/// appended last.
pub fn nearest_neighbor_order(points: &[[f64; 2]], start: usize, end: Option<usize>) -> Vec<usize> {
    let n = points.len();
    let mut used = vec![false; n];
    used[start] = true;
    if let Some(e) = end {
        used[e] = true;
    }
    let mut order = vec![start];
    let remaining = n - 1 - usize::from(end.is_some_and(|e| e != start));
    for _ in 0..remaining {
        let cur = points[*order.last().unwrap()];
        let mut best = usize::MAX;
        let mut bd = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            if !used[i] {
                let d = dist(cur, *p);
                if d < bd {
                    bd = d;
                    best = i;
                }
            }
        }
        used[best] = true;
        order.push(best);
    }
    if let Some(e) = end.filter(|&e| e != start) {
        order.push(e);
    }
    order
}

/// 2-opt until no segment reversal shortens the tour. Open paths keep both
/// ends fixed.
pub fn two_opt(points: &[[f64; 2]], order: &mut [usize], closed: bool) {
    let n = order.len();
    if n < 4 {
        return;
    }
    loop {
        let mut improved = false;
        // edge (i, i+1) against edge (j, j+1); closed tours wrap j+1
        let last_j = if closed { n - 1 } else { n - 2 };
        for i in 0..n - 2 {
            for j in i + 2..=last_j {
                let jn = (j + 1) % n;
                if jn == i {
                    continue;
                }
                let (a, b, c, d) = (points[order[i]], points[order[i + 1]], points[order[j]], points[order[jn]]);
                let delta = dist(a, c) + dist(b, d) - dist(a, b) - dist(c, d);
                if delta < -1e-12 {
                    order[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Visiting order over `points`.
///
/// Open paths run from the lexicographically smallest `(x, y)` (left-most,
/// then top-most) to the largest. Closed tours start at the smallest.
pub fn tsp_path(points: &[[f64; 2]], open: bool) -> Result<Vec<usize>, SeedingError> {
    let n = points.len();
    if n < 2 {
        return Err(SeedingError::TooFewPoints { needed: 2, got: n });
    }
    let idx: Vec<usize> = (0..n).collect();
    let start = *idx.iter().min_by(|a, b| lex_cmp(&points[**a], &points[**b])).unwrap();
    let end = *idx.iter().rev().max_by(|a, b| lex_cmp(&points[**a], &points[**b])).unwrap();
    let mut order = if open {
        nearest_neighbor_order(points, start, Some(end))
    } else {
        nearest_neighbor_order(points, start, None)
    };
    two_opt(points, &mut order, !open);
    Ok(order)
}

/// One closed area produced by [`area_seeds`].
#[derive(Clone, Debug, PartialEq)]
pub struct AreaSeed {
    pub path: KeyPointPath,
    pub polygon: Vec<[f64; 2]>,
    pub mean_saliency: f64,
}

/// Keeps the part of `poly` closer to `a` than to `b`.
fn clip_half_plane(poly: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    // inside: (q - m)·(b - a) <= 0 with m the midpoint
    let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let nrm = [b[0] - a[0], b[1] - a[1]];
    let side = |q: [f64; 2]| (q[0] - m[0]) * nrm[0] + (q[1] - m[1]) * nrm[1];
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let (sp, sq) = (side(p), side(q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

/// Shoelace area (positive for counter-clockwise in y-up coordinates).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// Voronoi cells of stippled saliency samples as closed key-point paths,
/// ordered by increasing mean saliency (least salient first, so salient
/// areas are drawn on top).
///
/// A small density floor keeps flat regions from being left without cells.
pub fn area_seeds<R: Rng>(
    saliency: &Canvas,
    n: usize,
    degree: usize,
    iterations: usize,
    rng: &mut R,
) -> Result<Vec<AreaSeed>, SeedingError> {
    let gray = saliency.to_gray();
    let w = weights(&gray);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let floor = if mean > 0.0 { 0.01 * mean } else { 1.0 };
    let mut density = gray.clone();
    density.data.iter_mut().zip(&w).for_each(|(d, v)| *d = v + floor);
    let mut seeds = voronoi_stipple(&density, n, iterations, rng)?;
    // coincident seeds have no bisector
    let mut unique: Vec<[f64; 2]> = Vec::with_capacity(seeds.len());
    for s in seeds.drain(..) {
        if unique.iter().all(|u| dist(*u, s) > 1e-9) {
            unique.push(s);
        }
    }
    let seeds = unique;

    let (wd, ht) = (saliency.width as f64, saliency.height as f64);
    let rect = vec![[0.0, 0.0], [wd, 0.0], [wd, ht], [0.0, ht]];
    let labels = label_pixels(saliency.width, saliency.height, &seeds);
    let mut sal_sum = vec![0.0; seeds.len()];
    let mut sal_cnt = vec![0usize; seeds.len()];
    for (l, v) in labels.iter().zip(&w) {
        sal_sum[*l] += v;
        sal_cnt[*l] += 1;
    }

    let mut out = Vec::with_capacity(seeds.len());
    for (i, s) in seeds.iter().enumerate() {
        let mut poly = rect.clone();
        for (j, o) in seeds.iter().enumerate() {
            if i != j && !poly.is_empty() {
                poly = clip_half_plane(&poly, *s, *o);
            }
        }
        // merge vertices produced twice by clipping through a corner
        poly.dedup_by(|a, b| dist(*a, *b) < 1e-9);
        if poly.len() > 1 && dist(poly[0], *poly.last().unwrap()) < 1e-9 {
            poly.pop();
        }
        if poly.len() < 3 || polygon_area(&poly).abs() < 1e-9 {
            warn!("dropping degenerate Voronoi cell {i} with {} vertices", poly.len());
            continue;
        }
        let mean_saliency = if sal_cnt[i] > 0 { sal_sum[i] / sal_cnt[i] as f64 } else { 0.0 };
        let keypoints = poly.iter().map(|p| [p[0], p[1], 0.0]).collect();
        out.push(AreaSeed {
            path: KeyPointPath::new(keypoints, true, degree),
            polygon: poly,
            mean_saliency,
        });
    }
    out.sort_by(|a, b| a.mean_saliency.total_cmp(&b.mean_saliency));
    Ok(out)
}

/// Path with every key-point repeated `r` times.
pub fn expand_multiplicity(path: &KeyPointPath, r: usize) -> Result<KeyPointPath, SeedingError> {
    if r == 0 {
        return Err(SeedingError::Multiplicity);
    }
    Ok(path.expand_multiplicity(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_seed_goes_to_center() {
        let d = Canvas::filled(30, 20, &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = voronoi_stipple(&d, 1, 5, &mut rng).unwrap();
        assert!((p[0][0] - 15.0).abs() < 1e-12 && (p[0][1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn support_and_darkness() {
        let mut d = Canvas::filled(40, 40, &[0.0]).unwrap();
        for y in 0..40 {
            for x in 0..20 {
                d.pixel_mut(x, y)[0] = 1.0;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = voronoi_stipple(&d, 25, 30, &mut rng).unwrap();
        assert!(p.iter().all(|q| q[0] < 20.0));
        assert!(matches!(voronoi_stipple(&Canvas::filled(4, 4, &[0.0]).unwrap(), 3, 1, &mut rng), Err(SeedingError::ZeroMass)));

        // horizontal ramp: density rises to the right
        let mut ramp = Canvas::filled(64, 32, &[0.0]).unwrap();
        for y in 0..32 {
            for x in 0..64 {
                ramp.pixel_mut(x, y)[0] = x as f64 / 63.0;
            }
        }
        let p = voronoi_stipple(&ramp, 80, 30, &mut rng).unwrap();
        let darkest = p.iter().filter(|q| q[0] >= 48.0).count() as f64 / p.len() as f64;
        assert!(darkest > 0.25, "{darkest}");
    }

    #[test]
    fn tsp_small_cases() {
        let pts = [[2.0, 1.0], [0.0, 0.0], [1.0, 5.0]];
        assert_eq!(tsp_path(&pts, false).unwrap(), vec![1, 0, 2]);
        let open = tsp_path(&pts, true).unwrap();
        assert_eq!(open, vec![1, 2, 0]);
        // brute force over every permutation with the required end points
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .filter(|p| p[0] == 1 && p[2] == 0)
            .map(|p| tour_length(&pts, p, false))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(tour_length(&pts, &open, false), best);
        let line: Vec<[f64; 2]> = [3.0, 0.0, 4.0, 1.0, 2.0].iter().map(|x| [*x, 0.5 * x]).collect();
        assert_eq!(tsp_path(&line, true).unwrap(), vec![1, 3, 4, 0, 2]);
        assert!(tsp_path(&pts[..1], true).is_err());
    }

    #[test]
    fn two_opt_never_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for closed in [false, true] {
            let pts: Vec<[f64; 2]> = (0..60).map(|_| [rng.random::<f64>() * 100.0, rng.random::<f64>() * 100.0]).collect();
            let nn = nearest_neighbor_order(&pts, 0, if closed { None } else { Some(59) });
            let mut opt = nn.clone();
            two_opt(&pts, &mut opt, closed);
            assert!(tour_length(&pts, &opt, closed) <= tour_length(&pts, &nn, closed) + 1e-9);
            let mut sorted = opt.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..60).collect::<Vec<_>>());
        }
    }

    #[test]
    fn cells_tile_canvas_and_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let flat = Canvas::filled(50, 30, &[0.5]).unwrap();
        let one = area_seeds(&flat, 1, 3, 10, &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        assert!((polygon_area(&one[0].polygon).abs() - 1500.0).abs() < 1e-9);

        let cells = area_seeds(&flat, 12, 3, 10, &mut rng).unwrap();
        let total: f64 = cells.iter().map(|c| polygon_area(&c.polygon).abs()).sum();
        assert!((total - 1500.0).abs() < 1e-6, "{total}");

        // bright blob on the right, dark left
        let mut sal = Canvas::filled(60, 30, &[0.0]).unwrap();
        for y in 8..22 {
            for x in 40..55 {
                sal.pixel_mut(x, y)[0] = 1.0;
            }
        }
        let cells = area_seeds(&sal, 6, 3, 20, &mut rng).unwrap();
        let last = cells.last().unwrap();
        let cx = last.polygon.iter().map(|p| p[0]).sum::<f64>() / last.polygon.len() as f64;
        assert!(cx > 30.0, "brightest cell should sit over the blob, centroid x {cx}");
        assert!(cells.windows(2).all(|w| w[0].mean_saliency <= w[1].mean_saliency));
    }

    #[test]
    fn multiplicity_expansion() {
        let path = KeyPointPath::new(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [2.0, 1.0, 1.0]], false, 5);
        assert_eq!(expand_multiplicity(&path, 1).unwrap(), path);
        let r3 = expand_multiplicity(&path, 3).unwrap();
        assert_eq!(r3.control_count(), 9 + 2 * 5);
        assert!(expand_multiplicity(&path, 0).is_err());
    }
}
