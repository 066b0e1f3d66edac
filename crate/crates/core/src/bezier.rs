//! Exact conversion of cardinal B-splines to piecewise Bézier curves and
//! quintic-to-cubic degree reduction.
//!
//! Each polynomial span of a degree-`p` cardinal B-spline depends on `p + 1`
//! consecutive control points; a fixed `(p+1)×(p+1)` block maps them to the
//! Bernstein coefficients of that span. Stacking one block per span (shifted
//! by one column) gives the whole-curve conversion, and a per-segment
//! reduction block brings each segment down to a cubic. The composition is
//! precomputed once per path topology as a [`PointMap`].

use num_rational::Ratio;
use thiserror::Error;

use crate::sparse::PointMap;
use crate::spline::{Point, SplineCurve};

/// Largest degree supported by the exact rational block construction.
pub const MAX_CONVERSION_DEGREE: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BezierError {
    #[error("unsupported spline degree {0} for Bézier conversion")]
    UnsupportedDegree(usize),
    #[error("no reduction table from degree {from} to degree {to}")]
    UnsupportedReduction { from: usize, to: usize },
    #[error("expected {expected} points, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("a chain needs at least one segment")]
    NoSegments,
}

/// Small dense row-major matrix used for the per-span blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Block {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows[0].len();
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    /// Product `self · rhs`.
    pub fn matmul(&self, rhs: &Block) -> Block {
        assert_eq!(self.cols, rhs.rows);
        let mut data = vec![0.0; self.rows * rhs.cols];
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                for c in 0..rhs.cols {
                    data[r * rhs.cols + c] += a * rhs.get(k, c);
                }
            }
        }
        Block {
            rows: self.rows,
            cols: rhs.cols,
            data,
        }
    }
}

type Q = Ratio<i128>;

/// Polynomial with rational coefficients, lowest power first.
fn poly_mul(a: &[Q], b: &[Q]) -> Vec<Q> {
    let mut out = vec![Q::from_integer(0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[Q], b: &[Q]) -> Vec<Q> {
    let mut out = vec![Q::from_integer(0); a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, x) in b.iter().enumerate() {
        out[i] += x;
    }
    out
}

/// `p(u + shift)` by binomial expansion.
fn poly_shift(p: &[Q], shift: i128) -> Vec<Q> {
    let mut out = vec![Q::from_integer(0); p.len()];
    for (i, coef) in p.iter().enumerate() {
        // coef * (u + shift)^i
        let mut binom: i128 = 1;
        for j in 0..=i {
            let pow = shift.pow((i - j) as u32);
            out[j] += coef * Q::from_integer(binom * pow);
            binom = binom * (i - j) as i128 / (j + 1) as i128;
        }
    }
    out
}

/// Polynomial pieces of `N_k` in the global variable `u`; piece `j` is valid
/// on `[j, j + 1)`.
fn cardinal_pieces(k: usize) -> Vec<Vec<Q>> {
    let mut pieces = vec![vec![Q::from_integer(1)]];
    for r in 2..=k {
        let inv = Q::new(1, (r - 1) as i128);
        let mut next = Vec::with_capacity(r);
        for j in 0..r {
            // (u / (r-1)) P_{r-1, j}(u) + ((r - u) / (r-1)) P_{r-1, j-1}(u - 1)
            let mut acc = vec![Q::from_integer(0)];
            if j < r - 1 {
                acc = poly_add(&acc, &poly_mul(&[Q::from_integer(0), inv], &pieces[j]));
            }
            if j >= 1 {
                let shifted = poly_shift(&pieces[j - 1], -1);
                acc = poly_add(&acc, &poly_mul(&[Q::from_integer(r as i128) * inv, -inv], &shifted));
            }
            next.push(acc);
        }
        pieces = next;
    }
    pieces
}

fn rational_to_f64(q: &Q) -> f64 {
    // exact for the small denominators involved (≤ 9!)
    *q.numer() as f64 / *q.denom() as f64
}

/// The `(p+1)×(p+1)` block mapping the control points of one span to the
/// Bernstein coefficients of that span.
///
/// Computed exactly in rational arithmetic: for each basis active on the span
/// take its polynomial piece in the local parameter, then convert monomial to
/// Bernstein form.
pub fn conversion_block(p: usize) -> Result<Block, BezierError> {
    if p == 0 || p > MAX_CONVERSION_DEGREE {
        return Err(BezierError::UnsupportedDegree(p));
    }
    let k = p + 1;
    let pieces = cardinal_pieces(k);
    let mut data = vec![0.0; k * k];
    for j in 0..k {
        // control c_{s+j} is weighted by N_k(x + p - j), i.e. piece p - j
        let local = poly_shift(&pieces[p - j], (p - j) as i128);
        for r in 0..k {
            // b_r = Σ_{i ≤ r} C(r, i) / C(p, i) a_i
            let mut b = Q::from_integer(0);
            for (i, a) in local.iter().enumerate().take(r + 1) {
                b += a * Q::new(binom(r, i), binom(p, i));
            }
            data[r * k + j] = rational_to_f64(&b);
        }
    }
    Ok(Block {
        rows: k,
        cols: k,
        data,
    })
}

fn binom(n: usize, k: usize) -> i128 {
    let mut acc: i128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i128 / (i + 1) as i128;
    }
    acc
}

/// Degree reduction block `R^{p,q}`.
///
/// Only `(5, 3)` (endpoint position and tangent preserving multi-degree
/// reduction) and the identity `(3, 3)` are tabulated.
pub fn reduction_block(p: usize, q: usize) -> Result<Block, BezierError> {
    match (p, q) {
        (3, 3) => Ok(Block::from_rows(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ])),
        (5, 3) => Ok(Block::from_rows(&[
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            &[-2.0 / 3.0, 5.0 / 3.0, 0.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.0, 5.0 / 3.0, -2.0 / 3.0],
            &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ])),
        (from, to) => Err(BezierError::UnsupportedReduction { from, to }),
    }
}

/// Stacks one conversion block per segment, each shifted by `p + 1` rows and
/// one column. Output rows: `(p+1)·segments`; columns: `segments + p`.
pub fn stack_conversion(block: &Block, segments: usize) -> Result<PointMap, BezierError> {
    if segments == 0 {
        return Err(BezierError::NoSegments);
    }
    let rows = (0..segments)
        .flat_map(|s| {
            (0..block.rows).map(move |r| (0..block.cols).map(|c| (s + c, block.get(r, c))).collect())
        })
        .collect();
    Ok(PointMap::from_rows(segments + block.cols - 1, rows))
}

/// Block-diagonal stack of a reduction block, one per segment.
pub fn stack_reduction(block: &Block, segments: usize) -> Result<PointMap, BezierError> {
    if segments == 0 {
        return Err(BezierError::NoSegments);
    }
    let rows = (0..segments)
        .flat_map(|s| {
            (0..block.rows)
                .map(move |r| (0..block.cols).map(|c| (s * block.cols + c, block.get(r, c))).collect())
        })
        .collect();
    Ok(PointMap::from_rows(segments * block.cols, rows))
}

/// A piecewise cubic Bézier curve with `(x, y, radius)` control points.
///
/// Segments share junction points by construction: segment `i` is
/// `points[3i ..= 3i + 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BezierChain {
    points: Vec<Point>,
    closed: bool,
}

impl BezierChain {
    pub fn from_points(points: Vec<Point>, closed: bool) -> Result<Self, BezierError> {
        if points.len() < 4 || (points.len() - 1) % 3 != 0 {
            return Err(BezierError::DimensionMismatch {
                expected: 3 * ((points.len().max(4) - 1) / 3) + 1,
                got: points.len(),
            });
        }
        Ok(Self { points, closed })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn segment_count(&self) -> usize {
        (self.points.len() - 1) / 3
    }

    pub fn segment(&self, i: usize) -> [Point; 4] {
        let s = &self.points[3 * i..3 * i + 4];
        [s[0], s[1], s[2], s[3]]
    }

    pub fn segments(&self) -> impl Iterator<Item = [Point; 4]> + '_ {
        (0..self.segment_count()).map(|i| self.segment(i))
    }

    /// Point on segment `i` at local parameter `t ∈ [0, 1]`.
    pub fn eval(&self, i: usize, t: f64) -> Point {
        let w = cubic_bernstein(t);
        let seg = self.segment(i);
        let mut out = [0.0; 3];
        for (wj, pj) in w.iter().zip(seg.iter()) {
            for d in 0..3 {
                out[d] += wj * pj[d];
            }
        }
        out
    }

    /// Axis-aligned bounding box diagonal of the `(x, y)` control polygon.
    pub fn bbox_diagonal(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &self.points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (hi[0] - lo[0]).hypot(hi[1] - lo[1])
    }
}

pub(crate) fn cubic_bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

/// Precomputed map from spline control points to a cubic Bézier chain.
#[derive(Clone, Debug)]
pub struct ConversionPipeline {
    degree: usize,
    control_count: usize,
    closed: bool,
    /// `S̄`: control points to per-segment degree-`p` Bézier points.
    pub conversion: PointMap,
    /// `R̄`: per-segment reduction to cubic.
    pub reduction: PointMap,
    /// Composed map with shared junction rows: control points to the
    /// `3·segments + 1` chain points.
    pub map: PointMap,
}

impl ConversionPipeline {
    pub fn new(degree: usize, control_count: usize, closed: bool) -> Result<Self, BezierError> {
        let reduce = reduction_block(degree, 3)?;
        let block = conversion_block(degree)?;
        if control_count <= degree {
            return Err(BezierError::DimensionMismatch {
                expected: degree + 1,
                got: control_count,
            });
        }
        let segments = control_count - degree;
        let conversion = stack_conversion(&block, segments)?;
        let reduction = stack_reduction(&reduce, segments)?;
        let full = reduction.compose(&conversion);
        // keep the first point of every segment plus the final end point;
        // the dropped rows are bit-identical duplicates of the kept ones
        let rows = (0..segments)
            .flat_map(|s| (0..3).map(move |r| 4 * s + r))
            .chain(std::iter::once(4 * segments - 1))
            .map(|r| full.row(r).collect())
            .collect();
        let map = PointMap::from_rows(control_count, rows);
        Ok(Self {
            degree,
            control_count,
            closed,
            conversion,
            reduction,
            map,
        })
    }

    pub fn for_spline(spline: &SplineCurve) -> Result<Self, BezierError> {
        Self::new(spline.degree(), spline.len(), spline.is_closed())
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn segments(&self) -> usize {
        self.control_count - self.degree
    }

    pub fn control_count(&self) -> usize {
        self.control_count
    }

    /// Applies `R̄S̄` to control points.
    pub fn to_cubic(&self, control: &[Point]) -> Result<BezierChain, BezierError> {
        if control.len() != self.control_count {
            return Err(BezierError::DimensionMismatch {
                expected: self.control_count,
                got: control.len(),
            });
        }
        BezierChain::from_points(self.map.apply(control), self.closed)
    }

    /// Gradient with respect to control points from a gradient with respect
    /// to chain points (`Mᵀ g`).
    pub fn backward(&self, grad: &[Point]) -> Result<Vec<Point>, BezierError> {
        if grad.len() != self.map.rows() {
            return Err(BezierError::DimensionMismatch {
                expected: self.map.rows(),
                got: grad.len(),
            });
        }
        Ok(self.map.apply_transpose(grad))
    }
}

/// Map from chain points to `per_segment` uniform samples per segment.
///
/// Open chains also include the final end point; closed chains omit it since
/// it coincides with the first sample.
pub fn chain_sampling_map(segments: usize, per_segment: usize, closed: bool) -> PointMap {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(segments * per_segment + 1);
    for s in 0..segments {
        for j in 0..per_segment {
            let w = cubic_bernstein(j as f64 / per_segment as f64);
            rows.push((0..4).map(|i| (3 * s + i, w[i])).collect());
        }
    }
    if !closed {
        rows.push(vec![(3 * segments, 1.0)]);
    }
    PointMap::from_rows(3 * segments + 1, rows)
}

/// Derivatives `dB/dt` at the parameters used by [`chain_sampling_map`].
pub fn chain_tangent_map(segments: usize, per_segment: usize, closed: bool) -> PointMap {
    let dw = |t: f64| {
        let s = 1.0 - t;
        [-3.0 * s * s, 3.0 * s * s - 6.0 * s * t, 6.0 * s * t - 3.0 * t * t, 3.0 * t * t]
    };
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(segments * per_segment + 1);
    for s in 0..segments {
        for j in 0..per_segment {
            let w = dw(j as f64 / per_segment as f64);
            rows.push((0..4).map(|i| (3 * s + i, w[i])).collect());
        }
    }
    if !closed {
        let w = dw(1.0);
        rows.push((0..4).map(|i| (3 * (segments - 1) + i, w[i])).collect());
    }
    PointMap::from_rows(3 * segments + 1, rows)
}

/// Largest parametric distance in `(x, y)` between a spline and its chain,
/// sampled `per_span` times on each span.
pub fn max_deviation(spline: &SplineCurve, chain: &BezierChain, per_span: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..chain.segment_count() {
        for j in 0..=per_span {
            let t = j as f64 / per_span as f64;
            let a = spline.eval(s as f64 + t).expect("parameter inside domain");
            let b = chain.eval(s, t);
            worst = worst.max((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    worst
}
