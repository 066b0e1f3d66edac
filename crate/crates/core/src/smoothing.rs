//! Minimum-square-derivative smoothing.
//!
//! The cost `(1/T) ∫ ‖x^{(d)}(u)‖² du` over the evaluation domain is a
//! quadratic form `cᵀ(G ⊗ I₃)c / T` in the control points. `G` is either the
//! exact Gramian of basis derivatives or the P-spline approximation `DᵀD`.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spline::{binomial, span_derivative_weights, Point, SplineCurve};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothingError {
    #[error("derivative order {d} invalid for order-{k} spline (need 1 <= d <= k-1)")]
    DerivativeOrder { d: usize, k: usize },
    #[error("{n} points are too few, need at least {needed}")]
    TooFewPoints { n: usize, needed: usize },
    #[error("expected {expected} control points, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimensionless jerk needs at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimensionless jerk is undefined for a zero-length path")]
    ZeroLength,
    #[error("sample spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GramMode {
    #[default]
    Exact,
    Pspline,
}

/// Precomputed smoothing matrix `G` with its normalization span `T`.
///
/// `G` is stored dense; its size is the number of points it acts on. For
/// closed curves that is the period (the unique control points) and the
/// trailing wrap copies are ignored by [`smooth_cost`].
#[derive(Clone, Debug, PartialEq)]
pub struct GramOperator {
    g: Vec<f64>,
    dim: usize,
    wrap: usize,
    d: usize,
    span: f64,
    mode: GramMode,
    closed: bool,
}

impl GramOperator {
    /// Operator matching a spline's control-point layout.
    pub fn for_spline(spline: &SplineCurve, d: usize, mode: GramMode) -> Result<Self, SmoothingError> {
        let n = spline.len();
        let p = spline.degree();
        let closed = spline.is_closed();
        match mode {
            GramMode::Exact => gram_exact(spline.order(), d, n, closed),
            GramMode::Pspline => {
                let mut op = if closed {
                    gram_pspline(d, n - p, true)?
                } else {
                    gram_pspline(d, n, false)?
                };
                if closed {
                    op.wrap = p;
                }
                Ok(op)
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.dim + j]
    }

    /// Number of points `G` acts on.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Control points expected by [`smooth_cost`].
    pub fn control_count(&self) -> usize {
        self.dim + self.wrap
    }

    pub fn derivative_order(&self) -> usize {
        self.d
    }

    /// Normalization span `T`.
    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn mode(&self) -> GramMode {
        self.mode
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.g.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `G x`, coordinate-wise.
    fn apply(&self, x: &[Point]) -> Vec<Point> {
        let mut out = vec![[0.0; 3]; self.dim];
        for (i, row) in self.g.chunks(self.dim).enumerate() {
            for (j, &gij) in row.iter().enumerate() {
                if gij != 0.0 {
                    for d in 0..3 {
                        out[i][d] += gij * x[j][d];
                    }
                }
            }
        }
        out
    }
}

/// Exact Gramian of `d`-th basis derivatives for `n` control points.
///
/// Every unit span contributes the same `k×k` local block
/// `L_ab = ∫₀¹ w_a^{(d)}(x) w_b^{(d)}(x) dx`, integrated with `k`-point
/// Gauss-Legendre (exact for the degree `2(k-1-d)` integrand). Open curves
/// sum the block over the `n - p` spans of the evaluation domain, which is the
/// same as subtracting the rest-phase integrals outside it. Closed curves add
/// it cyclically over the period `N = n - p`, giving a circulant `N×N` matrix.
pub fn gram_exact(k: usize, d: usize, n: usize, closed: bool) -> Result<GramOperator, SmoothingError> {
    if d == 0 || d >= k {
        return Err(SmoothingError::DerivativeOrder { d, k });
    }
    if n < k {
        return Err(SmoothingError::TooFewPoints { n, needed: k });
    }
    let p = k - 1;
    let spans = n - p;
    let local = local_block(k, d);
    let dim = if closed { spans } else { n };
    let mut g = vec![0.0; dim * dim];
    for s in 0..spans {
        for a in 0..k {
            for b in 0..k {
                let (i, j) = if closed {
                    ((s + a) % dim, (s + b) % dim)
                } else {
                    (s + a, s + b)
                };
                g[i * dim + j] += local[a * k + b];
            }
        }
    }
    Ok(GramOperator {
        g,
        dim,
        wrap: if closed { p } else { 0 },
        d,
        span: spans as f64,
        mode: GramMode::Exact,
        closed,
    })
}

fn local_block(k: usize, d: usize) -> Vec<f64> {
    let quad = GaussLegendre::new(NonZeroUsize::new(k).expect("order is positive"));
    let mut out = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let v = quad.integrate(0.0, 1.0, |x| {
                let w = span_derivative_weights(k, d, x);
                w[a] * w[b]
            });
            out[a * k + b] = v;
            out[b * k + a] = v;
        }
    }
    out
}

/// P-spline penalty `G = DᵀD` for the order-`d` forward-difference matrix.
///
/// Open: `D` is `(n-d)×n`. Closed: `D` is the `n×n` circulant difference.
/// `T` is the number of rows of `D`.
pub fn gram_pspline(d: usize, n: usize, closed: bool) -> Result<GramOperator, SmoothingError> {
    if d == 0 {
        return Err(SmoothingError::DerivativeOrder { d, k: 0 });
    }
    if n <= d {
        return Err(SmoothingError::TooFewPoints { n, needed: d + 1 });
    }
    let rows = if closed { n } else { n - d };
    let coeffs: Vec<f64> = (0..=d)
        .map(|l| if (d - l) % 2 == 0 { binomial(d, l) } else { -binomial(d, l) })
        .collect();
    let mut g = vec![0.0; n * n];
    for r in 0..rows {
        for (a, ca) in coeffs.iter().enumerate() {
            for (b, cb) in coeffs.iter().enumerate() {
                let i = (r + a) % n;
                let j = (r + b) % n;
                g[i * n + j] += ca * cb;
            }
        }
    }
    Ok(GramOperator {
        g,
        dim: n,
        wrap: 0,
        d,
        span: rows as f64,
        mode: GramMode::Pspline,
        closed,
    })
}

/// `(cᵀḠc / T, 2Ḡc / T)`. The gradient has one entry per input point; wrap
/// copies of a closed curve receive zero.
pub fn smooth_cost(c: &[Point], op: &GramOperator) -> Result<(f64, Vec<Point>), SmoothingError> {
    if c.len() != op.control_count() {
        return Err(SmoothingError::DimensionMismatch {
            expected: op.control_count(),
            got: c.len(),
        });
    }
    let x = &c[..op.dim];
    let gx = op.apply(x);
    let value: f64 = x
        .iter()
        .zip(&gx)
        .map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
        .sum::<f64>()
        / op.span;
    let scale = 2.0 / op.span;
    let mut grad: Vec<Point> = gx.iter().map(|g| [scale * g[0], scale * g[1], scale * g[2]]).collect();
    grad.resize(c.len(), [0.0; 3]);
    Ok((value.max(0.0), grad))
}

/// Dimensionless jerk of a uniformly sampled planar path.
///
/// Jerk is the third difference over `dt³`; its squared magnitude is
/// integrated with the rectangle rule and scaled by `duration⁵ / length²`.
pub fn dimensionless_jerk(samples: &[[f64; 2]], dt: f64) -> Result<f64, SmoothingError> {
    if samples.len() < 4 {
        return Err(SmoothingError::TooFewSamples(samples.len()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SmoothingError::InvalidSpacing(dt));
    }
    let length: f64 = samples
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum();
    if length <= 0.0 {
        return Err(SmoothingError::ZeroLength);
    }
    let dt3 = dt * dt * dt;
    let integral: f64 = samples
        .windows(4)
        .map(|w| {
            let jx = (w[3][0] - 3.0 * w[2][0] + 3.0 * w[1][0] - w[0][0]) / dt3;
            let jy = (w[3][1] - 3.0 * w[2][1] + 3.0 * w[1][1] - w[0][1]) / dt3;
            (jx * jx + jy * jy) * dt
        })
        .sum();
    let duration = (samples.len() - 1) as f64 * dt;
    Ok(integral * duration.powi(5) / (length * length))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
    }

    #[test]
    fn linear_hat_derivatives() {
        // k=2: derivative weights on a span are (-1, +1), so the local block
        // is [[1,-1],[-1,1]] and the open Gramian is the path Laplacian
        let op = gram_exact(2, 1, 5, false).unwrap();
        let expect = [
            [1.0, -1.0, 0.0, 0.0, 0.0],
            [-1.0, 2.0, -1.0, 0.0, 0.0],
            [0.0, -1.0, 2.0, -1.0, 0.0],
            [0.0, 0.0, -1.0, 2.0, -1.0],
            [0.0, 0.0, 0.0, -1.0, 1.0],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert!((op.get(i, j) - expect[i][j]).abs() < 1e-14);
            }
        }
        assert_eq!(op.span(), 4.0);
    }

    #[test]
    fn pspline_first_difference() {
        let op = gram_pspline(1, 3, false).unwrap();
        assert_eq!(op.to_dense(), vec![vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]);
        assert_eq!(op.span(), 2.0);
        assert!(matches!(gram_pspline(3, 3, false), Err(SmoothingError::TooFewPoints { .. })));
    }

    #[test]
    fn pspline_annihilates_low_degree() {
        for d in 1..=4 {
            let op = gram_pspline(d, 12, false).unwrap();
            for deg in 0..d {
                let c: Vec<Point> = (0..12).map(|i| {
                    let t = i as f64;
                    [t.powi(deg as i32), 2.0 * t.powi(deg as i32) - 1.0, 0.5]
                }).collect();
                let (v, _) = smooth_cost(&c, &op).unwrap();
                assert!(v.abs() < 1e-6, "d={d} deg={deg}: {v}");
            }
        }
    }

    #[test]
    fn exact_nullspace_polynomials() {
        for k in 2..=6 {
            for d in 1..k {
                let op = gram_exact(k, d, 3 * k, false).unwrap();
                for deg in 0..d {
                    let c: Vec<Point> = (0..3 * k).map(|i| {
                        let t = i as f64 / 4.0;
                        [t.powi(deg as i32), -t.powi(deg as i32), 1.0]
                    }).collect();
                    let (v, _) = smooth_cost(&c, &op).unwrap();
                    assert!(v.abs() < 1e-9, "k={k} d={d} deg={deg}: {v}");
                }
            }
        }
    }

    #[test]
    fn order_errors() {
        assert!(matches!(gram_exact(4, 4, 10, false), Err(SmoothingError::DerivativeOrder { .. })));
        assert!(matches!(gram_exact(4, 0, 10, false), Err(SmoothingError::DerivativeOrder { .. })));
        assert!(matches!(gram_exact(6, 3, 5, false), Err(SmoothingError::TooFewPoints { .. })));
    }

    #[test]
    fn banded_symmetric_circulant() {
        let k = 6;
        let op = gram_exact(k, 3, 40, false).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(op.get(i, j), op.get(j, i));
                if i.abs_diff(j) >= k {
                    assert_eq!(op.get(i, j), 0.0);
                }
            }
        }
        let closed = gram_exact(k, 3, 25, true).unwrap();
        let n = closed.dim();
        assert_eq!(n, 20);
        for i in 0..n {
            for j in 0..n {
                assert!((closed.get(i, j) - closed.get(0, (j + n - i) % n)).abs() < 1e-15);
            }
        }
        let ps = gram_pspline(2, 9, true).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(ps.get(i, j), ps.get(0, (j + 9 - i) % 9));
            }
        }
    }

    /// Adaptive Simpson integration of ‖x^{(d)}‖² using the derivative
    /// spline directly.
    fn adaptive_energy(s: &SplineCurve, d: usize) -> f64 {
        let ds = s.derivative(d).unwrap();
        let f = |u: f64| {
            let v = ds.eval(u).unwrap();
            v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        };
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let mut total = 0.0;
        // integrate span by span: the integrand is only piecewise smooth
        for span in 0..s.spans() {
            let (a, b) = (span as f64, span as f64 + 1.0);
            // stay strictly inside the span so eval picks the right piece
            let (a, b) = (a + 1e-13, b - 1e-13);
            let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            total += simpson(&f, a, b, fa, fm, fb, whole, 1e-12, 30);
        }
        total
    }

    #[test]
    fn exact_matches_adaptive_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for closed in [false, true] {
            for _ in 0..10 {
                let mut c = random_points(&mut rng, 12);
                if closed {
                    for j in 0..5 {
                        c.push(c[j]);
                    }
                }
                let s = SplineCurve::new(c.clone(), 5, closed).unwrap();
                let op = GramOperator::for_spline(&s, 3, GramMode::Exact).unwrap();
                let (v, _) = smooth_cost(&c, &op).unwrap();
                let oracle = adaptive_energy(&s, 3) / op.span();
                assert!((v - oracle).abs() <= 1e-6 * oracle, "{v} vs {oracle}");
            }
        }
    }

    #[test]
    fn cost_gradient_and_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let op = gram_exact(6, 3, 15, false).unwrap();
        let c = random_points(&mut rng, 15);
        let (v, g) = smooth_cost(&c, &op).unwrap();
        let h = 1e-5;
        for i in 0..15 {
            for d in 0..3 {
                let mut a = c.clone();
                let mut b = c.clone();
                a[i][d] += h;
                b[i][d] -= h;
                let fd = (smooth_cost(&a, &op).unwrap().0 - smooth_cost(&b, &op).unwrap().0) / (2.0 * h);
                assert!((fd - g[i][d]).abs() <= 1e-8 * g[i][d].abs().max(1.0));
            }
        }
        let doubled: Vec<Point> = c.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect();
        let (v2, _) = smooth_cost(&doubled, &op).unwrap();
        assert!((v2 - 4.0 * v).abs() < 1e-12 * v2);
        let (z, gz) = smooth_cost(&vec![[0.0; 3]; 15], &op).unwrap();
        assert_eq!(z, 0.0);
        assert!(gz.iter().all(|p| *p == [0.0; 3]));
        assert!(matches!(smooth_cost(&c[1..], &op), Err(SmoothingError::DimensionMismatch { .. })));
    }

    #[test]
    fn closed_wrap_copies_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut c = random_points(&mut rng, 8);
        for j in 0..3 {
            c.push(c[j]);
        }
        let s = SplineCurve::new(c.clone(), 3, true).unwrap();
        for mode in [GramMode::Exact, GramMode::Pspline] {
            let op = GramOperator::for_spline(&s, 2, mode).unwrap();
            assert_eq!(op.control_count(), 11);
            let (_, g) = smooth_cost(&c, &op).unwrap();
            assert!(g[8..].iter().all(|p| *p == [0.0; 3]));
        }
    }

    #[test]
    fn jerk_metric() {
        let line: Vec<[f64; 2]> = (0..50).map(|i| [i as f64 * 0.3, 1.0 - i as f64 * 0.1]).collect();
        assert!(dimensionless_jerk(&line, 0.02).unwrap() < 1e-12);
        let wave: Vec<[f64; 2]> = (0..80).map(|i| {
            let t = i as f64 / 79.0;
            [t, (6.0 * t).sin() * 0.2]
        }).collect();
        let scaled: Vec<[f64; 2]> = wave.iter().map(|p| [7.5 * p[0], 7.5 * p[1]]).collect();
        let a = dimensionless_jerk(&wave, 1.0 / 79.0).unwrap();
        let b = dimensionless_jerk(&scaled, 1.0 / 79.0).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-9 * a);
        // also independent of the time unit
        let c = dimensionless_jerk(&wave, 3.0 / 79.0).unwrap();
        assert!((a - c).abs() < 1e-9 * a);
        assert!(matches!(dimensionless_jerk(&wave[..3], 0.1), Err(SmoothingError::TooFewSamples(3))));
        assert!(matches!(dimensionless_jerk(&[[1.0, 1.0]; 5], 0.1), Err(SmoothingError::ZeroLength)));
    }
}
