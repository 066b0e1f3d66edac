//! Cardinal (uniform, unit-spaced) B-splines built from key-points.
//!
//! A curve is specified through key-points `(x, y, w)` where `w` is the stroke
//! radius. Key-points are expanded into control points by repeating entries:
//! open curves repeat the first and last key-point `k - 1` extra times so the
//! motion starts and ends at rest, closed curves append the first `k - 1`
//! expanded key-points. The knot vector is always `-p, ..., n` with unit
//! spacing and is never optimized, so every map from key-points to curve
//! samples is a fixed linear map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::PointMap;

/// A control or key-point: `[x, y, radius]`.
pub type Point = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("invalid B-spline order {0}, must be at least 1")]
    InvalidOrder(usize),
    #[error("{got} key-points cannot define a {kind} curve, at least {needed} required")]
    UnderDetermined {
        kind: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("multiplicity list has {got} entries for {expected} key-points")]
    MultiplicityCount { expected: usize, got: usize },
    #[error("multiplicity of key-point {index} must be at least 1")]
    ZeroMultiplicity { index: usize },
    #[error("parameter {u} outside evaluation domain [{lo}, {hi}]")]
    OutOfDomain { u: f64, lo: f64, hi: f64 },
    #[error("derivative order {d} not supported for order-{k} spline (need 1 <= d <= k-1)")]
    DerivativeOrder { d: usize, k: usize },
    #[error("sample count {0} too small, need at least 2")]
    TooFewSamples(usize),
}

/// Value of the cardinal B-spline basis `N_k(u)` (support `[0, k)`).
///
/// Evaluated with the Cox-de Boor recursion specialised to integer knots:
/// `N_k(u) = (u N_{k-1}(u) + (k - u) N_{k-1}(u - 1)) / (k - 1)`.
pub fn cardinal_basis(k: usize, u: f64) -> Result<f64, SplineError> {
    if k < 1 {
        return Err(SplineError::InvalidOrder(k));
    }
    Ok(cardinal(k, u))
}

pub(crate) fn cardinal(k: usize, u: f64) -> f64 {
    if !(0.0..k as f64).contains(&u) {
        return 0.0;
    }
    // vals[j] = N_r(u - j) for the current order r
    let mut vals = vec![0.0; k + 1];
    let span = u.floor() as usize;
    vals[span] = 1.0;
    for r in 2..=k {
        let rf = r as f64;
        for j in 0..k {
            let v = u - j as f64;
            vals[j] = (v * vals[j] + (rf - v) * vals[j + 1]) / (rf - 1.0);
        }
    }
    vals[0]
}

/// Weights of the `k` bases active on one unit span, at local parameter
/// `x ∈ [0, 1]` (closed on both ends).
///
/// Entry `j` multiplies control point `c_{s+j}` when evaluating span `s`, i.e.
/// it equals `N_k(x + k - 1 - j)`.
pub(crate) fn span_weights(k: usize, x: f64) -> Vec<f64> {
    let mut b = vec![0.0; k];
    b[0] = 1.0;
    for r in 2..=k {
        let rf = r as f64;
        for j in (0..r).rev() {
            let left = if j >= 1 { b[j - 1] } else { 0.0 };
            let right = if j < r - 1 { b[j] } else { 0.0 };
            b[j] = ((x + rf - 1.0 - j as f64) * left + (1.0 - x + j as f64) * right) / (rf - 1.0);
        }
    }
    b
}

/// Weights of the `d`-th derivative on one span: entry `j` multiplies
/// `c_{s+j}`, `j = 0..k`.
pub(crate) fn span_derivative_weights(k: usize, d: usize, x: f64) -> Vec<f64> {
    debug_assert!(d < k);
    let lower = span_weights(k - d, x);
    let mut out = vec![0.0; k];
    // x^{(d)} on the span is Σ_j (Δ^d c)_{s+j} N_{k-d}-weights; expand Δ^d.
    for (j, &b) in lower.iter().enumerate() {
        for l in 0..=d {
            let sign = if (d - l) % 2 == 0 { 1.0 } else { -1.0 };
            out[j + l] += sign * binomial(d, l) * b;
        }
    }
    out
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// User-facing curve specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyPointPath {
    pub keypoints: Vec<Point>,
    #[serde(default)]
    pub closed: bool,
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multiplicities: Vec<usize>,
}

impl KeyPointPath {
    pub fn new(keypoints: Vec<Point>, closed: bool, degree: usize) -> Self {
        Self {
            keypoints,
            closed,
            degree,
            multiplicities: Vec::new(),
        }
    }

    pub fn with_multiplicities(mut self, multiplicities: Vec<usize>) -> Self {
        self.multiplicities = multiplicities;
        self
    }

    pub fn order(&self) -> usize {
        self.degree + 1
    }

    /// Multiplicity of key-point `i` (1 when no list is given).
    pub fn multiplicity(&self, i: usize) -> usize {
        self.multiplicities.get(i).copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), SplineError> {
        if self.degree < 1 {
            return Err(SplineError::InvalidOrder(self.order().saturating_sub(1)));
        }
        if !self.multiplicities.is_empty() && self.multiplicities.len() != self.keypoints.len() {
            return Err(SplineError::MultiplicityCount {
                expected: self.keypoints.len(),
                got: self.multiplicities.len(),
            });
        }
        if let Some(index) = self.multiplicities.iter().position(|&m| m == 0) {
            return Err(SplineError::ZeroMultiplicity { index });
        }
        let expanded = self.expanded_len();
        let (kind, needed) = if self.closed { ("closed", 3) } else { ("open", 2) };
        if expanded < needed {
            return Err(SplineError::UnderDetermined {
                kind,
                needed,
                got: expanded,
            });
        }
        Ok(())
    }

    fn expanded_len(&self) -> usize {
        (0..self.keypoints.len()).map(|i| self.multiplicity(i)).sum()
    }

    /// Number of control points after padding or wrapping.
    pub fn control_count(&self) -> usize {
        let p = self.degree;
        let e = self.expanded_len();
        if self.closed {
            e + p
        } else {
            e + 2 * p
        }
    }

    /// The fixed linear map from key-points to control points.
    pub fn expansion_map(&self) -> Result<PointMap, SplineError> {
        self.validate()?;
        let p = self.degree;
        let mut expanded: Vec<usize> = Vec::with_capacity(self.expanded_len());
        for i in 0..self.keypoints.len() {
            expanded.extend(std::iter::repeat_n(i, self.multiplicity(i)));
        }
        let mut source: Vec<usize> = Vec::with_capacity(self.control_count());
        if self.closed {
            source.extend_from_slice(&expanded);
            // cyclic wrap also covers paths shorter than k - 1
            source.extend((0..p).map(|j| expanded[j % expanded.len()]));
        } else {
            source.extend(std::iter::repeat_n(expanded[0], p));
            source.extend_from_slice(&expanded);
            source.extend(std::iter::repeat_n(*expanded.last().unwrap(), p));
        }
        Ok(PointMap::from_rows(
            self.keypoints.len(),
            source.into_iter().map(|i| vec![(i, 1.0)]).collect(),
        ))
    }

    /// Copy with every multiplicity set to `r`.
    pub fn expand_multiplicity(&self, r: usize) -> Self {
        let mut out = self.clone();
        out.multiplicities = if r == 1 { Vec::new() } else { vec![r; self.keypoints.len()] };
        out
    }
}

/// A cardinal B-spline with knots `t_i = i - p`, `i = 0..n+k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineCurve {
    control: Vec<Point>,
    degree: usize,
    closed: bool,
}

impl SplineCurve {
    pub fn new(control: Vec<Point>, degree: usize, closed: bool) -> Result<Self, SplineError> {
        if degree < 1 {
            return Err(SplineError::InvalidOrder(degree + 1));
        }
        if control.len() < degree + 1 {
            return Err(SplineError::UnderDetermined {
                kind: if closed { "closed" } else { "open" },
                needed: degree + 1,
                got: control.len(),
            });
        }
        Ok(Self {
            control,
            degree,
            closed,
        })
    }

    pub fn control_points(&self) -> &[Point] {
        &self.control
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn order(&self) -> usize {
        self.degree + 1
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn len(&self) -> usize {
        self.control.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control.is_empty()
    }

    /// Number of polynomial spans in the evaluation domain.
    pub fn spans(&self) -> usize {
        self.control.len() - self.degree
    }

    pub fn knots(&self) -> Vec<f64> {
        let p = self.degree as i64;
        (0..(self.control.len() + self.order()) as i64)
            .map(|i| (i - p) as f64)
            .collect()
    }

    /// Evaluation domain `[t_{k-1}, t_{m-k}] = [0, n - p]`.
    pub fn domain(&self) -> (f64, f64) {
        (0.0, self.spans() as f64)
    }

    fn locate(&self, u: f64) -> Result<(usize, f64), SplineError> {
        let (lo, hi) = self.domain();
        let slack = 1e-12 * hi.max(1.0);
        if !(u >= lo - slack && u <= hi + slack) {
            return Err(SplineError::OutOfDomain { u, lo, hi });
        }
        let u = u.clamp(lo, hi);
        let span = (u.floor() as usize).min(self.spans() - 1);
        Ok((span, u - span as f64))
    }

    pub fn eval(&self, u: f64) -> Result<Point, SplineError> {
        let (span, x) = self.locate(u)?;
        let w = span_weights(self.order(), x);
        let mut out = [0.0; 3];
        for (j, wj) in w.iter().enumerate() {
            let c = self.control[span + j];
            for d in 0..3 {
                out[d] += wj * c[d];
            }
        }
        Ok(out)
    }

    /// The derivative of order `d` as a spline of order `k - d`.
    ///
    /// With unit knot spacing the new control points are plain `d`-th forward
    /// differences; the knot vector keeps the canonical form so the
    /// evaluation domain is unchanged.
    pub fn derivative(&self, d: usize) -> Result<SplineCurve, SplineError> {
        if d == 0 || d >= self.order() {
            return Err(SplineError::DerivativeOrder { d, k: self.order() });
        }
        let mut pts = self.control.clone();
        for _ in 0..d {
            pts = pts
                .windows(2)
                .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]])
                .collect();
        }
        Ok(SplineCurve {
            control: pts,
            degree: self.degree - d,
            closed: self.closed,
        })
    }

    /// Convenience for `derivative(d)?.eval(u)`.
    pub fn eval_derivative(&self, d: usize, u: f64) -> Result<Point, SplineError> {
        if d == 0 {
            return self.eval(u);
        }
        self.derivative(d)?.eval(u)
    }
}

/// Builds the spline for a key-point path.
pub fn build_spline(path: &KeyPointPath) -> Result<SplineCurve, SplineError> {
    let map = path.expansion_map()?;
    SplineCurve::new(map.apply(&path.keypoints), path.degree, path.closed)
}

/// Fixed linear map from control points to curve samples.
#[derive(Clone, Debug)]
pub struct SamplingMap {
    pub map: PointMap,
    pub params: Vec<f64>,
}

impl SamplingMap {
    /// Samples `samples` parameters uniformly over `[0, spans]`.
    ///
    /// Open curves include both domain ends. Closed curves stop one step short
    /// of the end since it coincides with the start.
    pub fn new(degree: usize, n: usize, closed: bool, samples: usize) -> Result<Self, SplineError> {
        Self::derivative(degree, n, closed, samples, 0)
    }

    /// Map from control points to samples of the `d`-th derivative.
    pub fn derivative(
        degree: usize,
        n: usize,
        closed: bool,
        samples: usize,
        d: usize,
    ) -> Result<Self, SplineError> {
        if samples < 2 {
            return Err(SplineError::TooFewSamples(samples));
        }
        let k = degree + 1;
        if d >= k {
            return Err(SplineError::DerivativeOrder { d, k });
        }
        if n < k {
            return Err(SplineError::UnderDetermined {
                kind: if closed { "closed" } else { "open" },
                needed: k,
                got: n,
            });
        }
        let spans = n - degree;
        let denom = if closed { samples } else { samples - 1 } as f64;
        let params: Vec<f64> = (0..samples).map(|s| spans as f64 * s as f64 / denom).collect();
        let rows = params
            .iter()
            .map(|&u| {
                let span = (u.floor() as usize).min(spans - 1);
                let x = u - span as f64;
                let w = if d == 0 { span_weights(k, x) } else { span_derivative_weights(k, d, x) };
                w.into_iter().enumerate().map(|(j, wj)| (span + j, wj)).collect()
            })
            .collect();
        Ok(Self {
            map: PointMap::from_rows(n, rows),
            params,
        })
    }

    pub fn samples(&self) -> usize {
        self.params.len()
    }

    pub fn apply(&self, control: &[Point]) -> Vec<Point> {
        self.map.apply(control)
    }
}

/// Sampling map for a spline; see [`SamplingMap::new`].
pub fn sampling_map(spline: &SplineCurve, samples: usize) -> Result<SamplingMap, SplineError> {
    SamplingMap::new(spline.degree(), spline.len(), spline.is_closed(), samples)
}

/// Default sample count: 8 per polynomial span (plus the end point for open curves).
pub fn default_sample_count(spans: usize, closed: bool) -> usize {
    8 * spans + usize::from(!closed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive Cox-de Boor on integer knots, kept independent of
    /// the iterative implementation.
    fn cox_de_boor(i: i64, k: usize, u: f64) -> f64 {
        let ti = i as f64;
        if k == 1 {
            return if ti <= u && u < ti + 1.0 { 1.0 } else { 0.0 };
        }
        let kf = (k - 1) as f64;
        (u - ti) / kf * cox_de_boor(i, k - 1, u) + (ti + k as f64 - u) / kf * cox_de_boor(i + 1, k - 1, u)
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    #[test]
    fn basis_examples() {
        assert_eq!(cardinal_basis(1, 0.5).unwrap(), 1.0);
        assert!((cardinal_basis(2, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let expected = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
        for (u, e) in [1.0, 2.0, 3.0].iter().zip(expected) {
            assert!((cardinal_basis(4, *u).unwrap() - e).abs() < 1e-15);
            assert!((cox_de_boor(0, 4, *u) - e).abs() < 1e-15);
        }
        assert!(matches!(cardinal_basis(0, 0.5), Err(SplineError::InvalidOrder(0))));
        assert_eq!(cardinal_basis(3, -0.1).unwrap(), 0.0);
        assert_eq!(cardinal_basis(3, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn basis_matches_recursive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let k = rng.random_range(1..=8);
            let u = rng.random_range(-1.0..(k as f64 + 1.0));
            let got = cardinal(k, u);
            assert!((got - cox_de_boor(0, k, u)).abs() < 1e-13, "k={k} u={u}");
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn span_weights_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let k = rng.random_range(1..=8);
            let x: f64 = rng.random();
            let s: f64 = span_weights(k, x).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // span weights agree with shifted bases
        for k in 1..=7 {
            for &x in &[0.0, 0.3, 0.999] {
                let w = span_weights(k, x);
                for (j, wj) in w.iter().enumerate() {
                    assert!((wj - cardinal(k, x + (k - 1 - j) as f64)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn construction_counts() {
        let open = KeyPointPath::new(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]], false, 3);
        let s = build_spline(&open).unwrap();
        assert_eq!(s.len(), 8);
        let knots = s.knots();
        assert_eq!(knots.len(), 12);
        assert_eq!(knots[0], -3.0);
        assert_eq!(*knots.last().unwrap(), 8.0);
        assert_eq!(s.domain(), (0.0, 5.0));

        let closed = KeyPointPath::new((0..5).map(|i| [i as f64, 0.0, 0.0]).collect(), true, 5);
        assert_eq!(build_spline(&closed).unwrap().len(), 10);

        let mut kp: Vec<Point> = (0..4).map(|i| [i as f64, (i * i) as f64, 1.0]).collect();
        kp[1][2] = 7.0;
        let path = KeyPointPath::new(kp, false, 5).with_multiplicities(vec![1, 3, 1, 1]);
        let s = build_spline(&path).unwrap();
        let slots: Vec<usize> = s
            .control_points()
            .iter()
            .enumerate()
            .filter(|(_, c)| c[2] == 7.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(slots, vec![6, 7, 8]);
    }

    #[test]
    fn construction_errors() {
        let one = KeyPointPath::new(vec![[0.0; 3]], false, 3);
        assert!(matches!(build_spline(&one), Err(SplineError::UnderDetermined { .. })));
        let two = KeyPointPath::new(vec![[0.0; 3], [1.0; 3]], true, 3);
        assert!(matches!(build_spline(&two), Err(SplineError::UnderDetermined { .. })));
        let bad = KeyPointPath::new(vec![[0.0; 3], [1.0; 3]], false, 3).with_multiplicities(vec![1, 0]);
        assert!(matches!(build_spline(&bad), Err(SplineError::ZeroMultiplicity { index: 1 })));
        let short = KeyPointPath::new(vec![[0.0; 3], [1.0; 3]], false, 3).with_multiplicities(vec![1]);
        assert!(matches!(build_spline(&short), Err(SplineError::MultiplicityCount { .. })));
    }

    #[test]
    fn open_curve_rests_on_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [3usize, 5] {
            let kp = random_points(&mut rng, 6);
            let s = build_spline(&KeyPointPath::new(kp.clone(), false, p)).unwrap();
            let (lo, hi) = s.domain();
            let a = s.eval(lo).unwrap();
            let b = s.eval(hi).unwrap();
            for d in 0..3 {
                assert!((a[d] - kp[0][d]).abs() < 1e-12);
                assert!((b[d] - kp[5][d]).abs() < 1e-12);
            }
            for order in 1..p {
                for u in [lo, hi] {
                    let v = s.eval_derivative(order, u).unwrap();
                    assert!(v.iter().all(|c| c.abs() < 1e-9), "p={p} d={order} u={u} {v:?}");
                }
            }
        }
    }

    #[test]
    fn closed_curve_seam() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in [3usize, 5] {
            let s = build_spline(&KeyPointPath::new(random_points(&mut rng, 7), true, p)).unwrap();
            let (lo, hi) = s.domain();
            for d in 0..p {
                let a = s.eval_derivative(d, lo).unwrap();
                let b = s.eval_derivative(d, hi).unwrap();
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() < 1e-9, "p={p} d={d}");
                }
            }
        }
    }

    /// One-sided evaluation of the `d`-th derivative on a given span, so
    /// knot limits are exact rather than finite-difference approximations.
    fn eval_on_span(s: &SplineCurve, d: usize, span: usize, x: f64) -> Point {
        let w = span_derivative_weights(s.order(), d, x);
        let mut out = [0.0; 3];
        for (j, wj) in w.iter().enumerate() {
            for c in 0..3 {
                out[c] += wj * s.control_points()[span + j][c];
            }
        }
        out
    }

    #[test]
    fn interior_knot_continuity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [3usize, 5] {
            let s = SplineCurve::new(random_points(&mut rng, 12), p, false).unwrap();
            for knot in 1..s.spans() {
                for d in 0..p {
                    let left = eval_on_span(&s, d, knot - 1, 1.0);
                    let right = eval_on_span(&s, d, knot, 0.0);
                    for c in 0..3 {
                        assert!((left[c] - right[c]).abs() < 1e-9, "p={p} d={d} knot={knot}");
                    }
                }
            }
        }
    }

    /// Maximum curvature, and minimum speed away from the end spans.
    fn curvature_profile(s: &SplineCurve) -> (f64, f64) {
        let (lo, hi) = s.domain();
        let mut max_k: f64 = 0.0;
        let mut min_speed = f64::INFINITY;
        for i in 1..4000 {
            let u = lo + (hi - lo) * i as f64 / 4000.0;
            let v = s.eval_derivative(1, u).unwrap();
            let a = s.eval_derivative(2, u).unwrap();
            let speed = v[0].hypot(v[1]);
            // the rest phases at both ends stop the curve by construction
            if u > lo + 1.5 && u < hi - 1.5 {
                min_speed = min_speed.min(speed);
            }
            if speed > 1e-6 {
                max_k = max_k.max((v[0] * a[1] - v[1] * a[0]).abs() / speed.powi(3));
            }
        }
        (max_k, min_speed)
    }

    #[test]
    fn multiplicity_degrades_geometric_continuity() {
        // parametric continuity stays C^{k-2}; repetition lowers geometric
        // continuity: curvature at the corner grows with r and at r = p the
        // curve stops on the key-point and the tangent turns (a true corner,
        // with straight legs on either side).
        let kp = vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [10.0, 10.0, 0.0]];
        for p in [3usize, 5] {
            let mut curvatures = Vec::new();
            for r in 1..=p {
                let path = KeyPointPath::new(kp.clone(), false, p).with_multiplicities(vec![1, r, 1]);
                let s = build_spline(&path).unwrap();
                let (k, speed) = curvature_profile(&s);
                if r < p {
                    curvatures.push(k);
                    assert!(speed > 1e-3, "p={p} r={r} speed={speed}");
                    continue;
                }
                // copies sit in control slots p+1..=2p; at knot u the weights
                // fall on slots u..u+p-1, so the corner is u = p + 1
                let corner = (p + 1) as f64;
                let at = s.eval(corner).unwrap();
                assert!((at[0] - 10.0).abs() < 1e-9 && at[1].abs() < 1e-9, "{at:?}");
                assert!(s.eval_derivative(1, corner).unwrap().iter().all(|c| c.abs() < 1e-9));
                let before = s.eval_derivative(1, corner - 1e-3).unwrap();
                let after = s.eval_derivative(1, corner + 1e-3).unwrap();
                let cos = (before[0] * after[0] + before[1] * after[1])
                    / (before[0].hypot(before[1]) * after[0].hypot(after[1]));
                assert!(cos < 0.9, "tangent should turn at the corner, cos={cos}");
            }
            assert!(curvatures.windows(2).all(|w| w[1] > w[0]), "p={p}: {curvatures:?}");
        }
    }

    #[test]
    fn derivative_examples() {
        let constant = SplineCurve::new(vec![[2.0, 3.0, 1.0]; 8], 5, false).unwrap();
        let d1 = constant.derivative(1).unwrap();
        assert!(d1.control_points().iter().all(|c| *c == [0.0; 3]));

        let line = SplineCurve::new((0..8).map(|i| [i as f64, 2.0 * i as f64, 0.5]).collect(), 5, false).unwrap();
        assert!(line.derivative(2).unwrap().control_points().iter().all(|c| *c == [0.0; 3]));
        assert!(matches!(line.derivative(6), Err(SplineError::DerivativeOrder { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let s = SplineCurve::new(random_points(&mut rng, 10), 5, false).unwrap();
            let u0 = rng.random_range(0.3..4.7);
            let h = 1e-5;
            let a = s.eval(u0 + h).unwrap();
            let b = s.eval(u0 - h).unwrap();
            let exact = s.eval_derivative(1, u0).unwrap();
            let norm = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in 0..3 {
                let fd = (a[c] - b[c]) / (2.0 * h);
                assert!((fd - exact[c]).abs() / norm.max(1e-3) < 1e-6);
            }
        }
    }

    #[test]
    fn eval_domain_error() {
        let s = SplineCurve::new(vec![[0.0; 3]; 6], 3, false).unwrap();
        assert!(matches!(s.eval(3.5), Err(SplineError::OutOfDomain { .. })));
        assert!(matches!(s.eval(-0.1), Err(SplineError::OutOfDomain { .. })));
        assert!(s.eval(3.0).is_ok());
    }

    #[test]
    fn sampling_map_reproduces_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let p = if trial % 2 == 0 { 3 } else { 5 };
            let closed = trial % 3 == 0;
            let n = rng.random_range(p + 1..p + 20);
            let s = SplineCurve::new(random_points(&mut rng, n), p, closed).unwrap();
            let samples = rng.random_range(2..60);
            let map = sampling_map(&s, samples).unwrap();
            let out = map.apply(s.control_points());
            for (u, pt) in map.params.iter().zip(&out) {
                let e = s.eval(*u).unwrap();
                for c in 0..3 {
                    assert!((pt[c] - e[c]).abs() < 1e-12);
                }
            }
            for r in map.map.row_sums() {
                assert!((r - 1.0).abs() < 1e-12);
            }
            for r in 0..map.map.rows() {
                assert!(map.map.row(r).count() <= p + 1);
            }
        }
        assert!(matches!(SamplingMap::new(3, 6, false, 1), Err(SplineError::TooFewSamples(1))));
    }

    #[test]
    fn sampling_map_constant_and_adjoint() {
        let map = SamplingMap::new(5, 12, false, 40).unwrap();
        let c = vec![[1.5, -2.0, 0.25]; 12];
        assert!(map.apply(&c).iter().all(|p| p.iter().zip(&c[0]).all(|(a, b)| (a - b).abs() < 1e-14)));

        // transpose chain vs finite differences of Σ g · eval
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ctrl = random_points(&mut rng, 12);
        let g = random_points(&mut rng, 40);
        let objective = |c: &[Point]| -> f64 {
            map.apply(c).iter().zip(&g).map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).sum()
        };
        let grad = map.map.apply_transpose(&g);
        let h = 1e-3;
        for i in 0..12 {
            for d in 0..3 {
                let mut plus = ctrl.clone();
                let mut minus = ctrl.clone();
                plus[i][d] += h;
                minus[i][d] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                assert!((fd - grad[i][d]).abs() < 1e-9, "{fd} vs {}", grad[i][d]);
            }
        }
    }

    #[test]
    fn derivative_sampling_matches_derivative_spline() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = SplineCurve::new(random_points(&mut rng, 11), 5, false).unwrap();
        for d in 1..=4 {
            let map = SamplingMap::derivative(5, 11, false, 33, d).unwrap();
            let out = map.apply(s.control_points());
            for (u, pt) in map.params.iter().zip(&out) {
                let e = s.eval_derivative(d, *u).unwrap();
                for c in 0..3 {
                    assert!((pt[c] - e[c]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn expansion_multiplicity_counts() {
        let path = KeyPointPath::new(vec![[0.0; 3], [1.0; 3], [2.0; 3]], false, 5);
        assert_eq!(path.expand_multiplicity(1), path);
        let r3 = path.expand_multiplicity(3);
        assert_eq!(r3.control_count() - 2 * 5, 9);
    }
}
