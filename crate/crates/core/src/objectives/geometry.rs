use serde::{Deserialize, Serialize};

use super::ObjectiveError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxPenalty {
    #[default]
    Relu,
    Softplus,
}

impl BoxPenalty {
    /// `φ(x)` and `φ'(x)`.
    fn eval(self, x: f64) -> (f64, f64) {
        match self {
            BoxPenalty::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            BoxPenalty::Softplus => {
                let sig = 1.0 / (1.0 + (-x).exp());
                (x.max(0.0) + (-x.abs()).exp().ln_1p(), sig)
            }
        }
    }
}

/// `Σ_i 1ᵀ[φ(b_min - p_i) + φ(p_i - b_max)]`.
pub fn bbox_loss(
    points: &[[f64; 2]],
    b_min: [f64; 2],
    b_max: [f64; 2],
    phi: BoxPenalty,
) -> Result<(f64, Vec<[f64; 2]>), ObjectiveError> {
    if !(b_min[0] < b_max[0] && b_min[1] < b_max[1]) {
        return Err(ObjectiveError::InvertedBox { min: b_min, max: b_max });
    }
    let mut value = 0.0;
    let grad = points
        .iter()
        .map(|p| {
            let mut g = [0.0; 2];
            for d in 0..2 {
                let (lo, dlo) = phi.eval(b_min[d] - p[d]);
                let (hi, dhi) = phi.eval(p[d] - b_max[d]);
                value += lo + hi;
                g[d] = dhi - dlo;
            }
            g
        })
        .collect();
    Ok((value, grad))
}

/// Samples of one curve: positions and (unnormalized) tangents.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSamples {
    pub points: Vec<[f64; 2]>,
    /// `dx/du` at each sample.
    pub tangents: Vec<[f64; 2]>,
    /// Parameter step `Δu` between samples; the arc-length element of sample
    /// `i` is `|t_i|·Δu`.
    pub spacing: f64,
    /// Closed curves measure index distance cyclically. The samples must not
    /// repeat the first point at the end.
    pub closed: bool,
}

/// Tangent-point kernel `k_ij = |P_{t_i⊥}(x_i - x_j)|^{2a} / (|x_i - x_j|² + ε)^b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepulsionParams {
    /// Half the numerator exponent (1 gives the squared projected distance).
    pub alpha: f64,
    /// Half the denominator exponent (2 gives the fourth power of distance).
    pub beta: f64,
    /// Pairs with index distance up to this many samples are skipped.
    pub window: usize,
    /// Regularizer added to squared distances.
    pub epsilon: f64,
    /// Weight each pair by `ℓ_i ℓ_j`, the arc-length elements. With the
    /// default exponents this makes the energy scale-invariant, so it shapes
    /// curves without inflating them. `false` gives the bare sum `Σ k_ij`.
    pub length_weighted: bool,
}

impl Default for RepulsionParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            window: 2,
            epsilon: 1e-6,
            length_weighted: true,
        }
    }
}

/// Gradients of the repulsion energy for one curve.
#[derive(Clone, Debug, PartialEq)]
pub struct RepulsionGrad {
    pub points: Vec<[f64; 2]>,
    pub tangents: Vec<[f64; 2]>,
}

/// Self-repulsion energy `Σ_c Σ_{i,j} k_ij ℓ_i ℓ_j` summed over curves;
/// pairs from different curves never interact, and pairs closer than the
/// window along the curve are skipped.
pub fn repulsion_loss(curves: &[CurveSamples], params: &RepulsionParams) -> Result<(f64, Vec<RepulsionGrad>), ObjectiveError> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(curves.len());
    for c in curves {
        let n = c.points.len();
        if n < 3 {
            return Err(ObjectiveError::TooFewPoints {
                what: "repulsion curve",
                needed: 3,
                got: n,
            });
        }
        if c.tangents.len() != n {
            return Err(ObjectiveError::Shape(format!("{} tangents for {} samples", c.tangents.len(), n)));
        }
        let tlen: Vec<f64> = c.tangents.iter().map(|t| t[0].hypot(t[1])).collect();
        let unit: Vec<[f64; 2]> = c
            .tangents
            .iter()
            .zip(&tlen)
            .map(|(t, &l)| if l > 1e-12 { [t[0] / l, t[1] / l] } else { [0.0; 2] })
            .collect();
        let ell: Vec<f64> = if params.length_weighted {
            tlen.iter().map(|l| l * c.spacing).collect()
        } else {
            vec![1.0; n]
        };
        let mut gp = vec![[0.0; 2]; n];
        let mut g_unit = vec![[0.0; 2]; n];
        let mut g_ell = vec![0.0; n];
        for i in 0..n {
            let that = unit[i];
            for j in 0..n {
                let gap = i.abs_diff(j);
                let gap = if c.closed { gap.min(n - gap) } else { gap };
                if gap <= params.window {
                    continue;
                }
                let w = ell[i] * ell[j];
                let v = [c.points[i][0] - c.points[j][0], c.points[i][1] - c.points[j][1]];
                let vv = v[0] * v[0] + v[1] * v[1];
                let s = that[0] * v[0] + that[1] * v[1];
                let p = (vv - s * s).max(0.0);
                let q = vv + params.epsilon;
                let qb = q.powf(params.beta);
                let pa = p.powf(params.alpha);
                let k = pa / qb;
                total += k * w;
                g_ell[i] += k * ell[j];
                g_ell[j] += k * ell[i];
                let de_dp = if p > 0.0 { w * params.alpha * pa / p / qb } else { 0.0 };
                let de_dq = -w * params.beta * pa / (qb * q);
                for d in 0..2 {
                    let gv = de_dp * (2.0 * v[d] - 2.0 * s * that[d]) + de_dq * 2.0 * v[d];
                    gp[i][d] += gv;
                    gp[j][d] -= gv;
                    g_unit[i][d] += de_dp * (-2.0 * s * v[d]);
                }
            }
        }
        let mut gt = vec![[0.0; 2]; n];
        for i in 0..n {
            if tlen[i] <= 1e-12 {
                continue;
            }
            let u = unit[i];
            // through normalization: (I - t̂t̂ᵀ) g / |t|
            let dot = g_unit[i][0] * u[0] + g_unit[i][1] * u[1];
            let dl = if params.length_weighted { g_ell[i] * c.spacing } else { 0.0 };
            for d in 0..2 {
                gt[i][d] = (g_unit[i][d] - dot * u[d]) / tlen[i] + dl * u[d];
            }
        }
        grads.push(RepulsionGrad { points: gp, tangents: gt });
    }
    Ok((total, grads))
}

/// `Σ |θ_i|` over the turning angles of an ordered polyline of centers.
///
/// Angles at a vertex touching a (near) zero-length edge are skipped.
pub fn alignment_cost(centers: &[[f64; 2]]) -> Result<(f64, Vec<[f64; 2]>), ObjectiveError> {
    if centers.len() < 3 {
        return Err(ObjectiveError::TooFewPoints {
            what: "alignment",
            needed: 3,
            got: centers.len(),
        });
    }
    const EPS: f64 = 1e-12;
    let mut value = 0.0;
    let mut grad = vec![[0.0; 2]; centers.len()];
    for i in 1..centers.len() - 1 {
        let e1 = [centers[i][0] - centers[i - 1][0], centers[i][1] - centers[i - 1][1]];
        let e2 = [centers[i + 1][0] - centers[i][0], centers[i + 1][1] - centers[i][1]];
        let (l1, l2) = (e1[0] * e1[0] + e1[1] * e1[1], e2[0] * e2[0] + e2[1] * e2[1]);
        if l1 < EPS || l2 < EPS {
            continue;
        }
        let theta = (e1[0] * e2[1] - e1[1] * e2[0]).atan2(e1[0] * e2[0] + e1[1] * e2[1]);
        value += theta.abs();
        let sign = if theta > 0.0 {
            1.0
        } else if theta < 0.0 {
            -1.0
        } else {
            0.0
        };
        // θ = angle(e2) - angle(e1)
        let d1 = [e1[1] / l1, -e1[0] / l1];
        let d2 = [-e2[1] / l2, e2[0] / l2];
        for d in 0..2 {
            grad[i - 1][d] -= sign * d1[d];
            grad[i][d] += sign * (d1[d] - d2[d]);
            grad[i + 1][d] += sign * d2[d];
        }
    }
    Ok((value, grad))
}
