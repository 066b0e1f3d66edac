//! Quantized coloring with Gumbel-Softmax relaxation.
//!
//! Every area carries logits over a fixed palette. During optimization its
//! color is the soft mixture `aᵀV` with `a = softmax((ℓ + g) / τ)` and Gumbel
//! noise `g`; the temperature decays geometrically. Export uses the argmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Canvas;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PaletteError {
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("invalid temperature schedule: start {start}, end {end}, step {step} of {total}")]
    Schedule { start: f64, end: f64, step: usize, total: usize },
    #[error("palette needs at least 2 colors, got {0}")]
    TooFewColors(usize),
    #[error("invalid hex color {0:?}")]
    Hex(String),
    #[error("{got} logits for a palette of {expected}")]
    LogitCount { expected: usize, got: usize },
    #[error("cannot extract {k} colors from an image with {pixels} pixels")]
    Extraction { k: usize, pixels: usize },
}

/// Default Gumbel noise scale.
pub const DEFAULT_GUMBEL_SCALE: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[f64; 3]>,
}

impl Palette {
    pub fn new(colors: Vec<[f64; 3]>) -> Result<Self, PaletteError> {
        if colors.len() < 2 {
            return Err(PaletteError::TooFewColors(colors.len()));
        }
        Ok(Self { colors })
    }

    /// Parses comma-separated `#rrggbb` (or `rrggbb`, or `#rgb`) entries.
    pub fn from_hex_list(list: &str) -> Result<Self, PaletteError> {
        let colors = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(parse_hex)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(colors)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn to_hex(&self) -> Vec<String> {
        self.colors.iter().map(|c| to_hex(*c)).collect()
    }
}

pub fn parse_hex(s: &str) -> Result<[f64; 3], PaletteError> {
    let h = s.strip_prefix('#').unwrap_or(s);
    let expanded: String = match h.len() {
        3 => h.chars().flat_map(|c| [c, c]).collect(),
        6 => h.to_owned(),
        _ => return Err(PaletteError::Hex(s.to_owned())),
    };
    let mut out = [0.0; 3];
    for (i, v) in out.iter_mut().enumerate() {
        let byte = u8::from_str_radix(&expanded[2 * i..2 * i + 2], 16).map_err(|_| PaletteError::Hex(s.to_owned()))?;
        *v = f64::from(byte) / 255.0;
    }
    Ok(out)
}

pub fn to_hex(c: [f64; 3]) -> String {
    let b = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    format!("#{:02x}{:02x}{:02x}", b[0], b[1], b[2])
}

/// Result of a soft assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    /// Assignment weights on the simplex.
    pub weights: Vec<f64>,
    /// `aᵀV`.
    pub color: [f64; 3],
    /// Temperature used, kept for the backward pass.
    pub tau: f64,
}

impl SoftAssignment {
    /// Logit gradient from a gradient on the weights:
    /// `∂L/∂ℓ = a ⊙ (g - aᵀg) / τ`. The noise does not depend on `ℓ`.
    pub fn logits_grad(&self, g_weights: &[f64]) -> Vec<f64> {
        let dot: f64 = self.weights.iter().zip(g_weights).map(|(a, g)| a * g).sum();
        self.weights.iter().zip(g_weights).map(|(a, g)| a * (g - dot) / self.tau).collect()
    }

    /// Weight gradient from a gradient on the soft color: `V g`.
    pub fn weights_grad_from_color(palette: &Palette, g_color: &[f64; 3]) -> Vec<f64> {
        palette
            .colors
            .iter()
            .map(|v| v[0] * g_color[0] + v[1] * g_color[1] + v[2] * g_color[2])
            .collect()
    }
}

/// Gumbel(0, β) sample via `-β ln(-ln U)`.
pub fn gumbel<R: Rng>(rng: &mut R, beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    // U in (0, 1): avoid both logs blowing up
    let u: f64 = rng.random::<f64>().clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    -beta * (-u.ln()).ln()
}

/// Deterministic per-area noise stream for step `step`.
pub fn area_rng(seed: u64, step: usize, area: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 32) ^ area as u64);
    rng
}

/// `a = softmax((ℓ + g)/τ)` with `g ~ Gumbel(0, β)`, and `aᵀV`.
pub fn soft_assign<R: Rng>(
    logits: &[f64],
    palette: &Palette,
    tau: f64,
    beta: f64,
    rng: &mut R,
) -> Result<SoftAssignment, PaletteError> {
    if !(tau > 0.0) {
        return Err(PaletteError::Temperature(tau));
    }
    if logits.len() != palette.len() {
        return Err(PaletteError::LogitCount {
            expected: palette.len(),
            got: logits.len(),
        });
    }
    let z: Vec<f64> = logits.iter().map(|l| (l + gumbel(rng, beta)) / tau).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    let mut color = [0.0; 3];
    for (w, v) in weights.iter().zip(&palette.colors) {
        for d in 0..3 {
            color[d] += w * v[d];
        }
    }
    Ok(SoftAssignment { weights, color, tau })
}

/// `λ_K ‖mean_i a_i - 1/K‖²` and its gradient with respect to every `a_i`.
pub fn balance_reg(assignments: &[Vec<f64>], lambda: f64) -> (f64, Vec<Vec<f64>>) {
    if assignments.is_empty() {
        return (0.0, Vec::new());
    }
    let k = assignments[0].len();
    let n = assignments.len() as f64;
    let mut dev = vec![-1.0 / k as f64; k];
    for a in assignments {
        for (d, v) in dev.iter_mut().zip(a) {
            *d += v / n;
        }
    }
    let value = lambda * dev.iter().map(|d| d * d).sum::<f64>();
    let g: Vec<f64> = dev.iter().map(|d| lambda * 2.0 * d / n).collect();
    (value, vec![g; assignments.len()])
}

/// `τ_start (τ_end/τ_start)^{step/total}`.
pub fn anneal_temperature(step: usize, total: usize, tau_start: f64, tau_end: f64) -> Result<f64, PaletteError> {
    if !(tau_end > 0.0 && tau_start >= tau_end && step <= total && total > 0) {
        return Err(PaletteError::Schedule {
            start: tau_start,
            end: tau_end,
            step,
            total,
        });
    }
    if step == total {
        return Ok(tau_end);
    }
    Ok(tau_start * (tau_end / tau_start).powf(step as f64 / total as f64))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// `V[argmax ℓ]`.
pub fn hard_assign(logits: &[f64], palette: &Palette) -> [f64; 3] {
    palette.colors[argmax(logits)]
}

/// `k` dominant colors by k-means (20 Lloyd iterations, k-means++ seeding).
pub fn extract_palette(image: &Canvas, k: usize, seed: u64) -> Result<Palette, PaletteError> {
    let rgb = image.with_channels(3).expect("3 channels is valid");
    let pixels: Vec<[f64; 3]> = rgb.data.chunks(3).map(|p| [p[0], p[1], p[2]]).collect();
    if k < 2 || pixels.len() < k {
        return Err(PaletteError::Extraction { k, pixels: pixels.len() });
    }
    let dist2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![pixels[rng.random_range(0..pixels.len())]];
    while centers.len() < k {
        let d: Vec<f64> = pixels
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total == 0.0 {
            centers.push(pixels[rng.random_range(0..pixels.len())]);
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = pixels.len() - 1;
        for (i, v) in d.iter().enumerate() {
            if r < *v {
                pick = i;
                break;
            }
            r -= v;
        }
        centers.push(pixels[pick]);
    }
    for _ in 0..20 {
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for p in &pixels {
            let (best, _) = centers
                .iter()
                .enumerate()
                .map(|(i, c)| (i, dist2(p, c)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            counts[best] += 1;
            for d in 0..3 {
                sums[best][d] += p[d];
            }
        }
        for i in 0..k {
            if counts[i] > 0 {
                centers[i] = sums[i].map(|s| s / counts[i] as f64);
            }
        }
    }
    Palette::new(centers)
}
