//! Loss terms and their weighted combination.
//!
//! Image-space terms return a gradient on the rendered canvas; geometric
//! terms return gradients on points directly. [`combine`] sums weighted terms
//! into one [`Gradients`] value that the engine routes back to key-points.

mod geometry;
mod image;
mod provider;

pub use geometry::{alignment_cost, bbox_loss, repulsion_loss, BoxPenalty, CurveSamples, RepulsionGrad, RepulsionParams};
pub use image::{multiscale_mse, overlap_cost, with_target_opacity};
pub use provider::{ClosureProvider, ExternalGradientProvider, ProviderOutput, SubprocessProvider, WIRE_MAGIC};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Canvas, RasterError};
use crate::spline::Point;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bounding box is inverted: min {min:?} not below max {max:?}")]
    InvertedBox { min: [f64; 2], max: [f64; 2] },
    #[error("{what} needs at least {needed} points, got {got}")]
    TooFewPoints { what: &'static str, needed: usize, got: usize },
    #[error("loss term `{term}` is not finite ({value})")]
    NonFinite { term: Term, value: f64 },
    #[error("negative weight {value} for term `{term}`")]
    NegativeWeight { term: Term, value: f64 },
    #[error("external gradient provider: {0}")]
    Provider(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Identifies a loss term in diagnostics and traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Coverage,
    Smooth,
    Box,
    Repulsion,
    Overlap,
    Alignment,
    Balance,
    External,
}

impl Term {
    pub const ALL: [Term; 8] = [
        Term::Coverage,
        Term::Smooth,
        Term::Box,
        Term::Repulsion,
        Term::Overlap,
        Term::Alignment,
        Term::Balance,
        Term::External,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Coverage => "coverage",
            Term::Smooth => "smooth",
            Term::Box => "box",
            Term::Repulsion => "repulsion",
            Term::Overlap => "overlap",
            Term::Alignment => "alignment",
            Term::Balance => "balance",
            Term::External => "external",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Relative weights `λ`; any weight left out of a config is 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub smooth: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub repulsion: f64,
    pub coverage: f64,
    pub overlap: f64,
    pub alignment: f64,
    pub balance: f64,
    pub external: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl LossWeights {
    pub fn uniform(v: f64) -> Self {
        Self {
            smooth: v,
            bbox: v,
            repulsion: v,
            coverage: v,
            overlap: v,
            alignment: v,
            balance: v,
            external: v,
        }
    }

    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Coverage => self.coverage,
            Term::Smooth => self.smooth,
            Term::Box => self.bbox,
            Term::Repulsion => self.repulsion,
            Term::Overlap => self.overlap,
            Term::Alignment => self.alignment,
            Term::Balance => self.balance,
            Term::External => self.external,
        }
    }

    pub fn set(&mut self, term: Term, v: f64) {
        match term {
            Term::Coverage => self.coverage = v,
            Term::Smooth => self.smooth = v,
            Term::Box => self.bbox = v,
            Term::Repulsion => self.repulsion = v,
            Term::Overlap => self.overlap = v,
            Term::Alignment => self.alignment = v,
            Term::Balance => self.balance = v,
            Term::External => self.external = v,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        for t in Term::ALL {
            let v = self.get(t);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ObjectiveError::NegativeWeight { term: t, value: v });
            }
        }
        Ok(())
    }
}

/// Gradient of the loss with respect to one path's parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathGrad {
    /// Spline control points (before the expansion adjoint).
    pub control: Vec<Point>,
    /// Key-points directly.
    pub keypoints: Vec<Point>,
    pub color: Vec<f64>,
    pub logits: Vec<f64>,
}

impl PathGrad {
    pub fn zeros(control: usize, keypoints: usize, channels: usize, logits: usize) -> Self {
        Self {
            control: vec![[0.0; 3]; control],
            keypoints: vec![[0.0; 3]; keypoints],
            color: vec![0.0; channels],
            logits: vec![0.0; logits],
        }
    }

    fn add_scaled(&mut self, o: &PathGrad, s: f64) {
        fn axpy3(a: &mut Vec<Point>, b: &[Point], s: f64) {
            if a.len() < b.len() {
                a.resize(b.len(), [0.0; 3]);
            }
            for (x, y) in a.iter_mut().zip(b) {
                for d in 0..3 {
                    x[d] += s * y[d];
                }
            }
        }
        fn axpy(a: &mut Vec<f64>, b: &[f64], s: f64) {
            if a.len() < b.len() {
                a.resize(b.len(), 0.0);
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        axpy3(&mut self.control, &o.control, s);
        axpy3(&mut self.keypoints, &o.keypoints, s);
        axpy(&mut self.color, &o.color, s);
        axpy(&mut self.logits, &o.logits, s);
    }
}

/// Gradients of a (partial) loss: an image-space part still to be pulled
/// back through the renderer, and per-path parts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub image: Option<Canvas>,
    pub paths: Vec<PathGrad>,
}

impl Gradients {
    pub fn image(grad: Canvas) -> Self {
        Self {
            image: Some(grad),
            paths: Vec::new(),
        }
    }

    pub fn paths(paths: Vec<PathGrad>) -> Self {
        Self { image: None, paths }
    }

    fn add_scaled(&mut self, o: &Gradients, s: f64) -> Result<(), ObjectiveError> {
        if let Some(g) = &o.image {
            match &mut self.image {
                Some(acc) => {
                    if !acc.same_shape(g) {
                        return Err(ObjectiveError::Shape("image gradients of different shapes".into()));
                    }
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a += s * b;
                    }
                }
                None => {
                    let mut scaled = g.clone();
                    scaled.data.iter_mut().for_each(|v| *v *= s);
                    self.image = Some(scaled);
                }
            }
        }
        if self.paths.len() < o.paths.len() {
            self.paths.resize(o.paths.len(), PathGrad::default());
        }
        for (a, b) in self.paths.iter_mut().zip(&o.paths) {
            a.add_scaled(b, s);
        }
        Ok(())
    }
}

/// One evaluated, unweighted loss term.
#[derive(Clone, Debug)]
pub struct TermValue {
    pub term: Term,
    pub value: f64,
    pub grad: Gradients,
}

/// Result of [`combine`].
#[derive(Clone, Debug, Default)]
pub struct Combined {
    pub total: f64,
    /// Unweighted value of every evaluated term, in input order.
    pub terms: Vec<(Term, f64)>,
    pub grad: Gradients,
}

/// `total = Σ λ_term · value`, with gradients summed the same way.
///
/// Terms with `λ = 0` contribute nothing, not even a zero gradient, so the
/// result is identical to leaving them out. A non-finite value or gradient
/// aborts with an error naming the term.
pub fn combine(terms: Vec<TermValue>, weights: &LossWeights) -> Result<Combined, ObjectiveError> {
    weights.validate()?;
    let mut out = Combined::default();
    for t in terms {
        let lambda = weights.get(t.term);
        if !t.value.is_finite() {
            return Err(ObjectiveError::NonFinite {
                term: t.term,
                value: t.value,
            });
        }
        if let Some(bad) = first_non_finite(&t.grad) {
            return Err(ObjectiveError::NonFinite { term: t.term, value: bad });
        }
        out.terms.push((t.term, t.value));
        if lambda == 0.0 {
            continue;
        }
        out.total += lambda * t.value;
        out.grad.add_scaled(&t.grad, lambda)?;
    }
    Ok(out)
}

fn first_non_finite(g: &Gradients) -> Option<f64> {
    let img = g.image.iter().flat_map(|c| c.data.iter().copied());
    let paths = g.paths.iter().flat_map(|p| {
        p.control
            .iter()
            .chain(&p.keypoints)
            .flat_map(|q| q.iter().copied())
            .chain(p.color.iter().copied())
            .chain(p.logits.iter().copied())
    });
    img.chain(paths).find(|v| !v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_term(term: Term, value: f64, g: f64) -> TermValue {
        let mut p = PathGrad::zeros(2, 1, 1, 0);
        p.control[1] = [g, -g, 0.5 * g];
        TermValue {
            term,
            value,
            grad: Gradients::paths(vec![p]),
        }
    }

    #[test]
    fn single_term_unit_weight() {
        let c = combine(vec![path_term(Term::Smooth, 2.5, 1.0)], &LossWeights::default()).unwrap();
        assert_eq!(c.total, 2.5);
        assert_eq!(c.grad.paths[0].control[1], [1.0, -1.0, 0.5]);
    }

    #[test]
    fn weight_scales_linearly_and_zero_is_omission() {
        let mut w = LossWeights::default();
        w.repulsion = 3.0;
        let c = combine(vec![path_term(Term::Smooth, 1.0, 1.0), path_term(Term::Repulsion, 2.0, 2.0)], &w).unwrap();
        assert_eq!(c.total, 7.0);
        assert_eq!(c.grad.paths[0].control[1][0], 7.0);

        w.repulsion = 0.0;
        let with = combine(vec![path_term(Term::Smooth, 1.0, 0.3), path_term(Term::Repulsion, 2.0, 2.0)], &w).unwrap();
        let without = combine(vec![path_term(Term::Smooth, 1.0, 0.3)], &w).unwrap();
        assert_eq!(with.total.to_bits(), without.total.to_bits());
        assert_eq!(with.grad, without.grad);
    }

    #[test]
    fn nan_names_the_term() {
        let err = combine(vec![path_term(Term::Box, f64::NAN, 0.0)], &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("`box`"), "{err}");
        let err = combine(vec![path_term(Term::Alignment, 1.0, f64::INFINITY)], &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("alignment"));
        let mut w = LossWeights::default();
        w.smooth = -1.0;
        assert!(matches!(combine(vec![], &w), Err(ObjectiveError::NegativeWeight { .. })));
    }
}
