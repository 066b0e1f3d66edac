//! Sparse linear maps acting on lists of points.
//!
//! Every map in the pipeline (key-point padding, B-spline to Bézier
//! conversion, degree reduction, sampling) has the Kronecker form `W ⊗ I_D`:
//! a scalar weight matrix applied identically to every coordinate of a point.
//! [`PointMap`] stores `W` in compressed-row form and applies it to slices of
//! `[f64; D]`, so the coordinate dimension never appears in the matrix itself.

/// Compressed-row scalar matrix applied coordinate-wise to point lists.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl PointMap {
    /// Builds a map from per-row `(column, weight)` lists.
    ///
    /// Entries that are exactly zero are dropped; repeated columns within a
    /// row are summed in the order given.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = indices.len();
            for (c, w) in row {
                assert!(c < cols, "column {c} out of range for {cols} columns");
                if indices.len() > start && *indices.last().unwrap() == c {
                    *weights.last_mut().unwrap() += w;
                } else {
                    indices.push(c);
                    weights.push(w);
                }
            }
            // drop exact zeros, including ones produced by summation
            let mut keep = start;
            for i in start..indices.len() {
                if weights[i] != 0.0 {
                    indices[keep] = indices[i];
                    weights[keep] = weights[i];
                    keep += 1;
                }
            }
            indices.truncate(keep);
            weights.truncate(keep);
            indptr.push(indices.len());
        }
        Self {
            rows: indptr.len() - 1,
            cols,
            indptr,
            indices,
            weights,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, w)| w).sum()).collect()
    }

    /// `out[r] = Σ_c W[r][c] · x[c]`, coordinate-wise.
    pub fn apply<const D: usize>(&self, x: &[[f64; D]]) -> Vec<[f64; D]> {
        assert_eq!(x.len(), self.cols, "point count does not match map columns");
        (0..self.rows)
            .map(|r| {
                let mut acc = [0.0; D];
                for (c, w) in self.row(r) {
                    for d in 0..D {
                        acc[d] += w * x[c][d];
                    }
                }
                acc
            })
            .collect()
    }

    /// `out[c] = Σ_r W[r][c] · g[r]`, the adjoint of [`apply`](Self::apply).
    pub fn apply_transpose<const D: usize>(&self, g: &[[f64; D]]) -> Vec<[f64; D]> {
        assert_eq!(g.len(), self.rows, "gradient count does not match map rows");
        let mut out = vec![[0.0; D]; self.cols];
        for (r, gr) in g.iter().enumerate() {
            for (c, w) in self.row(r) {
                for d in 0..D {
                    out[c][d] += w * gr[d];
                }
            }
        }
        out
    }

    /// Returns `self ∘ inner`, i.e. the map `x ↦ self(inner(x))`.
    pub fn compose(&self, inner: &PointMap) -> PointMap {
        assert_eq!(self.cols, inner.rows, "incompatible map shapes");
        let mut scratch = vec![0.0; inner.cols];
        let mut touched: Vec<usize> = Vec::new();
        let rows = (0..self.rows)
            .map(|r| {
                for (k, w) in self.row(r) {
                    for (c, v) in inner.row(k) {
                        if scratch[c] == 0.0 && !touched.contains(&c) {
                            touched.push(c);
                        }
                        scratch[c] += w * v;
                    }
                }
                touched.sort_unstable();
                let row = touched.iter().map(|&c| (c, scratch[c])).collect();
                for &c in &touched {
                    scratch[c] = 0.0;
                }
                touched.clear();
                row
            })
            .collect();
        PointMap::from_rows(inner.cols, rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, w) in self.row(r) {
                row[c] += w;
            }
        }
        out
    }
}

/// Flattens points into a coordinate-major-within-point vector `[x0,y0,w0,x1,...]`.
pub fn flatten<const D: usize>(points: &[[f64; D]]) -> Vec<f64> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn unflatten<const D: usize>(flat: &[f64]) -> Vec<[f64; D]> {
    assert_eq!(flat.len() % D, 0);
    flat.chunks_exact(D)
        .map(|c| {
            let mut p = [0.0; D];
            p.copy_from_slice(c);
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_matches_dense_product() {
        let a = PointMap::from_rows(3, vec![vec![(0, 1.0), (2, 2.0)], vec![(1, -1.0)]]);
        let b = PointMap::from_rows(2, vec![vec![(0, 1.0)], vec![(0, 0.5), (1, 0.5)], vec![(1, 3.0)]]);
        let ab = a.compose(&b).to_dense();
        assert_eq!(ab, vec![vec![1.0, 6.0], vec![-0.5, -0.5]]);
    }

    #[test]
    fn zero_entries_dropped() {
        let m = PointMap::from_rows(3, vec![vec![(0, 1.0), (1, 0.0), (0, -1.0), (2, 4.0)]]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(2, 4.0)]);
    }

    #[test]
    fn transpose_is_adjoint() {
        let m = PointMap::from_rows(3, vec![vec![(0, 0.25), (2, 0.75)], vec![(1, 1.0)]]);
        let x = [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let g = [[2.0, 1.0], [-1.0, 4.0]];
        let mx = m.apply(&x);
        let mtg = m.apply_transpose(&g);
        let lhs: f64 = mx.iter().zip(&g).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum();
        let rhs: f64 = x.iter().zip(&mtg).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
