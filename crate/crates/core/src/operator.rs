//! Linear measurement operators `A(X) = (<A_1, X>, ..., <A_m, X>)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_mismatch, Result};
use crate::spectral::{Matrix, Vector};

/// A linear map from `rows x cols` matrices to `R^m`.
///
/// `Explicit` keeps every `A_i` as one row of a dense `m x (rows*cols)`
/// matrix in column-major vectorization. `Mask` samples entries; when
/// `symmetric` is set the `k`-th functional is `(E_ij + E_ji) / 2`, which
/// reads `X_ij` on symmetric inputs and keeps the adjoint exact on all inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingOperator {
    Explicit {
        rows: usize,
        cols: usize,
        #[serde(with = "dense_rows")]
        data: Matrix,
    },
    Mask {
        rows: usize,
        cols: usize,
        indices: Vec<(usize, usize)>,
        #[serde(default)]
        symmetric: bool,
    },
}

impl SamplingOperator {
    /// Builds the explicit variant from a list of sensing matrices.
    pub fn explicit(rows: usize, cols: usize, mats: &[Matrix]) -> Result<Self> {
        let mut data = Matrix::zeros(mats.len(), rows * cols);
        for (i, a) in mats.iter().enumerate() {
            if a.nrows() != rows || a.ncols() != cols {
                return Err(shape_mismatch(
                    format!("{rows}x{cols}"),
                    format!("{}x{}", a.nrows(), a.ncols()),
                ));
            }
            for (k, v) in a.iter().enumerate() {
                data[(i, k)] = *v;
            }
        }
        Ok(Self::Explicit { rows, cols, data })
    }

    /// Builds the explicit variant from an `m x (rows*cols)` matrix whose
    /// rows are column-major vectorizations of the `A_i`.
    pub fn from_dense(rows: usize, cols: usize, data: Matrix) -> Result<Self> {
        if data.ncols() != rows * cols {
            return Err(shape_mismatch(rows * cols, data.ncols()));
        }
        Ok(Self::Explicit { rows, cols, data })
    }

    pub fn mask(rows: usize, cols: usize, indices: Vec<(usize, usize)>) -> Result<Self> {
        let op = Self::Mask { rows, cols, indices, symmetric: false };
        op.validate()?;
        Ok(op)
    }

    /// Entry sampler on symmetric matrices. Indices are normalized to the
    /// upper triangle.
    pub fn symmetric_mask(n: usize, indices: Vec<(usize, usize)>) -> Result<Self> {
        let indices = indices
            .into_iter()
            .map(|(i, j)| if i <= j { (i, j) } else { (j, i) })
            .collect();
        let op = Self::Mask { rows: n, cols: n, indices, symmetric: true };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Explicit { rows, cols, data } => {
                if data.ncols() != rows * cols {
                    return Err(shape_mismatch(rows * cols, data.ncols()));
                }
                if !data.iter().all(|v| v.is_finite()) {
                    return Err(invalid("sensing matrices contain non-finite entries"));
                }
            }
            Self::Mask { rows, cols, indices, symmetric } => {
                if *symmetric && rows != cols {
                    return Err(invalid("symmetric mask requires a square shape"));
                }
                let mut seen = std::collections::HashSet::with_capacity(indices.len());
                for &(i, j) in indices {
                    if i >= *rows || j >= *cols {
                        return Err(invalid(format!("mask index ({i},{j}) out of range")));
                    }
                    if *symmetric && i > j {
                        return Err(invalid("symmetric mask indices must be upper triangular"));
                    }
                    if !seen.insert((i, j)) {
                        return Err(invalid(format!("duplicate mask index ({i},{j})")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Explicit { rows, cols, .. } | Self::Mask { rows, cols, .. } => (*rows, *cols),
        }
    }

    /// Number of measurements `m`.
    pub fn len(&self) -> usize {
        match self {
            Self::Explicit { data, .. } => data.nrows(),
            Self::Mask { indices, .. } => indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_shape(&self, x: &Matrix) -> Result<()> {
        let (r, c) = self.shape();
        if x.nrows() != r || x.ncols() != c {
            return Err(shape_mismatch(
                format!("{r}x{c}"),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Matrix) -> Result<Vector> {
        self.check_shape(x)?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &Matrix) -> Vector {
        match self {
            Self::Explicit { data, .. } => {
                let v = nalgebra::DVectorView::from_slice(x.as_slice(), x.len());
                data * v
            }
            Self::Mask { indices, symmetric, .. } => {
                Vector::from_iterator(
                    indices.len(),
                    indices.iter().map(|&(i, j)| {
                        if *symmetric && i != j {
                            0.5 * (x[(i, j)] + x[(j, i)])
                        } else {
                            x[(i, j)]
                        }
                    }),
                )
            }
        }
    }

    pub fn adjoint_apply(&self, y: &Vector) -> Result<Matrix> {
        if y.len() != self.len() {
            return Err(shape_mismatch(self.len(), y.len()));
        }
        let (r, c) = self.shape();
        let mut out = Matrix::zeros(r, c);
        self.adjoint_accumulate(y.as_slice(), &mut out);
        Ok(out)
    }

    /// `out += A^*(y)` without shape checks.
    pub(crate) fn adjoint_accumulate(&self, y: &[f64], out: &mut Matrix) {
        match self {
            Self::Explicit { data, .. } => {
                let yv = nalgebra::DVectorView::from_slice(y, y.len());
                let len = out.len();
                let mut ov = nalgebra::DVectorViewMut::from_slice(out.as_mut_slice(), len);
                ov.gemv_tr(1.0, data, &yv, 1.0);
            }
            Self::Mask { indices, symmetric, .. } => {
                for (&(i, j), &v) in indices.iter().zip(y) {
                    if *symmetric && i != j {
                        out[(i, j)] += 0.5 * v;
                        out[(j, i)] += 0.5 * v;
                    } else {
                        out[(i, j)] += v;
                    }
                }
            }
        }
    }

    /// Sparse representation of the `k`-th functional of a mask operator as
    /// `(column-major position, coefficient)` pairs.
    fn sparse_row(&self, k: usize) -> Vec<(usize, f64)> {
        match self {
            Self::Mask { rows, indices, symmetric, .. } => {
                let (i, j) = indices[k];
                if *symmetric && i != j {
                    vec![(i + j * rows, 0.5), (j + i * rows, 0.5)]
                } else {
                    vec![(i + j * rows, 1.0)]
                }
            }
            Self::Explicit { .. } => unreachable!("sparse_row on explicit operator"),
        }
    }

    /// Gram block `G[k, l] = <A_k, B_l>` between the functionals of two
    /// operators on the same shape.
    pub fn gram(&self, other: &SamplingOperator) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(match (self, other) {
            (Self::Explicit { data: a, .. }, Self::Explicit { data: b, .. }) => a * b.transpose(),
            (Self::Explicit { data, .. }, mask @ Self::Mask { .. }) => {
                let mut g = Matrix::zeros(data.nrows(), mask.len());
                for l in 0..mask.len() {
                    for (pos, coef) in mask.sparse_row(l) {
                        let col = data.column(pos);
                        let mut dst = g.column_mut(l);
                        dst.axpy(coef, &col, 1.0);
                    }
                }
                g
            }
            (Self::Mask { .. }, Self::Explicit { .. }) => other.gram(self)?.transpose(),
            (Self::Mask { .. }, Self::Mask { .. }) => {
                let mut by_pos: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
                for l in 0..other.len() {
                    for (pos, coef) in other.sparse_row(l) {
                        by_pos.entry(pos).or_default().push((l, coef));
                    }
                }
                let mut g = Matrix::zeros(self.len(), other.len());
                for k in 0..self.len() {
                    for (pos, coef) in self.sparse_row(k) {
                        if let Some(hits) = by_pos.get(&pos) {
                            for &(l, c2) in hits {
                                g[(k, l)] += coef * c2;
                            }
                        }
                    }
                }
                g
            }
        })
    }
}

/// Serializes the dense operator payload row by row; each row holds the
/// column-major vectorization of one `A_i`.
mod dense_rows {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Payload {
        rows: usize,
        cols: usize,
        values: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(data: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let values = data.row_iter().map(|r| r.iter().copied().collect()).collect();
        Payload { rows: data.nrows(), cols: data.ncols(), values }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let p = Payload::deserialize(d)?;
        if p.values.len() != p.rows || p.values.iter().any(|r| r.len() != p.cols) {
            return Err(serde::de::Error::custom("ragged operator payload"));
        }
        Ok(Matrix::from_fn(p.rows, p.cols, |i, j| p.values[i][j]))
    }
}
