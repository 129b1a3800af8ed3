use super::{DiffError, Tensor};

/// Constant compressed-sparse-row matrix used for neighbour aggregation and
/// segment sums. It never carries a gradient itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, DiffError> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(DiffError::IndexOutOfBounds {
                    op: "sparse",
                    index: r.max(c),
                    bound: if r >= rows { rows } else { cols },
                });
            }
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut entries in per_row {
            entries.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in entries {
                if last == Some(c) {
                    *values.last_mut().expect("entry exists") += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn matmul(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        if self.cols != x.rows() {
            return Err(DiffError::ShapeMismatch {
                op: "sparse_matmul",
                left: (self.rows, self.cols),
                right: x.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, x.cols());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let src = x.row(c).to_vec();
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * g`, the adjoint of [`SparseMatrix::matmul`].
    pub fn transpose_matmul(&self, g: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(self.cols, g.cols());
        for r in 0..self.rows {
            let grow = g.row(r).to_vec();
            for (c, v) in self.row(r) {
                for (o, s) in out.row_mut(c).iter_mut().zip(&grow) {
                    *o += v * s;
                }
            }
        }
        out
    }
}
