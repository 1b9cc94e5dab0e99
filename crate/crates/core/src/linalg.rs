//! Small dense helpers shared by identification and control.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// R factor of a tall matrix fed in row blocks: `R'R = M'M` for the rows pushed so far.
pub struct IncrementalQr {
    ncols: usize,
    r: DMatrix<f64>,
    pending: Vec<f64>,
    pending_rows: usize,
    chunk: usize,
}

impl IncrementalQr {
    pub fn new(ncols: usize) -> Self {
        IncrementalQr {
            ncols,
            r: DMatrix::zeros(0, ncols),
            pending: Vec::new(),
            pending_rows: 0,
            chunk: (4 * ncols).max(256),
        }
    }

    /// Appends one row (length `ncols`).
    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.ncols);
        self.pending.extend_from_slice(row);
        self.pending_rows += 1;
        if self.pending_rows >= self.chunk {
            self.flush();
        }
    }

    pub fn push_rows(&mut self, m: &DMatrix<f64>) {
        let mut row = vec![0.0; self.ncols];
        for i in 0..m.nrows() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
            self.push_row(&row);
        }
    }

    fn flush(&mut self) {
        if self.pending_rows == 0 {
            return;
        }
        let top = self.r.nrows();
        let rows = top + self.pending_rows;
        let mut m = DMatrix::zeros(rows, self.ncols);
        m.rows_mut(0, top).copy_from(&self.r);
        let block = DMatrix::from_row_slice(self.pending_rows, self.ncols, &self.pending);
        m.rows_mut(top, self.pending_rows).copy_from(&block);
        let r = m.qr().r();
        self.r = r;
        self.pending.clear();
        self.pending_rows = 0;
    }

    /// Upper-triangular factor with `min(rows, ncols)` rows.
    pub fn finish(mut self) -> DMatrix<f64> {
        self.flush();
        self.r
    }
}

/// Least squares `min |R x - rhs|` with column equilibration and an SVD
/// cutoff relative to the largest singular value.
pub fn lstsq(r: &DMatrix<f64>, rhs: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let scale: DVector<f64> = DVector::from_iterator(
        r.ncols(),
        r.column_iter().map(|c| {
            let n = c.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        }),
    );
    let mut rs = r.clone();
    for (j, mut c) in rs.column_iter_mut().enumerate() {
        c /= scale[j];
    }
    let svd = rs.svd(true, true);
    let smax = svd.singular_values.max();
    let sol = svd
        .solve(rhs, rcond * smax)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut out = sol;
    for (j, mut row) in out.row_iter_mut().enumerate() {
        row /= scale[j];
    }
    Ok(out)
}

/// Column means and (population) standard deviations of a `T x k` matrix.
pub fn column_stats(m: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let t = m.nrows() as f64;
    let mean = DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / t));
    let std = DVector::from_iterator(
        m.ncols(),
        m.column_iter()
            .zip(mean.iter())
            .map(|(c, mu)| (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / t).sqrt()),
    );
    (mean, std)
}
