/// Row-wise sparse matrix. Duplicate entries within a row are summed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatrix {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, rows: Vec::new() }
    }

    pub fn from_dense(rows: &[Vec<f64>], ncols: usize) -> Self {
        let mut m = Self::new(ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "dense row length");
            m.push_row(r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)));
        }
        m
    }

    /// Appends a row and returns its index.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> usize {
        let mut row: Vec<(usize, f64)> = entries.into_iter().collect();
        for (j, _) in &row {
            assert!(*j < self.ncols, "column {j} out of range {}", self.ncols);
        }
        row.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (j, v) in row {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        self.rows.push(merged);
        self.rows.len() - 1
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.rows.iter().map(|r| r.as_slice())
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(j, v)| v * x[*j]).sum()).collect()
    }

    /// `selfᵀ y`.
    pub fn mul_t_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, yi) in self.rows.iter().zip(y) {
            for (j, v) in r {
                out[*j] += v * yi;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0.0; self.ncols];
                for (j, v) in r {
                    d[*j] += v;
                }
                d
            })
            .collect()
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|(_, v)| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let d = vec![vec![1.0, 0.0, 2.0], vec![0.0, -3.0, 0.5]];
        let m = SparseMatrix::from_dense(&d, 3);
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![7.0, -4.5]);
        assert_eq!(m.mul_t_vec(&[1.0, 2.0]), vec![1.0, -6.0, 3.0]);
        assert_eq!(m.to_dense(), d);
    }

    #[test]
    fn duplicates_are_merged() {
        let mut m = SparseMatrix::new(2);
        m.push_row([(1, 1.0), (0, 2.0), (1, 0.5)]);
        m.push_row([(0, 1.0), (0, -1.0)]);
        assert_eq!(m.row(0), &[(0, 2.0), (1, 1.5)]);
        assert!(m.row(1).is_empty());
    }
}
