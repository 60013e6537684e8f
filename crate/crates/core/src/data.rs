//! Dense row-major sample matrices shared by the learning stages.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape mismatch");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row width mismatch");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &r in rows {
            let src = self.row(r);
            data.extend(cols.iter().map(|&c| src[c]));
        }
        Matrix::new(rows.len(), cols.len(), data)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix::new(rows.len(), self.cols, data)
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let rows: Vec<usize> = (0..self.rows).collect();
        self.select(&rows, cols)
    }

    /// Per-column (mean, population standard deviation).
    pub fn column_stats(&self) -> Vec<(f64, f64)> {
        let n = self.rows.max(1) as f64;
        (0..self.cols)
            .map(|c| {
                let mean = (0..self.rows).map(|r| self.get(r, c)).sum::<f64>() / n;
                let var = (0..self.rows).map(|r| (self.get(r, c) - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }
}

/// Feature matrix with integer class labels and column ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub feature_ids: Vec<String>,
}

impl LabeledMatrix {
    pub fn new(x: Matrix, y: Vec<usize>, n_classes: usize, feature_ids: Vec<String>) -> Self {
        assert_eq!(x.rows(), y.len(), "label count mismatch");
        assert_eq!(x.cols(), feature_ids.len(), "feature id count mismatch");
        assert!(y.iter().all(|&c| c < n_classes), "label out of range");
        LabeledMatrix {
            x,
            y,
            n_classes,
            feature_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    pub fn select_rows(&self, rows: &[usize]) -> LabeledMatrix {
        LabeledMatrix {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            n_classes: self.n_classes,
            feature_ids: self.feature_ids.clone(),
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> LabeledMatrix {
        LabeledMatrix {
            x: self.x.select_cols(cols),
            y: self.y.clone(),
            n_classes: self.n_classes,
            feature_ids: cols.iter().map(|&c| self.feature_ids[c].clone()).collect(),
        }
    }

    pub fn feature_index(&self, id: &str) -> Option<usize> {
        self.feature_ids.iter().position(|f| f == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_and_stats() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], 3);
        let s = m.select(&[1], &[2, 0]);
        assert_eq!(s.row(0), &[6.0, 4.0]);
        let stats = m.column_stats();
        assert_eq!(stats[0], (2.5, 1.5));
        assert_eq!(m.column(1), vec![2.0, 5.0]);
    }
}
