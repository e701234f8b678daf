//! Dense row-major matrix substrate and masked activations.
//!
//! Element type is generic over [`Real`] (f32 in production, f64 for the
//! gradient-check shadow model). Every reduction accumulates in f64 so the
//! f32 path stays bit-stable under re-association-free evaluation order.

use crate::error::{DmfError, Result};
use crate::real::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// The f32 matrix used on the model path.
pub type DenseMatrix = Matrix<f32>;

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DmfError::DimensionMismatch {
                op: "from_vec",
                detail: format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn convert<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// `a[m x k] * b[k x n]`, f64 accumulation per output element.
#[allow(clippy::needless_range_loop)]
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(DmfError::DimensionMismatch {
            op: "matmul",
            detail: format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|x| *x = 0.0);
        let arow = a.row(i);
        for p in 0..k {
            let aip = arow[p].to_f64();
            let brow = b.row(p);
            for j in 0..n {
                acc[j] += aip * brow[j].to_f64();
            }
        }
        let orow = out.row_mut(i);
        for j in 0..n {
            orow[j] = T::from_f64(acc[j]);
        }
    }
    Ok(out)
}

/// Dot product with f64 accumulation.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0f64;
    for i in 0..a.len() {
        acc += a[i].to_f64() * b[i].to_f64();
    }
    acc
}

/// `w[r x c] * x[c] -> y[r]`, f64 accumulation.
pub fn matvec<T: Real>(w: &Matrix<T>, x: &[T]) -> Result<Vec<T>> {
    if w.cols != x.len() {
        return Err(DmfError::DimensionMismatch {
            op: "matvec",
            detail: format!("{}x{} * {}", w.rows, w.cols, x.len()),
        });
    }
    Ok((0..w.rows).map(|i| T::from_f64(dot(w.row(i), x))).collect())
}

/// Adds `row` (1 x d) to every row of `m` (B x d) without materializing
/// B copies of `row`.
pub fn broadcast_add<T: Real>(row: &Matrix<T>, m: &Matrix<T>) -> Result<Matrix<T>> {
    if row.rows != 1 || row.cols != m.cols {
        return Err(DmfError::DimensionMismatch {
            op: "broadcast_add",
            detail: format!("row {}x{} vs m {}x{}", row.rows, row.cols, m.rows, m.cols),
        });
    }
    let mut out = m.clone();
    let r = row.row(0);
    for i in 0..out.rows {
        let orow = out.row_mut(i);
        for j in 0..r.len() {
            orow[j] = orow[j] + r[j];
        }
    }
    Ok(out)
}

/// Masked temperature softmax with max-subtraction; masked positions get
/// exactly zero weight. The normalizer is accumulated in f64.
pub fn softmax_masked<T: Real>(scores: &[T], valid: &[bool], temperature: T) -> Result<Vec<T>> {
    if scores.len() != valid.len() {
        return Err(DmfError::DimensionMismatch {
            op: "softmax_masked",
            detail: format!("scores {} vs mask {}", scores.len(), valid.len()),
        });
    }
    if temperature <= T::zero() {
        return Err(DmfError::InvalidConfig(format!(
            "softmax temperature must be positive, got {:?}",
            temperature
        )));
    }
    let mut max = f64::NEG_INFINITY;
    for (s, &v) in scores.iter().zip(valid) {
        if v {
            max = max.max(s.to_f64() / temperature.to_f64());
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(DmfError::EmptyHistory);
    }
    let tau = temperature.to_f64();
    let mut exps = vec![0f64; scores.len()];
    let mut sum = 0f64;
    for i in 0..scores.len() {
        if valid[i] {
            let e = (scores[i].to_f64() / tau - max).exp();
            exps[i] = e;
            sum += e;
        }
    }
    Ok(exps.into_iter().map(|e| T::from_f64(e / sum)).collect())
}

/// PReLU with a per-element slope: `y_i = x_i` for `x_i >= 0`, else
/// `slope_i * x_i`.
pub fn prelu<T: Real>(x: &[T], slope: &[T]) -> Vec<T> {
    debug_assert_eq!(x.len(), slope.len());
    x.iter()
        .zip(slope)
        .map(|(&xi, &si)| if xi >= T::zero() { xi } else { si * xi })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let id = Matrix::identity(2);
        assert_eq!(matmul(&id, &a).unwrap(), a);
    }

    #[test]
    fn matmul_hand() {
        let a = Matrix::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![1.0f32, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_zeros() {
        let z = Matrix::<f32>::zeros(3, 2);
        let a = Matrix::from_vec(2, 4, vec![1.0f32; 8]).unwrap();
        let c = matmul(&z, &a).unwrap();
        assert!(c.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_mismatch_is_error() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(2, 3);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn softmax_symmetry() {
        let w = softmax_masked(&[0.0f32, 0.0], &[true, true], 1.0).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_hand() {
        let w = softmax_masked(&[(2.0f32).ln(), 0.0], &[true, true], 1.0).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_single_valid() {
        let w = softmax_masked(&[5.0f32, 9.0], &[true, false], 1.0).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_all_masked_is_error() {
        assert!(matches!(
            softmax_masked(&[1.0f32, 2.0], &[false, false], 1.0),
            Err(DmfError::EmptyHistory)
        ));
    }

    #[test]
    fn softmax_shift_invariance() {
        let s = [0.3f32, -1.2, 2.0];
        let v = [true, true, true];
        let a = softmax_masked(&s, &v, 1.0).unwrap();
        let shifted: Vec<f32> = s.iter().map(|x| x + 7.5).collect();
        let b = softmax_masked(&shifted, &v, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn prelu_definition() {
        assert_eq!(prelu(&[1.0f32, -1.0], &[0.25, 0.25]), vec![1.0, -0.25]);
        assert_eq!(prelu(&[0.0f32], &[0.9]), vec![0.0]);
        assert_eq!(prelu(&[-2.0f32], &[1.0]), vec![-2.0]);
    }

    #[test]
    fn broadcast_add_cases() {
        let m = Matrix::from_vec(2, 2, vec![0.0f32, 0.0, 2.0, 3.0]).unwrap();
        let zero = Matrix::zeros(1, 2);
        assert_eq!(broadcast_add(&zero, &m).unwrap(), m);
        let row = Matrix::from_vec(1, 2, vec![1.0f32, 1.0]).unwrap();
        let out = broadcast_add(&row, &m).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 3.0, 4.0]);
        let single = Matrix::from_vec(1, 2, vec![5.0f32, 6.0]).unwrap();
        assert_eq!(broadcast_add(&row, &single).unwrap().data(), &[6.0, 7.0]);
    }
}
