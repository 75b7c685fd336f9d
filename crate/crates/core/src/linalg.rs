//! Dense row-major matrices and the SVD machinery behind spectral steepest descent.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration. Tall inputs are first
//! reduced with a Householder QR so the Jacobi sweeps only ever run on a
//! square `cols × cols` factor.

use std::fmt;

use thiserror::Error;

/// Relative cutoff below which singular values are dropped from the reduced SVD.
pub const RANK_TOLERANCE: f64 = 1e-12;

const JACOBI_TOLERANCE: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Wraps row-major storage. Fails on empty dimensions or a length mismatch.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::InvalidInput(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidInput(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::InvalidInput("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::ShapeMismatch {
                expected: (self.cols, other.cols),
                actual: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// Elementwise (Frobenius) inner product.
    pub fn inner(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Reduced singular value decomposition `M = U · diag(sigma) · Vᵀ`.
///
/// `u` is `rows × k`, `v` is `cols × k`, where `k` is the numerical rank.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let (rows, cols) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(rows, cols);
        for (k, &s) in self.sigma.iter().enumerate() {
            for i in 0..rows {
                let a = self.u[(i, k)] * s;
                for j in 0..cols {
                    out[(i, j)] += a * self.v[(j, k)];
                }
            }
        }
        out
    }
}

/// Column-major working copy used by the Jacobi sweeps.
struct Columns {
    cols: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xi, yi) = (*x, *y);
        *x = c * xi - s * yi;
        *y = s * xi + c * yi;
    }
}

fn pair_mut(cols: &mut [Vec<f64>], i: usize, j: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(i < j);
    let (lo, hi) = cols.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}

/// One-sided Jacobi on the columns of `a`; returns the accumulated right
/// rotations. On exit the columns of `a` are mutually orthogonal.
fn hestenes(a: &mut Columns) -> Columns {
    let n = a.cols.len();
    let mut v = Columns {
        cols: (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect(),
    };
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&a.cols[i], &a.cols[i]);
                let beta = dot(&a.cols[j], &a.cols[j]);
                let gamma = dot(&a.cols[i], &a.cols[j]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= JACOBI_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (ai, aj) = pair_mut(&mut a.cols, i, j);
                rotate(ai, aj, c, s);
                let (vi, vj) = pair_mut(&mut v.cols, i, j);
                rotate(vi, vj, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    v
}

/// Householder QR of a tall matrix; returns thin `Q` (rows × cols) and `R` (cols × cols).
fn householder_qr(m: &Matrix) -> (Matrix, Matrix) {
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for k in 0..cols {
        let mut x: Vec<f64> = (k..rows).map(|r| a[(r, k)]).collect();
        let norm = dot(&x, &x).sqrt();
        if norm == 0.0 {
            reflectors.push(vec![0.0; rows - k]);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        x[0] -= alpha;
        let vnorm = dot(&x, &x).sqrt();
        if vnorm == 0.0 {
            reflectors.push(vec![0.0; rows - k]);
            continue;
        }
        x.iter_mut().for_each(|v| *v /= vnorm);
        for c in k..cols {
            let proj: f64 = (k..rows).map(|r| x[r - k] * a[(r, c)]).sum();
            for r in k..rows {
                a[(r, c)] -= 2.0 * x[r - k] * proj;
            }
        }
        reflectors.push(x);
    }
    let mut r = Matrix::zeros(cols, cols);
    for i in 0..cols {
        for j in i..cols {
            r[(i, j)] = a[(i, j)];
        }
    }
    // Q = H_0 H_1 ... H_{cols-1} applied to the first `cols` unit vectors.
    let mut q = Matrix::zeros(rows, cols);
    for i in 0..cols {
        q[(i, i)] = 1.0;
    }
    for k in (0..cols).rev() {
        let x = &reflectors[k];
        for c in 0..cols {
            let proj: f64 = (k..rows).map(|r| x[r - k] * q[(r, c)]).sum();
            if proj != 0.0 {
                for r in k..rows {
                    q[(r, c)] -= 2.0 * x[r - k] * proj;
                }
            }
        }
    }
    (q, r)
}

/// SVD for `rows ≥ cols`.
fn svd_tall(m: &Matrix) -> Svd {
    let (rows, cols) = m.shape();
    let (q, work) = if rows > cols {
        let (q, r) = householder_qr(m);
        (Some(q), r)
    } else {
        (None, m.clone())
    };
    let mut a = Columns {
        cols: (0..cols).map(|c| work.column(c)).collect(),
    };
    let v = hestenes(&mut a);

    let mut order: Vec<(f64, usize)> = a
        .cols
        .iter()
        .enumerate()
        .map(|(i, col)| (dot(col, col).sqrt(), i))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let sigma_max = order.first().map_or(0.0, |o| o.0);
    let kept: Vec<(f64, usize)> = order
        .into_iter()
        .filter(|&(s, _)| s > 0.0 && s > RANK_TOLERANCE * sigma_max)
        .collect();

    let k = kept.len();
    let inner_rows = work.rows();
    let mut u_small = Matrix::zeros(inner_rows, k.max(1));
    let mut v_out = Matrix::zeros(cols, k.max(1));
    for (out_col, &(s, idx)) in kept.iter().enumerate() {
        for r in 0..inner_rows {
            u_small[(r, out_col)] = a.cols[idx][r] / s;
        }
        for r in 0..cols {
            v_out[(r, out_col)] = v.cols[idx][r];
        }
    }
    let u = match q {
        Some(q) => q.matmul(&u_small).expect("qr factor shapes agree"),
        None => u_small,
    };
    let sigma = kept.iter().map(|&(s, _)| s).collect();
    if k == 0 {
        return Svd {
            u: Matrix { rows, cols: 0, data: Vec::new() },
            sigma,
            v: Matrix { rows: cols, cols: 0, data: Vec::new() },
        };
    }
    Svd { u, sigma, v: v_out }
}

/// Reduced SVD with rank truncation at `RANK_TOLERANCE · σ_max`.
///
/// A zero matrix yields an empty decomposition (rank 0).
pub fn svd_reduced(m: &Matrix) -> Result<Svd, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::InvalidInput("matrix has non-finite entries".into()));
    }
    if m.rows() >= m.cols() {
        Ok(svd_tall(m))
    } else {
        let t = svd_tall(&m.transpose());
        Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// Polar factor `U·Vᵀ` of the reduced SVD.
///
/// Rank-deficient inputs give a partial isometry (spectral norm 1 on the
/// range of `m`). The zero matrix has no polar factor.
pub fn orthogonalize(m: &Matrix) -> Result<Matrix, LinalgError> {
    let svd = svd_reduced(m)?;
    if svd.rank() == 0 {
        return Err(LinalgError::Degenerate("cannot orthogonalize a zero matrix".into()));
    }
    svd.u
        .matmul(&svd.v.transpose())
        .map_err(|e| LinalgError::InvalidInput(e.to_string()))
}

pub fn spectral_norm(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(svd_reduced(m)?.sigma.first().copied().unwrap_or(0.0))
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(svd_reduced(m)?.sigma.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn assert_orthonormal_columns(m: &Matrix, tol: f64) {
        let g = m.transpose().matmul(m).unwrap();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < tol, "gram[{i},{j}] = {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn diagonal_svd() {
        let svd = svd_reduced(&Matrix::diag(&[3.0, 2.0])).unwrap();
        assert_eq!(svd.sigma, vec![3.0, 2.0]);
        assert_eq!(svd.u, Matrix::identity(2));
        assert_eq!(svd.v, Matrix::identity(2));
    }

    #[test]
    fn permuted_diagonal() {
        let m = Matrix::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]).unwrap();
        let svd = svd_reduced(&m).unwrap();
        assert!((svd.sigma[0] - 2.0).abs() < 1e-15 && (svd.sigma[1] - 1.0).abs() < 1e-15);
        let q = orthogonalize(&m).unwrap();
        let want = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        for (a, b) in q.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(orthogonalize(&Matrix::diag(&[3.0, 2.0])).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn reconstruction_tall_wide_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(r, c) in &[(5, 3), (3, 5), (4, 4), (40, 6), (1, 7), (7, 1)] {
            let m = random(r, c, &mut rng);
            let svd = svd_reduced(&m).unwrap();
            let rec = svd.reconstruct();
            let mut diff = rec.clone();
            diff.as_mut_slice().iter_mut().zip(m.as_slice()).for_each(|(d, x)| *d -= x);
            assert!(diff.frobenius_norm() / m.frobenius_norm() < 1e-9, "{r}x{c}");
            assert_orthonormal_columns(&svd.u, 1e-10);
            assert_orthonormal_columns(&svd.v, 1e-10);
            assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
            assert!(svd.sigma.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn rank_deficient_is_truncated() {
        // outer product of rank one
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 1.0];
        let m = Matrix::from_vec(3, 2, a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()).unwrap();
        let svd = svd_reduced(&m).unwrap();
        assert_eq!(svd.rank(), 1);
        let q = orthogonalize(&m).unwrap();
        assert!((spectral_norm(&q).unwrap() - 1.0).abs() < 1e-12);
        assert!((q.inner(&m) - nuclear_norm(&m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_and_nonfinite_inputs() {
        assert!(matches!(orthogonalize(&Matrix::zeros(2, 3)), Err(LinalgError::Degenerate(_))));
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd_reduced(&m), Err(LinalgError::InvalidInput(_))));
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn orthogonalize_matches_nuclear_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..=8);
            let m = random(n, n, &mut rng);
            let svd = svd_reduced(&m).unwrap();
            let q = orthogonalize(&m).unwrap();
            let nuc: f64 = svd.sigma.iter().sum();
            assert!((q.inner(&m) - nuc).abs() <= 1e-9 * nuc);
            assert_orthonormal_columns(&q, 1e-9);
        }
    }
}
