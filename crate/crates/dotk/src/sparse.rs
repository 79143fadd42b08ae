//! Compressed sparse row matrices and a banded LDLᵀ factorization for the
//! complex-symmetric FEM systems. The band solver exploits that the diffusion
//! system matrix is symmetric (not Hermitian) and, on the structured meshes
//! used here, narrow-banded; no pivoting is performed, and a vanishing pivot
//! is reported as a singular system rather than patched over.

use crate::{Error, Result};
use num_complex::Complex64;

pub trait Scalar:
    Copy
    + PartialEq
    + std::ops::Add<Output = Self>
    + std::ops::AddAssign
    + std::ops::Mul<Output = Self>
    + std::fmt::Debug
{
    fn zero() -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
}

/// Compressed sparse row matrix. Rows hold strictly increasing column indices.
#[derive(Clone, Debug)]
pub struct Csr<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({i},{j}) outside {n_rows}x{n_cols} matrix"
                )));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_unstable_by_key(|&t| (triplets[t].0, triplets[t].1));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &t in &order {
            let (i, j, v) = triplets[t];
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] = col_idx.len();
                last = Some((i, j));
            }
        }
        // rows without entries still need monotone offsets
        for i in 0..n_rows {
            if row_ptr[i + 1] < row_ptr[i] {
                row_ptr[i + 1] = row_ptr[i];
            }
        }
        Ok(Csr { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = T::zero();
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_owned(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n_rows];
        self.matvec(x, &mut y);
        y
    }

    /// y = Aᵀ x without forming the transpose.
    pub fn matvec_transpose(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n_rows);
        assert_eq!(y.len(), self.n_cols);
        for v in y.iter_mut() {
            *v = T::zero();
        }
        for i in 0..self.n_rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[p]] += self.values[p] * x[i];
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        for p in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[p] == j {
                return self.values[p];
            }
        }
        T::zero()
    }

    /// Half (number of sub-diagonals) of the band enclosing all entries.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0usize;
        for i in 0..self.n_rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                b = b.max(i.abs_diff(self.col_idx[p]));
            }
        }
        b
    }
}

impl Csr<f64> {
    /// Real matrix applied to a complex vector.
    pub fn matvec_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![Complex64::new(0.0, 0.0); self.n_rows];
        for i in 0..self.n_rows {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += x[self.col_idx[p]] * self.values[p];
            }
            y[i] = acc;
        }
        y
    }

    /// Promote to a complex matrix with the same sparsity.
    pub fn to_complex(&self) -> Csr<Complex64> {
        Csr {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// LDLᵀ factorization of a banded complex-symmetric matrix (A = Aᵀ, not
/// necessarily Hermitian). Lower band of L stored by rows.
pub struct BandedLdlt {
    n: usize,
    bw: usize,
    // band[i * (bw+1) + d] = L[i][i-d] for d = 1..=bw, and D[i] at d = 0.
    band: Vec<Complex64>,
}

impl BandedLdlt {
    pub fn factor(a: &Csr<Complex64>) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::InvalidArgument("band factorization needs a square matrix".into()));
        }
        let n = a.n_rows;
        let bw = a.bandwidth();
        let stride = bw + 1;
        let mut band = vec![Complex64::new(0.0, 0.0); n * stride];
        let mut scale = 0.0f64;
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[p];
                if j <= i {
                    band[i * stride + (i - j)] = a.values[p];
                }
                if i == j {
                    scale = scale.max(a.values[p].norm());
                }
            }
        }
        if scale == 0.0 {
            // fall back to the largest off-diagonal so the tolerance is meaningful
            scale = a.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        }
        let tol = 1e-14 * scale;

        // Row-by-row LDLᵀ restricted to the band: for j < i,
        //   L[i][j] = (A[i][j] - Σ_p L[i][p] D[p] L[j][p]) / D[j]
        //   D[i]    =  A[i][i] - Σ_p L[i][p]² D[p]
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                let mut sum = band[i * stride + (i - j)];
                let p0 = lo.max(j.saturating_sub(bw));
                for p in p0..j {
                    let lip = band[i * stride + (i - p)];
                    let ljp = band[j * stride + (j - p)];
                    let dp = band[p * stride];
                    sum -= lip * dp * ljp;
                }
                let dj = band[j * stride];
                band[i * stride + (i - j)] = sum / dj;
            }
            let mut d = band[i * stride];
            for p in lo..i {
                let lip = band[i * stride + (i - p)];
                let dp = band[p * stride];
                d -= lip * lip * dp;
            }
            if d.norm() < tol {
                return Err(Error::SingularSystem(format!(
                    "pivot {} of {} fell below tolerance ({:.3e} < {:.3e})",
                    i,
                    n,
                    d.norm(),
                    tol
                )));
            }
            band[i * stride] = d;
        }
        Ok(BandedLdlt { n, bw, band })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        assert_eq!(b.len(), self.n);
        let stride = self.bw + 1;
        // L y = b
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut acc = b[i];
            for j in lo..i {
                acc -= self.band[i * stride + (i - j)] * b[j];
            }
            b[i] = acc;
        }
        // D z = y
        for i in 0..self.n {
            b[i] /= self.band[i * stride];
        }
        // Lᵀ x = z
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut acc = b[i];
            for j in (i + 1)..=hi {
                acc -= self.band[j * stride + (j - i)] * b[j];
            }
            b[i] = acc;
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
