//! Compressed sparse row matrices, just enough for row graphs and warps.

use crate::scalar::Real;

/// CSR matrix with sorted, duplicate-free column indices in each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    ///
    /// # Panics
    /// If an index is out of bounds.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, T)>) -> Self {
        trips.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut data: Vec<T> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *data.last_mut().expect("entry exists") += v;
                continue;
            }
            indices.push(c);
            data.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, T::one())).collect())
    }

    pub fn diagonal_matrix(d: &[T]) -> Self {
        Self::from_triplets(d.len(), d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.data[a..b].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[a..b].binary_search(&j) {
            Ok(k) => self.data[a + k],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols, "dimension mismatch");
        (0..self.nrows)
            .map(|i| self.row(i).fold(T::zero(), |acc, (j, v)| acc + v * x[j]))
            .collect()
    }

    /// `A^T x`.
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nrows, "dimension mismatch");
        let mut out = vec![T::zero(); self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out[j] += v * x[i];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let trips = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, trips)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch");
        let mut trips = Vec::new();
        let mut acc: Vec<Option<T>> = vec![None; other.ncols];
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    match &mut acc[j] {
                        Some(s) => *s += a * b,
                        slot @ None => {
                            *slot = Some(a * b);
                            touched.push(j);
                        }
                    }
                }
            }
            for j in touched.drain(..) {
                trips.push((i, j, acc[j].take().expect("touched")));
            }
        }
        Self::from_triplets(self.nrows, other.ncols, trips)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols), "dimension mismatch");
        let mut trips = self.triplets();
        trips.extend(other.triplets());
        Self::from_triplets(self.nrows, self.ncols, trips)
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Gershgorin upper bound on the spectrum: `max_i (a_ii + sum_{j != i} |a_ij|)`.
    pub fn gershgorin_max(&self) -> T {
        (0..self.nrows)
            .map(|i| {
                self.row(i).fold(T::zero(), |acc, (j, v)| {
                    if j == i {
                        acc + v
                    } else {
                        acc + v.abs()
                    }
                })
            })
            .fold(T::neg_infinity(), T::max)
    }

    /// Quadratic form `x^T A x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        self.mul_vec(x).iter().zip(x).map(|(&a, &b)| a * b).sum()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.nrows == self.ncols
            && self
                .triplets()
                .iter()
                .all(|&(i, j, v)| (v - self.get(j, i)).abs() <= tol * (T::one() + v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

/// Conjugate gradients for a symmetric positive definite `a`.
/// Returns the solution and the iteration count.
pub fn conjugate_gradient<T: Real>(a: &CsrMatrix<T>, b: &[T], tol: T, max_iter: usize) -> (Vec<T>, usize) {
    let n = b.len();
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr: T = r.iter().map(|&v| v * v).sum();
    let bnorm = rr.sqrt().max(T::min_positive_value());
    for it in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            return (x, it);
        }
        let ap = a.mul_vec(&p);
        let pap: T = p.iter().zip(&ap).map(|(&u, &v)| u * v).sum();
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let next: T = r.iter().map(|&v| v * v).sum();
        let beta = next / rr;
        rr = next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    (x, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.push((i, i, 1.0));
            t.push((i + 1, i + 1, 1.0));
            t.push((i, i + 1, -1.0));
            t.push((i + 1, i, -1.0));
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, 3.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.row(0).map(|e| e.0).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn products_match_dense() {
        let a = CsrMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0)]);
        let b = CsrMatrix::from_triplets(3, 2, vec![(0, 1, 4.0), (1, 0, 1.0), (2, 0, 3.0)]);
        let c = a.matmul(&b).to_dense();
        assert_eq!(c, vec![vec![6.0, 4.0], vec![-1.0, 0.0]]);
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]), vec![7.0, -2.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 2.0]), a.transpose().mul_vec(&[1.0, 2.0]));
    }

    #[test]
    fn gershgorin_on_path_laplacian() {
        let l = path_laplacian(10);
        assert_eq!(l.gershgorin_max(), 4.0);
        let d = CsrMatrix::diagonal_matrix(&[1.0, 5.0, 2.0]);
        assert_eq!(d.gershgorin_max(), 5.0);
        assert!(l.is_symmetric(0.0));
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = path_laplacian(20).add(&CsrMatrix::identity(20).scale(0.1));
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let (x, _) = conjugate_gradient(&a, &b, 1e-14, 200);
        let r = a.mul_vec(&x);
        for (u, v) in r.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
