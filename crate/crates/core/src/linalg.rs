//! Small dense symmetric eigenproblems and power iteration.

use crate::scalar::Real;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// `a` is row-major `n x n`. Returns eigenvalues in ascending order and the
/// matching eigenvectors as columns of a row-major matrix.
pub fn symmetric_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let scale: T = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum::<T>() + off;
        if off <= T::epsilon() * T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).expect("finite eigenvalues"));
    let vals = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![T::zero(); n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + new] = v[k * n + old];
        }
    }
    (vals, vecs)
}

/// Largest eigenvalue magnitude of a symmetric operator by power iteration
/// from a fixed deterministic start.
pub fn power_iteration<T: Real, F: FnMut(&[T]) -> Vec<T>>(mut op: F, n: usize, iters: usize) -> T {
    if n == 0 {
        return T::zero();
    }
    let mut x: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(0.1) * T::from_usize_lossy(i % 7))
        .collect();
    let mut lambda = T::zero();
    for _ in 0..iters {
        let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            return T::zero();
        }
        for v in &mut x {
            *v /= norm;
        }
        let y = op(&x);
        lambda = x.iter().zip(&y).map(|(&a, &b)| a * b).sum();
        x = y;
    }
    lambda.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = [2.0f64, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let (vals, vecs) = symmetric_eigen(&a, 3);
        for (v, e) in vals.iter().zip([1.0, 3.0, 5.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        // A v = lambda v for each column
        for c in 0..3 {
            for r in 0..3 {
                let av: f64 = (0..3).map(|k| a[r * 3 + k] * vecs[k * 3 + c]).sum();
                assert!((av - vals[c] * vecs[r * 3 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_matches_nalgebra_on_random_matrix() {
        let n = 6;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = ((i * 31 + j * 17) % 13) as f64 / 7.0 - 0.8;
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let (vals, _) = symmetric_eigen(&a, n);
        let m = nalgebra::DMatrix::from_row_slice(n, n, &a);
        let mut expect: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        expect.sort_by(f64::total_cmp);
        for (u, v) in vals.iter().zip(&expect) {
            assert!((u - v).abs() < 1e-12, "{u} {v}");
        }
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let d = [1.0, 3.0, 2.0];
        let l = power_iteration(|x: &[f64]| x.iter().zip(&d).map(|(a, b)| a * b).collect(), 3, 200);
        assert!((l - 3.0).abs() < 1e-9);
    }
}
