//! Small dense symmetric positive-definite solves for the per-bucket
//! normal equations.

/// Cholesky factor of a symmetric positive-definite matrix, kept around so
/// callers can re-solve against new right-hand sides (iterative refinement).
pub(crate) struct Cholesky {
    l: Vec<f64>,
    n: usize,
}

impl Cholesky {
    /// Factors `A = L L^T` (row-major, n x n). Returns `None` if any pivot
    /// falls to `pivot_tol` or below, which callers treat as a numerically
    /// singular system. `a` is consumed as scratch for the factor.
    pub fn factor(mut a: Vec<f64>, n: usize, pivot_tol: f64) -> Option<Cholesky> {
        debug_assert_eq!(a.len(), n * n);
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                diag -= a[j * n + k] * a[j * n + k];
            }
            if !(diag > pivot_tol) {
                return None;
            }
            let d = diag.sqrt();
            a[j * n + j] = d;
            for i in j + 1..n {
                let mut v = a[i * n + j];
                for k in 0..j {
                    v -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = v / d;
            }
        }
        Some(Cholesky { l: a, n })
    }

    /// Solves `A x = b` via the stored factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, l) = (self.n, &self.l);
        debug_assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // L y = b
        for i in 0..n {
            for k in 0..i {
                x[i] -= l[i * n + k] * x[k];
            }
            x[i] /= l[i * n + i];
        }
        // L^T x = y
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= l[k * n + i] * x[k];
            }
            x[i] /= l[i * n + i];
        }
        x
    }
}
