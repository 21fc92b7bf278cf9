//! Dense f64 helpers for the probing studies: symmetric eigendecomposition,
//! SPD solves, and PCA. Sized for probe-scale matrices (hundreds of rows),
//! not for the training path.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum LinalgError {
    NotSpd(String),
    Shape(String),
    DidNotConverge(String),
}

impl std::fmt::Display for LinalgError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NotSpd(m) => write!(f, "matrix not positive definite: {m}"),
            Self::Shape(m) => write!(f, "shape mismatch: {m}"),
            Self::DidNotConverge(m) => write!(f, "iteration did not converge: {m}"),
        }
    }
}

impl std::error::Error for LinalgError {}

/// Row-major C(m x n) = A * B with optional logical transposes expressed
/// through strides. `ta` means the stored buffer is the transpose of the
/// logical m x k operand (stored k x m), likewise `tb`.
fn gemm_rm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    f64::gemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, n as isize, 1);
}

/// C = A(n x k) * B(k x m), row-major, through the BLAS-backed kernel.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * k);
    assert_eq!(b.len(), k * m);
    let mut c = vec![0.0f64; n * m];
    gemm_rm(n, k, m, a, false, b, false, &mut c);
    c
}

/// A^T * A for row-major A (n x d): the d x d Gram of the columns.
pub fn gram_t(a: &[f64], n: usize, d: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * d);
    let mut c = vec![0.0f64; d * d];
    gemm_rm(d, n, d, a, true, a, false, &mut c);
    c
}

/// A * A^T for row-major A (n x d): the n x n Gram of the rows.
pub fn gram(a: &[f64], n: usize, d: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * d);
    let mut c = vec![0.0f64; n * n];
    gemm_rm(n, d, n, a, false, a, true, &mut c);
    c
}

/// In-place Cholesky factor L (lower) of an SPD matrix, row-major.
pub fn cholesky(a: &mut [f64], n: usize) -> Result<(), LinalgError> {
    assert_eq!(a.len(), n * n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(LinalgError::NotSpd(format!("pivot {s:.3e} at {i}")));
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
        for j in i + 1..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Solves A x = b for SPD A via Cholesky; b holds `m` right-hand sides as
/// columns (row-major n x m).
pub fn cholesky_solve(a: &[f64], n: usize, b: &[f64], m: usize) -> Result<Vec<f64>, LinalgError> {
    assert_eq!(b.len(), n * m);
    let mut l = a.to_vec();
    cholesky(&mut l, n)?;
    let mut x = b.to_vec();
    // Forward: L z = b.
    for c in 0..m {
        for i in 0..n {
            let mut s = x[i * m + c];
            for k in 0..i {
                s -= l[i * n + k] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
        // Back: L^T y = z.
        for i in (0..n).rev() {
            let mut s = x[i * m + c];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
    }
    Ok(x)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in non-increasing order and eigenvectors as rows of
/// the returned matrix (row i is the eigenvector of eigenvalue i).
pub fn jacobi_eigh(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>), LinalgError> {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    // v starts as identity; accumulates rotations as columns.
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s
    };
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    let tol = 1e-22 * scale;
    let max_sweeps = 60;
    let mut converged = false;
    for _ in 0..max_sweeps {
        if off(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
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
    if !converged && off(&m) > tol {
        return Err(LinalgError::DidNotConverge(format!(
            "off-diagonal norm {:.3e} after {max_sweeps} sweeps",
            off(&m).sqrt()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).expect("finite eigenvalues"));
    let eigvals: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut eigvecs = vec![0.0f64; n * n];
    for (row, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigvecs[row * n + k] = v[k * n + src];
        }
    }
    Ok((eigvals, eigvecs))
}

/// Column means of row-major X (n x d).
pub fn column_means(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0f64; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n.max(1) as f64;
    }
    mean
}

/// X minus its column means.
pub fn center(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mean = column_means(x, n, d);
    let mut c = x.to_vec();
    for row in c.chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    (c, mean)
}

/// Principal components fitted by eigendecomposition of whichever Gram
/// matrix is smaller (columns when d <= n, rows otherwise).
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// k x d, rows are components with unit norm.
    pub components: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub in_dim: usize,
    pub k: usize,
}

impl Pca {
    pub fn fit(x: &[f64], n: usize, d: usize, k: usize) -> Result<Self, LinalgError> {
        if n < 2 {
            return Err(LinalgError::Shape(format!("need at least 2 rows, got {n}")));
        }
        let k = k.min(d).min(n - 1);
        let (xc, mean) = center(x, n, d);
        let denom = (n - 1) as f64;
        let (eigvals, components) = if d <= n {
            let mut cov = gram_t(&xc, n, d);
            for v in &mut cov {
                *v /= denom;
            }
            let (vals, vecs) = jacobi_eigh(&cov, d)?;
            let mut comps = vec![0.0f64; k * d];
            comps.copy_from_slice(&vecs[..k * d]);
            (vals[..k].to_vec(), comps)
        } else {
            // Row-space trick: eigenvectors of X X^T map to components via
            // X^T u / sqrt(lambda (n-1)).
            let mut g = gram(&xc, n, d);
            for v in &mut g {
                *v /= denom;
            }
            let (vals, vecs) = jacobi_eigh(&g, n)?;
            let mut comps = vec![0.0f64; k * d];
            for i in 0..k {
                let lam = vals[i].max(0.0);
                if lam < 1e-12 * vals[0].max(1e-300) {
                    // Rank exhausted; leave remaining components zero.
                    break;
                }
                let u = &vecs[i * n..(i + 1) * n];
                let scale = 1.0 / (lam * denom).sqrt();
                for (r, ur) in u.iter().enumerate() {
                    let row = &xc[r * d..(r + 1) * d];
                    for (c, val) in row.iter().enumerate() {
                        comps[i * d + c] += ur * val * scale;
                    }
                }
            }
            (vals[..k].to_vec(), comps)
        };
        Ok(Self {
            mean,
            components,
            eigenvalues: eigvals,
            in_dim: d,
            k,
        })
    }

    /// Projects rows of X (m x in_dim) onto the components (m x k).
    pub fn transform(&self, x: &[f64], m: usize) -> Vec<f64> {
        assert_eq!(x.len(), m * self.in_dim);
        let mut centered = x.to_vec();
        for row in centered.chunks_exact_mut(self.in_dim) {
            for (v, mu) in row.iter_mut().zip(&self.mean) {
                *v -= mu;
            }
        }
        let mut out = vec![0.0f64; m * self.k];
        gemm_rm(
            m,
            self.in_dim,
            self.k,
            &centered,
            false,
            &self.components,
            true,
            &mut out,
        );
        out
    }
}
