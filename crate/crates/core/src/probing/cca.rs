//! Canonical correlation between two views of the same samples. Both views
//! are PCA-reduced first so the whitening stays well conditioned even when
//! one view is a 2048-dim embedding.

use crate::probing::linalg::{self, LinalgError, Pca};

pub const CCA_PCA_DIM: usize = 16;
/// PCA fits run on at most this many (strided) rows; the Jacobi eigensolver
/// behind the Gram-trick path is cubic-ish in the row count. All rows are
/// still projected afterwards.
const PCA_FIT_ROW_CAP: usize = 240;
const EIG_FLOOR: f64 = 1e-9;

#[derive(Debug)]
pub enum CcaError {
    TooFewSamples { n: usize },
    Shape(String),
    Linalg(LinalgError),
}

impl std::fmt::Display for CcaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TooFewSamples { n } => write!(f, "need at least 4 samples, got {n}"),
            Self::Shape(m) => write!(f, "shape mismatch: {m}"),
            Self::Linalg(e) => write!(f, "linear algebra failure: {e}"),
        }
    }
}

impl std::error::Error for CcaError {}

impl From<LinalgError> for CcaError {
    fn from(e: LinalgError) -> Self {
        Self::Linalg(e)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CcaReport {
    pub label: String,
    /// Mean of the top-k canonical correlations.
    pub mean_correlation: f64,
    /// Non-increasing, each in [0, 1].
    pub correlations: Vec<f64>,
    /// Requested k before any rank reduction.
    pub requested_components: usize,
    /// Components actually used after dropping near-null directions.
    pub effective_components: usize,
}

/// Whitens centered data (n x d) so its covariance is the identity on the
/// retained subspace. Directions with eigenvalue below `EIG_FLOOR` times the
/// largest are dropped. Returns (whitened n x r, r).
fn whiten(xc: &[f64], n: usize, d: usize) -> Result<(Vec<f64>, usize), LinalgError> {
    let denom = (n - 1) as f64;
    let mut cov = linalg::gram_t(xc, n, d);
    for v in &mut cov {
        *v /= denom;
    }
    let (vals, vecs) = linalg::jacobi_eigh(&cov, d)?;
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    let r = vals
        .iter()
        .take_while(|&&v| v > EIG_FLOOR * top && v > 0.0)
        .count();
    // W = V_r diag(1/sqrt(l)); whitened = Xc W, built directly row by row.
    let mut out = vec![0.0f64; n * r];
    for (i, row) in xc.chunks_exact(d).enumerate() {
        for j in 0..r {
            let comp = &vecs[j * d..(j + 1) * d];
            let dot: f64 = row.iter().zip(comp).map(|(a, b)| a * b).sum();
            out[i * r + j] = dot / vals[j].sqrt();
        }
    }
    Ok((out, r))
}

/// Mean of the top-k canonical correlations between two paired sample
/// matrices. Views are centered, PCA-reduced to at most `CCA_PCA_DIM`
/// dimensions, whitened, and the singular values of the cross-covariance are
/// clamped into [0, 1].
pub fn cca_avg(
    label: &str,
    xa: &[f64],
    da: usize,
    xb: &[f64],
    db: usize,
    n: usize,
    k: usize,
) -> Result<CcaReport, CcaError> {
    if xa.len() != n * da || xb.len() != n * db {
        return Err(CcaError::Shape(format!(
            "view a len {} vs {n}x{da}, view b len {} vs {n}x{db}",
            xa.len(),
            xb.len()
        )));
    }
    if n < 4 {
        return Err(CcaError::TooFewSamples { n });
    }
    let reduce = |x: &[f64], d: usize| -> Result<(Vec<f64>, usize), CcaError> {
        let target = CCA_PCA_DIM.min(d).min(n - 1);
        if d <= target {
            return Ok((x.to_vec(), d));
        }
        // Fit on a strided subset when n is large, project everything.
        let reduced = if n > PCA_FIT_ROW_CAP {
            let stride = n.div_ceil(PCA_FIT_ROW_CAP);
            let rows: Vec<usize> = (0..n).step_by(stride).collect();
            let mut sub = Vec::with_capacity(rows.len() * d);
            for &r in &rows {
                sub.extend_from_slice(&x[r * d..(r + 1) * d]);
            }
            let pca = Pca::fit(&sub, rows.len(), d, target)?;
            (pca.transform(x, n), pca.k)
        } else {
            let pca = Pca::fit(x, n, d, target)?;
            (pca.transform(x, n), pca.k)
        };
        Ok(reduced)
    };
    let (ra, rda) = reduce(xa, da)?;
    let (rb, rdb) = reduce(xb, db)?;
    // Center against the full sample before whitening; the subsampled PCA
    // mean can sit slightly off the global one.
    let (ra, _) = linalg::center(&ra, n, rda);
    let (rb, _) = linalg::center(&rb, n, rdb);
    let (wa, ka) = whiten(&ra, n, rda)?;
    let (wb, kb) = whiten(&rb, n, rdb)?;

    let rank = ka.min(kb);
    let requested = k.min(CCA_PCA_DIM);
    let effective = requested.min(rank);
    if effective < requested {
        eprintln!(
            "cca[{label}]: rank {rank} below requested {requested} components, reducing"
        );
    }
    if effective == 0 {
        return Ok(CcaReport {
            label: label.to_string(),
            mean_correlation: 0.0,
            correlations: Vec::new(),
            requested_components: requested,
            effective_components: 0,
        });
    }

    // Cross-covariance of whitened views; its singular values are the
    // canonical correlations. Get them as sqrt eigenvalues of M^T M.
    let denom = (n - 1) as f64;
    let mut m = vec![0.0f64; ka * kb];
    for i in 0..n {
        for p in 0..ka {
            let ap = wa[i * ka + p];
            for q in 0..kb {
                m[p * kb + q] += ap * wb[i * kb + q];
            }
        }
    }
    for v in &mut m {
        *v /= denom;
    }
    let mtm = linalg::gram_t(&m, ka, kb);
    let (vals, _) = linalg::jacobi_eigh(&mtm, kb)?;
    let correlations: Vec<f64> = vals
        .iter()
        .take(effective)
        .map(|v| v.max(0.0).sqrt().min(1.0))
        .collect();
    let mean = correlations.iter().sum::<f64>() / effective as f64;
    Ok(CcaReport {
        label: label.to_string(),
        mean_correlation: mean,
        correlations,
        requested_components: requested,
        effective_components: effective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn randn(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, "cca-test", 0);
        (0..n)
            .map(|_| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect()
    }

    #[test]
    fn identical_views_correlate_perfectly() {
        let n = 200;
        let d = 12;
        let x = randn(n * d, 1);
        let rep = cca_avg("same", &x, d, &x, d, n, 8).unwrap();
        assert!(
            (rep.mean_correlation - 1.0).abs() <= 1e-6,
            "mean = {}",
            rep.mean_correlation
        );
        for c in &rep.correlations {
            assert!(*c <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn invertible_remapping_still_correlates_perfectly() {
        // CCA is invariant to invertible linear maps of either view.
        let n = 150;
        let d = 6;
        let x = randn(n * d, 2);
        let mut y = vec![0.0f64; n * d];
        // Random well-conditioned map: identity plus small noise.
        let noise = randn(d * d, 3);
        for i in 0..n {
            for r in 0..d {
                let mut s = 0.0;
                for c in 0..d {
                    let m = if r == c { 1.0 } else { 0.0 } + 0.2 * noise[r * d + c];
                    s += m * x[i * d + c];
                }
                y[i * d + r] = s;
            }
        }
        let rep = cca_avg("mapped", &x, d, &y, d, n, 6).unwrap();
        assert!((rep.mean_correlation - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn independent_views_correlate_weakly() {
        let n = 1000;
        let d = 16;
        let xa = randn(n * d, 10);
        let xb = randn(n * d, 20);
        let rep = cca_avg("indep", &xa, d, &xb, d, n, 8).unwrap();
        assert!(rep.mean_correlation < 0.3, "mean = {}", rep.mean_correlation);
    }

    #[test]
    fn correlations_sorted_and_bounded() {
        let n = 300;
        let da = 10;
        let db = 14;
        let xa = randn(n * da, 30);
        // Second view shares part of the signal.
        let mut xb = randn(n * db, 31);
        for i in 0..n {
            xb[i * db] = xa[i * da] + 0.1 * xb[i * db];
        }
        let rep = cca_avg("mixed", &xa, da, &xb, db, n, 10).unwrap();
        for w in rep.correlations.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        for c in &rep.correlations {
            assert!((0.0..=1.0 + 1e-12).contains(c));
        }
    }

    #[test]
    fn symmetric_in_its_arguments() {
        let n = 250;
        let da = 8;
        let db = 12;
        let xa = randn(n * da, 40);
        let xb = randn(n * db, 41);
        let ab = cca_avg("ab", &xa, da, &xb, db, n, 6).unwrap();
        let ba = cca_avg("ba", &xb, db, &xa, da, n, 6).unwrap();
        assert!(
            (ab.mean_correlation - ba.mean_correlation).abs() < 1e-9,
            "{} vs {}",
            ab.mean_correlation,
            ba.mean_correlation
        );
    }

    #[test]
    fn rank_deficiency_reduces_components() {
        // View b is rank 2: every column a multiple of two base columns.
        let n = 100;
        let da = 6;
        let db = 8;
        let xa = randn(n * da, 50);
        let base = randn(n * 2, 51);
        let mut xb = vec![0.0f64; n * db];
        for i in 0..n {
            for j in 0..db {
                xb[i * db + j] =
                    (j as f64 + 1.0) * base[i * 2] + (2.0 * j as f64 - 3.0) * base[i * 2 + 1];
            }
        }
        let rep = cca_avg("lowrank", &xa, da, &xb, db, n, 6).unwrap();
        assert!(rep.effective_components <= 2);
        assert_eq!(rep.correlations.len(), rep.effective_components);
    }

    #[test]
    fn wide_views_reduce_through_pca_first() {
        // 600-dim views with a shared 3-dim latent: PCA to 16 then CCA
        // should find strong leading correlations.
        let n = 120;
        let d = 600;
        let latent = randn(n * 3, 60);
        let ma = randn(3 * d, 61);
        let mb = randn(3 * d, 62);
        let na = randn(n * d, 63);
        let nb = randn(n * d, 64);
        let mut xa = vec![0.0f64; n * d];
        let mut xb = vec![0.0f64; n * d];
        for i in 0..n {
            for j in 0..d {
                let mut sa = 0.05 * na[i * d + j];
                let mut sb = 0.05 * nb[i * d + j];
                for l in 0..3 {
                    sa += latent[i * 3 + l] * ma[l * d + j];
                    sb += latent[i * 3 + l] * mb[l * d + j];
                }
                xa[i * d + j] = sa;
                xb[i * d + j] = sb;
            }
        }
        let rep = cca_avg("wide", &xa, d, &xb, d, n, 3).unwrap();
        assert_eq!(rep.effective_components, 3);
        assert!(
            rep.correlations[0] > 0.95,
            "leading correlation {}",
            rep.correlations[0]
        );
    }
}
