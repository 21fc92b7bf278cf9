//! Linear probing: can a ridge regression read a scalar quantity out of a
//! frozen representation? Scored on held-out R^2 so a probe that merely
//! memorizes noise lands near zero (or below).

use crate::probing::linalg::{self, LinalgError};
use crate::rng::stream;
use rand::seq::SliceRandom;

pub const RIDGE_LAMBDA: f64 = 1e-3;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug)]
pub enum ProbeError {
    TooFewSamples { n: usize },
    Shape(String),
    Linalg(LinalgError),
}

impl std::fmt::Display for ProbeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TooFewSamples { n } => write!(f, "need at least 5 samples, got {n}"),
            Self::Shape(m) => write!(f, "shape mismatch: {m}"),
            Self::Linalg(e) => write!(f, "linear algebra failure: {e}"),
        }
    }
}

impl std::error::Error for ProbeError {}

impl From<LinalgError> for ProbeError {
    fn from(e: LinalgError) -> Self {
        Self::Linalg(e)
    }
}

/// Held-out metrics for one probe target.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeReport {
    pub label: String,
    /// 1 - SS_res / SS_tot on the held-out split; negative when the probe
    /// predicts worse than the held-out mean.
    pub r2: f64,
    pub mse: f64,
    pub mae: f64,
    /// Set when the held-out targets are (numerically) constant; r2 is
    /// reported as 0 in that case rather than dividing by zero.
    pub degenerate_target: bool,
    pub n_train: usize,
    pub n_test: usize,
}

struct RidgeFit {
    weights: Vec<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

impl RidgeFit {
    fn predict(&self, x: &[f64], d: usize) -> Vec<f64> {
        x.chunks_exact(d)
            .map(|row| {
                let mut s = self.y_mean;
                for ((v, m), w) in row.iter().zip(&self.x_mean).zip(&self.weights) {
                    s += (v - m) * w;
                }
                s
            })
            .collect()
    }
}

/// Centered ridge with an unpenalized intercept. Uses the d x d normal
/// equations when d <= n, otherwise the n x n dual form, so wide
/// representations (e.g. 2048-dim embeddings probed with a few hundred
/// samples) never materialize a d x d system.
fn fit_ridge(x: &[f64], y: &[f64], n: usize, d: usize, lambda: f64) -> Result<RidgeFit, ProbeError> {
    let (xc, x_mean) = linalg::center(x, n, d);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let weights = if d <= n {
        // (X^T X + lambda I) w = X^T y.
        let mut a = linalg::gram_t(&xc, n, d);
        for i in 0..d {
            a[i * d + i] += lambda;
        }
        let mut rhs = vec![0.0f64; d];
        for (row, yv) in xc.chunks_exact(d).zip(&yc) {
            for (r, v) in rhs.iter_mut().zip(row) {
                *r += v * yv;
            }
        }
        linalg::cholesky_solve(&a, d, &rhs, 1)?
    } else {
        // Dual: alpha = (X X^T + lambda I)^{-1} y, w = X^T alpha.
        let mut g = linalg::gram(&xc, n, d);
        for i in 0..n {
            g[i * n + i] += lambda;
        }
        let alpha = linalg::cholesky_solve(&g, n, &yc, 1)?;
        let mut w = vec![0.0f64; d];
        for (row, a) in xc.chunks_exact(d).zip(&alpha) {
            for (wv, v) in w.iter_mut().zip(row) {
                *wv += a * v;
            }
        }
        w
    };
    Ok(RidgeFit {
        weights,
        x_mean,
        y_mean,
    })
}

/// Fits a ridge probe on a seeded 80/20 split and scores it on the held-out
/// 20%. The split permutation comes from its own named stream so callers
/// with the same seed always score the same partition.
pub fn linear_probe(
    label: &str,
    x: &[f64],
    y: &[f64],
    n: usize,
    d: usize,
    seed: u64,
) -> Result<ProbeReport, ProbeError> {
    if x.len() != n * d || y.len() != n {
        return Err(ProbeError::Shape(format!(
            "x len {} vs {n}x{d}, y len {} vs {n}",
            x.len(),
            y.len()
        )));
    }
    if n < 5 {
        return Err(ProbeError::TooFewSamples { n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, "probe-split", 0);
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * TRAIN_FRACTION).round() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let n_test = n - n_train;

    let gather = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(idx.len() * d);
        let mut ys = Vec::with_capacity(idx.len());
        for &i in idx {
            xs.extend_from_slice(&x[i * d..(i + 1) * d]);
            ys.push(y[i]);
        }
        (xs, ys)
    };
    let (x_tr, y_tr) = gather(&order[..n_train]);
    let (x_te, y_te) = gather(&order[n_train..]);

    let fit = fit_ridge(&x_tr, &y_tr, n_train, d, RIDGE_LAMBDA)?;
    let preds = fit.predict(&x_te, d);

    let test_mean = y_te.iter().sum::<f64>() / n_test as f64;
    let ss_tot: f64 = y_te.iter().map(|v| (v - test_mean).powi(2)).sum();
    let ss_res: f64 = preds
        .iter()
        .zip(&y_te)
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    let mse = ss_res / n_test as f64;
    let mae = preds
        .iter()
        .zip(&y_te)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n_test as f64;

    let scale = y_te.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1.0);
    let degenerate = ss_tot <= (1e-12 * scale).powi(2) * n_test as f64;
    let r2 = if degenerate { 0.0 } else { 1.0 - ss_res / ss_tot };

    Ok(ProbeReport {
        label: label.to_string(),
        r2,
        mse,
        mae,
        degenerate_target: degenerate,
        n_train,
        n_test,
    })
}
