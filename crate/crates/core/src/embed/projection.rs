//! Frozen random up-projection applied to encoder outputs before they meet
//! the learnable per-role input maps.

use rand_distr::{Distribution, StandardNormal};

use crate::rng::{stream, Fnv1a64};
use crate::scalar::Scalar;

use super::encoder::{EmbedError, EmbeddingVector};

pub const PROJECTION_IN_DIM: usize = 896;
pub const PROJECTION_OUT_DIM: usize = 2048;

/// Identifies one projection matrix: regenerate from the seed, then verify
/// against the checksum when one is pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    /// FNV-1a over the little-endian matrix bytes, filled in on build.
    pub checksum: Option<u64>,
}

impl ProjectionSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            in_dim: PROJECTION_IN_DIM,
            out_dim: PROJECTION_OUT_DIM,
            seed,
            checksum: None,
        }
    }
}

/// The realized matrix. Immutable once built; reads are safe to share.
#[derive(Debug, Clone)]
pub struct Projection {
    spec: ProjectionSpec,
    /// Row-major out_dim x in_dim.
    matrix: Vec<f32>,
}

impl Projection {
    /// Draws the matrix from the spec's seed: standard normal entries scaled
    /// by 1/sqrt(in_dim). Fails if a pinned checksum disagrees.
    pub fn build(spec: ProjectionSpec) -> Result<Self, EmbedError> {
        assert!(spec.in_dim > 0 && spec.out_dim > 0);
        let mut rng = stream(spec.seed, "projection", 0);
        let scale = 1.0 / (spec.in_dim as f64).sqrt();
        let n = spec.out_dim * spec.in_dim;
        let mut matrix = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            matrix.push((z * scale) as f32);
        }
        let mut hasher = Fnv1a64::new();
        for v in &matrix {
            hasher.update(&v.to_le_bytes());
        }
        let checksum = hasher.finish();
        if let Some(pinned) = spec.checksum {
            if pinned != checksum {
                return Err(EmbedError::Io(format!(
                    "projection checksum mismatch: pinned {pinned:#018x}, built {checksum:#018x}"
                )));
            }
        }
        let spec = ProjectionSpec {
            checksum: Some(checksum),
            ..spec
        };
        Ok(Self { spec, matrix })
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    pub fn checksum(&self) -> u64 {
        self.spec.checksum.expect("filled on build")
    }

    pub fn apply(&self, vec: &EmbeddingVector) -> Result<EmbeddingVector, EmbedError> {
        if vec.dim() != self.spec.in_dim {
            return Err(EmbedError::DimMismatch {
                expected: self.spec.in_dim,
                found: vec.dim(),
            });
        }
        let mut out = vec![0.0f32; self.spec.out_dim];
        // out (out_dim x 1) = M (out_dim x in_dim) . v (in_dim x 1)
        f32::gemm(
            self.spec.out_dim,
            self.spec.in_dim,
            1,
            1.0,
            &self.matrix,
            self.spec.in_dim as isize,
            1,
            &vec.values,
            1,
            1,
            0.0,
            &mut out,
            1,
            1,
        );
        Ok(EmbeddingVector {
            values: out,
            source: vec.source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::encoder::{cosine, EmbeddingSource, HashEncoder, TextEncoder};
    use rand::Rng;

    fn small_spec(seed: u64) -> ProjectionSpec {
        ProjectionSpec {
            in_dim: 64,
            out_dim: 256,
            seed,
            checksum: None,
        }
    }

    fn vec_of(values: Vec<f32>) -> EmbeddingVector {
        EmbeddingVector {
            values,
            source: EmbeddingSource::Hash,
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let p = Projection::build(small_spec(1)).unwrap();
        let out = p.apply(&vec_of(vec![0.0; 64])).unwrap();
        assert!(out.values.iter().all(|v| *v == 0.0));
        assert_eq!(out.dim(), 256);
    }

    #[test]
    fn linearity() {
        let p = Projection::build(small_spec(2)).unwrap();
        let mut rng = crate::rng::stream(9, "test", 0);
        let a: Vec<f32> = (0..64).map(|_| rng.random::<f32>() - 0.5).collect();
        let b: Vec<f32> = (0..64).map(|_| rng.random::<f32>() - 0.5).collect();
        let sum: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let pa = p.apply(&vec_of(a)).unwrap();
        let pb = p.apply(&vec_of(b)).unwrap();
        let ps = p.apply(&vec_of(sum)).unwrap();
        for i in 0..256 {
            assert!((pa.values[i] + pb.values[i] - ps.values[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_checksum() {
        let a = Projection::build(ProjectionSpec::new(42)).unwrap();
        let b = Projection::build(ProjectionSpec::new(42)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let c = Projection::build(ProjectionSpec::new(43)).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn pinned_checksum_verified() {
        let built = Projection::build(small_spec(3)).unwrap();
        let pinned = ProjectionSpec {
            checksum: Some(built.checksum()),
            ..small_spec(3)
        };
        assert!(Projection::build(pinned).is_ok());
        let wrong = ProjectionSpec {
            checksum: Some(built.checksum() ^ 1),
            ..small_spec(3)
        };
        assert!(Projection::build(wrong).is_err());
    }

    #[test]
    fn dim_mismatch_rejected() {
        let p = Projection::build(small_spec(4)).unwrap();
        assert!(matches!(
            p.apply(&vec_of(vec![0.0; 63])),
            Err(EmbedError::DimMismatch { expected: 64, found: 63 })
        ));
    }

    #[test]
    fn projection_roughly_preserves_pairwise_geometry() {
        // Johnson-Lindenstrauss sanity check: rank correlation of pairwise
        // cosines before and after projecting must stay high.
        let enc = HashEncoder::default();
        let p = Projection::build(ProjectionSpec::new(7)).unwrap();
        // Texts drawn from a small shared vocabulary so the pre-projection
        // cosines actually spread over a range instead of all sitting at 0.
        let mut rng = crate::rng::stream(11, "jl", 0);
        let texts: Vec<String> = (0..15)
            .map(|_| {
                let n = rng.random_range(5..15);
                (0..n)
                    .map(|_| format!("w{}", rng.random_range(0..40u32)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let raw: Vec<EmbeddingVector> = texts.iter().map(|t| enc.encode(t).unwrap()).collect();
        let proj: Vec<EmbeddingVector> = raw.iter().map(|v| p.apply(v).unwrap()).collect();
        let mut before = Vec::new();
        let mut after = Vec::new();
        for i in 0..raw.len() {
            for j in (i + 1)..raw.len() {
                before.push(cosine(&raw[i].values, &raw[j].values));
                after.push(cosine(&proj[i].values, &proj[j].values));
            }
        }
        assert!(before.len() >= 100);
        let rank = |xs: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
            let mut r = vec![0.0; xs.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let ra = rank(&before);
        let rb = rank(&after);
        let n = ra.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..ra.len() {
            num += (ra[i] - mean) * (rb[i] - mean);
            da += (ra[i] - mean).powi(2);
            db += (rb[i] - mean).powi(2);
        }
        let spearman = num / (da.sqrt() * db.sqrt());
        assert!(spearman > 0.8, "rank correlation {spearman}");
    }
}
