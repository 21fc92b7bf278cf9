//! Deterministic hash embedder: the default text encoder standing in for a
//! frozen language model. Fully specified so vectors match across platforms.

use rand::seq::SliceRandom;

use crate::rng::{fnv1a64, stream};

/// Default encoder output width; matches the cache/projection contract.
pub const HASH_DIM: usize = 896;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Hash,
    Cached,
}

/// A dense sentence embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub source: EmbeddingSource,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedError {
    EmptyText,
    DimMismatch { expected: usize, found: usize },
    CacheMiss { text: String },
    Parse { offset: u64, message: String },
    Io(String),
}

impl std::fmt::Display for EmbedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EmptyText => write!(f, "cannot embed empty text"),
            Self::DimMismatch { expected, found } => {
                write!(f, "embedding dim mismatch: expected {expected}, found {found}")
            }
            Self::CacheMiss { text } => {
                write!(f, "no cached embedding for text: {text:?}")
            }
            Self::Parse { offset, message } => {
                write!(f, "cache parse error at byte {offset}: {message}")
            }
            Self::Io(m) => write!(f, "embedding io error: {m}"),
        }
    }
}

impl std::error::Error for EmbedError {}

/// Anything that turns text into a fixed-width vector.
pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Signed feature hashing: lowercase alphanumeric tokens, FNV-hashed into
/// buckets with a sign bit, counts accumulated and L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashEncoder {
    dim: usize,
}

impl HashEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }
}

impl Default for HashEncoder {
    fn default() -> Self {
        Self::new(HASH_DIM)
    }
}

impl TextEncoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let lowered = text.to_lowercase();
        let mut acc = vec![0.0f64; self.dim];
        let mut any = false;
        for token in lowered.split(|c: char| !c.is_alphanumeric()) {
            if token.is_empty() {
                continue;
            }
            any = true;
            let h = fnv1a64(token.as_bytes());
            // Low bits pick the bucket, the top bit picks the sign. One hash,
            // two nearly independent fields.
            let idx = ((h & 0x7fff_ffff_ffff_ffff) % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[idx] += sign;
        }
        if !any {
            return Err(EmbedError::EmptyText);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        debug_assert!(norm > 0.0);
        let values = acc.iter().map(|v| (v / norm) as f32).collect();
        Ok(EmbeddingVector {
            values,
            source: EmbeddingSource::Hash,
        })
    }
}

/// Randomizes sample-embedding correspondences: a seeded uniform permutation
/// applied to the vectors only.
pub fn shuffle_pairings(
    texts: &[String],
    vectors: Vec<EmbeddingVector>,
    seed: u64,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.len() != vectors.len() {
        return Err(EmbedError::DimMismatch {
            expected: texts.len(),
            found: vectors.len(),
        });
    }
    let mut perm: Vec<usize> = (0..vectors.len()).collect();
    let mut rng = stream(seed, "shuffle-pairings", 0);
    perm.shuffle(&mut rng);
    let mut slots: Vec<Option<EmbeddingVector>> = vectors.into_iter().map(Some).collect();
    Ok(perm.iter().map(|&i| slots[i].take().expect("permutation visits each slot once")).collect())
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        dot += *x as f64 * *y as f64;
        na += (*x as f64).powi(2);
        nb += (*y as f64).powi(2);
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{HistoryCategory, Regime, Style, TemplatePool};

    #[test]
    fn identical_text_identical_vector() {
        let enc = HashEncoder::default();
        let a = enc.encode("abc").unwrap();
        let b = enc.encode("abc").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), HASH_DIM);
        assert_eq!(a.source, EmbeddingSource::Hash);
    }

    #[test]
    fn tokenization_is_case_and_punctuation_insensitive() {
        let enc = HashEncoder::default();
        let a = enc.encode("The ROI was good.").unwrap();
        let b = enc.encode("the roi was GOOD").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_vocabulary_near_orthogonal() {
        let enc = HashEncoder::default();
        let a = enc.encode("abc").unwrap();
        let b = enc.encode("xyz qrs").unwrap();
        assert!(cosine(&a.values, &b.values).abs() < 0.2);
    }

    #[test]
    fn unit_norm() {
        let enc = HashEncoder::default();
        for text in [
            "a",
            "Maximize conversions while maintaining CPA below 8.3.",
            "one two three four five six seven eight nine ten",
        ] {
            let v = enc.encode(text).unwrap();
            let norm = v.values.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "{text}: {norm}");
        }
    }

    #[test]
    fn empty_text_rejected() {
        let enc = HashEncoder::default();
        assert_eq!(enc.encode(""), Err(EmbedError::EmptyText));
        assert_eq!(enc.encode("  ... "), Err(EmbedError::EmptyText));
    }

    #[test]
    fn category_separability_on_bundled_pools() {
        let enc = HashEncoder::default();
        let pool = TemplatePool::get(Style::Standard, Regime::HighConv).unwrap();
        let cats = [
            HistoryCategory::RoiLow,
            HistoryCategory::RoiModerate,
            HistoryCategory::RoiGood,
            HistoryCategory::CvrIncrease,
            HistoryCategory::CvrDecrease,
            HistoryCategory::CpaIncrease,
            HistoryCategory::CpaDecrease,
        ];
        let embedded: Vec<Vec<EmbeddingVector>> = cats
            .iter()
            .map(|&c| {
                pool.history_variants(c)
                    .iter()
                    .map(|t| enc.encode(t).unwrap())
                    .collect()
            })
            .collect();
        let mut within = Vec::new();
        let mut cross = Vec::new();
        for (ci, group) in embedded.iter().enumerate() {
            for i in 0..group.len() {
                for j in (i + 1)..group.len() {
                    within.push(cosine(&group[i].values, &group[j].values));
                }
                for other in embedded.iter().skip(ci + 1) {
                    for v in other {
                        cross.push(cosine(&group[i].values, &v.values));
                    }
                }
            }
        }
        let mw = within.iter().sum::<f64>() / within.len() as f64;
        let mc = cross.iter().sum::<f64>() / cross.len() as f64;
        assert!(mw > mc, "within {mw} <= cross {mc}");
    }

    #[test]
    fn shuffle_preserves_multiset_and_is_seeded() {
        let enc = HashEncoder::default();
        let texts: Vec<String> = (0..20).map(|i| format!("token{i} filler")).collect();
        let vectors: Vec<EmbeddingVector> =
            texts.iter().map(|t| enc.encode(t).unwrap()).collect();
        let a = shuffle_pairings(&texts, vectors.clone(), 5).unwrap();
        let b = shuffle_pairings(&texts, vectors.clone(), 5).unwrap();
        assert_eq!(a, b);
        let c = shuffle_pairings(&texts, vectors.clone(), 6).unwrap();
        assert_ne!(a, c);
        let mut sort_key = |v: &EmbeddingVector| {
            v.values
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        let mut orig: Vec<_> = vectors.iter().map(&mut sort_key).collect();
        let mut shuf: Vec<_> = a.iter().map(&mut sort_key).collect();
        orig.sort();
        shuf.sort();
        assert_eq!(orig, shuf);
    }

    #[test]
    fn shuffle_single_element_is_identity() {
        let texts = vec!["only one".to_string()];
        let enc = HashEncoder::default();
        let vectors = vec![enc.encode(&texts[0]).unwrap()];
        let out = shuffle_pairings(&texts, vectors.clone(), 1).unwrap();
        assert_eq!(out, vectors);
    }

    #[test]
    fn shuffle_length_mismatch_rejected() {
        let texts = vec!["a".to_string()];
        assert!(shuffle_pairings(&texts, Vec::new(), 1).is_err());
    }
}
