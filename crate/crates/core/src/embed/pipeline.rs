//! Text-to-model-input pipeline: encoder, optional frozen up-projection,
//! and an exact-text memo so each unique string is encoded once.

use std::collections::HashMap;
use std::rc::Rc;

use super::cache::{CachedEncoder, EmbeddingCache};
use super::encoder::{EmbedError, HashEncoder, TextEncoder};
use super::projection::{Projection, ProjectionSpec, PROJECTION_OUT_DIM};

/// Default seed of the frozen up-projection. Train and eval must agree on
/// the matrix, so it is part of the pipeline contract, not a free knob.
pub const DEFAULT_PROJECTION_SEED: u64 = 0;

pub struct SemanticPipeline {
    encoder: Box<dyn TextEncoder>,
    projection: Option<Projection>,
    memo: HashMap<String, Rc<Vec<f32>>>,
    encoder_calls: usize,
}

impl SemanticPipeline {
    /// Wraps an encoder. Outputs narrower than the model input width pass
    /// through the frozen random projection; outputs already at the model
    /// width pass through untouched.
    pub fn new(encoder: Box<dyn TextEncoder>, projection_seed: u64) -> Result<Self, EmbedError> {
        let projection = if encoder.dim() == PROJECTION_OUT_DIM {
            None
        } else {
            let spec = ProjectionSpec {
                seed: projection_seed,
                in_dim: encoder.dim(),
                ..ProjectionSpec::new(projection_seed)
            };
            Some(Projection::build(spec)?)
        };
        Ok(Self {
            encoder,
            projection,
            memo: HashMap::new(),
            encoder_calls: 0,
        })
    }

    /// The default stack: hash encoder into the frozen projection.
    pub fn hashed() -> Self {
        Self::new(Box::new(HashEncoder::default()), DEFAULT_PROJECTION_SEED)
            .expect("hash encoder dims are the projection's contract")
    }

    pub fn from_cache(cache: EmbeddingCache, strict: bool) -> Result<Self, EmbedError> {
        let encoder: Box<dyn TextEncoder> = if strict {
            Box::new(CachedEncoder::strict(cache))
        } else {
            Box::new(CachedEncoder::permissive(cache)?)
        };
        Self::new(encoder, DEFAULT_PROJECTION_SEED)
    }

    pub fn out_dim(&self) -> usize {
        PROJECTION_OUT_DIM
    }

    /// Unique texts seen so far.
    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }

    /// Underlying encoder invocations; stays at memo_len under reuse.
    pub fn encoder_calls(&self) -> usize {
        self.encoder_calls
    }

    pub fn embed(&mut self, text: &str) -> Result<Rc<Vec<f32>>, EmbedError> {
        if let Some(hit) = self.memo.get(text) {
            return Ok(hit.clone());
        }
        self.encoder_calls += 1;
        let raw = self.encoder.encode(text)?;
        let out = match &self.projection {
            Some(p) => p.apply(&raw)?,
            None => raw,
        };
        debug_assert_eq!(out.dim(), PROJECTION_OUT_DIM);
        let rc = Rc::new(out.values);
        self.memo.insert(text.to_string(), rc.clone());
        Ok(rc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memo_encodes_each_unique_text_once() {
        let mut p = SemanticPipeline::hashed();
        let a1 = p.embed("budget pacing is ahead of schedule").unwrap();
        let _ = p.embed("cost per acquisition drifting up").unwrap();
        let a2 = p.embed("budget pacing is ahead of schedule").unwrap();
        assert!(Rc::ptr_eq(&a1, &a2));
        assert_eq!(p.memo_len(), 2);
        assert_eq!(p.encoder_calls(), 2);
        assert_eq!(a1.len(), PROJECTION_OUT_DIM);
    }

    #[test]
    fn wide_cache_skips_projection() {
        let mut cache = EmbeddingCache::new(PROJECTION_OUT_DIM);
        let vec: Vec<f32> = (0..PROJECTION_OUT_DIM).map(|i| i as f32).collect();
        cache.insert("hello world", vec.clone()).unwrap();
        let mut p = SemanticPipeline::from_cache(cache, true).unwrap();
        let out = p.embed("hello world").unwrap();
        assert_eq!(out.as_slice(), vec.as_slice());
        assert!(p.embed("missing text").is_err());
    }

    #[test]
    fn same_seed_same_vectors_across_pipelines() {
        let mut a = SemanticPipeline::hashed();
        let mut b = SemanticPipeline::hashed();
        let va = a.embed("spend 120.5 of 2200 budget").unwrap();
        let vb = b.embed("spend 120.5 of 2200 budget").unwrap();
        assert_eq!(va.as_slice(), vb.as_slice());
    }
}
