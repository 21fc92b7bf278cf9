//! Text-encoding layer: a deterministic hash embedder, an on-disk cache for
//! externally computed vectors, and the frozen random up-projection.

pub mod cache;
pub mod encoder;
pub mod pipeline;
pub mod projection;

pub use cache::{CachedEncoder, EmbeddingCache, CACHE_MAGIC, CACHE_VERSION};
pub use encoder::{
    cosine, shuffle_pairings, EmbedError, EmbeddingSource, EmbeddingVector, HashEncoder,
    TextEncoder, HASH_DIM,
};
pub use pipeline::{SemanticPipeline, DEFAULT_PROJECTION_SEED};
pub use projection::{Projection, ProjectionSpec, PROJECTION_IN_DIM, PROJECTION_OUT_DIM};
