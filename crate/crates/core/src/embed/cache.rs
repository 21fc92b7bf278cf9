//! File-backed embedding cache so externally computed sentence vectors can
//! replace the hash encoder without any in-process model inference.
//!
//! Format: magic "SBEC", version u32, dim u32, then records of
//! (text byte length u32, UTF-8 bytes, dim little-endian f32 values) until
//! end of file. All integers little-endian.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::rng::fnv1a64;

use super::encoder::{EmbedError, EmbeddingSource, EmbeddingVector, HashEncoder, TextEncoder};

pub const CACHE_MAGIC: [u8; 4] = *b"SBEC";
pub const CACHE_VERSION: u32 = 1;

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<(), EmbedError> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| EmbedError::Parse {
            offset: at,
            message: format!("{what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Distinguishes clean end-of-file (no record starts here) from a
    /// truncated record.
    fn try_read_u32(&mut self, what: &str) -> Result<Option<u32>, EmbedError> {
        let at = self.offset;
        let mut buf = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            let n = self.inner.read(&mut buf[filled..]).map_err(|e| EmbedError::Parse {
                offset: at + filled as u64,
                message: format!("{what}: {e}"),
            })?;
            if n == 0 {
                if filled == 0 {
                    return Ok(None);
                }
                return Err(EmbedError::Parse {
                    offset: at + filled as u64,
                    message: format!("{what}: truncated"),
                });
            }
            filled += n;
        }
        self.offset += 4;
        Ok(Some(u32::from_le_bytes(buf)))
    }

    fn read_u32(&mut self, what: &str) -> Result<u32, EmbedError> {
        let mut buf = [0u8; 4];
        self.read_exact_at(&mut buf, what)?;
        Ok(u32::from_le_bytes(buf))
    }
}

/// In-memory cache: insertion-ordered records plus an exact-text index.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dim: usize,
    entries: Vec<(String, Vec<f32>)>,
    index: HashMap<u64, usize>,
}

impl EmbeddingCache {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self {
            dim,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, text: &str, values: Vec<f32>) -> Result<(), EmbedError> {
        if values.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        let key = fnv1a64(text.as_bytes());
        match self.index.get(&key) {
            Some(&i) if self.entries[i].0 == text => {
                self.entries[i].1 = values;
            }
            _ => {
                self.index.insert(key, self.entries.len());
                self.entries.push((text.to_string(), values));
            }
        }
        Ok(())
    }

    pub fn lookup(&self, text: &str) -> Option<&[f32]> {
        let key = fnv1a64(text.as_bytes());
        self.index.get(&key).and_then(|&i| {
            let (stored, values) = &self.entries[i];
            (stored == text).then_some(values.as_slice())
        })
    }

    pub fn entries(&self) -> &[(String, Vec<f32>)] {
        &self.entries
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let file = std::fs::File::create(path).map_err(|e| EmbedError::Io(e.to_string()))?;
        let mut w = BufWriter::new(file);
        let io = |e: std::io::Error| EmbedError::Io(e.to_string());
        w.write_all(&CACHE_MAGIC).map_err(io)?;
        w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for (text, values) in &self.entries {
            w.write_all(&(text.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(text.as_bytes()).map_err(io)?;
            for v in values {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let file = std::fs::File::open(path).map_err(|e| EmbedError::Io(e.to_string()))?;
        let mut r = CountingReader::new(BufReader::new(file));
        let mut magic = [0u8; 4];
        r.read_exact_at(&mut magic, "magic")?;
        if magic != CACHE_MAGIC {
            return Err(EmbedError::Parse {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        }
        let version = r.read_u32("version")?;
        if version != CACHE_VERSION {
            return Err(EmbedError::Parse {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let dim = r.read_u32("dim")? as usize;
        if dim == 0 {
            return Err(EmbedError::Parse {
                offset: 8,
                message: "zero dim".into(),
            });
        }
        let mut cache = Self::new(dim);
        while let Some(text_len) = r.try_read_u32("record text length")? {
            let at = r.offset;
            let mut text_bytes = vec![0u8; text_len as usize];
            r.read_exact_at(&mut text_bytes, "record text")?;
            let text = String::from_utf8(text_bytes).map_err(|e| EmbedError::Parse {
                offset: at,
                message: format!("record text not UTF-8: {e}"),
            })?;
            let mut values = Vec::with_capacity(dim);
            let mut buf = [0u8; 4];
            for _ in 0..dim {
                r.read_exact_at(&mut buf, "record values")?;
                values.push(f32::from_le_bytes(buf));
            }
            cache.insert(&text, values)?;
        }
        Ok(cache)
    }
}

/// Encoder backed by a cache, optionally falling back to hashing on a miss.
pub struct CachedEncoder {
    cache: EmbeddingCache,
    fallback: Option<HashEncoder>,
}

impl CachedEncoder {
    /// Strict mode: any text absent from the cache is an error.
    pub fn strict(cache: EmbeddingCache) -> Self {
        Self {
            cache,
            fallback: None,
        }
    }

    /// Permissive mode: misses fall back to the hash encoder, which must
    /// produce vectors of the cache's width.
    pub fn permissive(cache: EmbeddingCache) -> Result<Self, EmbedError> {
        let fallback = HashEncoder::new(cache.dim());
        Ok(Self {
            cache,
            fallback: Some(fallback),
        })
    }
}

impl TextEncoder for CachedEncoder {
    fn dim(&self) -> usize {
        self.cache.dim()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(values) = self.cache.lookup(text) {
            return Ok(EmbeddingVector {
                values: values.to_vec(),
                source: EmbeddingSource::Cached,
            });
        }
        match &self.fallback {
            Some(enc) => enc.encode(text),
            None => Err(EmbedError::CacheMiss {
                text: text.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::mem::forget(dir); // keep alive for the test process
        path
    }

    #[test]
    fn round_trip_bit_identical() {
        let mut rng = crate::rng::stream(3, "cache-test", 0);
        let mut cache = EmbeddingCache::new(32);
        let mut expected = Vec::new();
        for i in 0..100 {
            let text = format!("sentence number {i} with token {}", rng.random::<u32>());
            let values: Vec<f32> = (0..32).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
            cache.insert(&text, values.clone()).unwrap();
            expected.push((text, values));
        }
        let path = tmp("cache.bin");
        cache.save(&path).unwrap();
        let loaded = EmbeddingCache::load(&path).unwrap();
        assert_eq!(loaded.len(), 100);
        assert_eq!(loaded.dim(), 32);
        for (text, values) in &expected {
            let got = loaded.lookup(text).unwrap();
            let a: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = got.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn strict_mode_miss_is_error() {
        let enc = CachedEncoder::strict(EmbeddingCache::new(896));
        assert!(matches!(
            enc.encode("never cached"),
            Err(EmbedError::CacheMiss { .. })
        ));
    }

    #[test]
    fn permissive_mode_falls_back_to_hash() {
        let mut cache = EmbeddingCache::new(896);
        cache.insert("known text", vec![0.5; 896]).unwrap();
        let enc = CachedEncoder::permissive(cache).unwrap();
        let hit = enc.encode("known text").unwrap();
        assert_eq!(hit.source, EmbeddingSource::Cached);
        assert_eq!(hit.values[0], 0.5);
        let miss = enc.encode("unknown text").unwrap();
        assert_eq!(miss.source, EmbeddingSource::Hash);
        assert_eq!(miss.dim(), 896);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let path = tmp("bad.bin");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        match EmbeddingCache::load(&path) {
            Err(EmbedError::Parse { offset: 0, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn truncated_record_reports_offset() {
        let mut cache = EmbeddingCache::new(8);
        cache.insert("abc", vec![1.0; 8]).unwrap();
        let path = tmp("trunc.bin");
        cache.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = bytes.len() - 7; // inside the float block
        std::fs::write(&path, &bytes[..cut]).unwrap();
        match EmbeddingCache::load(&path) {
            Err(EmbedError::Parse { offset, message }) => {
                assert!(offset > 12, "offset {offset} message {message}");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn insert_dim_checked_and_overwrites() {
        let mut cache = EmbeddingCache::new(4);
        assert!(cache.insert("t", vec![0.0; 3]).is_err());
        cache.insert("t", vec![1.0; 4]).unwrap();
        cache.insert("t", vec![2.0; 4]).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.lookup("t").unwrap()[0], 2.0);
    }
}
