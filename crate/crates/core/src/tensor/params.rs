//! Named parameter storage shared across graphs, plus the checkpoint
//! format: a named manifest followed by float32 buffers and a checksum.
//!
//! Layout: magic "SBCK", version u32, count u32, then per parameter
//! (name length u32, UTF-8 name, rows u32, cols u32), then every buffer as
//! little-endian f32 in manifest order, then FNV-1a over all prior bytes.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::Fnv1a64;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Self(i)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std) resampled until |z| <= 2 std.
    TruncNormal { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamError {
    Io(String),
    Parse { offset: u64, message: String },
    ManifestMismatch(String),
    ChecksumMismatch { stored: u64, computed: u64 },
}

impl std::fmt::Display for ParamError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(m) => write!(f, "checkpoint io error: {m}"),
            Self::Parse { offset, message } => {
                write!(f, "checkpoint parse error at byte {offset}: {message}")
            }
            Self::ManifestMismatch(m) => write!(f, "checkpoint manifest mismatch: {m}"),
            Self::ChecksumMismatch { stored, computed } => write!(
                f,
                "checkpoint checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
            ),
        }
    }
}

impl std::error::Error for ParamError {}

/// All learnable tensors of a model, with gradient accumulators.
#[derive(Clone)]
pub struct ParamSet<S: Scalar> {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    data: Vec<Vec<S>>,
    grad: Vec<Vec<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            data: Vec::new(),
            grad: Vec::new(),
        }
    }

    pub fn add(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        let n = rows * cols;
        let data: Vec<S> = match init {
            Init::Zeros => vec![S::zero(); n],
            Init::Ones => vec![S::one(); n],
            Init::TruncNormal { std } => (0..n)
                .map(|_| {
                    loop {
                        // Box-Muller free: sample via rand_distr-style inverse
                        // would add a dependency point; two uniforms suffice.
                        let u1: f64 = rng.random::<f64>().max(1e-12);
                        let u2: f64 = rng.random::<f64>();
                        let z = (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos();
                        if z.abs() <= 2.0 {
                            return S::of_f64(z * std);
                        }
                    }
                })
                .collect(),
        };
        self.names.push(name.to_string());
        self.shapes.push((rows, cols));
        self.data.push(data);
        self.grad.push(vec![S::zero(); n]);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.shapes.iter().map(|(r, c)| r * c).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        self.shapes[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[S] {
        &self.data[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.data[id.0]
    }

    pub fn grad_of(&self, id: ParamId) -> &[S] {
        &self.grad[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn accumulate_grad(&mut self, id: ParamId, contrib: &[S]) {
        let g = &mut self.grad[id.0];
        assert_eq!(g.len(), contrib.len());
        for (dst, src) in g.iter_mut().zip(contrib) {
            *dst += *src;
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        let ks = S::of_f64(k);
        for g in &mut self.grad {
            for v in g.iter_mut() {
                *v *= ks;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grad {
            for v in g.iter_mut() {
                *v = S::zero();
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Applies `f(data, grad)` to every parameter in order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut [S], &[S])) {
        for i in 0..self.data.len() {
            f(i, &mut self.data[i], &self.grad[i]);
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamError> {
        let file = std::fs::File::create(path).map_err(|e| ParamError::Io(e.to_string()))?;
        let mut w = HashingWriter::new(BufWriter::new(file));
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.names.len() as u32).to_le_bytes())?;
        for (name, (rows, cols)) in self.names.iter().zip(&self.shapes) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(*rows as u32).to_le_bytes())?;
            w.write_all(&(*cols as u32).to_le_bytes())?;
        }
        for buf in &self.data {
            for v in buf {
                w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
            }
        }
        let checksum = w.hash();
        w.into_inner_write(&checksum.to_le_bytes())
    }

    /// Loads values into this set. The file manifest must name exactly the
    /// parameters this set holds, with matching shapes.
    pub fn load(&mut self, path: &Path) -> Result<(), ParamError> {
        let file = std::fs::File::open(path).map_err(|e| ParamError::Io(e.to_string()))?;
        let mut r = HashingReader::new(BufReader::new(file));
        let mut magic = [0u8; 4];
        r.read_exact_at(&mut magic, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ParamError::Parse {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        }
        let version = r.read_u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(ParamError::Parse {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let count = r.read_u32("count")? as usize;
        if count != self.names.len() {
            return Err(ParamError::ManifestMismatch(format!(
                "file has {count} parameters, model has {}",
                self.names.len()
            )));
        }
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.read_u32("name length")? as usize;
            let at = r.offset;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact_at(&mut name_bytes, "name")?;
            let name = String::from_utf8(name_bytes).map_err(|e| ParamError::Parse {
                offset: at,
                message: format!("name not UTF-8: {e}"),
            })?;
            let rows = r.read_u32("rows")? as usize;
            let cols = r.read_u32("cols")? as usize;
            manifest.push((name, rows, cols));
        }
        for (i, (name, rows, cols)) in manifest.iter().enumerate() {
            if name != &self.names[i] || (*rows, *cols) != self.shapes[i] {
                return Err(ParamError::ManifestMismatch(format!(
                    "entry {i}: file has {name} {rows}x{cols}, model has {} {}x{}",
                    self.names[i], self.shapes[i].0, self.shapes[i].1
                )));
            }
        }
        let mut loaded: Vec<Vec<S>> = Vec::with_capacity(count);
        let mut fbuf = [0u8; 4];
        for (_, rows, cols) in &manifest {
            let mut buf = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact_at(&mut fbuf, "values")?;
                buf.push(S::of_f64(f32::from_le_bytes(fbuf) as f64));
            }
            loaded.push(buf);
        }
        let computed = r.hash();
        let mut cbuf = [0u8; 8];
        r.read_exact_at(&mut cbuf, "checksum")?;
        let stored = u64::from_le_bytes(cbuf);
        if stored != computed {
            return Err(ParamError::ChecksumMismatch { stored, computed });
        }
        self.data = loaded;
        Ok(())
    }
}

struct HashingWriter<W> {
    inner: W,
    hasher: Fnv1a64,
}

impl<W: Write> HashingWriter<W> {
    fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: Fnv1a64::new(),
        }
    }

    fn write_all(&mut self, buf: &[u8]) -> Result<(), ParamError> {
        self.hasher.update(buf);
        self.inner
            .write_all(buf)
            .map_err(|e| ParamError::Io(e.to_string()))
    }

    fn hash(&self) -> u64 {
        self.hasher.finish()
    }

    fn into_inner_write(mut self, trailer: &[u8]) -> Result<(), ParamError> {
        self.inner
            .write_all(trailer)
            .map_err(|e| ParamError::Io(e.to_string()))?;
        self.inner.flush().map_err(|e| ParamError::Io(e.to_string()))
    }
}

struct HashingReader<R> {
    inner: R,
    hasher: Fnv1a64,
    offset: u64,
    hashing: bool,
}

impl<R: Read> HashingReader<R> {
    fn new(inner: R) -> Self {
        Self {
            inner,
            hasher: Fnv1a64::new(),
            offset: 0,
            hashing: true,
        }
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<(), ParamError> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| ParamError::Parse {
            offset: at,
            message: format!("{what}: {e}"),
        })?;
        if self.hashing {
            self.hasher.update(buf);
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self, what: &str) -> Result<u32, ParamError> {
        let mut buf = [0u8; 4];
        self.read_exact_at(&mut buf, what)?;
        Ok(u32::from_le_bytes(buf))
    }

    /// Finalizes the running hash; later reads (the trailer) skip it.
    fn hash(&mut self) -> u64 {
        self.hashing = false;
        self.hasher.finish()
    }
}
