//! Named parameter storage, the SGD update and the binary checkpoint format.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! ENROLL-CKPT v1\n
//! u32 tensor count
//! repeated: u32 name length, name bytes (UTF-8),
//!           u32 rank, u64 per dim, f64 values in row-major order
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{EnrollError, Result};

/// Gaussian init widths: lookup tables (token and code embeddings) and
/// every other weight matrix. `weight: None` scales each matrix by its
/// fan-in, `sqrt(2 / fan_in)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitStd {
    pub embedding: f64,
    pub weight: Option<f64>,
}

impl InitStd {
    pub fn uniform(std: f64) -> Self {
        Self {
            embedding: std,
            weight: Some(std),
        }
    }

    pub fn weight_std(&self, fan_in: usize) -> f64 {
        self.weight.unwrap_or_else(|| (2.0 / fan_in.max(1) as f64).sqrt())
    }
}

pub const CHECKPOINT_MAGIC: &str = "ENROLL-CKPT v1";

/// Stable handle into a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors. Insertion order is the iteration and
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(EnrollError::DuplicateId {
                kind: "parameter",
                id: name.to_string(),
            });
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Registers a tensor filled from `N(0, std²)`.
    pub fn insert_gaussian<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = if std == 0.0 {
            vec![0.0; n]
        } else {
            let normal = Normal::new(0.0, std)
                .map_err(|e| EnrollError::Config(format!("init std {std}: {e}")))?;
            (0..n).map(|_| normal.sample(rng)).collect()
        };
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// `[out, in]` weight matrix drawn with `std.weight_std(in)`.
    pub fn insert_weight<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        out: usize,
        inp: usize,
        std: InitStd,
        rng: &mut R,
    ) -> Result<ParamId> {
        self.insert_gaussian(name, &[out, inp], std.weight_std(inp), rng)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// A store with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (name, t) in self.iter() {
            out.insert(name, Tensor::zeros(t.shape())).expect("names are unique");
        }
        out
    }

    pub fn same_layout(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(EnrollError::ParamMismatch(format!(
                "{} tensors vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb {
                return Err(EnrollError::ParamMismatch(format!("name `{na}` vs `{nb}`")));
            }
            if ta.shape() != tb.shape() {
                return Err(EnrollError::ParamMismatch(format!(
                    "`{na}` shape {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.scalar_count() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in self.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| EnrollError::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| EnrollError::io(path, e))
    }

    /// Overwrites every tensor from checkpoint bytes. The checkpoint must carry
    /// exactly this store's names, in order, with identical shapes.
    pub fn load_bytes_into(&mut self, bytes: &[u8]) -> Result<()> {
        let mut cur = Cursor { bytes, pos: 0 };
        let header = cur.take(CHECKPOINT_MAGIC.len() + 1)?;
        if &header[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC.as_bytes()
            || header[CHECKPOINT_MAGIC.len()] != b'\n'
        {
            return Err(EnrollError::Checkpoint("bad header".into()));
        }
        let count = cur.u32()? as usize;
        if count != self.len() {
            return Err(EnrollError::Checkpoint(format!(
                "expected {} tensors, found {count}",
                self.len()
            )));
        }
        for i in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| EnrollError::Checkpoint("non-UTF-8 tensor name".into()))?
                .to_string();
            if name != self.names[i] {
                return Err(EnrollError::Checkpoint(format!(
                    "tensor {i}: expected `{}`, found `{name}`",
                    self.names[i]
                )));
            }
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64()? as usize);
            }
            if shape != self.tensors[i].shape() {
                return Err(EnrollError::Checkpoint(format!(
                    "`{name}`: expected shape {:?}, found {shape:?}",
                    self.tensors[i].shape()
                )));
            }
            for v in self.tensors[i].data_mut() {
                *v = cur.f64()?;
            }
        }
        if cur.pos != bytes.len() {
            return Err(EnrollError::Checkpoint("trailing bytes".into()));
        }
        Ok(())
    }

    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| EnrollError::io(path, e))?;
        self.load_bytes_into(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EnrollError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = grads
        .tensors
        .iter()
        .flat_map(|t| t.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for t in &mut grads.tensors {
            t.data_mut().iter_mut().for_each(|g| *g *= c);
        }
    }
    norm
}

/// `w ← w − lr·(g + l2·w)` for every entry.
pub fn sgd_step(
    params: &mut ParameterStore,
    grads: &ParameterStore,
    lr: f64,
    l2: f64,
) -> Result<()> {
    params.same_layout(grads)?;
    for (w, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        for (wi, gi) in w.data_mut().iter_mut().zip(g.data()) {
            *wi -= lr * (gi + l2 * *wi);
        }
    }
    Ok(())
}
