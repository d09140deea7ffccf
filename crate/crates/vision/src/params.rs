//! Named trainable parameters, their gradients, and checkpoint i/o.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Clone)]
struct Entry {
    value: Mat,
    grad: Mat,
}

/// Flat collection of named parameter matrices. Gradients accumulate across
/// [`crate::autodiff::Tape::grads_to`] calls until the optimizer consumes
/// them.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
    grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Mat) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter {:?}", name)));
        }
        let shape = value.shape();
        self.entries.push(Entry {
            value,
            grad: Mat::zeros(shape.0, shape.1),
        });
        self.index.insert(name.to_string(), self.entries.len() - 1);
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown parameter {:?}", name)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn value_at(&self, idx: usize) -> &Mat {
        &self.entries[idx].value
    }

    pub fn value_at_mut(&mut self, idx: usize) -> &mut Mat {
        &mut self.entries[idx].value
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        Ok(self.value_at(self.index_of(name)?))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Mat> {
        let idx = self.index_of(name)?;
        Ok(self.value_at_mut(idx))
    }

    pub fn grad(&self, name: &str) -> Result<&Mat> {
        Ok(&self.entries[self.index_of(name)?].grad)
    }

    pub fn grad_at(&self, idx: usize) -> &Mat {
        &self.entries[idx].grad
    }

    /// Simultaneous mutable value / immutable gradient access to one entry.
    pub fn value_mut_grad(&mut self, idx: usize) -> (&mut Mat, &Mat) {
        let e = &mut self.entries[idx];
        (&mut e.value, &e.grad)
    }

    pub fn accumulate_grad(&mut self, idx: usize, g: &Mat) -> Result<()> {
        let entry = &mut self.entries[idx];
        if entry.grad.shape() != g.shape() {
            let (lr, lc) = entry.grad.shape();
            let (rr, rc) = g.shape();
            return Err(Error::Shape {
                op: "accumulate_grad",
                lhs_rows: lr,
                lhs_cols: lc,
                rhs_rows: rr,
                rhs_cols: rc,
            });
        }
        entry.grad.add_assign(g);
        Ok(())
    }

    pub fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.scale_assign(0.0);
        }
        self.grads_ready = false;
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Names in lexicographic order — the canonical iteration order for
    /// hashing and checkpoints.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// (name, index) pairs in canonical order.
    fn sorted_entries(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.index.iter().map(|(n, &i)| (n.as_str(), &self.entries[i]))
    }

    /// SHA-256 over names, shapes and little-endian values in canonical
    /// order, hex-encoded. Bit-identical parameters hash identically on any
    /// platform.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, e) in self.sorted_entries() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((e.value.rows() as u64).to_le_bytes());
            h.update((e.value.cols() as u64).to_le_bytes());
            for &x in e.value.as_slice() {
                h.update(x.to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }
}

const CKPT_MAGIC: &[u8; 4] = b"VCKP";
const CKPT_VERSION: u32 = 1;

/// Write a checkpoint: magic, version, config hash, RNG seed, then each
/// parameter in canonical name order as (name, shape, little-endian f64s).
pub fn save_checkpoint(store: &ParamStore, path: &Path, config_hash: u64, seed: u64) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&config_hash.to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&(store.num_entries() as u64).to_le_bytes());
    for (name, e) in store.sorted_entries() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(e.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(e.value.cols() as u64).to_le_bytes());
        for &x in e.value.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a checkpoint back. Returns the store plus the recorded config hash
/// and RNG seed.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, u64, u64)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} truncated at byte {}",
                path.display(),
                pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            version
        )));
    }
    let config_hash = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let rows = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        store.insert(&name, Mat::from_vec(rows, cols, data))?;
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} has {} trailing bytes",
            path.display(),
            bytes.len() - pos
        )));
    }
    Ok((store, config_hash, seed))
}
