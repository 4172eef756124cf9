//! Checkpoint container: a manifest of named tensors (parameters, running
//! statistics, class centers, optimizer moments) plus the scalar training
//! state, each tensor stored in the standard binary tensor format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRCK";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u64,
    /// Next epoch to run (0 = untrained initialization).
    pub epoch: u64,
    pub adam_step: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("checkpoint missing tensor {name:?}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // serialize blobs first so the manifest can carry real offsets
        let mut blobs: Vec<(String, Vec<u8>)> = Vec::with_capacity(self.tensors.len());
        for (name, tensor) in &self.tensors {
            let mut buf = Vec::new();
            tensor.write_to(&mut buf)?;
            blobs.push((name.clone(), buf));
        }
        let header_len: usize = 4
            + 4
            + 8
            + 8
            + 8
            + 32
            + 16
            + 8
            + blobs
                .iter()
                .map(|(name, _)| 4 + name.len() + 8 + 8)
                .sum::<usize>();

        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&self.fingerprint.to_le_bytes())?;
        f.write_all(&self.epoch.to_le_bytes())?;
        f.write_all(&self.adam_step.to_le_bytes())?;
        f.write_all(&self.rng_seed)?;
        f.write_all(&self.rng_word_pos.to_le_bytes())?;
        f.write_all(&(blobs.len() as u64).to_le_bytes())?;
        let mut offset = header_len as u64;
        for (name, blob) in &blobs {
            f.write_all(&(name.len() as u32).to_le_bytes())?;
            f.write_all(name.as_bytes())?;
            f.write_all(&offset.to_le_bytes())?;
            f.write_all(&(blob.len() as u64).to_le_bytes())?;
            offset += blob.len() as u64;
        }
        for (_, blob) in &blobs {
            f.write_all(blob)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let bytes = std::fs::read(path)?;
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut b16 = [0u8; 16];
        r.read_exact(&mut b4)
            .map_err(|_| bad("truncated version"))?;
        if u32::from_le_bytes(b4) != CHECKPOINT_FORMAT_VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut b8)
            .map_err(|_| bad("truncated fingerprint"))?;
        let fingerprint = u64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(|_| bad("truncated epoch"))?;
        let epoch = u64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(|_| bad("truncated step"))?;
        let adam_step = u64::from_le_bytes(b8);
        let mut rng_seed = [0u8; 32];
        r.read_exact(&mut rng_seed)
            .map_err(|_| bad("truncated rng seed"))?;
        r.read_exact(&mut b16)
            .map_err(|_| bad("truncated rng position"))?;
        let rng_word_pos = u128::from_le_bytes(b16);
        r.read_exact(&mut b8)
            .map_err(|_| bad("truncated manifest"))?;
        let count = u64::from_le_bytes(b8) as usize;

        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b4)
                .map_err(|_| bad("truncated name length"))?;
            let name_len = u32::from_le_bytes(b4) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name_bytes).map_err(|_| bad("non-utf8 name"))?;
            r.read_exact(&mut b8).map_err(|_| bad("truncated offset"))?;
            let offset = u64::from_le_bytes(b8) as usize;
            r.read_exact(&mut b8).map_err(|_| bad("truncated length"))?;
            let len = u64::from_le_bytes(b8) as usize;
            manifest.push((name, offset, len));
        }

        let mut tensors = BTreeMap::new();
        for (name, offset, len) in manifest {
            if offset + len > bytes.len() {
                return Err(bad(&format!("blob {name:?} out of bounds")));
            }
            let mut slice = &bytes[offset..offset + len];
            tensors.insert(name, Tensor::read_from(&mut slice, path)?);
        }
        Ok(Checkpoint {
            fingerprint,
            epoch,
            adam_step,
            rng_seed,
            rng_word_pos,
            tensors,
        })
    }
}
