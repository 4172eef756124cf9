//! Embedding sets and their on-disk form: a little-endian binary file of
//! 32-bit float rows plus a sidecar CSV carrying identity, camera and source
//! path per row.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MREB";
pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

/// Descriptors with aligned identity and camera labels.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    /// `[n, d]`
    pub descriptors: Tensor,
    pub identities: Vec<i32>,
    pub cameras: Vec<u32>,
    pub sources: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(
        descriptors: Tensor,
        identities: Vec<i32>,
        cameras: Vec<u32>,
        sources: Vec<String>,
    ) -> Result<Self> {
        if descriptors.rank() != 2 {
            return Err(Error::Contract(format!(
                "descriptors must be [n,d], got {:?}",
                descriptors.shape()
            )));
        }
        let n = descriptors.shape()[0];
        if identities.len() != n || cameras.len() != n || sources.len() != n {
            return Err(Error::Contract(format!(
                "row count {n} does not match {} identities / {} cameras / {} sources",
                identities.len(),
                cameras.len(),
                sources.len()
            )));
        }
        Ok(EmbeddingSet {
            descriptors,
            identities,
            cameras,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.descriptors.shape()[1]
    }

    /// Writes the binary embedding file and its sidecar CSV
    /// (`row,identity,camera,source_path`).
    pub fn save(&self, path: &Path, fingerprint: u64) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(EMBEDDING_MAGIC)?;
        f.write_all(&EMBEDDING_FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(self.len() as u64).to_le_bytes())?;
        f.write_all(&(self.dim() as u64).to_le_bytes())?;
        for &v in self.descriptors.data() {
            f.write_all(&(v as f32).to_le_bytes())?;
        }
        drop(f);

        let sidecar = sidecar_path(path);
        let mut csv = String::new();
        csv.push_str(&format!("# config_fingerprint={fingerprint:016x}\n"));
        csv.push_str("row,identity,camera,source_path\n");
        for i in 0..self.len() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                i, self.identities[i], self.cameras[i], self.sources[i]
            ));
        }
        std::fs::write(sidecar, csv)?;
        Ok(())
    }

    /// Loads a binary embedding file and its sidecar CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != EMBEDDING_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        f.read_exact(&mut b4)
            .map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(b4);
        if version != EMBEDDING_FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b8).map_err(|_| bad("truncated count"))?;
        let n = u64::from_le_bytes(b8) as usize;
        f.read_exact(&mut b8).map_err(|_| bad("truncated dim"))?;
        let d = u64::from_le_bytes(b8) as usize;
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            f.read_exact(&mut b4).map_err(|_| bad("truncated rows"))?;
            data.push(f32::from_le_bytes(b4) as f64);
        }

        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar)?;
        let mut identities = Vec::with_capacity(n);
        let mut cameras = Vec::with_capacity(n);
        let mut sources = Vec::with_capacity(n);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("row,") {
                continue;
            }
            let mut parts = line.splitn(4, ',');
            let (Some(_row), Some(id), Some(cam), Some(src)) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Format {
                    path: sidecar.clone(),
                    reason: format!("bad sidecar line {line:?}"),
                });
            };
            identities.push(id.parse().map_err(|_| Error::Format {
                path: sidecar.clone(),
                reason: format!("bad identity {id:?}"),
            })?);
            cameras.push(cam.parse().map_err(|_| Error::Format {
                path: sidecar.clone(),
                reason: format!("bad camera {cam:?}"),
            })?);
            sources.push(src.to_string());
        }
        if identities.len() != n {
            return Err(Error::Format {
                path: sidecar,
                reason: format!("sidecar has {} rows, binary has {n}", identities.len()),
            });
        }
        EmbeddingSet::new(Tensor::new(vec![n, d], data)?, identities, cameras, sources)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".csv");
    std::path::PathBuf::from(p)
}
