use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::util;

/// On-disk vector cache: `<root>/emb/<backend-id>/<key>.vec`, each file a
/// little-endian `u32` dimension followed by that many `f32` values.
#[derive(Debug, Clone)]
pub struct VectorCache {
    dir: PathBuf,
}

impl VectorCache {
    pub fn new(root: &Path, backend_id: &str) -> Self {
        VectorCache {
            dir: root.join("emb").join(sanitize(backend_id)),
        }
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.vec"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Vec<f32>>> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        match decode(&bytes) {
            Some(v) => Ok(Some(v)),
            None => {
                log::warn!("ignoring corrupt cache entry {}", path.display());
                Ok(None)
            }
        }
    }

    pub fn put(&self, key: &str, values: &[f32]) -> Result<()> {
        util::write_atomic(&self.path_for(key), &encode(values))
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

pub(crate) fn encode(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * values.len());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Option<Vec<f32>> {
    let dim = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let body = bytes.get(4..)?;
    if body.len() != dim * 4 {
        return None;
    }
    Some(
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect(),
    )
}
