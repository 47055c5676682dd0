//! Checkpoint layout: a magic line, one line of JSON manifest, then every
//! tensor as little-endian `f64` in manifest order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelState, Provenance, VaeError};
use crate::autodiff::ParamSet;
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: &str = "ROSETTA-VAE-CHECKPOINT 1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    architecture: Architecture,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(model: &ModelState, mut out: W) -> Result<(), VaeError> {
    let manifest = Manifest {
        architecture: model.arch.clone(),
        provenance: model.provenance.clone(),
        tensors: model
            .params
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.to_string(),
                shape: [m.rows(), m.cols()],
            })
            .collect(),
    };
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    let json = serde_json::to_string(&manifest).map_err(|e| VaeError::Checkpoint(e.to_string()))?;
    writeln!(out, "{json}")?;
    for (_, m) in model.params.iter() {
        for v in m.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<ModelState, VaeError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim_end_matches('\n') != CHECKPOINT_MAGIC {
        return Err(VaeError::Checkpoint("missing magic line".into()));
    }
    line.clear();
    input.read_line(&mut line)?;
    let manifest: Manifest =
        serde_json::from_str(line.trim_end()).map_err(|e| VaeError::Checkpoint(format!("manifest: {e}")))?;
    let mut params = ParamSet::new();
    let mut buf = [0u8; 8];
    for t in &manifest.tensors {
        let [rows, cols] = t.shape;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| VaeError::Checkpoint(format!("tensor `{}` too large", t.name)))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            input
                .read_exact(&mut buf)
                .map_err(|_| VaeError::Checkpoint(format!("payload truncated in `{}`", t.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        let m = Matrix::new(rows, cols, data).map_err(|e| VaeError::Checkpoint(format!("`{}`: {e}", t.name)))?;
        params.insert(t.name.clone(), m)?;
    }
    if input.read(&mut buf)? != 0 {
        return Err(VaeError::Checkpoint("trailing bytes after payload".into()));
    }
    ModelState::from_params(manifest.architecture, params, manifest.provenance)
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<(), VaeError> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, VaeError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
