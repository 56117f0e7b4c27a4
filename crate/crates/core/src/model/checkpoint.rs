//! JSON checkpoint container.
//!
//! ```json
//! { "format": "gradeconf-checkpoint", "version": 1,
//!   "architecture": { ... }, "seed": 7,
//!   "tensors": [ { "name": "reduction.weight", "shape": [64, 128], "values": [...] }, ... ] }
//! ```
//!
//! Weights are stored row-major. `serde_json` is built with
//! `float_roundtrip`, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{ArchitectureConfig, AttentionMilParameters, Dense, MilLayers};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gradeconf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    architecture: ArchitectureConfig,
    seed: u64,
    tensors: Vec<Tensor>,
}

pub fn save_checkpoint(params: &AttentionMilParameters, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    for (name, dense) in params
        .layers
        .layer_names()
        .into_iter()
        .zip(params.layers.layers())
    {
        tensors.push(Tensor {
            name: format!("{name}.weight"),
            shape: dense.weight.shape().to_vec(),
            values: dense.weight.iter().copied().collect(),
        });
        tensors.push(Tensor {
            name: format!("{name}.bias"),
            shape: vec![dense.bias.len()],
            values: dense.bias.to_vec(),
        });
    }
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture: params.architecture.clone(),
        seed: params.seed,
        tensors,
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::format("checkpoint", e))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<AttentionMilParameters> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let what = format!("checkpoint {}", path.display());
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::format(&what, e))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::format(&what, format!("unknown format tag `{}`", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            &what,
            format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                file.version
            ),
        ));
    }
    file.architecture
        .validate()
        .map_err(|e| Error::format(&what, e))?;

    let mut layers = MilLayers::zeros(&file.architecture);
    let names = layers.layer_names();
    let expected = 2 * names.len();
    if file.tensors.len() != expected {
        return Err(Error::format(
            &what,
            format!("expected {expected} tensors, found {}", file.tensors.len()),
        ));
    }
    let mut tensors = file.tensors.into_iter();
    for (name, dense) in names.iter().zip(layers.layers_mut()) {
        let w = tensors.next().expect("count checked");
        let b = tensors.next().expect("count checked");
        *dense = Dense {
            weight: take_matrix(w, &format!("{name}.weight"), dense.weight.dim(), &what)?,
            bias: take_vector(b, &format!("{name}.bias"), dense.bias.len(), &what)?,
        };
    }
    Ok(AttentionMilParameters {
        architecture: file.architecture,
        seed: file.seed,
        layers,
    })
}

fn take_matrix(t: Tensor, name: &str, dim: (usize, usize), what: &str) -> Result<Array2<f64>> {
    check_tensor(&t, name, &[dim.0, dim.1], what)?;
    Array2::from_shape_vec(dim, t.values).map_err(|e| Error::format(what, e))
}

fn take_vector(t: Tensor, name: &str, len: usize, what: &str) -> Result<Array1<f64>> {
    check_tensor(&t, name, &[len], what)?;
    Ok(Array1::from(t.values))
}

fn check_tensor(t: &Tensor, name: &str, shape: &[usize], what: &str) -> Result<()> {
    if t.name != name {
        return Err(Error::format(
            what,
            format!("expected tensor `{name}`, found `{}`", t.name),
        ));
    }
    if t.shape != shape || t.values.len() != shape.iter().product::<usize>() {
        return Err(Error::format(
            what,
            format!(
                "tensor `{name}` has shape {:?} with {} values, architecture requires {:?}",
                t.shape,
                t.values.len(),
                shape
            ),
        ));
    }
    if t.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(what, format!("tensor `{name}` holds non-finite values")));
    }
    Ok(())
}
