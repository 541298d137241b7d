//! Self-describing checkpoints: model kind, spec echo, seed, step counter,
//! and named parameter blobs. Loading rejects any spec or shape mismatch.

use super::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub spec: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<ParamBlob>,
}

impl Checkpoint {
    pub fn spec_as<S: for<'de> Deserialize<'de>>(&self) -> Result<S, NnError> {
        serde_json::from_value(self.spec.clone())
            .map_err(|e| NnError::CheckpointMismatch(format!("cannot decode spec: {e}")))
    }

    /// Copy parameter blobs into live tensors, verifying names and shapes.
    pub fn apply<T: Scalar>(&self, params: &[(String, Tensor<T>)]) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::CheckpointMismatch(format!(
                "parameter count {} vs checkpoint {}",
                params.len(),
                self.params.len()
            )));
        }
        for ((name, tensor), blob) in params.iter().zip(&self.params) {
            if name != &blob.name {
                return Err(NnError::CheckpointMismatch(format!(
                    "parameter name {name} vs checkpoint {}",
                    blob.name
                )));
            }
            if tensor.shape() != blob.shape {
                return Err(NnError::CheckpointMismatch(format!(
                    "parameter {name} shape {:?} vs checkpoint {:?}",
                    tensor.shape(),
                    blob.shape
                )));
            }
            let data: Vec<T> = blob.data.iter().map(|&v| T::c(v)).collect();
            tensor.set_value(ArrayD::from_shape_vec(IxDyn(&blob.shape), data).unwrap());
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Scalar, S: Serialize>(
    path: &Path,
    kind: &str,
    spec: &S,
    seed: u64,
    step: u64,
    params: &[(String, Tensor<T>)],
) -> Result<(), NnError> {
    let ckpt = Checkpoint {
        kind: kind.to_string(),
        spec: serde_json::to_value(spec)
            .map_err(|e| NnError::CheckpointIo(format!("spec encode: {e}")))?,
        seed,
        step,
        params: params
            .iter()
            .map(|(name, t)| ParamBlob {
                name: name.clone(),
                shape: t.shape(),
                data: t.value().iter().map(|v| v.into_f64()).collect(),
            })
            .collect(),
    };
    let file = std::fs::File::create(path)
        .map_err(|e| NnError::CheckpointIo(format!("{}: {e}", path.display())))?;
    serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)
        .map_err(|e| NnError::CheckpointIo(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path, expected_kind: &str) -> Result<Checkpoint, NnError> {
    let file = std::fs::File::open(path)
        .map_err(|e| NnError::CheckpointIo(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| NnError::CheckpointIo(format!("{}: {e}", path.display())))?;
    if ckpt.kind != expected_kind {
        return Err(NnError::CheckpointMismatch(format!(
            "checkpoint kind {} but expected {expected_kind}",
            ckpt.kind
        )));
    }
    Ok(ckpt)
}
