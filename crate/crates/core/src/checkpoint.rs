//! Parameter checkpoints: a flat name → tensor map in JSON, each tensor a
//! shape plus base64 of its row-major little-endian `f64` payload.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attention::{GateSpec, Model, ModelConfig, ModelParams, PARAM_NAMES};
use crate::error::{Error, Result};

pub const FORMAT: &str = "gategeom-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedTensor {
    pub shape: [usize; 2],
    pub data: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub gate: GateSpec,
    pub tensors: BTreeMap<String, EncodedTensor>,
}

pub fn encode_tensor(m: &DMatrix<f64>) -> EncodedTensor {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            bytes.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    EncodedTensor {
        shape: [m.nrows(), m.ncols()],
        data: STANDARD.encode(bytes),
    }
}

pub fn decode_tensor(t: &EncodedTensor) -> Result<DMatrix<f64>> {
    let bytes = STANDARD
        .decode(&t.data)
        .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
    let [rows, cols] = t.shape;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, shape {rows}x{cols} needs {}",
            bytes.len(),
            rows * cols * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let tensors = PARAM_NAMES
            .iter()
            .zip(model.params.tensors())
            .map(|(name, t)| (name.to_string(), encode_tensor(t)))
            .collect();
        Self {
            format: FORMAT.to_string(),
            config: model.config,
            gate: model.gate,
            tensors,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", self.format)));
        }
        let mut params = ModelParams::zeros(&self.config);
        for (name, slot) in PARAM_NAMES.iter().zip(params.tensors_mut()) {
            let enc = self
                .tensors
                .get(*name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            let m = decode_tensor(enc)?;
            if m.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m;
        }
        if let Some(extra) = self.tensors.keys().find(|k| !PARAM_NAMES.contains(&k.as_str())) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(Model {
            config: self.config,
            gate: self.gate,
            params,
        })
    }
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_model(model))?;
    crate::io::write_atomic(path, json.as_bytes())
}

pub fn load(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str::<Checkpoint>(&text)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_encoding_is_row_major_le() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, -2.5]);
        let enc = encode_tensor(&m);
        let raw = STANDARD.decode(&enc.data).unwrap();
        assert_eq!(&raw[..8], &1.0f64.to_le_bytes());
        assert_eq!(&raw[8..], &(-2.5f64).to_le_bytes());
        assert_eq!(decode_tensor(&enc).unwrap(), m);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut enc = encode_tensor(&DMatrix::from_element(2, 2, 1.0));
        enc.shape = [3, 2];
        assert!(decode_tensor(&enc).is_err());
    }
}
