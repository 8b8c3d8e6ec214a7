//! Checkpoint format: a directory holding `params.bin` (all arrays as
//! little-endian `f64`, concatenated in canonical order) and `manifest.json`
//! (format version, model config, and name/shape/byte offset per array).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Matrix;

use super::{ModelConfig, ModelParams, Seq2Seq};

pub const FORMAT_VERSION: u32 = 1;
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub arrays: Vec<ArrayEntry>,
}

pub fn save(model: &Seq2Seq, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(model.params.num_parameters() * 8);
    let mut arrays = Vec::new();
    for (name, m) in model.params.tensors() {
        arrays.push(ArrayEntry {
            name,
            shape: [m.rows(), m.cols()],
            offset: bytes.len() as u64,
        });
        for v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        arrays,
    };
    let bin = dir.join(PARAMS_FILE);
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(MANIFEST_FILE);
    fs::write(&json, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&json, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<Seq2Seq> {
    let dir = dir.as_ref();
    let json = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported checkpoint format version {}",
            manifest.format_version
        )));
    }
    manifest.config.validate()?;
    let bin = dir.join(PARAMS_FILE);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;

    let mut params = ModelParams::init(&manifest.config, &mut seed::rng(0));
    let slots = params.tensors_mut();
    if slots.len() != manifest.arrays.len() {
        return Err(Error::validation(format!(
            "manifest lists {} arrays, config requires {}",
            manifest.arrays.len(),
            slots.len()
        )));
    }
    let mut consumed = 0usize;
    for ((name, slot), entry) in slots.into_iter().zip(&manifest.arrays) {
        if entry.name != name || entry.shape != [slot.rows(), slot.cols()] {
            return Err(Error::validation(format!(
                "manifest entry `{}` {:?} does not match expected `{name}` {:?}",
                entry.name,
                entry.shape,
                slot.shape()
            )));
        }
        let len = slot.data().len() * 8;
        let start = usize::try_from(entry.offset).map_err(|_| Error::validation("offset overflow"))?;
        let chunk = bytes.get(start..start + len).ok_or_else(|| {
            Error::validation(format!("array `{name}` runs past the end of {PARAMS_FILE}"))
        })?;
        let values: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        *slot = Matrix::from_vec(slot.rows(), slot.cols(), values);
        consumed += len;
    }
    if consumed != bytes.len() {
        return Err(Error::validation(format!(
            "{PARAMS_FILE} has {} bytes, manifest accounts for {consumed}",
            bytes.len()
        )));
    }
    Seq2Seq::from_parts(manifest.config, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Seq2Seq {
        let cfg = ModelConfig {
            d_model: 8,
            d_ff: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 12,
            ..ModelConfig::toy(13)
        };
        Seq2Seq::new(cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save(&m, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        for ((_, a), (_, b)) in m.params.tensors().into_iter().zip(back.params.tensors()) {
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = model();
        m.params.output_head.set(0, 0, f64::NAN);
        save(&m, dir.path()).unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("output_head"), "{err}");
    }

    #[test]
    fn rejects_truncated_binary() {
        let dir = tempfile::tempdir().unwrap();
        save(&model(), dir.path()).unwrap();
        let bin = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&bin, bytes).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
