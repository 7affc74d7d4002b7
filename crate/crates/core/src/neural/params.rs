use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_bytes, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Glorot-uniform matrix `[fan_in x fan_out]`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    pub offset: usize,
}

/// JSON manifest accompanying a little-endian f64 payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format: String,
    pub version: u32,
    pub header: serde_json::Value,
    pub payload: String,
    pub payload_sha256: String,
    pub tensors: Vec<TensorEntry>,
}

pub const WEIGHT_FORMAT: &str = "gwindcast-weights";
pub const WEIGHT_VERSION: u32 = 1;

fn sibling(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(ext);
    stem.with_file_name(name)
}

/// Serializes named tensors into `(manifest, payload)`.
pub fn encode_weights(header: serde_json::Value, tensors: &[(&str, &Tensor)], payload_name: &str) -> (WeightManifest, Vec<u8>) {
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset });
        for x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        offset += t.len();
    }
    let manifest = WeightManifest {
        format: WEIGHT_FORMAT.into(),
        version: WEIGHT_VERSION,
        header,
        payload: payload_name.into(),
        payload_sha256: sha256_hex(&payload),
        tensors: entries,
    };
    (manifest, payload)
}

pub fn decode_weights(manifest: &WeightManifest, payload: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if manifest.format != WEIGHT_FORMAT || manifest.version != WEIGHT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported weight file {} v{}",
            manifest.format, manifest.version
        )));
    }
    if sha256_hex(payload) != manifest.payload_sha256 {
        return Err(Error::Parse("weight payload digest mismatch".into()));
    }
    if !payload.len().is_multiple_of(8) {
        return Err(Error::Parse("weight payload is not a whole number of f64".into()));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    manifest
        .tensors
        .iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let data = floats
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::Parse(format!("tensor {} overruns payload", e.name)))?
                .to_vec();
            Ok((e.name.clone(), Tensor::new(e.shape.clone(), data)?))
        })
        .collect()
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_weights(stem: &Path, header: serde_json::Value, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let bin = sibling(stem, ".bin");
    let payload_name = bin.file_name().unwrap().to_string_lossy().into_owned();
    let (manifest, payload) = encode_weights(header, tensors, &payload_name);
    write_bytes(&bin, &payload)?;
    write_json(&sibling(stem, ".json"), &manifest)
}

pub fn load_weights(stem: &Path) -> Result<(WeightManifest, Vec<(String, Tensor)>)> {
    let json = sibling(stem, ".json");
    let manifest: WeightManifest = crate::io::read_json(&json)?;
    let bin = stem.with_file_name(&manifest.payload);
    let payload = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let tensors = decode_weights(&manifest, &payload)?;
    Ok((manifest, tensors))
}
