//! Safetensors checkpoints. Metadata keys: `format`, `stage`, `variant`
//! and `model_config` (JSON). Every tensor is little-endian `f32`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::config::{ModelConfig, Variant};
use crate::params::ParamStore;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ego3dpose-checkpoint-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub stage: u8,
    pub variant: Variant,
    pub model: ModelConfig,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(meta: CheckpointMeta, params: &ParamStore) -> Result<Self> {
        Ok(Self { meta, tensors: params.snapshot()? })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(n, t)| {
                let v: Vec<f32> = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
                Ok((n.clone(), t.dims().to_vec(), v.iter().flat_map(|x| x.to_le_bytes()).collect()))
            })
            .collect::<Result<_>>()?;
        let views = raw
            .iter()
            .map(|(n, shape, bytes)| Ok((n.as_str(), TensorView::new(Dtype::F32, shape.clone(), bytes).map_err(st_err)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
        meta.insert("stage".to_string(), self.meta.stage.to_string());
        meta.insert("variant".to_string(), self.meta.variant.id().to_string());
        meta.insert("model_config".to_string(), serde_json::to_string(&self.meta.model).expect("config serializes"));
        canonical_header(&safetensors::serialize(views, Some(meta)).map_err(st_err)?)
    }

    /// Parses and validates a checkpoint image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(st_err)?;
        let meta = header.metadata().as_ref().ok_or_else(|| Error::checkpoint("metadata", "missing"))?;
        let field = |k: &str| meta.get(k).ok_or_else(|| Error::checkpoint(k, "missing"));
        if field("format")? != CHECKPOINT_FORMAT {
            return Err(Error::checkpoint("format", format!("unsupported `{}`", field("format")?)));
        }
        let stage: u8 = field("stage")?.parse().map_err(|_| Error::checkpoint("stage", "not an integer"))?;
        if !(1..=2).contains(&stage) {
            return Err(Error::checkpoint("stage", format!("{stage} is not 1 or 2")));
        }
        let variant = field("variant")?.parse().map_err(|e: Error| Error::checkpoint("variant", e.to_string()))?;
        let model: ModelConfig = serde_json::from_str(field("model_config")?)
            .map_err(|e| Error::checkpoint("model_config", e.to_string()))?;
        let st = SafeTensors::deserialize(bytes).map_err(st_err)?;
        let mut tensors = Vec::new();
        let mut names: Vec<&str> = st.names();
        names.sort();
        for name in names {
            let view = st.tensor(name).map_err(st_err)?;
            if view.dtype() != Dtype::F32 {
                return Err(Error::checkpoint(name, format!("dtype {:?}, expected F32", view.dtype())));
            }
            let values = ego3dpose_core::heatmap::decode_f32(view.data(), view.shape(), name)?;
            tensors.push((name.to_string(), Tensor::from_vec(values, view.shape(), &Device::Cpu)?));
        }
        Ok(Self { meta: CheckpointMeta { stage, variant, model }, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Tensors whose names start with one of `prefixes`.
    pub fn subset(&self, prefixes: &[&str]) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(&format!("{p}."))))
            .cloned()
            .collect()
    }
}

/// The library writes metadata in hash-map order; rewrite the header with
/// sorted keys so equal checkpoints are equal bytes.
fn canonical_header(bytes: &[u8]) -> Result<Vec<u8>> {
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&bytes[8..8 + n])
        .map_err(|e| Error::checkpoint("header", e.to_string()))?;
    let header: BTreeMap<String, serde_json::Value> = header
        .into_iter()
        .map(|(k, v)| match v {
            serde_json::Value::Object(m) => (k, serde_json::to_value(m.into_iter().collect::<BTreeMap<_, _>>()).expect("json")),
            other => (k, other),
        })
        .collect();
    let mut text = serde_json::to_vec(&header).expect("header serializes");
    text.resize(text.len().next_multiple_of(8), b' ');
    let mut out = Vec::with_capacity(8 + text.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

fn st_err(e: safetensors::SafeTensorError) -> Error {
    Error::checkpoint("safetensors", e.to_string())
}
