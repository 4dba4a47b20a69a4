//! Named numeric arrays in a single safetensors file with string metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            ArrayData::F32(v) => v.clone(),
            ArrayData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    fn bytes(&self) -> (Dtype, Vec<u8>) {
        match self {
            ArrayData::F32(v) => (Dtype::F32, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
            ArrayData::F64(v) => (Dtype::F64, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// Arrays by name plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrayFile {
    pub arrays: BTreeMap<String, Array>,
    pub metadata: BTreeMap<String, String>,
}

impl ArrayFile {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) {
        self.arrays.insert(name.into(), Array { shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.get(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let encoded: Vec<(String, Vec<usize>, Dtype, Vec<u8>)> = self
            .arrays
            .iter()
            .map(|(name, a)| {
                let (dtype, bytes) = a.data.bytes();
                (name.clone(), a.shape.clone(), dtype, bytes)
            })
            .collect();
        let views = encoded
            .iter()
            .map(|(name, shape, dtype, bytes)| {
                TensorView::new(*dtype, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        let buf = safetensors::serialize(views, &Some(meta))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: safetensors::SafeTensorError| Error::format(path, e.to_string());
        let (_, header) = SafeTensors::read_metadata(&buf).map_err(bad)?;
        let tensors = SafeTensors::deserialize(&buf).map_err(bad)?;
        let mut out = ArrayFile {
            metadata: header
                .metadata()
                .clone()
                .unwrap_or_default()
                .into_iter()
                .collect(),
            ..Default::default()
        };
        for (name, view) in tensors.iter() {
            let raw = view.data();
            let data = match view.dtype() {
                Dtype::F32 => ArrayData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                Dtype::F64 => ArrayData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                other => {
                    return Err(Error::format(
                        path,
                        format!("unsupported dtype {other:?} for {name}"),
                    ))
                }
            };
            out.insert(name, view.shape().to_vec(), data);
        }
        Ok(out)
    }
}
