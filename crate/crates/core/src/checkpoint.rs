//! Checkpoints: a safetensors parameter file plus a JSON config sidecar at
//! the same path with a `.json` extension.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::arrays::{ArrayData, ArrayFile};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::score::Instrument;
use crate::tensor::{Scalar, Tensor};

#[derive(Serialize, Deserialize)]
struct Sidecar<C> {
    instruments: Vec<Instrument>,
    config: C,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save<T: Scalar, C: Serialize>(path: &Path, store: &ParamStore<T>, config: &C) -> Result<()> {
    let mut file = ArrayFile::default();
    for id in store.ids() {
        let t = store.get(id);
        file.insert(
            store.name(id),
            t.shape().to_vec(),
            ArrayData::F64(t.to_f64_vec()),
        );
    }
    file.save(path)?;
    let side = Sidecar {
        instruments: Instrument::ALL.to_vec(),
        config,
    };
    let side_path = sidecar_path(path);
    std::fs::write(&side_path, serde_json::to_string_pretty(&side)?)
        .map_err(|e| Error::io(&side_path, e))
}

pub fn load_config<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar<C> =
        serde_json::from_str(&text).map_err(|e| Error::format(&side_path, e.to_string()))?;
    if side.instruments != Instrument::ALL {
        return Err(Error::format(
            &side_path,
            "instrument order must be BD, SD, HH",
        ));
    }
    Ok(side.config)
}

/// Loads values into `store`, matching parameters by name and shape.
pub fn load_params<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let file = ArrayFile::load(path)?;
    let mut src = ParamStore::<T>::new();
    for (name, arr) in &file.arrays {
        src.add(
            name.clone(),
            Tensor::from_vec(
                &arr.shape,
                arr.data.to_f64().into_iter().map(T::of).collect(),
            ),
            crate::nn::ParamKind::Weight,
        );
    }
    store
        .load_from(&src)
        .map_err(|e| Error::format(path, e.to_string()))
}
