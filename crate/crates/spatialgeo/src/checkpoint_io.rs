use std::fs;
use std::path::Path;

use spatialgeo_core::checkpoint::{decode, encode, Checkpoint};
use spatialgeo_core::training::{Model, TrainState};

use crate::error::{Error, Result};

/// Writes through a sibling temp file and a rename, so a crash never
/// leaves a truncated checkpoint under the final name.
pub fn save_checkpoint(model: &Model, state: Option<&TrainState>, path: &Path) -> Result<()> {
    let bytes = encode(&Checkpoint::from_model(model, state))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<TrainState>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ck = decode(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    ck.into_model().map_err(|e| Error::format(path, e.to_string()))
}
