use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};

/// Leading bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BLFLAB1\n";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    version: u32,
    model: Model,
}

pub fn write_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut bytes = CHECKPOINT_MAGIC.to_vec();
    serde_json::to_writer(&mut bytes, &Envelope { version: VERSION, model: model.clone() })?;
    Ok(bytes)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let body = bytes
        .strip_prefix(CHECKPOINT_MAGIC.as_slice())
        .ok_or_else(|| Error::Checkpoint("missing BLFLAB1 header".into()))?;
    let envelope: Envelope =
        serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("malformed body: {e}")))?;
    if envelope.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", envelope.version)));
    }
    envelope.model.validate()?;
    Ok(envelope.model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(&fs::read(path)?)
}
