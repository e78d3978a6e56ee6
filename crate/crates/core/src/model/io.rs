use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerHeader, Descriptor};
use crate::error::{Error, Result};

use super::checkpoint::{tensor_specs, Tensor};
use super::{ModelCheckpoint, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MAMA";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: ModelConfig,
    tensors: Vec<Descriptor>,
}

impl ContainerHeader for CheckpointHeader {
    fn descriptors(&self) -> &[Descriptor] {
        &self.tensors
    }
}

pub fn encode_checkpoint(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        config: ckpt.config().clone(),
        tensors: ckpt
            .tensors()
            .iter()
            .map(|t| Descriptor::of(t.name.clone(), &t.value))
            .collect(),
    };
    let payloads: Vec<_> = ckpt.tensors().iter().map(|t| &t.value).collect();
    container::encode(CHECKPOINT_MAGIC, &header, &payloads)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let (header, payloads) = container::decode::<CheckpointHeader>(CHECKPOINT_MAGIC, bytes)?;
    header.config.validate()?;
    let specs = tensor_specs(&header.config);
    if specs.len() != header.tensors.len() {
        return Err(Error::Header(format!(
            "config implies {} tensors, header declares {}",
            specs.len(),
            header.tensors.len()
        )));
    }
    for ((name, rows, cols), d) in specs.iter().zip(&header.tensors) {
        if *name != d.name || (*rows, *cols) != (d.rows, d.cols) {
            return Err(Error::Header(format!(
                "tensor {} declared {}x{}, config requires {name} {rows}x{cols}",
                d.name, d.rows, d.cols
            )));
        }
    }
    let tensors = header
        .tensors
        .into_iter()
        .zip(payloads)
        .map(|(d, value)| Tensor {
            name: d.name,
            value,
        })
        .collect();
    ModelCheckpoint::from_tensors(header.config, tensors)
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    decode_checkpoint(&container::read_file(path.as_ref())?)
}
