//! `FWCK` model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FWCK" | u16 version = 1 | u16 layer count
//! per layer: u32 in | u32 out | u8 activation tag
//! per layer: weights (out × in, row-major f32) then bias (out f32)
//! ```

use std::path::Path;

use super::network::{Activation, DenseLayer, Network};
use crate::error::{Error, Result};
use crate::wire::{put_f32s, to_u32, ByteReader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FWCK";
pub const CHECKPOINT_VERSION: u16 = 1;

impl Network {
    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(8 + self.param_count() as usize * 4);
        self.write_checkpoint(&mut out)?;
        Ok(out)
    }

    pub(crate) fn write_checkpoint(&self, out: &mut Vec<u8>) -> Result<()> {
        let count = u16::try_from(self.layers().len())
            .map_err(|_| Error::Argument("too many layers for a checkpoint".into()))?;
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for layer in self.layers() {
            out.extend_from_slice(&to_u32(layer.inputs(), "layer input dim")?.to_le_bytes());
            out.extend_from_slice(&to_u32(layer.outputs(), "layer output dim")?.to_le_bytes());
            out.push(layer.activation().tag());
        }
        for layer in self.layers() {
            put_f32s(out, layer.weights());
            put_f32s(out, layer.bias());
        }
        Ok(())
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Network> {
        let mut r = ByteReader::new(bytes);
        let net = Self::read_checkpoint(&mut r)?;
        r.finish()?;
        Ok(net)
    }

    pub(crate) fn read_checkpoint(r: &mut ByteReader<'_>) -> Result<Network> {
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let count = r.u16_le("layer count")? as usize;
        if count == 0 {
            return Err(r.error("checkpoint has no layers"));
        }
        let mut headers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = r.u32_le("layer input dim")? as usize;
            let outputs = r.u32_le("layer output dim")? as usize;
            let at = r.offset();
            let tag = r.u8("activation tag")?;
            let act = Activation::from_tag(tag).ok_or(Error::Parse {
                offset: at,
                message: format!("unknown activation tag {tag}"),
            })?;
            headers.push((inputs, outputs, act));
        }
        let mut layers = Vec::with_capacity(count);
        for (inputs, outputs, act) in headers {
            let n = inputs
                .checked_mul(outputs)
                .ok_or_else(|| r.error("layer size overflows"))?;
            let weights = r.f32_vec(n, "layer weights")?;
            let bias = r.f32_vec(outputs, "layer bias")?;
            let at = r.offset();
            let layer =
                DenseLayer::new(inputs, outputs, weights, bias, act).map_err(|e| Error::Parse {
                    offset: at,
                    message: e.to_string(),
                })?;
            layers.push(layer);
        }
        let at = r.offset();
        Network::from_layers(layers, 0).map_err(|e| Error::Parse {
            offset: at,
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Network> {
        Self::from_checkpoint(&std::fs::read(path)?)
    }
}
