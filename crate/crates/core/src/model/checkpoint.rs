use std::path::Path;

use thiserror::Error;

use super::{ArchDescriptor, BlockKind, BlockSpec, StudentModel};
use crate::tensor::{LayerParams, Tensor};
use crate::wire::{put_f32s, DecodeError, Reader};

const MAGIC: &[u8; 4] = b"STUT";
pub const CHECKPOINT_VERSION: u16 = 1;
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u16 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("tensor dimensions overflow in block {block}")]
    DimOverflow { block: usize },
    #[error("invalid architecture in checkpoint: {0}")]
    InvalidArch(String),
    #[error("{0} trailing bytes after checkpoint")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<DecodeError> for CheckpointError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Truncated { .. } => Self::Truncated,
            other => Self::InvalidArch(other.to_string()),
        }
    }
}

/// Serialized model image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint(pub Vec<u8>);

impl Checkpoint {
    pub fn of(model: &StudentModel) -> Self {
        Self(save_checkpoint(model))
    }

    pub fn load(&self) -> Result<StudentModel, CheckpointError> {
        load_checkpoint(&self.0)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn read_file(path: &Path) -> Result<Self, CheckpointError> {
        Ok(Self(std::fs::read(path)?))
    }

    pub fn write_file(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, &self.0)?;
        Ok(())
    }
}

pub fn save_checkpoint(model: &StudentModel) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::with_capacity(12 + 7 * arch.blocks.len() + 4 * arch.total_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.blocks.len() as u16).to_le_bytes());
    for b in &arch.blocks {
        out.push(b.kind as u8);
        out.extend_from_slice(&b.in_channels.to_le_bytes());
        out.extend_from_slice(&b.out_channels.to_le_bytes());
        out.extend_from_slice(&b.kernel.to_le_bytes());
    }
    out.extend_from_slice(&(arch.freeze_boundary as u16).to_le_bytes());
    for p in model.params() {
        put_f32s(&mut out, p.kernel.data());
        put_f32s(&mut out, p.bias.data());
    }
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<StudentModel, CheckpointError> {
    let mut r = Reader::new(bytes);
    if r.bytes(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let count = r.u16()? as usize;
    let mut blocks = Vec::with_capacity(count);
    for i in 0..count {
        let kind = r.u8()?;
        let kind = BlockKind::from_u8(kind)
            .ok_or_else(|| CheckpointError::InvalidArch(format!("block {i}: unknown kind {kind}")))?;
        blocks.push(BlockSpec::new(kind, r.u16()?, r.u16()?, r.u16()?));
    }
    let freeze_boundary = r.u16()? as usize;
    let mut params = Vec::with_capacity(count);
    for (i, b) in blocks.iter().enumerate() {
        let k = b.kernel as usize;
        let n = (b.out_channels as usize)
            .checked_mul(b.in_channels as usize)
            .and_then(|v| v.checked_mul(k))
            .and_then(|v| v.checked_mul(k))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or(CheckpointError::DimOverflow { block: i })?;
        if n == 0 {
            return Err(CheckpointError::InvalidArch(format!("block {i}: zero extent")));
        }
        let kernel = r.f32s(n)?;
        let bias = r.f32s(b.out_channels as usize)?;
        let dims = vec![b.out_channels as usize, b.in_channels as usize, k, k];
        params.push(LayerParams {
            kernel: Tensor::from_vec(dims, kernel).expect("extents checked"),
            bias: Tensor::from_vec(vec![b.out_channels as usize], bias).expect("extents checked"),
        });
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    StudentModel::from_params(ArchDescriptor { blocks, freeze_boundary }, params)
        .map_err(|e| CheckpointError::InvalidArch(e.to_string()))
}
