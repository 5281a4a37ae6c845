use super::{ModelError, Result};
use crate::tensor::{LayerParams, Tensor};
use crate::wire::{put_f32s, DecodeError, Reader};

/// One parameter tensor of the trainable suffix. `id` is `2·block` for a
/// kernel and `2·block + 1` for a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEntry {
    pub id: u16,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl DeltaEntry {
    pub fn block(&self) -> usize {
        self.id as usize / 2
    }

    fn encoded_len(&self) -> usize {
        2 + 1 + 2 * self.dims.len() + 4 * self.values.len()
    }
}

/// Values of every trainable parameter, in block order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightDelta {
    pub entries: Vec<DeltaEntry>,
}

impl WeightDelta {
    pub(crate) fn from_layers(params: &[LayerParams], boundary: usize) -> Self {
        let entries = params
            .iter()
            .enumerate()
            .skip(boundary)
            .flat_map(|(b, lp)| {
                [(0, &lp.kernel), (1, &lp.bias)].map(|(slot, t)| DeltaEntry {
                    id: (2 * b + slot) as u16,
                    dims: t.dims().to_vec(),
                    values: t.data().to_vec(),
                })
            })
            .collect();
        Self { entries }
    }

    pub(crate) fn apply_to(&self, params: &mut [LayerParams], boundary: usize) -> Result<()> {
        let expected = 2 * (params.len().saturating_sub(boundary));
        if self.entries.len() != expected {
            return Err(ModelError::DeltaMismatch(format!(
                "{} tensors in delta, model has {expected} trainable tensors",
                self.entries.len()
            )));
        }
        // validate everything before touching the model
        for (i, e) in self.entries.iter().enumerate() {
            let want = 2 * boundary + i;
            if e.id as usize != want {
                return Err(ModelError::DeltaMismatch(format!("entry {i} has id {}, expected {want}", e.id)));
            }
            if e.dims != target(params, want).dims() {
                return Err(ModelError::DeltaMismatch(format!(
                    "tensor {want}: dims {:?} vs model {:?}",
                    e.dims,
                    target(params, want).dims()
                )));
            }
            if e.values.len() != e.dims.iter().product::<usize>() {
                return Err(ModelError::DeltaMismatch(format!("tensor {want}: value count disagrees with dims")));
            }
        }
        for e in &self.entries {
            let lp = &mut params[e.block()];
            let t = if e.id % 2 == 0 { &mut lp.kernel } else { &mut lp.bias };
            t.data_mut().copy_from_slice(&e.values);
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Bytes spent on parameter values alone.
    pub fn value_bytes(&self) -> usize {
        4 * self.param_count()
    }

    /// Size of [`Self::encode`] output.
    pub fn encoded_len(&self) -> usize {
        2 + self.entries.iter().map(DeltaEntry::encoded_len).sum::<usize>()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.entries.len() as u16).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.id.to_le_bytes());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u16).to_le_bytes());
            }
            put_f32s(out, &e.values);
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> std::result::Result<Self, DecodeError> {
        let count = r.u16()? as usize;
        let mut entries = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let id = r.u16()?;
            let rank = r.u8()? as usize;
            if !(1..=4).contains(&rank) {
                return Err(DecodeError::Invalid(format!("tensor rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u16()? as usize;
                if d == 0 {
                    return Err(DecodeError::Invalid("zero extent".into()));
                }
                dims.push(d);
            }
            let n: usize = dims.iter().product();
            let values = r.f32s(n)?;
            entries.push(DeltaEntry { id, dims, values });
        }
        Ok(Self { entries })
    }
}

fn target(params: &[LayerParams], id: usize) -> &Tensor {
    let lp = &params[id / 2];
    if id.is_multiple_of(2) {
        &lp.kernel
    } else {
        &lp.bias
    }
}
